#include "casciff/kernels.hpp"

#include <cstdlib>
#include <string>

#include "casciff/errors.hpp"
#include "kernels_impl.hpp"

namespace casciff::kernels {

#if !defined(CASCIFF_BUILD_AVX2)
const Ops* avx2_ops() { return nullptr; }
#endif
#if !defined(CASCIFF_BUILD_NEON)
const Ops* neon_ops() { return nullptr; }
#endif

namespace {

const Ops* g_active = nullptr;
Variant g_variant = Variant::kScalar;

const Ops* variant_ops(Variant v) {
  switch (v) {
    case Variant::kScalar: return &scalar_ops();
    case Variant::kAvx2: return avx2_ops();
    case Variant::kNeon: return neon_ops();
  }
  return nullptr;
}

Variant best_available() {
  if (avx2_ops()) return Variant::kAvx2;
  if (neon_ops()) return Variant::kNeon;
  return Variant::kScalar;
}

void init_once() {
  if (g_active) return;
  Variant v = best_available();
  if (const char* env = std::getenv("CASCIFF_KERNELS")) {
    const std::string name = env;
    if (name == "scalar") v = Variant::kScalar;
    else if (name == "avx2") v = Variant::kAvx2;
    else if (name == "neon") v = Variant::kNeon;
    else throw ConfigError("CASCIFF_KERNELS: unknown kernel variant '" + name + "'");
    if (!variant_ops(v))
      throw ConfigError("CASCIFF_KERNELS: variant '" + name + "' unavailable on this machine");
  }
  g_active = variant_ops(v);
  g_variant = v;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kScalar: return "scalar";
    case Variant::kAvx2: return "avx2";
    case Variant::kNeon: return "neon";
  }
  return "?";
}

bool variant_available(Variant v) { return variant_ops(v) != nullptr; }

const Ops& active() {
  init_once();
  return *g_active;
}

Variant active_variant() {
  init_once();
  return g_variant;
}

void select(Variant v) {
  const Ops* ops = variant_ops(v);
  if (!ops) throw ConfigError("kernel variant '" + variant_name(v) + "' unavailable on this machine");
  g_active = ops;
  g_variant = v;
}

}  // namespace casciff::kernels
