#pragma once

#include <cstddef>
#include <string>

namespace casciff::kernels {

// Dense f64 kernels behind a runtime-selected function table. Every variant
// (scalar reference, AVX2, NEON) produces bit-identical results:
//   - elementwise ops perform the same mul/add per element, never an FMA
//     (the build also disables FP contraction),
//   - matmuls accumulate each output element in the same order (i,p,j loops
//     with the j dimension vectorized; zero multipliers skipped identically),
//   - reductions (dot, sum, sq_diff_sum) use a fixed 4-accumulator tree:
//     lane l accumulates elements with index ≡ l (mod 4), lanes combine as
//     (l0+l2)+(l1+l3), remaining tail elements are added sequentially,
//   - adam_update mirrors the exact same expression tree, with IEEE-exact
//     vector sqrt/div.
// Matrices are row-major.
struct Ops {
  const char* name;

  void (*add)(const double* a, const double* b, double* dst, std::size_t n);
  void (*sub)(const double* a, const double* b, double* dst, std::size_t n);
  void (*mul)(const double* a, const double* b, double* dst, std::size_t n);
  // dst += a ⊙ b
  void (*mul_acc)(const double* a, const double* b, double* dst, std::size_t n);
  // x *= a
  void (*scale)(double a, double* x, std::size_t n);
  // y += a·x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  void (*relu)(const double* x, double* dst, std::size_t n);
  // dx += (x > 0) ? g : 0
  void (*relu_grad)(const double* x, const double* g, double* dx, std::size_t n);

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*sq_diff_sum)(const double* a, const double* b, std::size_t n);

  // C(m,n) += A(m,k)·B(k,n)
  void (*matmul_nn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // C(m,n) += Aᵀ·B with A stored (k,m), B stored (k,n)
  void (*matmul_tn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // C(m,n) += A·Bᵀ with A stored (m,k), B stored (n,k)
  void (*matmul_nt)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);

  // In-place Adam step; bc1 = 1−β1^t and bc2 = 1−β2^t are caller-computed.
  void (*adam_update)(double* w, const double* g, double* m, double* v,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double bc1, double bc2);
};

enum class Variant { kScalar, kAvx2, kNeon };

std::string variant_name(Variant v);
bool variant_available(Variant v);

// Active table. First use picks the best available variant, or the one named
// in the CASCIFF_KERNELS environment variable (scalar|avx2|neon).
const Ops& active();
Variant active_variant();

// Force a variant (throws ConfigError if unavailable). Not thread-safe;
// intended for tests and the env override at startup.
void select(Variant v);

const Ops& scalar_ops();

}  // namespace casciff::kernels
