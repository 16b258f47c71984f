#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "casciff/kernels.hpp"
#include "casciff/rng.hpp"
#include "doctest.h"

using namespace casciff;
using kernels::Ops;

namespace {

std::vector<double> random_vec(std::size_t n, SplitMix64& rng, double lo = -2.0,
                               double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.next_double();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Sizes around the 4-lane boundaries plus larger blocks.
const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100, 257};

// Naive matmul in extended precision: the shared approximate oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (std::size_t p = 0; p < k; ++p)
        acc += static_cast<long double>(a[i * k + p]) * static_cast<long double>(b[p * n + j]);
      c[i * n + j] = static_cast<double>(acc);
    }
  return c;
}

std::vector<double> transpose(const std::vector<double>& a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

bool has_simd() {
  return kernels::variant_available(kernels::Variant::kAvx2) ||
         kernels::variant_available(kernels::Variant::kNeon);
}

kernels::Variant simd_variant() {
  return kernels::variant_available(kernels::Variant::kAvx2) ? kernels::Variant::kAvx2
                                                             : kernels::Variant::kNeon;
}

struct VariantGuard {
  kernels::Variant before = kernels::active_variant();
  ~VariantGuard() { kernels::select(before); }
};

}  // namespace

TEST_CASE("variant plumbing") {
  CHECK(kernels::variant_available(kernels::Variant::kScalar));
  CHECK(kernels::variant_name(kernels::Variant::kScalar) == "scalar");
  CHECK(kernels::variant_name(kernels::Variant::kAvx2) == "avx2");
  CHECK(kernels::variant_name(kernels::Variant::kNeon) == "neon");
  VariantGuard guard;
  kernels::select(kernels::Variant::kScalar);
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK(kernels::active_variant() == kernels::Variant::kScalar);
}

TEST_CASE("elementwise and reduction ops match the scalar reference bit for bit") {
  if (!has_simd()) return;  // only the reference is built on this machine
  const Ops& ref = kernels::scalar_ops();
  VariantGuard guard;
  kernels::select(simd_variant());
  const Ops& vec = kernels::active();

  SplitMix64 rng(0xc001d00dULL);
  for (std::size_t n : kSizes) {
    std::vector<double> a = random_vec(n, rng), b = random_vec(n, rng);
    std::vector<double> r(n), s(n);

    ref.add(a.data(), b.data(), r.data(), n);
    vec.add(a.data(), b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    ref.sub(a.data(), b.data(), r.data(), n);
    vec.sub(a.data(), b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    ref.mul(a.data(), b.data(), r.data(), n);
    vec.mul(a.data(), b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    r = a;
    s = a;
    ref.mul_acc(a.data(), b.data(), r.data(), n);
    vec.mul_acc(a.data(), b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    r = a;
    s = a;
    ref.scale(-1.75, r.data(), n);
    vec.scale(-1.75, s.data(), n);
    CHECK(bit_equal(r, s));

    r = a;
    s = a;
    ref.axpy(0.37, b.data(), r.data(), n);
    vec.axpy(0.37, b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    ref.relu(a.data(), r.data(), n);
    vec.relu(a.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    r.assign(n, 0.5);
    s.assign(n, 0.5);
    ref.relu_grad(a.data(), b.data(), r.data(), n);
    vec.relu_grad(a.data(), b.data(), s.data(), n);
    CHECK(bit_equal(r, s));

    CHECK(ref.dot(a.data(), b.data(), n) == vec.dot(a.data(), b.data(), n));
    CHECK(ref.sum(a.data(), n) == vec.sum(a.data(), n));
    CHECK(ref.sq_diff_sum(a.data(), b.data(), n) == vec.sq_diff_sum(a.data(), b.data(), n));
  }
}

TEST_CASE("elementwise semantics against plain loops") {
  const Ops& ops = kernels::scalar_ops();
  SplitMix64 rng(42);
  const std::size_t n = 13;
  std::vector<double> a = random_vec(n, rng), b = random_vec(n, rng);

  std::vector<double> dst(n);
  ops.add(a.data(), b.data(), dst.data(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(dst[i] == a[i] + b[i]);
  ops.sub(a.data(), b.data(), dst.data(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(dst[i] == a[i] - b[i]);
  ops.mul(a.data(), b.data(), dst.data(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(dst[i] == a[i] * b[i]);

  dst.assign(n, 1.0);
  ops.mul_acc(a.data(), b.data(), dst.data(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(dst[i] == 1.0 + a[i] * b[i]);

  dst = a;
  ops.axpy(2.5, b.data(), dst.data(), n);
  for (std::size_t i = 0; i < n; ++i) CHECK(dst[i] == a[i] + 2.5 * b[i]);

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  CHECK(ops.dot(a.data(), b.data(), n) == doctest::Approx(acc).epsilon(1e-14));

  acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(ops.sq_diff_sum(a.data(), b.data(), n) == doctest::Approx(acc).epsilon(1e-14));
}

TEST_CASE("relu and its gradient treat zero as off") {
  const Ops& ops = kernels::scalar_ops();
  const std::vector<double> x = {-1.0, 0.0, 2.0, -0.0, 3.5};
  const std::vector<double> g = {10.0, 10.0, 10.0, 10.0, 10.0};
  std::vector<double> y(x.size()), dx(x.size(), 1.0);
  ops.relu(x.data(), y.data(), x.size());
  CHECK(y == std::vector<double>{0.0, 0.0, 2.0, 0.0, 3.5});
  ops.relu_grad(x.data(), g.data(), dx.data(), x.size());
  CHECK(dx == std::vector<double>{1.0, 1.0, 11.0, 1.0, 11.0});
}

TEST_CASE("matmul variants accumulate and match the extended-precision oracle") {
  const Ops& ref = kernels::scalar_ops();
  SplitMix64 rng(7);
  const std::size_t shapes[][3] = {{1, 1, 1}, {1, 5, 1},  {2, 3, 4},  {3, 1, 7},
                                   {4, 4, 4}, {5, 8, 3},  {7, 7, 9},  {1, 64, 1},
                                   {6, 17, 5}, {9, 33, 8}, {12, 20, 11}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], k = sh[1], n = sh[2];
    std::vector<double> a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> want = naive_matmul(a, b, m, k, n);

    std::vector<double> c(m * n, 0.0);
    ref.matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i)
      CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-13));

    // += semantics: a preloaded output shifts by exactly the product.
    std::vector<double> acc(m * n, 3.0);
    ref.matmul_nn(a.data(), b.data(), acc.data(), m, k, n);
    for (std::size_t i = 0; i < acc.size(); ++i)
      CHECK(acc[i] == doctest::Approx(want[i] + 3.0).epsilon(1e-13));

    // tn: A stored transposed (k, m).
    std::vector<double> at = transpose(a, m, k);
    std::vector<double> ct(m * n, 0.0);
    ref.matmul_tn(at.data(), b.data(), ct.data(), m, k, n);
    for (std::size_t i = 0; i < ct.size(); ++i)
      CHECK(ct[i] == doctest::Approx(want[i]).epsilon(1e-13));

    // nt: B stored transposed (n, k).
    std::vector<double> bt = transpose(b, k, n);
    std::vector<double> cn(m * n, 0.0);
    ref.matmul_nt(a.data(), bt.data(), cn.data(), m, k, n);
    for (std::size_t i = 0; i < cn.size(); ++i)
      CHECK(cn[i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
}

TEST_CASE("matmul variants are bit-identical across kernel tables") {
  if (!has_simd()) return;
  const Ops& ref = kernels::scalar_ops();
  VariantGuard guard;
  kernels::select(simd_variant());
  const Ops& vec = kernels::active();

  SplitMix64 rng(99);
  const std::size_t shapes[][3] = {{1, 1, 1},  {2, 3, 4},   {5, 8, 3},   {7, 7, 9},
                                   {6, 17, 5}, {9, 33, 8},  {12, 20, 11}, {3, 100, 2},
                                   {16, 16, 16}, {11, 13, 31}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], k = sh[1], n = sh[2];
    std::vector<double> a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> at = transpose(a, m, k), bt = transpose(b, k, n);

    std::vector<double> r(m * n, 0.25), s(m * n, 0.25);
    ref.matmul_nn(a.data(), b.data(), r.data(), m, k, n);
    vec.matmul_nn(a.data(), b.data(), s.data(), m, k, n);
    CHECK(bit_equal(r, s));

    r.assign(m * n, -0.5);
    s.assign(m * n, -0.5);
    ref.matmul_tn(at.data(), b.data(), r.data(), m, k, n);
    vec.matmul_tn(at.data(), b.data(), s.data(), m, k, n);
    CHECK(bit_equal(r, s));

    r.assign(m * n, 0.0);
    s.assign(m * n, 0.0);
    ref.matmul_nt(a.data(), bt.data(), r.data(), m, k, n);
    vec.matmul_nt(a.data(), bt.data(), s.data(), m, k, n);
    CHECK(bit_equal(r, s));
  }
}

TEST_CASE("adam_update matches the reference expression and the simd table") {
  const Ops& ref = kernels::scalar_ops();
  SplitMix64 rng(1234);
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t n : kSizes) {
    std::vector<double> w = random_vec(n, rng), g = random_vec(n, rng);
    std::vector<double> m = random_vec(n, rng, 0.0, 0.1), v = random_vec(n, rng, 0.0, 0.1);
    const double bc1 = 1.0 - std::pow(b1, 3), bc2 = 1.0 - std::pow(b2, 3);

    std::vector<double> w2 = w, g2 = g, m2 = m, v2 = v;
    ref.adam_update(w2.data(), g2.data(), m2.data(), v2.data(), n, lr, b1, b2, eps, bc1, bc2);

    for (std::size_t i = 0; i < n; ++i) {
      const double mi = b1 * m[i] + (1.0 - b1) * g[i];
      const double vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double want = w[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
      CHECK(w2[i] == doctest::Approx(want).epsilon(1e-14));
      CHECK(m2[i] == doctest::Approx(mi).epsilon(1e-14));
      CHECK(v2[i] == doctest::Approx(vi).epsilon(1e-14));
    }

    if (has_simd()) {
      VariantGuard guard;
      kernels::select(simd_variant());
      const Ops& vec = kernels::active();
      std::vector<double> w3 = w, m3 = m, v3 = v;
      vec.adam_update(w3.data(), g.data(), m3.data(), v3.data(), n, lr, b1, b2, eps, bc1, bc2);
      CHECK(bit_equal(w2, w3));
      CHECK(bit_equal(m2, m3));
      CHECK(bit_equal(v2, v3));
    }
  }
}
