#include "kernels_impl.hpp"

#include <arm_neon.h>

#include <cmath>
#include <cstddef>

// NEON (aarch64) mirrors of the scalar reference kernels. Two 2-lane
// registers stand in for the 4-lane accumulator tree so the reduction order
// matches the contract in kernels.hpp exactly.

namespace casciff::kernels {
namespace {

inline double hcombine(float64x2_t acc01, float64x2_t acc23) {
  // lanes: acc01 = (l0, l1), acc23 = (l2, l3); combine as (l0+l2)+(l1+l3).
  const float64x2_t s = vaddq_f64(acc01, acc23);
  return vgetq_lane_f64(s, 0) + vgetq_lane_f64(s, 1);
}

void v_add(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(dst + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(dst + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(dst + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void v_mul_acc(const double* a, const double* b, double* dst, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t prod = vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    vst1q_f64(dst + i, vaddq_f64(vld1q_f64(dst + i), prod));
  }
  for (; i < n; ++i) dst[i] += a[i] * b[i];
}

void v_scale(double a, double* x, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), av));
  for (; i < n; ++i) x[i] *= a;
}

void v_axpy(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t prod = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void v_relu(const double* x, double* dst, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xv = vld1q_f64(x + i);
    const uint64x2_t mask = vcgtq_f64(xv, zero);
    vst1q_f64(dst + i, vbslq_f64(mask, xv, zero));
  }
  for (; i < n; ++i) dst[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_grad(const double* x, const double* g, double* dx, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t mask = vcgtq_f64(vld1q_f64(x + i), zero);
    const float64x2_t gv = vbslq_f64(mask, vld1q_f64(g + i), zero);
    vst1q_f64(dx + i, vaddq_f64(vld1q_f64(dx + i), gv));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

double v_dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0), acc23 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double s = hcombine(acc01, acc23);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double v_sum(const double* x, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0), acc23 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    acc01 = vaddq_f64(acc01, vld1q_f64(x + i));
    acc23 = vaddq_f64(acc23, vld1q_f64(x + i + 2));
  }
  double s = hcombine(acc01, acc23);
  for (; i < n; ++i) s += x[i];
  return s;
}

double v_sq_diff_sum(const double* a, const double* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0), acc23 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  const std::size_t n4 = n & ~std::size_t(3);
  for (; i < n4; i += 4) {
    const float64x2_t d0 = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    const float64x2_t d1 = vsubq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    acc01 = vaddq_f64(acc01, vmulq_f64(d0, d0));
    acc23 = vaddq_f64(acc23, vmulq_f64(d1, d1));
  }
  double s = hcombine(acc01, acc23);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline void axpy_row(double av, const double* brow, double* crow, std::size_t n) {
  const float64x2_t avv = vdupq_n_f64(av);
  std::size_t j = 0;
  for (; j + 2 <= n; j += 2) {
    const float64x2_t prod = vmulq_f64(avv, vld1q_f64(brow + j));
    vst1q_f64(crow + j, vaddq_f64(vld1q_f64(crow + j), prod));
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

void v_matmul_nn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      axpy_row(av, b + p * n, crow, n);
    }
  }
}

void v_matmul_tn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      axpy_row(av, brow, c + i * n, n);
    }
  }
}

void v_matmul_nt(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += v_dot(arow, b + j * k, k);
  }
}

void v_adam_update(double* w, const double* g, double* m, double* v,
                   std::size_t n, double lr, double beta1, double beta2,
                   double eps, double bc1, double bc2) {
  const double om1 = 1.0 - beta1;
  const double om2 = 1.0 - beta2;
  const float64x2_t b1v = vdupq_n_f64(beta1);
  const float64x2_t b2v = vdupq_n_f64(beta2);
  const float64x2_t om1v = vdupq_n_f64(om1);
  const float64x2_t om2v = vdupq_n_f64(om2);
  const float64x2_t bc1v = vdupq_n_f64(bc1);
  const float64x2_t bc2v = vdupq_n_f64(bc2);
  const float64x2_t epsv = vdupq_n_f64(eps);
  const float64x2_t lrv = vdupq_n_f64(lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t gv = vld1q_f64(g + i);
    float64x2_t mv = vld1q_f64(m + i);
    float64x2_t vv = vld1q_f64(v + i);
    mv = vaddq_f64(vmulq_f64(b1v, mv), vmulq_f64(om1v, gv));
    vv = vaddq_f64(vmulq_f64(b2v, vv), vmulq_f64(om2v, vmulq_f64(gv, gv)));
    vst1q_f64(m + i, mv);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(mv, bc1v);
    const float64x2_t vhat = vdivq_f64(vv, bc2v);
    const float64x2_t denom = vaddq_f64(vsqrtq_f64(vhat), epsv);
    const float64x2_t upd = vmulq_f64(lrv, vdivq_f64(mhat, denom));
    vst1q_f64(w + i, vsubq_f64(vld1q_f64(w + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + om1 * g[i];
    v[i] = beta2 * v[i] + om2 * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

constexpr Ops kNeonOps = {
    "neon",      v_add,        v_sub,       v_mul,       v_mul_acc,
    v_scale,     v_axpy,       v_relu,      v_relu_grad, v_dot,
    v_sum,       v_sq_diff_sum, v_matmul_nn, v_matmul_tn, v_matmul_nt,
    v_adam_update,
};

}  // namespace

const Ops* neon_ops() { return &kNeonOps; }

}  // namespace casciff::kernels
