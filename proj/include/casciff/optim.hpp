#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "casciff/rng.hpp"
#include "casciff/tape.hpp"
#include "casciff/tensor.hpp"

namespace casciff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Gradients live on the Parameters; step() applies
// them and leaves them untouched (call zero_grad() before the next backward).
// Stepping twice without a fresh backward pass in between is a bug, so step()
// throws NumericError when no new backward() happened since the last step.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const AdamConfig& config() const { return cfg_; }

  struct State {
    std::uint64_t steps = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
  };
  State export_state() const;
  // Throws ConsistencyError when the state does not match the parameter list.
  void import_state(const State& s);

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
  std::uint64_t seen_generation_ = 0;
};

// Uniform Glorot fill: ±sqrt(6/(fan_in+fan_out)), fans from the matrix shape.
void glorot_init(Tensor& w, SplitMix64& rng);
// Uniform fill in [lo, hi).
void uniform_init(Tensor& w, SplitMix64& rng, double lo, double hi);

// Loss evaluation hook for the gradient checker. Must rebuild the forward
// pass from the parameters' current values. When with_grads is set it also
// runs backward, accumulating into Parameter::grad (caller zeroes first).
// min_abs_relu receives the smallest |relu pre-activation| on the tape.
using CheckedForward = std::function<double(bool with_grads, double* min_abs_relu)>;

struct GradCheckConfig {
  double eps = 1e-5;          // central-difference step
  double tol = 1e-4;          // max allowed relative error
  double kink_margin = 10.0;  // skip coords when min |relu input| < margin·eps
  std::size_t max_coords_per_param = 200;
  std::uint64_t seed = 0x9dc42f7b0c11e5ULL;  // coordinate subsampling
};

struct GradCheckCoord {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckParamStat {
  std::string param;
  std::size_t checked = 0;
  std::size_t skipped_kink = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kink = 0;
  std::size_t failed = 0;
  double max_rel_err = 0.0;
  GradCheckCoord worst;
  std::vector<GradCheckCoord> failures;  // first 16
  std::vector<GradCheckParamStat> per_param;

  // Every parameter must have at least one verified coordinate.
  bool ok() const;
  std::string summary_line() const;
};

// Central-difference check of d(loss)/d(param) for every listed parameter.
// rel_err = |analytic − numeric| / max(|analytic|, |numeric|, 1e−8).
// Coordinates whose base or perturbed evaluations put any relu input within
// kink_margin·eps of zero are skipped (the loss is not differentiable there).
GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const CheckedForward& f, const GradCheckConfig& cfg);

}  // namespace casciff
