#include "casciff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "casciff/errors.hpp"
#include "casciff/kernels.hpp"

namespace casciff {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), seen_generation_(backward_generation()) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    if (!p || p->value.size() == 0) throw ConfigError("adam: empty parameter");
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  if (backward_generation() == seen_generation_)
    throw NumericError("adam: step() without a new backward pass");
  seen_generation_ = backward_generation();
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const auto& K = kernels::active();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() != p.value.size())
      throw NumericError("adam: parameter '" + p.name + "' has no gradient buffer");
    K.adam_update(p.value.data(), p.grad.data(), m_[i].data(), v_[i].data(),
                  p.value.size(), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Adam::State Adam::export_state() const {
  State s;
  s.steps = steps_;
  s.m = m_;
  s.v = v_;
  return s;
}

void Adam::import_state(const State& s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size())
    throw ConsistencyError("adam state holds " + std::to_string(s.m.size()) +
                           " moment pairs for " + std::to_string(params_.size()) +
                           " parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!s.m[i].same_shape(params_[i]->value) || !s.v[i].same_shape(params_[i]->value))
      throw ConsistencyError("adam state shape mismatch on '" + params_[i]->name + "'");
  }
  steps_ = s.steps;
  m_ = s.m;
  v_ = s.v;
}

void glorot_init(Tensor& w, SplitMix64& rng) {
  double fan_in, fan_out;
  if (w.ndim() == 2) {
    fan_in = static_cast<double>(w.shape()[0]);
    fan_out = static_cast<double>(w.shape()[1]);
  } else {
    fan_in = 1.0;
    fan_out = static_cast<double>(w.size());
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = (2.0 * rng.next_double() - 1.0) * limit;
}

void uniform_init(Tensor& w, SplitMix64& rng, double lo, double hi) {
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = lo + (hi - lo) * rng.next_double();
}

bool GradCheckReport::ok() const {
  if (failed != 0 || checked == 0) return false;
  for (const auto& ps : per_param)
    if (ps.checked == 0) return false;
  return true;
}

std::string GradCheckReport::summary_line() const {
  std::ostringstream os;
  os << "checked=" << checked << " skipped_kink=" << skipped_kink
     << " failed=" << failed << " max_rel_err=" << max_rel_err;
  if (!worst.param.empty()) os << " worst=" << worst.param << "[" << worst.index << "]";
  return os.str();
}

GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const CheckedForward& f, const GradCheckConfig& cfg) {
  GradCheckReport rep;
  for (Parameter* p : params) p->zero_grad();
  double base_kink = 1e300;
  f(true, &base_kink);

  // Snapshot the analytic gradients before perturbation passes run.
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  const double kink_floor = cfg.kink_margin * cfg.eps;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GradCheckParamStat stat;
    stat.param = p.name;

    std::vector<std::size_t> coords(p.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > cfg.max_coords_per_param) {
      SplitMix64 rng = SplitMix64::derive(cfg.seed, pi);
      shuffle(coords, rng);
      coords.resize(cfg.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    for (std::size_t ci : coords) {
      const double saved = p.value[ci];
      double kp = 1e300, km = 1e300;
      p.value[ci] = saved + cfg.eps;
      const double fp = f(false, &kp);
      p.value[ci] = saved - cfg.eps;
      const double fm = f(false, &km);
      p.value[ci] = saved;

      if (base_kink < kink_floor || kp < kink_floor || km < kink_floor) {
        ++stat.skipped_kink;
        ++rep.skipped_kink;
        continue;
      }

      GradCheckCoord c;
      c.param = p.name;
      c.index = ci;
      c.analytic = analytic[pi][ci];
      c.numeric = (fp - fm) / (2.0 * cfg.eps);
      const double denom = std::max({std::fabs(c.analytic), std::fabs(c.numeric), 1e-8});
      c.rel_err = std::fabs(c.analytic - c.numeric) / denom;

      ++stat.checked;
      ++rep.checked;
      if (c.rel_err > stat.max_rel_err) stat.max_rel_err = c.rel_err;
      if (c.rel_err > rep.max_rel_err) {
        rep.max_rel_err = c.rel_err;
        rep.worst = c;
      }
      if (c.rel_err > cfg.tol) {
        ++rep.failed;
        if (rep.failures.size() < 16) rep.failures.push_back(c);
      }
    }
    rep.per_param.push_back(std::move(stat));
  }
  return rep;
}

}  // namespace casciff
