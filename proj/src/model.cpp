#include "casciff/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "casciff/errors.hpp"
#include "casciff/kernels.hpp"
#include "casciff/optim.hpp"
#include "casciff/rng.hpp"

namespace casciff {

void ModelConfig::validate() const {
  auto need_pos = [](std::uint32_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  need_pos(max_hop, "max_hop");
  need_pos(per_hop_len, "per_hop_len");
  need_pos(max_nodes, "max_nodes");
  need_pos(embed_dim, "embed_dim");
  need_pos(ae1_h1, "ae1_h1");
  need_pos(ae1_h2, "ae1_h2");
  need_pos(fusion_h, "fusion_h");
  need_pos(reg_hidden, "reg_hidden");
  need_pos(cls_hidden, "cls_hidden");
  need_pos(decay_intervals, "decay_intervals");
  if (!(window_w > 0.0)) throw ConfigError("window_w must be positive");
  if (!(decay_interval > 0.0)) throw ConfigError("decay_interval must be positive");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("l2 must be finite and >= 0");
  if (!std::isfinite(lambda_init)) throw ConfigError("lambda_init must be finite");
  for (double w : {w_reg, w_cl, w_ae1, w_ae2})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
}

CascadeExample make_example(const LabeledCascade& lc) {
  const auto& acts = lc.observed.activations;
  if (acts.empty()) throw DataError("cascade " + lc.observed.cascade_id + " has no activations");
  if (lc.normalized_times.size() != acts.size())
    throw ConsistencyError("cascade " + lc.observed.cascade_id +
                           ": normalized time count does not match activation count");
  CascadeExample ex;
  ex.cascade_id = lc.observed.cascade_id;
  ex.users.reserve(acts.size());
  ex.parent_row.reserve(acts.size());
  ex.times.reserve(acts.size());
  std::unordered_map<UserId, std::size_t> row_of;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const Activation& a = acts[i];
    if (a.parent == kNoParent) {
      ex.parent_row.push_back(-1);
    } else {
      auto it = row_of.find(a.parent);
      if (it == row_of.end())
        throw ConsistencyError("cascade " + lc.observed.cascade_id + ": parent of user " +
                               std::to_string(a.user) + " not activated earlier");
      ex.parent_row.push_back(static_cast<std::int32_t>(it->second));
    }
    row_of.emplace(a.user, i);
    ex.users.push_back(a.user);
    ex.times.push_back(a.time);
  }
  ex.t_prime = lc.normalized_times;
  ex.target = lc.target_delta_r;
  ex.target_log = std::log2(static_cast<double>(lc.target_delta_r) + 1.0);
  ex.horizon_size = lc.observed.horizon_size;
  return ex;
}

namespace {

Tensor block_from(const CascadeExample& ex, std::size_t upto, bool binary) {
  if (upto == 0 || upto > ex.users.size())
    throw ShapeError("alpha block size " + std::to_string(upto) + " out of range for cascade of " +
                     std::to_string(ex.users.size()));
  Tensor t({upto, upto});
  for (std::size_t r = 0; r < upto; ++r) {
    const double w = binary ? 1.0 : ex.t_prime[r];
    t.at(r, r) = w;
    const std::int32_t pr = ex.parent_row[r];
    if (pr >= 0) t.at(static_cast<std::size_t>(pr), r) = w;
  }
  return t;
}

}  // namespace

Tensor example_alpha_block(const CascadeExample& ex, std::size_t upto) {
  return block_from(ex, upto, false);
}

Tensor example_binary_block(const CascadeExample& ex, std::size_t upto) {
  return block_from(ex, upto, true);
}

double increment_from_log(double pred_log) {
  return std::max(0.0, std::exp2(pred_log) - 1.0);
}

CasciffModel::CasciffModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::uint32_t e = cfg_.embed_dim;
  const std::uint32_t in_dim = cfg_.influence_dim();
  SplitMix64 rng(init_seed);

  auto matrix = [&](const std::string& name, std::uint32_t r, std::uint32_t c) {
    Tensor t({r, c});
    glorot_init(t, rng);
    add_param(name, std::move(t), true);
  };
  auto bias = [&](const std::string& name, std::uint32_t n) {
    add_param(name, Tensor({n}), false);
  };

  if (cfg_.has_influence()) {
    Tensor lam(cfg_.lambda_per_dim ? Tensor({cfg_.max_hop, cfg_.per_hop_len})
                                   : Tensor({cfg_.max_hop}));
    for (std::size_t i = 0; i < lam.size(); ++i) lam.data()[i] = cfg_.lambda_init;
    add_param("influence.lambda", std::move(lam), false);
    matrix("ae1.w1", in_dim, cfg_.ae1_h1);
    bias("ae1.b1", cfg_.ae1_h1);
    matrix("ae1.w2", cfg_.ae1_h1, cfg_.ae1_h2);
    bias("ae1.b2", cfg_.ae1_h2);
    matrix("ae1.w3", cfg_.ae1_h2, e);
    bias("ae1.b3", e);
    matrix("ae1.w4", e, cfg_.ae1_h2);
    bias("ae1.b4", cfg_.ae1_h2);
    matrix("ae1.w5", cfg_.ae1_h2, in_dim);
    bias("ae1.b5", in_dim);
  }
  if (cfg_.has_gcn()) {
    matrix("gcn.w1", cfg_.max_nodes, e);
    bias("gcn.b1", e);
    matrix("gcn.w2", e + cfg_.max_nodes, e);
    bias("gcn.b2", e);
  }
  matrix("fusion.w1", 2 * e, cfg_.fusion_h);
  bias("fusion.b1", cfg_.fusion_h);
  matrix("fusion.w2", cfg_.fusion_h, e);
  bias("fusion.b2", e);
  matrix("fusion.w3", e, e);
  bias("fusion.b3", e);
  matrix("fusion.w4", e, cfg_.fusion_h);
  bias("fusion.b4", cfg_.fusion_h);
  matrix("fusion.w5", cfg_.fusion_h, 2 * e);
  bias("fusion.b5", 2 * e);
  const std::uint32_t gin = cfg_.gru_input_dim();
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string base = std::string("gru.") + dir + ".";
    for (const char* gate : {"z", "r", "n"}) {
      matrix(base + "w" + gate, gin, e);
      matrix(base + "u" + gate, e, e);
      bias(base + "b" + gate, e);
    }
  }
  if (cfg_.has_decay_params()) {
    Tensor lam({cfg_.decay_intervals});
    for (std::size_t i = 0; i < lam.size(); ++i) lam.data()[i] = cfg_.lambda_init;
    add_param("decay.lambda", std::move(lam), false);
  }
  matrix("reg.w1", 2 * e, cfg_.reg_hidden);
  bias("reg.b1", cfg_.reg_hidden);
  matrix("reg.w2", cfg_.reg_hidden, 1);
  bias("reg.b2", 1);
  if (cfg_.has_classifier()) {
    matrix("cls.w1", e, cfg_.cls_hidden);
    bias("cls.b1", cfg_.cls_hidden);
    matrix("cls.w2", cfg_.cls_hidden, 2);
    bias("cls.b2", 2);
  }
}

Parameter& CasciffModel::add_param(const std::string& name, Tensor init, bool regularized) {
  params_.push_back(std::make_unique<Parameter>(name, std::move(init), regularized));
  by_name_.emplace(name, params_.size() - 1);
  return *params_.back();
}

std::vector<Parameter*> CasciffModel::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t CasciffModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

Parameter* CasciffModel::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

Parameter& CasciffModel::p(const std::string& name) {
  Parameter* q = find(name);
  if (!q) throw ConsistencyError("parameter " + name + " not present in this configuration");
  return *q;
}

Value CasciffModel::lv(Ctx& c, Parameter& pr) {
  auto it = c.leaves.find(&pr);
  if (it != c.leaves.end()) return it->second;
  Value v = c.t->leaf(pr);
  c.leaves.emplace(&pr, v);
  return v;
}

Value CasciffModel::zeros(Ctx& c, std::size_t n) { return c.t->input(Tensor({n})); }

namespace {

Value scalar_input(Tape& t, double v) {
  Tensor s({1});
  s.data()[0] = v;
  return t.input(std::move(s));
}

Value sum_values(Tape& t, const std::vector<Value>& vs) {
  Value acc = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc = t.add(acc, vs[i]);
  return acc;
}

}  // namespace

std::pair<Value, Value> CasciffModel::encode_influence_rows(Ctx& c,
                                                            const std::vector<Value>& hop_blocks) {
  if (!cfg_.has_influence()) throw ConfigError("influence encoder is disabled in this configuration");
  if (hop_blocks.size() != cfg_.max_hop)
    throw ShapeError("expected " + std::to_string(cfg_.max_hop) + " hop blocks, got " +
                     std::to_string(hop_blocks.size()));
  Tape& t = *c.t;
  Value lam = lv(c, p("influence.lambda"));
  Value x;
  for (std::uint32_t i = 0; i < cfg_.max_hop; ++i) {
    Value w = cfg_.lambda_per_dim ? t.mul_rows(hop_blocks[i], t.row(lam, i))
                                  : t.scale(t.element(lam, i), hop_blocks[i]);
    x = i == 0 ? w : t.concat_cols(x, w);
  }
  Value h1 = t.relu(t.add_bias(t.matmul(x, lv(c, p("ae1.w1"))), lv(c, p("ae1.b1"))));
  Value h2 = t.relu(t.add_bias(t.matmul(h1, lv(c, p("ae1.w2"))), lv(c, p("ae1.b2"))));
  Value g = t.relu(t.add_bias(t.matmul(h2, lv(c, p("ae1.w3"))), lv(c, p("ae1.b3"))));
  Value d1 = t.relu(t.add_bias(t.matmul(g, lv(c, p("ae1.w4"))), lv(c, p("ae1.b4"))));
  Value rec = t.relu(t.add_bias(t.matmul(d1, lv(c, p("ae1.w5"))), lv(c, p("ae1.b5"))));
  return {g, t.mse(x, rec)};
}

std::pair<Value, Value> CasciffModel::encode_influence(Tape& t, const Tensor& hop_matrix) {
  if (hop_matrix.ndim() != 2 || hop_matrix.rows() != cfg_.max_hop ||
      hop_matrix.cols() != cfg_.per_hop_len)
    throw ShapeError("hop matrix must be (" + std::to_string(cfg_.max_hop) + ", " +
                     std::to_string(cfg_.per_hop_len) + "), got " + hop_matrix.shape_str());
  Ctx c{&t, {}};
  std::vector<Value> blocks;
  for (std::uint32_t i = 0; i < cfg_.max_hop; ++i) {
    Tensor b({1, cfg_.per_hop_len});
    for (std::uint32_t j = 0; j < cfg_.per_hop_len; ++j) b.at(0, j) = hop_matrix.at(i, j);
    blocks.push_back(t.input(std::move(b)));
  }
  auto [g, rec] = encode_influence_rows(c, blocks);
  return {t.row(g, 0), rec};
}

Value CasciffModel::encode_snapshot_impl(Ctx& c, const Tensor& alpha) {
  if (alpha.ndim() != 2 || alpha.rows() != alpha.cols())
    throw ShapeError("snapshot adjacency must be square, got " + alpha.shape_str());
  const std::size_t live = alpha.rows();
  if (live == 0 || live > cfg_.max_nodes)
    throw ShapeError("snapshot has " + std::to_string(live) + " nodes, limit is " +
                     std::to_string(cfg_.max_nodes));
  Tape& t = *c.t;
  // Row-normalize off the tape: the adjacency is data, not a differentiable input.
  Tensor a_hat({live, live});
  for (std::size_t r = 0; r < live; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < live; ++j) s += alpha.at(r, j);
    if (s > 0.0)
      for (std::size_t j = 0; j < live; ++j) a_hat.at(r, j) = alpha.at(r, j) / s;
  }
  Tensor ax({live, live});
  kernels::active().matmul_nn(a_hat.data(), alpha.data(), ax.data(), live, live, live);
  Value vax = t.input(std::move(ax));
  Value vah = t.input(a_hat);
  // Padding columns beyond `live` are zero, so only the matching weight row
  // prefixes contribute; slicing them keeps the computation on live nodes.
  Value w1 = t.slice_rows(lv(c, p("gcn.w1")), live);
  Value h = t.relu(t.add_bias(t.matmul(vax, w1), lv(c, p("gcn.b1"))));
  Value hp = t.concat_cols(h, t.input(alpha));
  Value w2 = t.slice_rows(lv(c, p("gcn.w2")), cfg_.embed_dim + live);
  Value z = t.relu(t.add_bias(t.matmul(t.matmul(vah, hp), w2), lv(c, p("gcn.b2"))));
  return t.mean_pool_rows(z, live);
}

Value CasciffModel::encode_snapshot(Tape& t, const Tensor& alpha_block) {
  if (!cfg_.has_gcn()) throw ConfigError("snapshot encoder is disabled in this configuration");
  Ctx c{&t, {}};
  return encode_snapshot_impl(c, alpha_block);
}

std::pair<Value, Value> CasciffModel::fuse_impl(Ctx& c, Value g_u, Value g_c, double t_prime) {
  Tape& t = *c.t;
  Value x = t.concat({g_u, g_c});
  Value e1 = t.relu(t.add_bias(t.matmul(x, lv(c, p("fusion.w1"))), lv(c, p("fusion.b1"))));
  Value e2 = t.relu(t.add_bias(t.matmul(e1, lv(c, p("fusion.w2"))), lv(c, p("fusion.b2"))));
  Value stru = t.relu(t.add_bias(t.matmul(e2, lv(c, p("fusion.w3"))), lv(c, p("fusion.b3"))));
  Value d1 = t.relu(t.add_bias(t.matmul(stru, lv(c, p("fusion.w4"))), lv(c, p("fusion.b4"))));
  Value rec = t.relu(t.add_bias(t.matmul(d1, lv(c, p("fusion.w5"))), lv(c, p("fusion.b5"))));
  Value ae = t.mse(x, rec);
  if (cfg_.time_off) return {stru, ae};
  Tensor tp({1});
  tp.data()[0] = t_prime;
  return {t.concat({stru, t.input(std::move(tp))}), ae};
}

std::pair<Value, Value> CasciffModel::fuse(Tape& t, Value g_u, Value g_c, double t_prime) {
  Ctx c{&t, {}};
  return fuse_impl(c, g_u, g_c, t_prime);
}

std::vector<Value> CasciffModel::gru_direction(Ctx& c, const std::vector<Value>& steps,
                                               bool forward) {
  Tape& t = *c.t;
  const std::string base = forward ? "gru.fwd." : "gru.bwd.";
  Value wz = lv(c, p(base + "wz")), uz = lv(c, p(base + "uz")), bz = lv(c, p(base + "bz"));
  Value wr = lv(c, p(base + "wr")), ur = lv(c, p(base + "ur")), br = lv(c, p(base + "br"));
  Value wn = lv(c, p(base + "wn")), un = lv(c, p(base + "un")), bn = lv(c, p(base + "bn"));
  Tensor one({cfg_.embed_dim});
  for (std::size_t i = 0; i < one.size(); ++i) one.data()[i] = 1.0;
  Value ones = t.input(std::move(one));
  Value h = zeros(c, cfg_.embed_dim);
  std::vector<Value> out(steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::size_t i = forward ? k : steps.size() - 1 - k;
    Value x = steps[i];
    Value z = t.sigmoid(t.add_bias(t.add(t.matmul(x, wz), t.matmul(h, uz)), bz));
    Value r = t.sigmoid(t.add_bias(t.add(t.matmul(x, wr), t.matmul(h, ur)), br));
    Value n = t.tanh(t.add_bias(t.add(t.matmul(x, wn), t.mul(r, t.matmul(h, un))), bn));
    h = t.add(t.mul(t.sub(ones, z), n), t.mul(z, h));
    out[i] = h;
  }
  return out;
}

std::vector<Value> CasciffModel::encode_sequence_impl(Ctx& c, const std::vector<Value>& steps) {
  if (steps.empty()) throw ShapeError("cannot encode an empty step sequence");
  std::vector<Value> fwd = gru_direction(c, steps, true);
  std::vector<Value> bwd = gru_direction(c, steps, false);
  std::vector<Value> out;
  out.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) out.push_back(c.t->concat({fwd[i], bwd[i]}));
  return out;
}

std::vector<Value> CasciffModel::encode_sequence(Tape& t, const std::vector<Value>& steps) {
  Ctx c{&t, {}};
  return encode_sequence_impl(c, steps);
}

Value CasciffModel::apply_decay_impl(Ctx& c, const std::vector<Value>& hs,
                                     const std::vector<double>& times) {
  if (hs.empty()) throw ShapeError("cannot decay an empty step sequence");
  if (hs.size() != times.size())
    throw ShapeError("decay: " + std::to_string(hs.size()) + " states but " +
                     std::to_string(times.size()) + " times");
  Tape& t = *c.t;
  const bool learned = cfg_.has_decay_params();
  Value lam = learned ? lv(c, p("decay.lambda")) : Value{};
  std::vector<Value> terms;
  terms.reserve(hs.size());
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double ti = times[i];
    if (!(ti >= 0.0) || ti > cfg_.window_w)
      throw DataError("activation time " + std::to_string(ti) + " outside the window of " +
                      std::to_string(cfg_.window_w) + "s");
    if (!learned) {
      terms.push_back(hs[i]);
      continue;
    }
    auto idx = static_cast<std::size_t>(ti / cfg_.decay_interval);
    if (idx >= cfg_.decay_intervals) idx = cfg_.decay_intervals - 1;
    terms.push_back(t.scale(t.element(lam, idx), hs[i]));
  }
  return sum_values(t, terms);
}

Value CasciffModel::apply_decay(Tape& t, const std::vector<Value>& hs,
                                const std::vector<double>& times) {
  Ctx c{&t, {}};
  return apply_decay_impl(c, hs, times);
}

Value CasciffModel::mlp_head(Ctx& c, Value x, const std::string& prefix) {
  Tape& t = *c.t;
  Value h = t.relu(t.add_bias(t.matmul(x, lv(c, p(prefix + ".w1"))), lv(c, p(prefix + ".b1"))));
  return t.add_bias(t.matmul(h, lv(c, p(prefix + ".w2"))), lv(c, p(prefix + ".b2")));
}

Value CasciffModel::predict_increment_impl(Ctx& c, Value v) { return mlp_head(c, v, "reg"); }

Value CasciffModel::predict_increment(Tape& t, Value v) {
  Ctx c{&t, {}};
  return predict_increment_impl(c, v);
}

Value CasciffModel::classify_impl(Ctx& c, Value rows) {
  if (!cfg_.has_classifier()) throw ConfigError("classifier is disabled in this configuration");
  return c.t->softmax_rows(mlp_head(c, rows, "cls"));
}

Value CasciffModel::classify_users(Tape& t, Value g_u_rows) {
  Ctx c{&t, {}};
  return classify_impl(c, g_u_rows);
}

namespace {

// Stack per-hop rows for a user list: block i holds row i of each user's
// (max_hop × s) score matrix.
std::vector<Tensor> hop_blocks_for(const ModelConfig& cfg, const std::vector<UserId>& users,
                                   const InfluenceStore& store) {
  std::vector<Tensor> blocks(cfg.max_hop, Tensor({users.size(), (std::size_t)cfg.per_hop_len}));
  for (std::size_t r = 0; r < users.size(); ++r) {
    auto it = store.find(users[r]);
    if (it == store.end())
      throw ConsistencyError("no influence input for user " + std::to_string(users[r]));
    const Tensor& m = it->second;
    if (m.ndim() != 2 || m.rows() != cfg.max_hop || m.cols() != cfg.per_hop_len)
      throw ShapeError("influence input for user " + std::to_string(users[r]) +
                       " has shape " + m.shape_str());
    for (std::uint32_t i = 0; i < cfg.max_hop; ++i)
      for (std::uint32_t j = 0; j < cfg.per_hop_len; ++j)
        blocks[i].at(r, j) = m.at(i, j);
  }
  return blocks;
}

std::vector<UserId> distinct_users(const std::vector<const CascadeExample*>& batch) {
  std::set<UserId> s;
  for (const CascadeExample* ex : batch)
    for (UserId u : ex->users) s.insert(u);
  return {s.begin(), s.end()};
}

}  // namespace

CasciffModel::CascadeTrace CasciffModel::run_cascade(
    Ctx& c, const CascadeExample& ex, Value gu_rows,
    const std::unordered_map<UserId, std::size_t>& row_of) {
  Tape& t = *c.t;
  const std::size_t m = ex.users.size();
  if (m == 0) throw DataError("cascade " + ex.cascade_id + " has no activations");
  if (m > cfg_.max_nodes)
    throw DataError("cascade " + ex.cascade_id + " has " + std::to_string(m) +
                    " observed nodes, limit is " + std::to_string(cfg_.max_nodes));
  CascadeTrace tr;
  std::vector<Value> steps;
  steps.reserve(m);
  for (std::size_t j = 1; j <= m; ++j) {
    Value g_c = cfg_.has_gcn() ? encode_snapshot_impl(c, block_from(ex, j, cfg_.time_off))
                               : zeros(c, cfg_.embed_dim);
    Value g_u;
    if (cfg_.has_influence()) {
      auto it = row_of.find(ex.users[j - 1]);
      if (it == row_of.end())
        throw ConsistencyError("user " + std::to_string(ex.users[j - 1]) + " missing from batch");
      g_u = t.row(gu_rows, it->second);
    } else {
      g_u = zeros(c, cfg_.embed_dim);
    }
    auto [stru, ae] = fuse_impl(c, g_u, g_c, ex.t_prime[j - 1]);
    steps.push_back(stru);
    tr.ae2_terms.push_back(ae);
  }
  std::vector<Value> hs = encode_sequence_impl(c, steps);
  tr.embedding = apply_decay_impl(c, hs, ex.times);
  tr.pred_log = predict_increment_impl(c, tr.embedding);
  return tr;
}

Value CasciffModel::cascade_embedding(Tape& t, const CascadeExample& ex,
                                      const InfluenceStore& store) {
  Ctx c{&t, {}};
  Value gu;
  std::unordered_map<UserId, std::size_t> row_of;
  if (cfg_.has_influence()) {
    std::vector<const CascadeExample*> one{&ex};
    std::vector<UserId> users = distinct_users(one);
    for (std::size_t i = 0; i < users.size(); ++i) row_of.emplace(users[i], i);
    std::vector<Value> blocks;
    for (Tensor& b : hop_blocks_for(cfg_, users, store)) blocks.push_back(t.input(std::move(b)));
    gu = encode_influence_rows(c, blocks).first;
  }
  return run_cascade(c, ex, gu, row_of).embedding;
}

double CasciffModel::predict_log(const CascadeExample& ex, const InfluenceStore& store) {
  Tape t;
  Ctx c{&t, {}};
  Value gu;
  std::unordered_map<UserId, std::size_t> row_of;
  if (cfg_.has_influence()) {
    std::vector<const CascadeExample*> one{&ex};
    std::vector<UserId> users = distinct_users(one);
    for (std::size_t i = 0; i < users.size(); ++i) row_of.emplace(users[i], i);
    std::vector<Value> blocks;
    for (Tensor& b : hop_blocks_for(cfg_, users, store)) blocks.push_back(t.input(std::move(b)));
    gu = encode_influence_rows(c, blocks).first;
  }
  return t.value(run_cascade(c, ex, gu, row_of).pred_log).data()[0];
}

Value CasciffModel::batch_loss(Tape& t, const std::vector<const CascadeExample*>& batch,
                               const InfluenceStore& store,
                               const std::vector<char>& leader_by_user,
                               LossBreakdown* breakdown) {
  if (batch.empty()) throw ShapeError("batch is empty");
  Ctx c{&t, {}};
  LossBreakdown bd;
  std::vector<Value> pieces;

  Value gu;
  std::unordered_map<UserId, std::size_t> row_of;
  Value ae1, cls_loss;
  if (cfg_.has_influence()) {
    std::vector<UserId> users = distinct_users(batch);
    bd.batch_users = users.size();
    for (std::size_t i = 0; i < users.size(); ++i) row_of.emplace(users[i], i);
    std::vector<Value> blocks;
    for (Tensor& b : hop_blocks_for(cfg_, users, store)) blocks.push_back(t.input(std::move(b)));
    auto enc = encode_influence_rows(c, blocks);
    gu = enc.first;
    ae1 = enc.second;
    if (cfg_.has_classifier()) {
      std::vector<std::size_t> labels;
      labels.reserve(users.size());
      for (UserId u : users) {
        if (u >= leader_by_user.size())
          throw ConsistencyError("no leader label for user " + std::to_string(u));
        labels.push_back(leader_by_user[u] ? 1 : 0);
      }
      cls_loss = c.t->cross_entropy(classify_impl(c, gu), std::move(labels));
    }
  }

  std::vector<Value> reg_terms, ae2_terms;
  reg_terms.reserve(batch.size());
  for (const CascadeExample* ex : batch) {
    CascadeTrace tr = run_cascade(c, *ex, gu, row_of);
    Tensor tgt({1});
    tgt.data()[0] = ex->target_log;
    reg_terms.push_back(t.mse(tr.pred_log, t.input(std::move(tgt))));
    for (Value v : tr.ae2_terms) ae2_terms.push_back(v);
  }
  bd.fusion_steps = ae2_terms.size();

  Value reg = t.scale(scalar_input(t, 1.0 / static_cast<double>(reg_terms.size())),
                      sum_values(t, reg_terms));
  Value ae2 = t.scale(scalar_input(t, 1.0 / static_cast<double>(ae2_terms.size())),
                      sum_values(t, ae2_terms));
  bd.reg = t.value(reg).data()[0];
  bd.ae2 = t.value(ae2).data()[0];
  auto weighted = [&](Value v, double w) {
    return w == 1.0 ? v : t.scale(scalar_input(t, w), v);
  };
  pieces.push_back(weighted(reg, cfg_.w_reg));
  pieces.push_back(weighted(ae2, cfg_.w_ae2));
  if (ae1.valid()) {
    bd.ae1 = t.value(ae1).data()[0];
    pieces.push_back(weighted(ae1, cfg_.w_ae1));
  }
  if (cls_loss.valid()) {
    bd.cl = t.value(cls_loss).data()[0];
    pieces.push_back(weighted(cls_loss, cfg_.w_cl));
  }
  if (cfg_.l2 > 0.0) {
    std::vector<Value> reg_leaves;
    for (auto& pr : params_)
      if (pr->regularized) reg_leaves.push_back(lv(c, *pr));
    if (!reg_leaves.empty()) {
      Value rgl = t.scale(scalar_input(t, cfg_.l2), t.sum_of_squares(reg_leaves));
      bd.rgl = t.value(rgl).data()[0];
      pieces.push_back(rgl);
    }
  }
  Value total = sum_values(t, pieces);
  bd.total = t.value(total).data()[0];
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace casciff
