#include "casciff/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "casciff/errors.hpp"
#include "casciff/kernels.hpp"

namespace casciff {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
}

std::string format_shortest(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return {buf, end};
}

PreparedData prepare(DatasetSplit split, std::size_t user_count, const HopSampleConfig& hop_cfg,
                     std::uint64_t dataset_seed, double leader_percentile,
                     const InfluenceStore* cached) {
  GlobalGraph graph = build_global_graph(split.train, user_count);
  std::set<UserId> users;
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (const LabeledCascade& lc : *part)
      for (const Activation& a : lc.observed.activations) users.insert(a.user);
  InfluenceStore store;
  if (cached != nullptr) {
    for (UserId u : users)
      if (cached->find(u) == cached->end())
        throw ConsistencyError("influence cache is missing user " + std::to_string(u));
    store = *cached;
  } else {
    store = compute_influence_inputs(graph, {users.begin(), users.end()}, hop_cfg, dataset_seed);
  }
  std::vector<char> leader_by_user(user_count, 0);
  for (const LeaderLabel& l : label_opinion_leaders(graph, leader_percentile))
    leader_by_user[l.user] = l.is_leader ? 1 : 0;

  PreparedData pd{std::move(split), std::move(graph), std::move(store),
                  std::move(leader_by_user), {}, {}, {}};
  for (const LabeledCascade& lc : pd.split.train) pd.train.push_back(make_example(lc));
  for (const LabeledCascade& lc : pd.split.valid) pd.valid.push_back(make_example(lc));
  for (const LabeledCascade& lc : pd.split.test) pd.test.push_back(make_example(lc));
  return pd;
}

namespace {

double validation_monitor(CasciffModel& model, const PreparedData& data, const TrainConfig& cfg) {
  if (cfg.monitor_total_loss) {
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < data.valid.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(data.valid.size(), at + cfg.batch_size);
      std::vector<const CascadeExample*> batch;
      for (std::size_t i = at; i < end; ++i) batch.push_back(&data.valid[i]);
      Tape tape;
      LossBreakdown bd;
      model.batch_loss(tape, batch, data.influence, data.leader_by_user, &bd);
      sum += bd.total;
      ++batches;
    }
    return sum / static_cast<double>(batches);
  }
  double sum = 0.0;
  for (const CascadeExample& ex : data.valid) {
    const double d = model.predict_log(ex, data.influence) - ex.target_log;
    sum += d * d;
  }
  return sum / static_cast<double>(data.valid.size());
}

}  // namespace

TrainResult train_model(CasciffModel& model, Adam& opt, const PreparedData& data,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.valid.empty()) throw DataError("validation split is empty");

  const std::vector<Parameter*> params = model.parameters();
  std::vector<Tensor> best_values;
  TrainResult res;
  res.best_val = std::numeric_limits<double>::infinity();
  std::uint32_t flat_epochs = 0;

  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng = SplitMix64::derive(cfg.seed, epoch);
    shuffle(order, rng);

    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<const CascadeExample*> batch;
      batch.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) batch.push_back(&data.train[order[i]]);
      Tape tape;
      LossBreakdown bd;
      Value loss = model.batch_loss(tape, batch, data.influence, data.leader_by_user, &bd);
      if (!std::isfinite(bd.total))
        throw NumericError("training diverged: non-finite loss in batch " +
                           std::to_string(batches + 1) + " of epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      sum.total += bd.total;
      sum.reg += bd.reg;
      sum.cl += bd.cl;
      sum.ae1 += bd.ae1;
      sum.ae2 += bd.ae2;
      sum.rgl += bd.rgl;
      ++batches;
    }
    const auto inv = 1.0 / static_cast<double>(batches);
    sum.total *= inv;
    sum.reg *= inv;
    sum.cl *= inv;
    sum.ae1 *= inv;
    sum.ae2 *= inv;
    sum.rgl *= inv;

    EpochStat st;
    st.epoch = epoch;
    st.train_loss = sum;
    st.val_monitor = validation_monitor(model, data, cfg);
    st.improved = st.val_monitor < res.best_val;
    if (st.improved) {
      res.best_val = st.val_monitor;
      res.best_epoch = epoch;
      best_values.clear();
      for (const Parameter* p : params) best_values.push_back(p->value);
      flat_epochs = 0;
    } else {
      ++flat_epochs;
    }
    st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count();
    res.epochs.push_back(st);
    if (flat_epochs >= cfg.patience) break;
  }

  if (!best_values.empty())
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = best_values[i];
      params[i]->zero_grad();
    }
  return res;
}

RegressionMetrics regression_metrics(const std::vector<std::pair<double, double>>& true_pred) {
  if (true_pred.empty()) throw DataError("cannot evaluate an empty set");
  RegressionMetrics m;
  m.count = true_pred.size();
  double sq = 0.0, rel = 0.0;
  for (const auto& [y, yhat] : true_pred) {
    if (y < 0.0 || yhat < 0.0) throw DataError("negative cascade size in evaluation");
    const double ly = std::log2(y + 1.0), lp = std::log2(yhat + 1.0);
    sq += (ly - lp) * (ly - lp);
    if (y > 0.0)
      rel += std::abs(ly - lp) / ly;
    else
      ++m.zero_targets;
  }
  m.msle = sq / static_cast<double>(m.count);
  const std::size_t pos = m.count - m.zero_targets;
  m.mape = pos ? rel / static_cast<double>(pos) : 0.0;
  return m;
}

RegressionMetrics evaluate(CasciffModel& model, const std::vector<CascadeExample>& examples,
                           const InfluenceStore& store) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(examples.size());
  for (const CascadeExample& ex : examples)
    pairs.emplace_back(static_cast<double>(ex.target),
                       increment_from_log(model.predict_log(ex, store)));
  return regression_metrics(pairs);
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "Local") return Variant::kLocal;
  if (name == "Global") return Variant::kGlobal;
  if (name == "Time") return Variant::kTime;
  if (name == "Decay") return Variant::kDecay;
  if (name == "Class") return Variant::kClass;
  throw ConfigError("unknown variant '" + name +
                    "' (expected full, Local, Global, Time, Decay, or Class)");
}

std::string variant_tag(Variant v) {
  switch (v) {
    case Variant::kFull: return "CasCIFF";
    case Variant::kLocal: return "CasCIFF-Local";
    case Variant::kGlobal: return "CasCIFF-Global";
    case Variant::kTime: return "CasCIFF-Time";
    case Variant::kDecay: return "CasCIFF-Decay";
    case Variant::kClass: return "CasCIFF-Class";
  }
  throw ConfigError("unknown variant");
}

ModelConfig variant_config(ModelConfig base, Variant v) {
  switch (v) {
    case Variant::kFull: break;
    case Variant::kLocal: base.local_off = true; break;
    case Variant::kGlobal: base.global_off = true; break;
    case Variant::kTime: base.time_off = true; break;
    case Variant::kDecay: base.decay_off = true; break;
    case Variant::kClass: base.class_off = true; break;
  }
  return base;
}

AblationResult run_ablation(Variant v, const ModelConfig& base, const PreparedData& data,
                            const TrainConfig& cfg, std::uint64_t init_seed) {
  const ModelConfig mc = variant_config(base, v);
  CasciffModel model(mc, init_seed);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(model.parameters(), ac);
  const TrainResult tr = train_model(model, opt, data, cfg);
  AblationResult res;
  res.tag = variant_tag(v);
  res.parameter_count = model.parameter_count();
  res.gru_input_dim = mc.gru_input_dim();
  res.best_val = tr.best_val;
  res.test = evaluate(model, data.test, data.influence);
  res.epochs_run = tr.epochs.size();
  return res;
}

void export_embeddings(const std::string& path, CasciffModel& model,
                       const std::vector<CascadeExample>& examples,
                       const std::vector<char>& leader_by_user, const InfluenceStore& store) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write embeddings '" + path + "'");
  const std::size_t dims = 2 * model.config().embed_dim;
  os << "cascade_id";
  for (std::size_t i = 0; i < dims; ++i) os << ",e" << i;
  os << ",popularity,nodes,leaves,mean_reaction_s,leaders\n";
  for (const CascadeExample& ex : examples) {
    Tape t;
    const Tensor& emb = t.value(model.cascade_embedding(t, ex, store));
    if (emb.size() != dims)
      throw ShapeError("embedding has " + std::to_string(emb.size()) + " dims, expected " +
                       std::to_string(dims));
    os << ex.cascade_id;
    for (std::size_t i = 0; i < dims; ++i) os << ',' << format_shortest(emb[i]);
    std::vector<char> has_child(ex.users.size(), 0);
    double react = 0.0;
    std::size_t react_n = 0;
    for (std::size_t i = 0; i < ex.users.size(); ++i)
      if (ex.parent_row[i] >= 0) {
        has_child[static_cast<std::size_t>(ex.parent_row[i])] = 1;
        react += ex.times[i] - ex.times[static_cast<std::size_t>(ex.parent_row[i])];
        ++react_n;
      }
    std::size_t leaves = 0, leaders = 0;
    for (std::size_t i = 0; i < ex.users.size(); ++i) {
      if (!has_child[i]) ++leaves;
      if (ex.users[i] < leader_by_user.size() && leader_by_user[ex.users[i]]) ++leaders;
    }
    os << ',' << ex.horizon_size << ',' << ex.users.size() << ',' << leaves << ',';
    if (react_n) os << format_shortest(react / static_cast<double>(react_n));
    os << ',' << leaders << '\n';
  }
  os.flush();
  if (!os) throw IoError("failed writing embeddings '" + path + "'");
}

std::vector<SweepPoint> sweep_grid(const ModelConfig& base, const PreparedData& data,
                                   const TrainConfig& cfg, const std::vector<double>& lrs,
                                   const std::vector<double>& l2s, std::uint64_t init_seed) {
  if (lrs.empty() || l2s.empty()) throw ConfigError("sweep grids must be non-empty");
  std::vector<SweepPoint> out;
  for (double lr : lrs)
    for (double l2 : l2s) {
      ModelConfig mc = base;
      mc.l2 = l2;
      TrainConfig tc = cfg;
      tc.lr = lr;
      CasciffModel model(mc, init_seed);
      AdamConfig ac;
      ac.lr = lr;
      Adam opt(model.parameters(), ac);
      const TrainResult tr = train_model(model, opt, data, tc);
      SweepPoint pt;
      pt.lr = lr;
      pt.l2 = l2;
      pt.best_val = tr.best_val;
      pt.test = evaluate(model, data.test, data.influence);
      pt.epochs_run = tr.epochs.size();
      out.push_back(pt);
    }
  return out;
}

std::size_t best_sweep_point(const std::vector<SweepPoint>& points) {
  if (points.empty()) throw ConfigError("no sweep points to choose from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].best_val < points[best].best_val) best = i;
  return best;
}

namespace {

std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace

void write_run_report(const std::string& path, const RunReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write report '" + path + "'");
  os << "tag " << r.tag << '\n'
     << "config_hash " << hex16(r.config_hash) << '\n'
     << "data_hash " << hex16(r.data_hash) << '\n'
     << "config " << r.config_json << '\n'
     << "kernel " << r.kernel_name << '\n'
     << "parameters " << r.parameter_count << '\n'
     << "total_cascades " << r.stats.total_cascades << '\n'
     << "qualifying_cascades " << r.stats.qualifying_cascades << '\n'
     << "train_cascades " << r.stats.train_count << '\n'
     << "valid_cascades " << r.stats.valid_count << '\n'
     << "test_cascades " << r.stats.test_count << '\n'
     << "users " << r.stats.user_count << '\n'
     << "graph_edge_pairs " << r.stats.graph_edge_pairs << '\n'
     << "mean_observed_size " << format_shortest(r.stats.mean_observed_size) << '\n'
     << "mean_target " << format_shortest(r.stats.mean_target) << '\n'
     << "epochs_run " << r.train.epochs.size() << '\n'
     << "best_epoch " << r.train.best_epoch << '\n'
     << "best_val " << format_shortest(r.train.best_val) << '\n'
     << "test_msle " << format_shortest(r.test.msle) << '\n'
     << "test_mape " << format_shortest(r.test.mape) << '\n'
     << "test_count " << r.test.count << '\n'
     << "test_zero_targets " << r.test.zero_targets << '\n';
  os.flush();
  if (!os) throw IoError("failed writing report '" + path + "'");
}

void write_epoch_log(const std::string& path, const TrainResult& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write epoch log '" + path + "'");
  os << "epoch\treg\tcl\tae1\tae2\trgl\ttotal\tval\timproved\twall_ms\n";
  for (const EpochStat& e : r.epochs)
    os << e.epoch << '\t' << format_shortest(e.train_loss.reg) << '\t'
       << format_shortest(e.train_loss.cl) << '\t' << format_shortest(e.train_loss.ae1) << '\t'
       << format_shortest(e.train_loss.ae2) << '\t' << format_shortest(e.train_loss.rgl) << '\t'
       << format_shortest(e.train_loss.total) << '\t' << format_shortest(e.val_monitor) << '\t'
       << (e.improved ? 1 : 0) << '\t' << format_shortest(e.wall_ms) << '\n';
  os.flush();
  if (!os) throw IoError("failed writing epoch log '" + path + "'");
}

}  // namespace casciff
