#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "casciff/errors.hpp"
#include "casciff/model.hpp"
#include "casciff/rng.hpp"
#include "casciff/snapshots.hpp"
#include "casciff/train.hpp"
#include "doctest.h"

using namespace casciff;

namespace {

constexpr double kWindow = 100.0;

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.max_hop = 2;
  cfg.per_hop_len = 3;
  cfg.max_nodes = 6;
  cfg.embed_dim = 4;
  cfg.ae1_h1 = 5;
  cfg.ae1_h2 = 4;
  cfg.fusion_h = 5;
  cfg.reg_hidden = 3;
  cfg.cls_hidden = 3;
  cfg.window_w = kWindow;
  cfg.decay_interval = 25.0;
  cfg.decay_intervals = 4;
  cfg.l2 = 1e-4;
  return cfg;
}

LabeledCascade cascade(const std::string& id, std::vector<UserId> users,
                       std::vector<double> times, std::uint64_t target) {
  LabeledCascade lc;
  lc.observed.cascade_id = id;
  lc.observed.root = users.front();
  lc.observed.horizon_size = users.size() + target;
  for (std::size_t i = 0; i < users.size(); ++i) {
    Activation a;
    a.user = users[i];
    a.parent = i == 0 ? kNoParent : users[i - 1];  // simple chains
    a.time = times[i];
    lc.observed.activations.push_back(a);
    lc.normalized_times.push_back(normalize_time(times[i], kWindow));
  }
  lc.target_delta_r = target;
  return lc;
}

DatasetSplit toy_split() {
  DatasetSplit s;
  s.split_seed = 3;
  s.train.push_back(cascade("t1", {0, 1, 2}, {0.0, 10.0, 30.0}, 4));
  s.train.push_back(cascade("t2", {1, 3}, {0.0, 25.0}, 0));
  s.train.push_back(cascade("t3", {4, 5, 0}, {0.0, 5.0, 60.0}, 2));
  s.train.push_back(cascade("t4", {5, 2}, {0.0, 80.0}, 1));
  s.valid.push_back(cascade("v1", {2, 6}, {0.0, 40.0}, 3));
  s.valid.push_back(cascade("v2", {0, 4}, {0.0, 15.0}, 0));
  s.test.push_back(cascade("s1", {3, 7, 8}, {0.0, 20.0, 90.0}, 5));
  s.test.push_back(cascade("s2", {9}, {0.0}, 2));
  return s;
}

HopSampleConfig toy_hop() {
  HopSampleConfig h;
  h.k = 4;
  h.max_hop = 2;
  h.s = 3;
  return h;
}

PreparedData toy_data() { return prepare(toy_split(), 10, toy_hop(), 17, 50.0); }

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.max_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("regression metrics match an independent computation") {
  // hand values first
  RegressionMetrics m = regression_metrics({{3.0, 1.0}});
  CHECK(m.msle == doctest::Approx(1.0));  // (log2 4 − log2 2)²
  CHECK(m.mape == doctest::Approx(0.5));
  CHECK(m.count == 1);
  CHECK(m.zero_targets == 0);

  m = regression_metrics({{0.0, 0.0}});
  CHECK(m.msle == 0.0);
  CHECK(m.mape == 0.0);  // no positive targets at all
  CHECK(m.zero_targets == 1);

  m = regression_metrics({{0.0, 7.0}, {7.0, 7.0}});
  CHECK(m.msle == doctest::Approx(9.0 / 2.0));  // (0 − 3)²/2 from the zero target
  CHECK(m.mape == 0.0);                         // the positive target is exact
  CHECK(m.zero_targets == 1);

  // 50 random pairs against a long-double oracle
  SplitMix64 rng(123);
  std::vector<std::pair<double, double>> pairs;
  long double sq = 0.0L, rel = 0.0L;
  std::size_t zeros = 0;
  for (int i = 0; i < 50; ++i) {
    const double y = i % 7 == 0 ? 0.0 : std::floor(rng.next_double() * 1000.0);
    const double p = std::floor(rng.next_double() * 1000.0);
    pairs.emplace_back(y, p);
    const long double ly = std::log2(static_cast<long double>(y) + 1.0L);
    const long double lp = std::log2(static_cast<long double>(p) + 1.0L);
    sq += (ly - lp) * (ly - lp);
    if (y > 0.0)
      rel += std::fabs(static_cast<double>(ly - lp)) / static_cast<double>(ly);
    else
      ++zeros;
  }
  m = regression_metrics(pairs);
  CHECK(m.count == 50);
  CHECK(m.zero_targets == zeros);
  CHECK(std::fabs(m.msle - static_cast<double>(sq / 50.0L)) < 1e-12);
  CHECK(std::fabs(m.mape - static_cast<double>(rel / (50.0L - zeros))) < 1e-12);

  CHECK_THROWS_AS(regression_metrics({}), DataError);
  CHECK_THROWS_AS(regression_metrics({{-1.0, 2.0}}), DataError);
  CHECK_THROWS_AS(regression_metrics({{1.0, -2.0}}), DataError);
}

TEST_CASE("prepare builds the graph from the training split only") {
  const PreparedData pd = toy_data();
  CHECK(pd.train.size() == 4);
  CHECK(pd.valid.size() == 2);
  CHECK(pd.test.size() == 2);
  CHECK(pd.train[0].cascade_id == "t1");
  CHECK(pd.leader_by_user.size() == 10);

  // training edges: 0→1, 1→2, 1→3, 4→5, 5→0, 5→2
  CHECK(pd.graph.out_degree(0) == 1);
  CHECK(pd.graph.out_degree(1) == 2);
  CHECK(pd.graph.out_degree(5) == 2);
  CHECK(pd.graph.out_degree(3) == 0);  // s1 is a test cascade, no edges from it
  CHECK(pd.graph.edge_count() == 6);

  // nonzero out-degrees {1,2,2,1}: the 50th percentile threshold is 1,
  // so exactly the propagating users lead
  for (UserId u : {0u, 1u, 4u, 5u}) CHECK(pd.leader_by_user[u] == 1);
  for (UserId u : {2u, 3u, 6u, 7u, 8u, 9u}) CHECK(pd.leader_by_user[u] == 0);

  // influence inputs exist for every user of every part, sized for the model
  for (UserId u = 0; u <= 9; ++u) {
    REQUIRE(pd.influence.count(u) == 1);
    CHECK(pd.influence.at(u).rows() == 2);
    CHECK(pd.influence.at(u).cols() == 3);
  }

  // a cached store is adopted verbatim
  const PreparedData again = prepare(toy_split(), 10, toy_hop(), 17, 50.0, &pd.influence);
  for (const auto& [u, t] : pd.influence) {
    const Tensor& o = again.influence.at(u);
    REQUIRE(o.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(o.data()[i] == t.data()[i]);
  }

  InfluenceStore partial = pd.influence;
  partial.erase(9);
  CHECK_THROWS_AS(prepare(toy_split(), 10, toy_hop(), 17, 50.0, &partial), ConsistencyError);
}

TEST_CASE("evaluate reduces per-cascade predictions to count metrics") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 3);
  const RegressionMetrics got = evaluate(m, pd.test, pd.influence);
  std::vector<std::pair<double, double>> pairs;
  for (const CascadeExample& ex : pd.test)
    pairs.emplace_back(static_cast<double>(ex.target),
                       increment_from_log(m.predict_log(ex, pd.influence)));
  const RegressionMetrics want = regression_metrics(pairs);
  CHECK(got.msle == want.msle);
  CHECK(got.mape == want.mape);
  CHECK(got.count == 2);
  CHECK(got.zero_targets == want.zero_targets);
}

TEST_CASE("a frozen model stops after exactly 1 + patience epochs") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 5);
  AdamConfig ac;
  ac.lr = 0.0;  // every epoch recomputes the same monitor
  Adam opt(m.parameters(), ac);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.batch_size = 2;
  tc.patience = 3;
  tc.max_epochs = 50;
  const TrainResult res = train_model(m, opt, pd, tc);
  REQUIRE(res.epochs.size() == 4);  // first improves off infinity, then 3 flat
  CHECK(res.best_epoch == 1);
  CHECK(res.epochs[0].improved);
  for (std::size_t i = 1; i < res.epochs.size(); ++i) {
    CHECK(!res.epochs[i].improved);
    CHECK(res.epochs[i].val_monitor == res.epochs[0].val_monitor);
  }
  CHECK(res.best_val == res.epochs[0].val_monitor);
}

TEST_CASE("training descends and restores the best parameters") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 7);
  AdamConfig ac;
  ac.lr = 0.01;
  Adam opt(m.parameters(), ac);
  TrainConfig tc;
  tc.lr = 0.01;
  tc.batch_size = 2;
  tc.patience = 8;
  tc.max_epochs = 8;
  tc.seed = 11;
  const TrainResult res = train_model(m, opt, pd, tc);
  REQUIRE(!res.epochs.empty());

  double lowest = res.epochs[0].train_loss.total;
  for (const EpochStat& e : res.epochs) lowest = std::min(lowest, e.train_loss.total);
  CHECK(lowest < res.epochs[0].train_loss.total);  // optimization moved somewhere better
  REQUIRE(res.best_epoch >= 1);
  CHECK(res.best_val <= res.epochs[0].val_monitor);

  // restored parameters reproduce the recorded best validation monitor
  double sum = 0.0;
  for (const CascadeExample& ex : pd.valid) {
    const double d = m.predict_log(ex, pd.influence) - ex.target_log;
    sum += d * d;
  }
  CHECK(sum / static_cast<double>(pd.valid.size()) ==
        doctest::Approx(res.best_val).epsilon(1e-12));

  // per-epoch bookkeeping
  for (std::size_t i = 0; i < res.epochs.size(); ++i) {
    CHECK(res.epochs[i].epoch == i + 1);
    CHECK(res.epochs[i].wall_ms >= 0.0);
    CHECK(std::isfinite(res.epochs[i].train_loss.total));
  }
}

TEST_CASE("the monitor switch watches the combined loss") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 9);
  AdamConfig ac;
  Adam opt(m.parameters(), ac);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 1;
  tc.monitor_total_loss = true;
  const TrainResult res = train_model(m, opt, pd, tc);
  REQUIRE(res.epochs.size() == 1);

  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t at = 0; at < pd.valid.size(); at += tc.batch_size) {
    std::vector<const CascadeExample*> batch;
    for (std::size_t i = at; i < std::min(pd.valid.size(), at + (std::size_t)tc.batch_size); ++i)
      batch.push_back(&pd.valid[i]);
    Tape t;
    LossBreakdown bd;
    m.batch_loss(t, batch, pd.influence, pd.leader_by_user, &bd);
    sum += bd.total;
    ++batches;
  }
  CHECK(res.epochs[0].val_monitor ==
        doctest::Approx(sum / static_cast<double>(batches)).epsilon(1e-12));
}

TEST_CASE("diverging optimization aborts with a numeric error") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 13);
  AdamConfig ac;
  ac.lr = 1e200;  // the first step launches the weights past overflow
  Adam opt(m.parameters(), ac);
  TrainConfig tc;
  tc.lr = 1.0;
  tc.batch_size = 1;
  tc.max_epochs = 5;
  CHECK_THROWS_AS(train_model(m, opt, pd, tc), NumericError);
}

TEST_CASE("empty splits are rejected") {
  PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 1);
  Adam opt(m.parameters(), AdamConfig{});
  TrainConfig tc;
  PreparedData no_train = pd;
  no_train.train.clear();
  CHECK_THROWS_AS(train_model(m, opt, no_train, tc), DataError);
  PreparedData no_valid = pd;
  no_valid.valid.clear();
  CHECK_THROWS_AS(train_model(m, opt, no_valid, tc), DataError);
}

TEST_CASE("variant names, tags and flags line up") {
  CHECK(variant_from_name("full") == Variant::kFull);
  CHECK(variant_from_name("Local") == Variant::kLocal);
  CHECK(variant_from_name("Global") == Variant::kGlobal);
  CHECK(variant_from_name("Time") == Variant::kTime);
  CHECK(variant_from_name("Decay") == Variant::kDecay);
  CHECK(variant_from_name("Class") == Variant::kClass);
  CHECK_THROWS_AS(variant_from_name("Full"), ConfigError);
  CHECK_THROWS_AS(variant_from_name("local"), ConfigError);
  CHECK_THROWS_AS(variant_from_name(""), ConfigError);

  CHECK(variant_tag(Variant::kFull) == "CasCIFF");
  CHECK(variant_tag(Variant::kLocal) == "CasCIFF-Local");
  CHECK(variant_tag(Variant::kGlobal) == "CasCIFF-Global");
  CHECK(variant_tag(Variant::kTime) == "CasCIFF-Time");
  CHECK(variant_tag(Variant::kDecay) == "CasCIFF-Decay");
  CHECK(variant_tag(Variant::kClass) == "CasCIFF-Class");

  const ModelConfig base = toy_config();
  CHECK(!variant_config(base, Variant::kFull).local_off);
  CHECK(variant_config(base, Variant::kLocal).local_off);
  CHECK(variant_config(base, Variant::kGlobal).global_off);
  CHECK(variant_config(base, Variant::kTime).time_off);
  CHECK(variant_config(base, Variant::kDecay).decay_off);
  CHECK(variant_config(base, Variant::kClass).class_off);
}

TEST_CASE("ablation runs report structure and metrics") {
  const PreparedData pd = toy_data();
  const ModelConfig base = toy_config();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 2;
  tc.patience = 2;

  const AblationResult full = run_ablation(Variant::kFull, base, pd, tc, 21);
  CHECK(full.tag == "CasCIFF");
  CHECK(full.parameter_count == CasciffModel(base, 21).parameter_count());
  CHECK(full.gru_input_dim == 5);
  CHECK(full.epochs_run >= 1);
  CHECK(full.epochs_run <= 2);
  CHECK(full.test.count == pd.test.size());
  CHECK(std::isfinite(full.best_val));

  const AblationResult timev = run_ablation(Variant::kTime, base, pd, tc, 21);
  CHECK(timev.tag == "CasCIFF-Time");
  CHECK(timev.gru_input_dim == 4);
  // six GRU input matrices narrow by one row and the decay weights vanish
  CHECK(full.parameter_count - timev.parameter_count ==
        6 * base.embed_dim + base.decay_intervals);

  const AblationResult decay = run_ablation(Variant::kDecay, base, pd, tc, 21);
  CHECK(full.parameter_count - decay.parameter_count == base.decay_intervals);
}

TEST_CASE("exported embeddings carry the documented columns") {
  const PreparedData pd = toy_data();
  CasciffModel m(toy_config(), 25);
  const std::string path = "embeddings_test.csv";
  // t1 is a 3-chain with reaction times 10 and 20; s2 is root-only
  std::vector<CascadeExample> exs = {pd.train[0], pd.test[1]};
  export_embeddings(path, m, exs, pd.leader_by_user, pd.influence);

  std::istringstream is(slurp(path));
  std::string header;
  REQUIRE(std::getline(is, header));
  std::vector<std::string> hcols = split_on(header, ',');
  REQUIRE(hcols.size() == 1 + 8 + 5);  // id, 2E dims, 5 summary columns
  CHECK(hcols[0] == "cascade_id");
  CHECK(hcols[1] == "e0");
  CHECK(hcols[8] == "e7");
  CHECK(hcols[9] == "popularity");
  CHECK(hcols[10] == "nodes");
  CHECK(hcols[11] == "leaves");
  CHECK(hcols[12] == "mean_reaction_s");
  CHECK(hcols[13] == "leaders");

  std::string line1, line2, extra;
  REQUIRE(std::getline(is, line1));
  REQUIRE(std::getline(is, line2));
  CHECK(!std::getline(is, extra));

  const std::vector<std::string> r1 = split_on(line1, ',');
  REQUIRE(r1.size() == 14);
  CHECK(r1[0] == "t1");
  Tape t;
  const Tensor& emb = t.value(m.cascade_embedding(t, exs[0], pd.influence));
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(std::strtod(r1[1 + i].c_str(), nullptr) == doctest::Approx(emb[i]).epsilon(1e-12));
  CHECK(r1[9] == "7");   // horizon size: 3 observed + 4 more
  CHECK(r1[10] == "3");  // nodes
  CHECK(r1[11] == "1");  // only the tail of the chain is childless
  CHECK(std::strtod(r1[12].c_str(), nullptr) == doctest::Approx(15.0));  // (10+20)/2
  CHECK(r1[13] == "2");  // users 0 and 1 lead, user 2 does not

  const std::vector<std::string> r2 = split_on(line2, ',');
  REQUIRE(r2.size() == 14);
  CHECK(r2[0] == "s2");
  CHECK(r2[9] == "3");
  CHECK(r2[10] == "1");
  CHECK(r2[11] == "1");   // the root is its own leaf
  CHECK(r2[12].empty());  // no reaction times in a root-only cascade
  CHECK(r2[13] == "0");
  std::remove(path.c_str());
}

TEST_CASE("sweep grid trains every point and picks the lowest validation") {
  const PreparedData pd = toy_data();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 1;
  const std::vector<double> lrs = {0.01, 0.001};
  const std::vector<double> l2s = {0.0, 1e-4};
  const std::vector<SweepPoint> pts = sweep_grid(toy_config(), pd, tc, lrs, l2s, 29);
  REQUIRE(pts.size() == 4);
  CHECK(pts[0].lr == 0.01);
  CHECK(pts[0].l2 == 0.0);
  CHECK(pts[1].lr == 0.01);
  CHECK(pts[1].l2 == 1e-4);
  CHECK(pts[2].lr == 0.001);
  CHECK(pts[3].l2 == 1e-4);
  for (const SweepPoint& p : pts) {
    CHECK(std::isfinite(p.best_val));
    CHECK(p.epochs_run == 1);
    CHECK(p.test.count == pd.test.size());
  }
  const std::size_t best = best_sweep_point(pts);
  for (const SweepPoint& p : pts) CHECK(pts[best].best_val <= p.best_val);

  CHECK_THROWS_AS(sweep_grid(toy_config(), pd, tc, {}, l2s, 29), ConfigError);
  CHECK_THROWS_AS(best_sweep_point({}), ConfigError);
}

TEST_CASE("format_shortest round trips and stays minimal") {
  CHECK(format_shortest(0.1) == "0.1");
  CHECK(format_shortest(2.0) == "2");
  CHECK(format_shortest(-3.5) == "-3.5");
  CHECK(format_shortest(1600000000.0) == "1.6e+09");
  SplitMix64 rng(31);
  for (int i = 0; i < 200; ++i) {
    const double v = (rng.next_double() - 0.5) * std::exp2((double)rng.next_below(60));
    CHECK(std::strtod(format_shortest(v).c_str(), nullptr) == v);
  }
}

TEST_CASE("the run report prints stable keys and hex hashes") {
  RunReport r;
  r.tag = "CasCIFF";
  r.config_hash = 0xabcULL;
  r.config_json = "{\"seed\":1}";
  r.data_hash = 0xdeadbeef12345678ULL;
  r.stats.total_cascades = 20;
  r.stats.qualifying_cascades = 8;
  r.stats.train_count = 4;
  r.stats.valid_count = 2;
  r.stats.test_count = 2;
  r.stats.user_count = 10;
  r.stats.graph_edge_pairs = 6;
  r.stats.mean_observed_size = 2.25;
  r.stats.mean_target = 2.125;
  r.parameter_count = 663;
  r.kernel_name = "scalar";
  EpochStat e1;
  e1.epoch = 1;
  e1.train_loss.total = 1.5;
  e1.train_loss.reg = 0.5;
  e1.val_monitor = 0.75;
  e1.improved = true;
  e1.wall_ms = 12.5;
  EpochStat e2 = e1;
  e2.epoch = 2;
  e2.val_monitor = 0.8;
  e2.improved = false;
  r.train.epochs = {e1, e2};
  r.train.best_epoch = 1;
  r.train.best_val = 0.75;
  r.test.msle = 0.25;
  r.test.mape = 0.1;
  r.test.count = 2;
  r.test.zero_targets = 1;

  const std::string path = "report_test.txt";
  write_run_report(path, r);
  const std::string want =
      "tag CasCIFF\n"
      "config_hash 0000000000000abc\n"
      "data_hash deadbeef12345678\n"
      "config {\"seed\":1}\n"
      "kernel scalar\n"
      "parameters 663\n"
      "total_cascades 20\n"
      "qualifying_cascades 8\n"
      "train_cascades 4\n"
      "valid_cascades 2\n"
      "test_cascades 2\n"
      "users 10\n"
      "graph_edge_pairs 6\n"
      "mean_observed_size 2.25\n"
      "mean_target 2.125\n"
      "epochs_run 2\n"
      "best_epoch 1\n"
      "best_val 0.75\n"
      "test_msle 0.25\n"
      "test_mape 0.1\n"
      "test_count 2\n"
      "test_zero_targets 1\n";
  CHECK(slurp(path) == want);
  std::remove(path.c_str());

  const std::string lpath = "epochs_test.tsv";
  write_epoch_log(lpath, r.train);
  const std::string lwant =
      "epoch\treg\tcl\tae1\tae2\trgl\ttotal\tval\timproved\twall_ms\n"
      "1\t0.5\t0\t0\t0\t0\t1.5\t0.75\t1\t12.5\n"
      "2\t0.5\t0\t0\t0\t0\t1.5\t0.8\t0\t12.5\n";
  CHECK(slurp(lpath) == lwant);
  std::remove(lpath.c_str());
}
