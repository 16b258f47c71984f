// casciff command-line front end: synth / preprocess / train / eval /
// ablate / export-embeddings / grad-check over the casciff_core library.
//
// Exit codes: 0 success, 1 I/O, 2 usage or validation, 3 consistency.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "casciff/checkpoint.hpp"
#include "casciff/config.hpp"
#include "casciff/errors.hpp"
#include "casciff/influence.hpp"
#include "casciff/ingest.hpp"
#include "casciff/kernels.hpp"
#include "casciff/model.hpp"
#include "casciff/optim.hpp"
#include "casciff/rng.hpp"
#include "casciff/snapshots.hpp"
#include "casciff/tape.hpp"
#include "casciff/train.hpp"

namespace fs = std::filesystem;

namespace {

using namespace casciff;

// Flags shared by the config-driven commands; unset flags defer to --config.
struct CfgOpts {
  std::string config_path;
  std::string data;
  std::string out_dir;
  std::string cache_dir;
  std::optional<double> window, horizon;
  std::optional<std::uint32_t> min_nodes, max_nodes;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> max_epochs, batch_size, patience;
  std::optional<double> lr, l2;
};

void add_config_flags(CLI::App* cmd, CfgOpts& o) {
  cmd->add_option("--config", o.config_path, "run configuration file (JSON)");
  cmd->add_option("--data", o.data, "cascade corpus path");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--cache-dir", o.cache_dir, "cache directory (CASCIFF_CACHE_DIR overrides)");
  cmd->add_option("--window", o.window, "observation window, seconds");
  cmd->add_option("--horizon", o.horizon, "prediction horizon, seconds");
  cmd->add_option("--min-nodes", o.min_nodes, "keep cascades with more observed nodes than this");
  cmd->add_option("--max-nodes", o.max_nodes, "observed-prefix truncation size");
  cmd->add_option("--seed", o.seed, "pipeline seed (split, sampling, init, batching)");
}

void add_train_flags(CLI::App* cmd, CfgOpts& o) {
  cmd->add_option("--max-epochs", o.max_epochs, "epoch cap");
  cmd->add_option("--batch-size", o.batch_size, "mini-batch size");
  cmd->add_option("--patience", o.patience, "early-stopping patience, epochs");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--l2", o.l2, "weight-decay coefficient");
}

RunConfigFile resolve_config(const CfgOpts& o) {
  RunConfigFile cfg =
      o.config_path.empty() ? default_run_config() : load_run_config(o.config_path);
  if (!o.data.empty()) cfg.data_path = o.data;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  if (o.window) cfg.observation.window_w = *o.window;
  if (o.horizon) cfg.observation.horizon_t = *o.horizon;
  if (o.min_nodes) cfg.observation.min_nodes = *o.min_nodes;
  if (o.max_nodes) cfg.observation.max_nodes = *o.max_nodes;
  if (o.seed) cfg.seed = *o.seed;
  if (o.max_epochs) cfg.training.max_epochs = *o.max_epochs;
  if (o.batch_size) cfg.training.batch_size = *o.batch_size;
  if (o.patience) cfg.training.patience = *o.patience;
  if (o.lr) cfg.training.lr = *o.lr;
  if (o.l2) cfg.model.l2 = *o.l2;
  resolve_derived(cfg);
  cfg.validate();
  return cfg;
}

void require_data(const RunConfigFile& cfg) {
  if (cfg.data_path.empty())
    throw ConfigError("a corpus is required: pass --data or set paths.data in the config");
}

// Parse + filter + split + influence inputs, reusing the content-addressed
// influence cache when one exists.
struct Pipeline {
  std::uint64_t data_hash = 0;
  std::size_t total_cascades = 0;
  std::size_t user_count = 0;
  PreparedData data;
};

Pipeline build_pipeline(const RunConfigFile& cfg) {
  require_data(cfg);
  const std::uint64_t data_hash = file_content_hash(cfg.data_path);
  ParseResult parsed = parse_cascade_path(cfg.data_path);
  for (const ParseWarning& w : parsed.warnings)
    std::cerr << "warning: line " << w.line << ": " << w.message << "\n";
  std::vector<LabeledCascade> labeled = filter_and_truncate(parsed.cascades, cfg.observation);
  DatasetSplit split = split_dataset(std::move(labeled), cfg.seed);

  fs::create_directories(cache_dir_for(cfg));
  const std::string ipath = influence_cache_path(cfg, data_hash);
  InfluenceStore cached;
  bool have = false;
  if (fs::exists(ipath)) {
    FileLock lock(ipath + ".lock");
    cached = load_influence_cache(ipath, cfg.sampling, cfg.seed);
    have = true;
  }
  PreparedData pd = prepare(std::move(split), parsed.users.size(), cfg.sampling, cfg.seed,
                            cfg.leader_percentile, have ? &cached : nullptr);
  if (!have) {
    FileLock lock(ipath + ".lock");
    if (!fs::exists(ipath)) save_influence_cache(ipath, pd.influence, cfg.sampling, cfg.seed);
  }
  return Pipeline{data_hash, parsed.cascades.size(), parsed.users.size(), std::move(pd)};
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// --- synth -------------------------------------------------------------------

struct SynthOpts {
  SynthGraphParams graph;
  SynthDiffusionParams diffusion;
  std::size_t cascades = 2000;
  std::uint64_t seed = 7;
  std::string out = "synth.txt";
};

int run_synth(const SynthOpts& o) {
  o.graph.validate();
  o.diffusion.validate();
  SynthResult sr = generate_synthetic(o.graph, o.diffusion, o.cascades, o.seed);
  write_corpus(o.out, sr.cascades, sr.users);
  const std::string manifest = o.out + ".manifest";
  write_synth_manifest(manifest, sr);
  std::cout << "corpus " << o.out << "\n"
            << "manifest " << manifest << "\n"
            << "users " << sr.users.size() << "\n"
            << "cascades " << sr.cascades.size() << "\n"
            << "planted_leaders " << sr.planted_leaders.size() << "\n"
            << "sinks " << sr.sinks.size() << "\n";
  return 0;
}

// --- preprocess --------------------------------------------------------------

int run_preprocess(const CfgOpts& o) {
  RunConfigFile cfg = resolve_config(o);
  Pipeline p = build_pipeline(cfg);
  fs::create_directories(cfg.out_dir);

  const std::string manifest = join_path(cfg.out_dir, "split.tsv");
  write_split_manifest(manifest, p.data.split);

  const std::string spath = snapshot_cache_path(cfg, p.data_hash);
  if (!fs::exists(spath)) {
    std::vector<SnapshotSequence> seqs;
    for (const auto* part : {&p.data.split.train, &p.data.split.valid, &p.data.split.test})
      for (const LabeledCascade& lc : *part) seqs.push_back(build_snapshots(lc, cfg.observation));
    FileLock lock(spath + ".lock");
    if (!fs::exists(spath)) save_snapshot_cache(spath, seqs, cfg.observation.window_w);
  }

  DatasetStats stats = collect_stats(p.total_cascades, p.data.split, p.data.graph, p.user_count);
  const std::string stats_path = join_path(cfg.out_dir, "stats.txt");
  write_stats_report(stats_path, stats);

  std::cout << "split_manifest " << manifest << "\n"
            << "stats_report " << stats_path << "\n"
            << "influence_cache " << influence_cache_path(cfg, p.data_hash) << "\n"
            << "snapshot_cache " << spath << "\n"
            << "total_cascades " << stats.total_cascades << "\n"
            << "qualifying_cascades " << stats.qualifying_cascades << "\n"
            << "train_cascades " << stats.train_count << "\n"
            << "valid_cascades " << stats.valid_count << "\n"
            << "test_cascades " << stats.test_count << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

int run_train(const CfgOpts& o) {
  RunConfigFile cfg = resolve_config(o);
  Pipeline p = build_pipeline(cfg);

  CasciffModel model(cfg.model, cfg.seed);
  AdamConfig acfg;
  acfg.lr = cfg.training.lr;
  Adam opt(model.parameters(), acfg);
  TrainResult tr = train_model(model, opt, p.data, cfg.training);
  RegressionMetrics test = evaluate(model, p.data.test, p.data.influence);

  fs::create_directories(cfg.out_dir);
  const std::string ckpt = join_path(cfg.out_dir, "model.ckpt");
  save_checkpoint(ckpt, CheckpointMeta{config_hash(cfg), canonical_json(cfg)},
                  model.parameters(), &opt);

  RunReport rep;
  rep.config_hash = config_hash(cfg);
  rep.config_json = canonical_json(cfg);
  rep.data_hash = p.data_hash;
  rep.stats = collect_stats(p.total_cascades, p.data.split, p.data.graph, p.user_count);
  rep.parameter_count = model.parameter_count();
  rep.kernel_name = kernels::active().name;
  rep.train = tr;
  rep.test = test;
  const std::string report = join_path(cfg.out_dir, "report.txt");
  write_run_report(report, rep);
  write_epoch_log(join_path(cfg.out_dir, "epochs.tsv"), tr);

  std::cout << "checkpoint " << ckpt << "\n"
            << "report " << report << "\n"
            << "epochs_run " << tr.epochs.size() << "\n"
            << "best_epoch " << tr.best_epoch << "\n"
            << "best_val " << format_shortest(tr.best_val) << "\n"
            << "test_msle " << format_shortest(test.msle) << "\n"
            << "test_mape " << format_shortest(test.mape) << "\n";
  return 0;
}

// --- eval --------------------------------------------------------------------

int check_checkpoint_hash(const RunConfigFile& cfg, const CheckpointMeta& meta) {
  const std::uint64_t expect = config_hash(cfg);
  if (meta.config_hash == expect) return 0;
  std::cerr << "config hash mismatch: config " << hash_hex(expect) << ", checkpoint "
            << hash_hex(meta.config_hash) << "\n";
  return 3;
}

// The checkpoint's embedded canonical config covers everything but paths, so
// adopting it guarantees a hash match; path flags still apply on top.
RunConfigFile config_from_checkpoint(const CheckpointMeta& meta, const CfgOpts& o) {
  RunConfigFile cfg = parse_run_config(meta.config_json);
  if (!o.data.empty()) cfg.data_path = o.data;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  resolve_derived(cfg);
  cfg.validate();
  return cfg;
}

int run_eval(const CfgOpts& o, const std::string& ckpt_path, bool use_ckpt_cfg) {
  CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  RunConfigFile cfg = use_ckpt_cfg ? config_from_checkpoint(meta, o) : resolve_config(o);
  if (int rc = check_checkpoint_hash(cfg, meta)) return rc;

  Pipeline p = build_pipeline(cfg);
  CasciffModel model(cfg.model, cfg.seed);
  load_checkpoint(ckpt_path, model.parameters(), nullptr);
  RegressionMetrics m = evaluate(model, p.data.test, p.data.influence);
  std::cout << "test_msle " << format_shortest(m.msle) << "\n"
            << "test_mape " << format_shortest(m.mape) << "\n"
            << "test_count " << m.count << "\n"
            << "test_zero_targets " << m.zero_targets << "\n";
  return 0;
}

// --- ablate ------------------------------------------------------------------

int run_ablate(const CfgOpts& o, const std::string& variant) {
  RunConfigFile cfg = resolve_config(o);
  Pipeline p = build_pipeline(cfg);

  std::vector<Variant> variants;
  if (variant == "all") {
    variants = {Variant::kFull,  Variant::kLocal, Variant::kGlobal,
                Variant::kTime,  Variant::kDecay, Variant::kClass};
  } else {
    variants = {variant_from_name(variant)};
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream tsv(join_path(cfg.out_dir, "ablation.tsv"));
  if (!tsv) throw IoError("cannot write " + join_path(cfg.out_dir, "ablation.tsv"));
  tsv << "tag\tparameters\tgru_input_dim\tbest_val\ttest_msle\ttest_mape\tepochs_run\n";
  for (Variant v : variants) {
    AblationResult r = run_ablation(v, cfg.model, p.data, cfg.training, cfg.seed);
    tsv << r.tag << "\t" << r.parameter_count << "\t" << r.gru_input_dim << "\t"
        << format_shortest(r.best_val) << "\t" << format_shortest(r.test.msle) << "\t"
        << format_shortest(r.test.mape) << "\t" << r.epochs_run << "\n";
    std::cout << "tag " << r.tag << " parameters " << r.parameter_count << " gru_input_dim "
              << r.gru_input_dim << " best_val " << format_shortest(r.best_val) << " test_msle "
              << format_shortest(r.test.msle) << " test_mape " << format_shortest(r.test.mape)
              << " epochs_run " << r.epochs_run << "\n";
  }
  return 0;
}

// --- export-embeddings -------------------------------------------------------

int run_export(const CfgOpts& o, const std::string& ckpt_path, const std::string& which,
               const std::string& out, bool use_ckpt_cfg) {
  CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  RunConfigFile cfg = use_ckpt_cfg ? config_from_checkpoint(meta, o) : resolve_config(o);
  if (int rc = check_checkpoint_hash(cfg, meta)) return rc;

  Pipeline p = build_pipeline(cfg);
  CasciffModel model(cfg.model, cfg.seed);
  load_checkpoint(ckpt_path, model.parameters(), nullptr);

  std::vector<CascadeExample> rows;
  const auto append = [&](const std::vector<CascadeExample>& part) {
    rows.insert(rows.end(), part.begin(), part.end());
  };
  if (which == "train" || which == "all") append(p.data.train);
  if (which == "valid" || which == "all") append(p.data.valid);
  if (which == "test" || which == "all") append(p.data.test);
  export_embeddings(out, model, rows, p.data.leader_by_user, p.data.influence);
  std::cout << "embeddings " << out << "\n"
            << "rows " << rows.size() << "\n";
  return 0;
}

// --- grad-check --------------------------------------------------------------

// Three tiny cascades that touch every parameter group: all decay buckets,
// every user in the classifier batch, multi-step sequences for both GRU
// directions, and nonzero hop matrices for the influence branch.
struct ToyScene {
  ModelConfig model;
  std::vector<CascadeExample> examples;
  InfluenceStore store;
  std::vector<char> leader_by_user;
};

CascadeExample toy_example(std::string id, std::vector<UserId> users,
                           std::vector<std::int32_t> parents, std::vector<double> times,
                           double window, std::uint64_t target) {
  CascadeExample ex;
  ex.cascade_id = std::move(id);
  ex.users = std::move(users);
  ex.parent_row = std::move(parents);
  ex.times = std::move(times);
  for (double t : ex.times) ex.t_prime.push_back(normalize_time(t, window));
  ex.target = target;
  ex.target_log = std::log2(static_cast<double>(target) + 1.0);
  ex.horizon_size = ex.users.size() + target;
  return ex;
}

ToyScene make_toy_scene(std::uint64_t seed) {
  ToyScene s;
  ModelConfig& mc = s.model;
  mc.max_hop = 2;
  mc.per_hop_len = 3;
  mc.max_nodes = 8;
  mc.embed_dim = 6;
  mc.ae1_h1 = 8;
  mc.ae1_h2 = 7;
  mc.fusion_h = 6;
  mc.reg_hidden = 5;
  mc.cls_hidden = 4;
  mc.window_w = 100.0;
  mc.decay_interval = 25.0;
  mc.decay_intervals = 4;
  mc.l2 = 1e-4;
  mc.validate();

  const double w = mc.window_w;
  s.examples.push_back(toy_example("toy-a", {0, 1, 2}, {-1, 0, 1}, {0, 10, 30}, w, 4));
  s.examples.push_back(toy_example("toy-b", {3, 4, 0, 5}, {-1, 0, 0, 2}, {0, 26, 55, 80}, w, 0));
  s.examples.push_back(
      toy_example("toy-c", {6, 7, 1, 3, 2}, {-1, 0, 1, 1, 3}, {0, 5, 40, 60, 90}, w, 9));

  for (UserId u = 0; u < 8; ++u) {
    SplitMix64 rng = SplitMix64::derive(seed, 1000 + u);
    Tensor m({mc.max_hop, mc.per_hop_len});
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = 0.1 + 0.9 * rng.next_double();
    s.store.emplace(u, std::move(m));
  }
  s.leader_by_user = {1, 0, 1, 0, 1, 0, 1, 0};
  return s;
}

int run_grad_check(std::uint64_t seed) {
  const ToyScene scene = make_toy_scene(seed);
  std::vector<const CascadeExample*> batch;
  for (const CascadeExample& ex : scene.examples) batch.push_back(&ex);

  // An init that parks a relu input inside the finite-difference step makes
  // every coordinate unverifiable; such inits are rejected and re-drawn.
  for (int attempt = 0; attempt < 10; ++attempt) {
    const std::uint64_t init_seed = seed + static_cast<std::uint64_t>(attempt);
    CasciffModel model(scene.model, init_seed);
    const CheckedForward f = [&](bool with_grads, double* min_abs_relu) {
      Tape t;
      Value loss = model.batch_loss(t, batch, scene.store, scene.leader_by_user, nullptr);
      if (with_grads) t.backward(loss);
      if (min_abs_relu != nullptr) *min_abs_relu = t.min_abs_relu_input();
      return t.value(loss).data()[0];
    };
    GradCheckConfig gcfg;
    gcfg.seed = init_seed;
    GradCheckReport report = grad_check(model.parameters(), f, gcfg);

    if (report.failed == 0 && !report.ok()) continue;  // kink-starved init

    std::cout << "init_seed " << init_seed << "\n";
    for (const GradCheckParamStat& ps : report.per_param)
      std::cout << ps.param << " checked=" << ps.checked << " skipped=" << ps.skipped_kink
                << " max_rel_err=" << format_shortest(ps.max_rel_err) << "\n";
    std::cout << report.summary_line() << "\n";
    for (const GradCheckCoord& c : report.failures)
      std::cerr << "mismatch " << c.param << "[" << c.index << "] analytic " << c.analytic
                << " numeric " << c.numeric << " rel_err " << c.rel_err << "\n";
    std::cout << "max_rel_err " << format_shortest(report.max_rel_err) << "\n";
    if (report.ok()) {
      std::cout << "result PASS\n";
      return 0;
    }
    std::cout << "result FAIL\n";
    return 3;
  }
  std::cerr << "no kink-free initialization found in 10 attempts\n";
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascade growth prediction pipeline"};
  app.require_subcommand(1);

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cascade corpus");
  synth->add_option("--nodes", so.graph.nodes, "graph size");
  synth->add_option("--cascades", so.cascades, "number of cascades");
  synth->add_option("--prob", so.diffusion.prob, "per-edge activation probability")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--leaders", so.graph.leader_fraction, "planted leader fraction")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--fake-followers", so.graph.fake_follower_fraction,
                    "sink-node fraction (in-edges only)")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--leader-degree", so.graph.leader_out_degree, "out-degree of planted leaders");
  synth->add_option("--exponent", so.graph.power_exponent, "out-degree tail exponent");
  synth->add_option("--min-out", so.graph.min_out_degree, "minimum out-degree");
  synth->add_option("--delay-scale", so.diffusion.delay_scale, "mean activation delay, seconds");
  synth->add_option("--seed", so.seed, "generator seed");
  synth->add_option("--out", so.out, "corpus output path (manifest lands next to it)");

  CfgOpts po;
  CLI::App* preprocess =
      app.add_subcommand("preprocess", "parse, filter, split, and build caches");
  add_config_flags(preprocess, po);

  CfgOpts to;
  CLI::App* train = app.add_subcommand("train", "train a model and write its report");
  add_config_flags(train, to);
  add_train_flags(train, to);

  CfgOpts eo;
  std::string eval_ckpt;
  bool eval_use_ckpt_cfg = false;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_config_flags(eval, eo);
  add_train_flags(eval, eo);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_flag("--use-checkpoint-config", eval_use_ckpt_cfg,
                 "adopt the checkpoint's embedded config (path flags still apply)");

  CfgOpts ao;
  std::string ablate_variant = "all";
  CLI::App* ablate = app.add_subcommand("ablate", "train ablated variants and compare");
  add_config_flags(ablate, ao);
  add_train_flags(ablate, ao);
  ablate->add_option("--variant", ablate_variant, "full, Local, Global, Time, Decay, Class, all")
      ->check(CLI::IsMember({"full", "Local", "Global", "Time", "Decay", "Class", "all"}));

  CfgOpts xo;
  std::string export_ckpt, export_split = "test", export_out = "embeddings.csv";
  bool export_use_ckpt_cfg = false;
  CLI::App* exporter =
      app.add_subcommand("export-embeddings", "write decayed cascade vectors as CSV");
  add_config_flags(exporter, xo);
  add_train_flags(exporter, xo);
  exporter->add_option("--checkpoint", export_ckpt, "checkpoint path")->required();
  exporter->add_flag("--use-checkpoint-config", export_use_ckpt_cfg,
                     "adopt the checkpoint's embedded config (path flags still apply)");
  exporter->add_option("--split", export_split, "train, valid, test, or all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  exporter->add_option("--out", export_out, "CSV output path");

  bool toy = false;
  std::uint64_t gc_seed = 7;
  CLI::App* gradcheck =
      app.add_subcommand("grad-check", "finite-difference check of the full loss gradient");
  gradcheck->add_flag("--toy", toy, "use the built-in three-cascade batch (the default)");
  gradcheck->add_option("--seed", gc_seed, "scene and initialization seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return run_synth(so);
    if (preprocess->parsed()) return run_preprocess(po);
    if (train->parsed()) return run_train(to);
    if (eval->parsed()) return run_eval(eo, eval_ckpt, eval_use_ckpt_cfg);
    if (ablate->parsed()) return run_ablate(ao, ablate_variant);
    if (exporter->parsed())
      return run_export(xo, export_ckpt, export_split, export_out, export_use_ckpt_cfg);
    if (gradcheck->parsed()) return run_grad_check(gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const casciff::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {  // Shape/Numeric/Consistency and anything else
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
