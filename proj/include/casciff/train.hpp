#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "casciff/influence.hpp"
#include "casciff/ingest.hpp"
#include "casciff/model.hpp"
#include "casciff/optim.hpp"

namespace casciff {

struct TrainConfig {
  double lr = 1e-3;  // callers build the Adam optimizer from this
  std::uint32_t batch_size = 64;
  std::uint32_t patience = 10;
  std::uint32_t max_epochs = 100;
  std::uint64_t seed = 1;
  // Early stopping watches validation L_reg by default (prediction is the
  // reported task); this switches the monitor to the full combined loss.
  bool monitor_total_loss = false;

  void validate() const;  // throws ConfigError
};

// Everything a training run reads: split, training-split graph, influence
// inputs for every user seen in any example, leader labels, and the
// model-ready examples.
struct PreparedData {
  DatasetSplit split;
  GlobalGraph graph;
  InfluenceStore influence;
  std::vector<char> leader_by_user;
  std::vector<CascadeExample> train, valid, test;
};

// `cached` skips the hop-sampling pass and reuses an already-computed store;
// the store must cover every user appearing in the split.
PreparedData prepare(DatasetSplit split, std::size_t user_count, const HopSampleConfig& hop_cfg,
                     std::uint64_t dataset_seed, double leader_percentile,
                     const InfluenceStore* cached = nullptr);

struct EpochStat {
  std::size_t epoch = 0;        // 1-based
  LossBreakdown train_loss;     // averaged over the epoch's batches
  double val_monitor = 0.0;
  bool improved = false;
  double wall_ms = 0.0;         // excluded from the deterministic report
};

struct TrainResult {
  std::vector<EpochStat> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

// Mini-batch Adam with early stopping: stops after `patience` consecutive
// epochs without strict improvement of the monitor; the best-epoch parameters
// are restored into the model before returning. Non-finite batch loss aborts
// with NumericError naming the batch.
TrainResult train_model(CasciffModel& model, Adam& opt, const PreparedData& data,
                        const TrainConfig& cfg);

struct RegressionMetrics {
  double msle = 0.0;
  double mape = 0.0;                // over positive targets only
  std::size_t count = 0;
  std::size_t zero_targets = 0;     // excluded from mape
};

// Metrics from (true ΔR, predicted ΔR̂) pairs, both as counts:
// msle = mean (log2(y+1) − log2(ŷ+1))², mape the matching relative form.
RegressionMetrics regression_metrics(const std::vector<std::pair<double, double>>& true_pred);
RegressionMetrics evaluate(CasciffModel& model, const std::vector<CascadeExample>& examples,
                           const InfluenceStore& store);

enum class Variant { kFull, kLocal, kGlobal, kTime, kDecay, kClass };

Variant variant_from_name(const std::string& name);  // throws ConfigError on unknown
std::string variant_tag(Variant v);                  // "CasCIFF", "CasCIFF-Local", …
ModelConfig variant_config(ModelConfig base, Variant v);

struct AblationResult {
  std::string tag;
  std::size_t parameter_count = 0;
  std::uint32_t gru_input_dim = 0;
  double best_val = 0.0;
  RegressionMetrics test;
  std::size_t epochs_run = 0;
};

AblationResult run_ablation(Variant v, const ModelConfig& base, const PreparedData& data,
                            const TrainConfig& cfg, std::uint64_t init_seed);

// One row per cascade: id, decayed cascade vector, popularity (horizon size),
// node/leaf counts, mean reaction time (empty for a root-only cascade), and
// observed opinion-leader count. Comma-separated with a header row.
void export_embeddings(const std::string& path, CasciffModel& model,
                       const std::vector<CascadeExample>& examples,
                       const std::vector<char>& leader_by_user, const InfluenceStore& store);

struct SweepPoint {
  double lr = 0.0, l2 = 0.0;
  double best_val = 0.0;
  RegressionMetrics test;
  std::size_t epochs_run = 0;
};

// Trains every (lr, l2) grid point from the same initialization and reports
// all of them; pick the winner by validation loss via best_sweep_point.
std::vector<SweepPoint> sweep_grid(const ModelConfig& base, const PreparedData& data,
                                   const TrainConfig& cfg, const std::vector<double>& lrs,
                                   const std::vector<double>& l2s, std::uint64_t init_seed);
std::size_t best_sweep_point(const std::vector<SweepPoint>& points);

struct RunReport {
  std::string tag = "CasCIFF";
  std::uint64_t config_hash = 0;
  std::string config_json;  // canonical single-line snapshot
  std::uint64_t data_hash = 0;
  DatasetStats stats;
  std::size_t parameter_count = 0;
  std::string kernel_name;
  TrainResult train;
  RegressionMetrics test;
};

// Deterministic key-value metrics file (no wall-clock content).
void write_run_report(const std::string& path, const RunReport& r);
// Tab-separated per-epoch log; this is where wall-clock timings live.
void write_epoch_log(const std::string& path, const TrainResult& r);

// Shortest decimal form that parses back to the same double.
std::string format_shortest(double v);

}  // namespace casciff
