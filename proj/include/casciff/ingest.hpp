#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "casciff/cascade.hpp"

namespace casciff {

struct ParseWarning {
  std::size_t line = 0;
  std::string message;
};

struct ParseOptions {
  double time_scale = 1.0;  // native time unit → seconds
};

struct ParseResult {
  std::vector<Cascade> cascades;
  std::vector<ParseWarning> warnings;
  UserTable users;
};

// Line format: <cascade_id> TAB <root_user> TAB <publish_time> TAB
// <num_activations> TAB <path list>, where the path list is space-separated
// `u0/u1/.../uk:t` entries (the entry activates its last user at time t with
// the second-to-last user as parent; the single-element `u0:0` is the root).
// Malformed lines throw ParseError with the line number; a declared count
// that disagrees with the entry count becomes a warning and the line is kept.
ParseResult parse_cascade_file(std::istream& in, const ParseOptions& opts = {});
ParseResult parse_cascade_path(const std::string& path, const ParseOptions& opts = {});

// Canonical wire form: times rendered shortest-round-trip, entries in
// activation order. serialize(parse(x)) re-parses to an identical list.
void serialize_cascades(std::ostream& os, const std::vector<Cascade>& cascades,
                        const UserTable& users);
void write_corpus(const std::string& path, const std::vector<Cascade>& cascades,
                  const UserTable& users);

// Keeps cascades with strictly more than min_nodes activations in the window
// (or at the horizon with cfg.filter_at_horizon), truncates the observed
// prefix to max_nodes, and attaches the growth target and normalized times.
std::vector<LabeledCascade> filter_and_truncate(const std::vector<Cascade>& cascades,
                                                const ObservationConfig& cfg);

struct DatasetSplit {
  std::vector<LabeledCascade> train, valid, test;
  std::uint64_t split_seed = 0;
};

// Seeded shuffle then 70/15/15 (train = floor(.7n), valid = floor(.15n),
// test = rest). Throws ConfigError below 3 cascades.
DatasetSplit split_dataset(std::vector<LabeledCascade> cascades, std::uint64_t seed);

void write_split_manifest(const std::string& path, const DatasetSplit& split);

// Union of parent→child activation edges over the observed prefixes of the
// training split only; repeated pairs accumulate multiplicity.
GlobalGraph build_global_graph(const std::vector<LabeledCascade>& train,
                               std::size_t node_count);

// --- synthetic corpus -------------------------------------------------------

struct SynthGraphParams {
  std::uint32_t nodes = 500;
  double power_exponent = 2.5;          // out-degree tail exponent
  std::uint32_t min_out_degree = 1;
  double leader_fraction = 0.02;        // planted high-out-degree hubs
  std::uint32_t leader_out_degree = 50;
  double fake_follower_fraction = 0.1;  // sink nodes: in-edges only

  void validate() const;
};

struct SynthDiffusionParams {
  double prob = 0.2;         // per-edge activation probability
  double delay_scale = 600.0;  // mean exponential inter-activation delay, s

  void validate() const;
};

struct SynthResult {
  std::vector<Cascade> cascades;
  UserTable users;                        // raw id = decimal node index
  std::vector<UserId> planted_leaders;
  std::vector<UserId> sinks;
  std::vector<std::vector<UserId>> adjacency;  // the underlying follow graph
};

// Independent-cascade simulation over a power-law directed graph with
// planted leader hubs and fake-follower sinks. Deterministic per seed;
// activation delays are exponential, quantized to milliseconds.
SynthResult generate_synthetic(const SynthGraphParams& gp, const SynthDiffusionParams& dp,
                               std::size_t n_cascades, std::uint64_t seed);

// Ground truth for oracle checks: planted roles and true horizon sizes.
void write_synth_manifest(const std::string& path, const SynthResult& synth);

// Corpus summary counts, written as `key value` lines.
struct DatasetStats {
  std::size_t total_cascades = 0;
  std::size_t qualifying_cascades = 0;
  std::size_t train_count = 0, valid_count = 0, test_count = 0;
  std::size_t user_count = 0;
  std::size_t graph_edge_pairs = 0;
  double mean_observed_size = 0.0;
  double mean_target = 0.0;
};
DatasetStats collect_stats(std::size_t total, const DatasetSplit& split,
                           const GlobalGraph& g, std::size_t user_count);
void write_stats_report(const std::string& path, const DatasetStats& stats);

}  // namespace casciff
