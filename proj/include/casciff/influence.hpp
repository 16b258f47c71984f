#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "casciff/cascade.hpp"
#include "casciff/rng.hpp"
#include "casciff/tensor.hpp"

namespace casciff {

struct HopSampleConfig {
  std::uint32_t k = 128;      // hop-1 sample size; hop i draws round(k·2^{-(i-1)})
  std::uint32_t max_hop = 2;  // n, sweepable 1..5
  std::uint32_t s = 50;       // per-hop vector length
  double lambda_init = 1.0;   // initial value of the learnable hop weights
  bool undirected = false;    // traverse out-edges only (default) or both ways
  bool lambda_per_dim = false;  // hop weight per coordinate instead of scalar

  void validate() const;  // throws ConfigError
};

struct LeaderLabel {
  UserId user = 0;
  bool is_leader = false;
};

// Per-user (max_hop × s) matrices of sampled-neighbor scores, unweighted
// (the hop weights live in the model so gradients reach them).
using InfluenceStore = std::unordered_map<UserId, Tensor>;

// Hierarchical random sampling: hop sets S_1..S_n where hop membership is
// minimal BFS distance from u, hop i draws from the level-i nodes reachable
// from the sampled S_{i-1} (sample-then-expand), uniformly without
// replacement. Returned sets are sorted; take-all levels consume no RNG.
std::vector<std::vector<UserId>> hrs_sample(const GlobalGraph& g, UserId u,
                                            const HopSampleConfig& cfg, SplitMix64& rng);

// Propagating out-degree: activation events whose target went on to activate
// someone else. Edges into dead-end (zero-out-degree) users contribute
// nothing, which keeps scores immune to fake-follower padding.
std::uint64_t propagating_out_degree(const GlobalGraph& g, UserId u);

// log(1 + propagating out-degree), normalized by the graph maximum to [0,1].
double influence_score(const GlobalGraph& g, UserId v);
std::vector<double> influence_scores(const GlobalGraph& g);  // all users at once

// Scores of sampled nodes, sorted descending, truncated/zero-padded to s.
Tensor hop_vector(const GlobalGraph& g, const std::vector<UserId>& sample, std::uint32_t s);
Tensor hop_vector(const std::vector<double>& scores, const std::vector<UserId>& sample,
                  std::uint32_t s);

// concat(λ_1·v_1, …, λ_n·v_n); plain (off-tape) form used by tests and
// tooling — training assembles the same expression on the tape.
Tensor assemble_input(const std::vector<Tensor>& hop_vectors,
                      const std::vector<double>& lambdas);

// is_leader ⇔ out-degree ≥ the nearest-rank q-th percentile of nonzero
// out-degrees (ties at the threshold are leaders). Raw event out-degree on
// purpose: labels describe observed reach, not propagation quality.
std::vector<LeaderLabel> label_opinion_leaders(const GlobalGraph& g, double percentile_q);

// Sample + score every listed user; per-user RNG stream derived from
// (dataset_seed, user id) so the result is order-independent.
InfluenceStore compute_influence_inputs(const GlobalGraph& g,
                                        const std::vector<UserId>& users,
                                        const HopSampleConfig& cfg,
                                        std::uint64_t dataset_seed);

// Versioned binary cache; the header pins (k, n, s, undirected, seed) and
// load rejects mismatches with ConsistencyError.
void save_influence_cache(const std::string& path, const InfluenceStore& store,
                          const HopSampleConfig& cfg, std::uint64_t dataset_seed);
InfluenceStore load_influence_cache(const std::string& path, const HopSampleConfig& cfg,
                                    std::uint64_t dataset_seed);

}  // namespace casciff
