#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casciff/cascade.hpp"
#include "casciff/tensor.hpp"

namespace casciff {

// Standardized participation time: 1 − t/T_o, so earlier participants carry
// larger weight. Throws DataError outside 0 ≤ t ≤ T_o or when T_o ≤ 0.
double normalize_time(double t, double t_o);

// The per-step snapshot sequence of one observed cascade, stored compactly:
// activations only ever add nodes and edges, so snapshot j is exactly the
// top-left block of the final weighted adjacency. Row r is the r-th observed
// activation; α[parent][child] = t'_child, α[v][v] = t'_v.
struct SnapshotSequence {
  std::string cascade_id;
  double window = 0.0;
  std::vector<UserId> nodes;    // row → user, activation order
  std::vector<double> t_prime;  // per row
  Tensor final_alpha;           // live m×m block

  std::size_t live_count() const { return nodes.size(); }
  // Number of post-root snapshots (m−1); the sequence entry for step j
  // (j = 1..length) is materialize(j + 1).
  std::size_t length() const { return nodes.empty() ? 0 : nodes.size() - 1; }

  // Adjacency over the first `upto` activations, 1 ≤ upto ≤ live_count().
  Tensor materialize(std::size_t upto) const;
  // Same block zero-padded to max_nodes × max_nodes.
  Tensor padded(std::size_t upto, std::size_t max_nodes) const;
};

SnapshotSequence build_snapshots(const LabeledCascade& lc, const ObservationConfig& cfg);

// One cache file holding many cascades' snapshot sections. The header pins
// the window so stale caches are rejected.
void save_snapshot_cache(const std::string& path,
                         const std::vector<SnapshotSequence>& seqs, double window);
std::vector<SnapshotSequence> load_snapshot_cache(const std::string& path, double window);

}  // namespace casciff
