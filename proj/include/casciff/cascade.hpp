#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace casciff {

// Dense internal user id. Raw corpus ids are arbitrary strings, interned
// through a UserTable at load time.
using UserId = std::uint32_t;
inline constexpr UserId kNoParent = static_cast<UserId>(-1);

struct Activation {
  UserId user = 0;
  UserId parent = kNoParent;  // kNoParent only for the root
  double time = 0.0;          // seconds relative to cascade publish time
};

// One diffusion event: root, time-ordered activations (ties keep file
// order), and the total activation count at the prediction horizon.
struct Cascade {
  std::string cascade_id;
  UserId root = 0;
  double publish_time = 0.0;  // absolute epoch seconds
  std::vector<Activation> activations;
  std::uint64_t horizon_size = 0;
};

struct ObservationConfig {
  double window_w = 3600.0;   // observation window, seconds
  double horizon_t = 86400.0; // prediction horizon, seconds
  std::uint32_t min_nodes = 10;
  std::uint32_t max_nodes = 100;
  double decay_interval = 600.0;  // decay bucket length, seconds
  // When set, the > min_nodes filter counts activations at the horizon
  // instead of inside the window.
  bool filter_at_horizon = false;

  std::uint32_t num_decay_intervals() const;
  void validate() const;  // throws ConfigError
};

// Observed prefix (window- and max_nodes-truncated) plus the regression
// target and the normalized time of each observed activation.
struct LabeledCascade {
  Cascade observed;
  std::uint64_t target_delta_r = 0;
  std::vector<double> normalized_times;  // t' per observed activation, in [0,1]
};

// Directed who-activated-whom multigraph over the training cascades.
// Both directions are stored CSR-style; degrees sum edge multiplicities.
class GlobalGraph {
 public:
  GlobalGraph() = default;
  // Edges as (source, target, multiplicity), self-loops already excluded.
  GlobalGraph(std::size_t node_count,
              std::vector<std::tuple<UserId, UserId, std::uint32_t>> edges);

  std::size_t node_count() const { return n_; }
  std::size_t edge_count() const { return out_targets_.size(); }  // distinct pairs

  // CSR slices of distinct neighbors, sorted by target id.
  struct Adjacency {
    const UserId* targets;
    const std::uint32_t* mult;
    std::size_t count;
  };
  Adjacency out_neighbors(UserId u) const;
  Adjacency in_neighbors(UserId u) const;

  // Activation-event counts (multiplicities summed).
  std::uint64_t out_degree(UserId u) const { return out_degree_[u]; }
  std::uint64_t in_degree(UserId u) const { return in_degree_[u]; }
  std::uint64_t max_out_degree() const { return max_out_degree_; }

  // Recomputes degrees from the adjacency and throws DataError on mismatch.
  void check_consistency() const;

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> out_offsets_{0};
  std::vector<UserId> out_targets_;
  std::vector<std::uint32_t> out_mult_;
  std::vector<std::size_t> in_offsets_{0};
  std::vector<UserId> in_targets_;
  std::vector<std::uint32_t> in_mult_;
  std::vector<std::uint64_t> out_degree_;
  std::vector<std::uint64_t> in_degree_;
  std::uint64_t max_out_degree_ = 0;
};

// Bidirectional raw-id ↔ dense-id table, persisted alongside a dataset.
class UserTable {
 public:
  UserId intern(const std::string& raw);
  UserId lookup(const std::string& raw) const;  // throws DataError if absent
  const std::string& raw(UserId id) const;
  std::size_t size() const { return raw_.size(); }

  void save(const std::string& path) const;
  static UserTable load(const std::string& path);

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, UserId> index_;
};

// Activations at horizon_t minus activations inside window_w, both counted
// on the full activation list (before any max_nodes truncation).
std::uint64_t compute_target(const Cascade& c, const ObservationConfig& cfg);

// Number of activations with time <= window.
std::size_t count_within(const Cascade& c, double window);

}  // namespace casciff
