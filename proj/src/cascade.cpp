#include "casciff/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include "casciff/errors.hpp"

namespace casciff {

std::uint32_t ObservationConfig::num_decay_intervals() const {
  return static_cast<std::uint32_t>(std::ceil(window_w / decay_interval));
}

void ObservationConfig::validate() const {
  if (!(window_w > 0.0) || !(window_w < horizon_t))
    throw ConfigError("observation window must satisfy 0 < window (" +
                      std::to_string(window_w) + ") < horizon (" +
                      std::to_string(horizon_t) + ")");
  if (min_nodes < 1) throw ConfigError("min_nodes must be >= 1");
  if (max_nodes < min_nodes) throw ConfigError("max_nodes must be >= min_nodes");
  if (!(decay_interval > 0.0)) throw ConfigError("decay_interval must be > 0");
}

GlobalGraph::GlobalGraph(std::size_t node_count,
                         std::vector<std::tuple<UserId, UserId, std::uint32_t>> edges)
    : n_(node_count) {
  for (const auto& [u, v, m] : edges) {
    if (u >= n_ || v >= n_) throw DataError("global graph edge endpoint out of range");
    if (u == v) throw DataError("global graph self-loop");
    if (m == 0) throw DataError("global graph zero-multiplicity edge");
  }
  out_degree_.assign(n_, 0);
  in_degree_.assign(n_, 0);

  std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  out_offsets_.assign(n_ + 1, 0);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i > 0 && std::get<0>(edges[i]) == std::get<0>(edges[i - 1]) &&
        std::get<1>(edges[i]) == std::get<1>(edges[i - 1]))
      throw DataError("global graph duplicate edge pair (accumulate multiplicity upstream)");
    const auto [u, v, m] = edges[i];
    out_targets_.push_back(v);
    out_mult_.push_back(m);
    ++out_offsets_[u + 1];
    out_degree_[u] += m;
    in_degree_[v] += m;
  }
  for (std::size_t i = 1; i <= n_; ++i) out_offsets_[i] += out_offsets_[i - 1];

  std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<1>(a), std::get<0>(a)) < std::tie(std::get<1>(b), std::get<0>(b));
  });
  in_offsets_.assign(n_ + 1, 0);
  for (const auto& [u, v, m] : edges) {
    in_targets_.push_back(u);
    in_mult_.push_back(m);
    ++in_offsets_[v + 1];
  }
  for (std::size_t i = 1; i <= n_; ++i) in_offsets_[i] += in_offsets_[i - 1];

  for (std::uint64_t d : out_degree_) max_out_degree_ = std::max(max_out_degree_, d);
}

GlobalGraph::Adjacency GlobalGraph::out_neighbors(UserId u) const {
  if (u >= n_) throw DataError("out_neighbors: user out of range");
  const std::size_t b = out_offsets_[u], e = out_offsets_[u + 1];
  return {out_targets_.data() + b, out_mult_.data() + b, e - b};
}

GlobalGraph::Adjacency GlobalGraph::in_neighbors(UserId u) const {
  if (u >= n_) throw DataError("in_neighbors: user out of range");
  const std::size_t b = in_offsets_[u], e = in_offsets_[u + 1];
  return {in_targets_.data() + b, in_mult_.data() + b, e - b};
}

void GlobalGraph::check_consistency() const {
  std::vector<std::uint64_t> out(n_, 0), in(n_, 0);
  for (std::size_t u = 0; u < n_; ++u) {
    const auto adj = out_neighbors(static_cast<UserId>(u));
    for (std::size_t i = 0; i < adj.count; ++i) {
      out[u] += adj.mult[i];
      in[adj.targets[i]] += adj.mult[i];
    }
  }
  if (out != out_degree_ || in != in_degree_)
    throw DataError("global graph degree arrays disagree with adjacency");
}

UserId UserTable::intern(const std::string& raw) {
  auto it = index_.find(raw);
  if (it != index_.end()) return it->second;
  const UserId id = static_cast<UserId>(raw_.size());
  raw_.push_back(raw);
  index_.emplace(raw, id);
  return id;
}

UserId UserTable::lookup(const std::string& raw) const {
  auto it = index_.find(raw);
  if (it == index_.end()) throw DataError("unknown user id '" + raw + "'");
  return it->second;
}

const std::string& UserTable::raw(UserId id) const {
  if (id >= raw_.size()) throw DataError("user id " + std::to_string(id) + " out of range");
  return raw_[id];
}

void UserTable::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write user table '" + path + "'");
  for (const std::string& r : raw_) os << r << '\n';
  os.flush();
  if (!os) throw IoError("failed writing user table '" + path + "'");
}

UserTable UserTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open user table '" + path + "'");
  UserTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (t.index_.count(line)) throw DataError("duplicate raw id '" + line + "' in user table");
    t.intern(line);
  }
  return t;
}

std::size_t count_within(const Cascade& c, double window) {
  std::size_t n = 0;
  for (const Activation& a : c.activations)
    if (a.time <= window) ++n;
  return n;
}

std::uint64_t compute_target(const Cascade& c, const ObservationConfig& cfg) {
  cfg.validate();
  const std::size_t at_horizon = count_within(c, cfg.horizon_t);
  const std::size_t in_window = count_within(c, cfg.window_w);
  return static_cast<std::uint64_t>(at_horizon - in_window);
}

}  // namespace casciff
