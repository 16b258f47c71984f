#include "casciff/influence.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>

#include "casciff/detail/wire.hpp"
#include "casciff/errors.hpp"

namespace casciff {

void HopSampleConfig::validate() const {
  if (k == 0) throw ConfigError("hop sample size k must be positive");
  if (max_hop < 1 || max_hop > 5)
    throw ConfigError("max_hop must be between 1 and 5, got " + std::to_string(max_hop));
  if (s == 0) throw ConfigError("per-hop vector length s must be positive");
  if (!std::isfinite(lambda_init)) throw ConfigError("lambda_init must be finite");
}

namespace {

void visit_neighbors(const GlobalGraph& g, UserId u, bool undirected,
                     const std::function<void(UserId)>& fn) {
  GlobalGraph::Adjacency out = g.out_neighbors(u);
  for (std::size_t i = 0; i < out.count; ++i) fn(out.targets[i]);
  if (undirected) {
    GlobalGraph::Adjacency in = g.in_neighbors(u);
    for (std::size_t i = 0; i < in.count; ++i) fn(in.targets[i]);
  }
}

}  // namespace

std::vector<std::vector<UserId>> hrs_sample(const GlobalGraph& g, UserId u,
                                            const HopSampleConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  if (u >= g.node_count())
    throw DataError("user " + std::to_string(u) + " not in the graph of " +
                    std::to_string(g.node_count()) + " nodes");
  constexpr std::uint32_t kUnseen = ~0u;
  // Minimal distances up to max_hop via breadth-first traversal.
  std::vector<std::uint32_t> dist(g.node_count(), kUnseen);
  dist[u] = 0;
  std::deque<UserId> queue{u};
  while (!queue.empty()) {
    const UserId w = queue.front();
    queue.pop_front();
    if (dist[w] >= cfg.max_hop) continue;
    visit_neighbors(g, w, cfg.undirected, [&](UserId v) {
      if (dist[v] == kUnseen) {
        dist[v] = dist[w] + 1;
        queue.push_back(v);
      }
    });
  }

  std::vector<std::vector<UserId>> hops(cfg.max_hop);
  std::vector<UserId> prev{u};
  for (std::uint32_t i = 1; i <= cfg.max_hop; ++i) {
    // Candidates: level-i nodes adjacent to the previous sampled set.
    std::vector<UserId> cand;
    for (UserId w : prev)
      visit_neighbors(g, w, cfg.undirected, [&](UserId v) {
        if (dist[v] == i) cand.push_back(v);
      });
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

    const auto want = static_cast<std::size_t>(
        std::llround(static_cast<double>(cfg.k) * std::exp2(-static_cast<double>(i - 1))));
    if (want < cand.size()) {
      for (std::size_t j = 0; j < want; ++j) {
        const std::size_t pick = j + static_cast<std::size_t>(rng.next_below(cand.size() - j));
        std::swap(cand[j], cand[pick]);
      }
      cand.resize(want);
      std::sort(cand.begin(), cand.end());
    }
    hops[i - 1] = cand;
    prev = hops[i - 1];
  }
  return hops;
}

std::uint64_t propagating_out_degree(const GlobalGraph& g, UserId u) {
  if (u >= g.node_count())
    throw DataError("user " + std::to_string(u) + " not in the graph");
  GlobalGraph::Adjacency out = g.out_neighbors(u);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < out.count; ++i)
    if (g.out_degree(out.targets[i]) > 0) total += out.mult[i];
  return total;
}

std::vector<double> influence_scores(const GlobalGraph& g) {
  std::vector<std::uint64_t> gen(g.node_count(), 0);
  std::uint64_t best = 0;
  for (UserId u = 0; u < g.node_count(); ++u) {
    gen[u] = propagating_out_degree(g, u);
    best = std::max(best, gen[u]);
  }
  std::vector<double> scores(g.node_count(), 0.0);
  if (best == 0) return scores;
  const double denom = std::log1p(static_cast<double>(best));
  for (UserId u = 0; u < g.node_count(); ++u)
    scores[u] = std::log1p(static_cast<double>(gen[u])) / denom;
  return scores;
}

double influence_score(const GlobalGraph& g, UserId v) {
  if (v >= g.node_count())
    throw DataError("user " + std::to_string(v) + " not in the graph");
  return influence_scores(g)[v];
}

Tensor hop_vector(const std::vector<double>& scores, const std::vector<UserId>& sample,
                  std::uint32_t s) {
  if (s == 0) throw ConfigError("per-hop vector length s must be positive");
  std::vector<double> vals;
  vals.reserve(sample.size());
  for (UserId v : sample) {
    if (v >= scores.size())
      throw DataError("sampled user " + std::to_string(v) + " has no score");
    vals.push_back(scores[v]);
  }
  std::sort(vals.begin(), vals.end(), std::greater<>());
  vals.resize(s, 0.0);
  Tensor t({s});
  for (std::uint32_t i = 0; i < s; ++i) t[i] = vals[i];
  return t;
}

Tensor hop_vector(const GlobalGraph& g, const std::vector<UserId>& sample, std::uint32_t s) {
  return hop_vector(influence_scores(g), sample, s);
}

Tensor assemble_input(const std::vector<Tensor>& hop_vectors,
                      const std::vector<double>& lambdas) {
  if (hop_vectors.empty()) throw ShapeError("no hop vectors to assemble");
  if (hop_vectors.size() != lambdas.size())
    throw ShapeError(std::to_string(hop_vectors.size()) + " hop vectors but " +
                     std::to_string(lambdas.size()) + " weights");
  std::size_t total = 0;
  for (const Tensor& v : hop_vectors) {
    if (v.ndim() != 1) throw ShapeError("hop vectors must be rank-1, got " + v.shape_str());
    total += v.size();
  }
  Tensor out({total});
  std::size_t at = 0;
  for (std::size_t i = 0; i < hop_vectors.size(); ++i)
    for (std::size_t j = 0; j < hop_vectors[i].size(); ++j)
      out[at++] = lambdas[i] * hop_vectors[i][j];
  return out;
}

std::vector<LeaderLabel> label_opinion_leaders(const GlobalGraph& g, double percentile_q) {
  if (!(percentile_q >= 0.0) || percentile_q > 100.0)
    throw ConfigError("percentile must be in [0, 100], got " + std::to_string(percentile_q));
  std::vector<std::uint64_t> nonzero;
  for (UserId u = 0; u < g.node_count(); ++u)
    if (g.out_degree(u) > 0) nonzero.push_back(g.out_degree(u));
  std::vector<LeaderLabel> labels(g.node_count());
  for (UserId u = 0; u < g.node_count(); ++u) labels[u] = {u, false};
  if (nonzero.empty()) return labels;
  std::sort(nonzero.begin(), nonzero.end());
  const double cnt = static_cast<double>(nonzero.size());
  const auto rank = static_cast<std::ptrdiff_t>(std::ceil(percentile_q * cnt / 100.0));
  const std::size_t idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, rank - 1));
  const std::uint64_t threshold = nonzero[std::min(idx, nonzero.size() - 1)];
  for (UserId u = 0; u < g.node_count(); ++u)
    labels[u].is_leader = g.out_degree(u) >= threshold;
  return labels;
}

InfluenceStore compute_influence_inputs(const GlobalGraph& g, const std::vector<UserId>& users,
                                        const HopSampleConfig& cfg, std::uint64_t dataset_seed) {
  cfg.validate();
  const std::vector<double> scores = influence_scores(g);
  InfluenceStore store;
  store.reserve(users.size());
  for (UserId u : users) {
    if (store.count(u)) continue;
    SplitMix64 rng = SplitMix64::derive(dataset_seed, u);
    const std::vector<std::vector<UserId>> hops = hrs_sample(g, u, cfg, rng);
    Tensor m({cfg.max_hop, cfg.s});
    for (std::uint32_t i = 0; i < cfg.max_hop; ++i) {
      Tensor row = hop_vector(scores, hops[i], cfg.s);
      for (std::uint32_t j = 0; j < cfg.s; ++j) m.at(i, j) = row[j];
    }
    store.emplace(u, std::move(m));
  }
  return store;
}

namespace {
constexpr std::uint32_t kMagic = 0x464e4943;  // "CINF"
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_influence_cache(const std::string& path, const InfluenceStore& store,
                          const HopSampleConfig& cfg, std::uint64_t dataset_seed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write influence cache '" + path + "'");
  wire::put_u32(os, kMagic);
  wire::put_u32(os, kVersion);
  wire::put_u32(os, cfg.k);
  wire::put_u32(os, cfg.max_hop);
  wire::put_u32(os, cfg.s);
  os.put(cfg.undirected ? 1 : 0);
  wire::put_u64(os, dataset_seed);
  std::vector<UserId> users;
  users.reserve(store.size());
  for (const auto& kv : store) users.push_back(kv.first);
  std::sort(users.begin(), users.end());
  wire::put_u64(os, users.size());
  for (UserId u : users) {
    wire::put_u32(os, u);
    wire::put_tensor(os, store.at(u));
  }
  os.flush();
  if (!os) throw IoError("failed writing influence cache '" + path + "'");
}

InfluenceStore load_influence_cache(const std::string& path, const HopSampleConfig& cfg,
                                    std::uint64_t dataset_seed) {
  wire::Reader rd(path, "influence cache");
  if (rd.u32() != kMagic) throw IoError("'" + path + "' is not an influence cache");
  const std::uint32_t ver = rd.u32();
  if (ver != kVersion)
    throw ConsistencyError("influence cache '" + path + "' has format version " +
                           std::to_string(ver) + ", expected " + std::to_string(kVersion));
  const std::uint32_t k = rd.u32(), n = rd.u32(), s = rd.u32();
  char undirected = 0;
  rd.bytes(&undirected, 1);
  const std::uint64_t seed = rd.u64();
  if (k != cfg.k || n != cfg.max_hop || s != cfg.s || (undirected != 0) != cfg.undirected ||
      seed != dataset_seed)
    throw ConsistencyError("influence cache '" + path +
                           "' was built with different sampling settings");
  const std::uint64_t count = rd.u64();
  InfluenceStore store;
  store.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const UserId u = rd.u32();
    Tensor t = rd.tensor();
    if (t.ndim() != 2 || t.rows() != cfg.max_hop || t.cols() != cfg.s)
      throw ConsistencyError("influence cache '" + path + "' entry for user " +
                             std::to_string(u) + " has shape " + t.shape_str());
    if (!store.emplace(u, std::move(t)).second)
      throw ConsistencyError("influence cache '" + path + "' repeats user " + std::to_string(u));
  }
  return store;
}

}  // namespace casciff
