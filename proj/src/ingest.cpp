#include "casciff/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "casciff/errors.hpp"
#include "casciff/rng.hpp"
#include "casciff/snapshots.hpp"

namespace casciff {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (true) {
    const std::size_t next = s.find(sep, at);
    if (next == std::string::npos) {
      out.push_back(s.substr(at));
      return out;
    }
    out.push_back(s.substr(at, next - at));
    at = next + 1;
  }
}

double parse_double(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v))
    throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw ParseError(line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return {buf, end};
}

struct RawEntry {
  std::string user;
  std::string parent;  // empty for the root entry
  double time = 0.0;
};

}  // namespace

ParseResult parse_cascade_file(std::istream& in, const ParseOptions& opts) {
  if (!(opts.time_scale > 0.0) || !std::isfinite(opts.time_scale))
    throw ConfigError("time_scale must be positive and finite");
  ParseResult res;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const std::vector<std::string> fields = split(line, '\t');
    if (fields.size() != 5)
      throw ParseError(line_no, "expected 5 tab-separated fields, got " +
                                    std::to_string(fields.size()));
    const std::string& cascade_id = fields[0];
    if (cascade_id.empty()) throw ParseError(line_no, "empty cascade id");
    if (!seen_ids.insert(cascade_id).second)
      throw ParseError(line_no, "duplicate cascade id '" + cascade_id + "'");
    if (fields[1].empty()) throw ParseError(line_no, "empty root user");
    const double publish_time = parse_double(fields[2], line_no, "publish time");
    const std::uint64_t declared = parse_u64(fields[3], line_no, "activation count");

    std::vector<RawEntry> entries;
    bool saw_root = false;
    for (const std::string& tok : split(fields[4], ' ')) {
      if (tok.empty()) continue;
      const std::size_t colon = tok.rfind(':');
      if (colon == std::string::npos)
        throw ParseError(line_no, "path entry '" + tok + "' has no activation time");
      double t = parse_double(tok.substr(colon + 1), line_no, "activation time");
      if (t < 0.0) throw ParseError(line_no, "negative activation time in '" + tok + "'");
      t *= opts.time_scale;
      const std::vector<std::string> hops = split(tok.substr(0, colon), '/');
      for (const std::string& h : hops)
        if (h.empty()) throw ParseError(line_no, "empty user in path entry '" + tok + "'");
      RawEntry e;
      e.user = hops.back();
      e.time = t;
      if (hops.size() == 1) {
        if (saw_root) throw ParseError(line_no, "multiple root entries");
        saw_root = true;
        if (e.user != fields[1])
          throw ParseError(line_no, "root entry '" + e.user + "' does not match root field '" +
                                        fields[1] + "'");
        if (t != 0.0) throw ParseError(line_no, "root activation time must be 0");
      } else {
        e.parent = hops[hops.size() - 2];
        if (e.parent == e.user)
          throw ParseError(line_no, "user '" + e.user + "' is its own parent");
      }
      entries.push_back(std::move(e));
    }
    if (!saw_root) throw ParseError(line_no, "no root entry");
    if (declared != entries.size())
      res.warnings.push_back({line_no, "cascade " + cascade_id + " declares " +
                                           std::to_string(declared) + " activations, found " +
                                           std::to_string(entries.size())});

    // Repeated users keep their earliest activation (ties: first in the file).
    std::unordered_map<std::string, std::size_t> best;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto it = best.find(entries[i].user);
      if (it == best.end()) {
        best.emplace(entries[i].user, i);
        keep.push_back(i);
      } else if (entries[i].time < entries[it->second].time) {
        *std::find(keep.begin(), keep.end(), it->second) = i;
        it->second = i;
      }
    }

    Cascade c;
    c.cascade_id = cascade_id;
    c.publish_time = publish_time;
    c.root = res.users.intern(fields[1]);
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      return entries[a].time < entries[b].time;
    });
    if (entries[keep.front()].parent != std::string())
      throw ParseError(line_no, "first activation is not the root");
    std::unordered_set<std::string> activated;
    for (std::size_t i : keep) {
      const RawEntry& e = entries[i];
      if (!e.parent.empty() && !activated.count(e.parent))
        throw ParseError(line_no, "parent '" + e.parent + "' of user '" + e.user +
                                      "' is not activated earlier");
      activated.insert(e.user);
      Activation a;
      a.user = res.users.intern(e.user);
      a.parent = e.parent.empty() ? kNoParent : res.users.intern(e.parent);
      a.time = e.time;
      c.activations.push_back(a);
    }
    c.horizon_size = c.activations.size();
    res.cascades.push_back(std::move(c));
  }
  return res;
}

ParseResult parse_cascade_path(const std::string& path, const ParseOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cascade file '" + path + "'");
  return parse_cascade_file(in, opts);
}

void serialize_cascades(std::ostream& os, const std::vector<Cascade>& cascades,
                        const UserTable& users) {
  for (const Cascade& c : cascades) {
    os << c.cascade_id << '\t' << users.raw(c.root) << '\t' << fmt_double(c.publish_time) << '\t'
       << c.activations.size() << '\t';
    for (std::size_t i = 0; i < c.activations.size(); ++i) {
      const Activation& a = c.activations[i];
      if (i) os << ' ';
      if (a.parent != kNoParent) os << users.raw(a.parent) << '/';
      os << users.raw(a.user) << ':' << fmt_double(a.time);
    }
    os << '\n';
  }
}

void write_corpus(const std::string& path, const std::vector<Cascade>& cascades,
                  const UserTable& users) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write corpus '" + path + "'");
  serialize_cascades(os, cascades, users);
  os.flush();
  if (!os) throw IoError("failed writing corpus '" + path + "'");
}

std::vector<LabeledCascade> filter_and_truncate(const std::vector<Cascade>& cascades,
                                                const ObservationConfig& cfg) {
  cfg.validate();
  std::vector<LabeledCascade> out;
  for (const Cascade& c : cascades) {
    const std::uint64_t in_window = count_within(c, cfg.window_w);
    const std::uint64_t at_horizon = count_within(c, cfg.horizon_t);
    const std::uint64_t qualifying = cfg.filter_at_horizon ? at_horizon : in_window;
    if (qualifying <= cfg.min_nodes) continue;
    LabeledCascade lc;
    lc.observed.cascade_id = c.cascade_id;
    lc.observed.root = c.root;
    lc.observed.publish_time = c.publish_time;
    lc.observed.horizon_size = at_horizon;
    const std::size_t take = std::min<std::size_t>(in_window, cfg.max_nodes);
    lc.observed.activations.assign(c.activations.begin(),
                                   c.activations.begin() + static_cast<std::ptrdiff_t>(take));
    lc.target_delta_r = at_horizon - in_window;
    for (const Activation& a : lc.observed.activations)
      lc.normalized_times.push_back(normalize_time(a.time, cfg.window_w));
    out.push_back(std::move(lc));
  }
  return out;
}

DatasetSplit split_dataset(std::vector<LabeledCascade> cascades, std::uint64_t seed) {
  if (cascades.size() < 3)
    throw ConfigError("need at least 3 cascades to split, have " +
                      std::to_string(cascades.size()));
  SplitMix64 rng = SplitMix64::derive(seed, 0);
  shuffle(cascades, rng);
  const std::size_t n = cascades.size();
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_valid = n * 3 / 20;
  DatasetSplit s;
  s.split_seed = seed;
  s.train.assign(std::make_move_iterator(cascades.begin()),
                 std::make_move_iterator(cascades.begin() + static_cast<std::ptrdiff_t>(n_train)));
  s.valid.assign(
      std::make_move_iterator(cascades.begin() + static_cast<std::ptrdiff_t>(n_train)),
      std::make_move_iterator(cascades.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid)));
  s.test.assign(std::make_move_iterator(cascades.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid)),
                std::make_move_iterator(cascades.end()));
  return s;
}

void write_split_manifest(const std::string& path, const DatasetSplit& split) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write split manifest '" + path + "'");
  os << "# rng: " << kRngName << "\n# seed: " << split.split_seed << '\n';
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    const char* name = part == &split.train ? "train" : part == &split.valid ? "valid" : "test";
    for (const LabeledCascade& lc : *part) os << lc.observed.cascade_id << '\t' << name << '\n';
  }
  os.flush();
  if (!os) throw IoError("failed writing split manifest '" + path + "'");
}

GlobalGraph build_global_graph(const std::vector<LabeledCascade>& train, std::size_t node_count) {
  std::map<std::pair<UserId, UserId>, std::uint32_t> mult;
  for (const LabeledCascade& lc : train)
    for (const Activation& a : lc.observed.activations)
      if (a.parent != kNoParent) ++mult[{a.parent, a.user}];
  std::vector<std::tuple<UserId, UserId, std::uint32_t>> edges;
  edges.reserve(mult.size());
  for (const auto& [pair, m] : mult) edges.emplace_back(pair.first, pair.second, m);
  return GlobalGraph(node_count, edges);
}

void SynthGraphParams::validate() const {
  if (nodes < 2) throw ConfigError("need at least 2 nodes");
  if (!(power_exponent > 1.0)) throw ConfigError("power_exponent must exceed 1");
  if (min_out_degree == 0) throw ConfigError("min_out_degree must be positive");
  if (!(leader_fraction >= 0.0) || leader_fraction >= 1.0)
    throw ConfigError("leader_fraction must be in [0, 1)");
  if (leader_out_degree == 0) throw ConfigError("leader_out_degree must be positive");
  if (!(fake_follower_fraction >= 0.0) || fake_follower_fraction >= 1.0)
    throw ConfigError("fake_follower_fraction must be in [0, 1)");
  if (leader_fraction + fake_follower_fraction >= 1.0)
    throw ConfigError("leader and fake-follower fractions must leave ordinary nodes");
}

void SynthDiffusionParams::validate() const {
  if (!(prob >= 0.0) || prob > 1.0) throw ConfigError("prob must be in [0, 1]");
  if (!(delay_scale > 0.0) || !std::isfinite(delay_scale))
    throw ConfigError("delay_scale must be positive");
}

namespace {

// d distinct targets, uniform over [0, nodes) \ {u}.
std::vector<UserId> sample_targets(std::uint32_t nodes, UserId u, std::size_t d, SplitMix64& rng) {
  const std::size_t avail = nodes - 1;
  d = std::min(d, avail);
  std::vector<UserId> out;
  if (d * 2 >= avail) {
    std::vector<UserId> pool;
    pool.reserve(avail);
    for (UserId v = 0; v < nodes; ++v)
      if (v != u) pool.push_back(v);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t pick = j + static_cast<std::size_t>(rng.next_below(pool.size() - j));
      std::swap(pool[j], pool[pick]);
    }
    pool.resize(d);
    out = std::move(pool);
  } else {
    std::unordered_set<UserId> seen;
    while (out.size() < d) {
      const auto v = static_cast<UserId>(rng.next_below(nodes));
      if (v == u || !seen.insert(v).second) continue;
      out.push_back(v);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SynthResult generate_synthetic(const SynthGraphParams& gp, const SynthDiffusionParams& dp,
                               std::size_t n_cascades, std::uint64_t seed) {
  gp.validate();
  dp.validate();
  const std::uint32_t nodes = gp.nodes;
  const auto n_leaders = static_cast<std::uint32_t>(gp.leader_fraction * nodes);
  const auto n_sinks = static_cast<std::uint32_t>(gp.fake_follower_fraction * nodes);
  if (n_leaders + n_sinks >= nodes)
    throw ConfigError("no ordinary nodes left after leaders and sinks");

  SynthResult res;
  res.adjacency.resize(nodes);
  for (UserId v = 0; v < nodes; ++v) res.users.intern(std::to_string(v));
  for (UserId v = 0; v < n_leaders; ++v) res.planted_leaders.push_back(v);
  for (UserId v = nodes - n_sinks; v < nodes; ++v) res.sinks.push_back(v);

  SplitMix64 graph_rng = SplitMix64::derive(seed, 0);
  const double inv = 1.0 / (gp.power_exponent - 1.0);
  for (UserId v = 0; v + n_sinks < nodes; ++v) {
    std::size_t d;
    if (v < n_leaders) {
      d = gp.leader_out_degree;
    } else {
      const double u01 = graph_rng.next_double();
      const double raw = gp.min_out_degree * std::pow(1.0 - u01, -inv);
      d = static_cast<std::size_t>(
          std::min(raw, static_cast<double>(nodes - 1)));
      d = std::max<std::size_t>(d, gp.min_out_degree);
    }
    res.adjacency[v] = sample_targets(nodes, v, d, graph_rng);
  }

  res.cascades.reserve(n_cascades);
  for (std::size_t ci = 0; ci < n_cascades; ++ci) {
    SplitMix64 rng = SplitMix64::derive(seed, 1 + ci);
    const auto root = static_cast<UserId>(rng.next_below(nodes - n_sinks));
    Cascade c;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "c%06zu", ci);
    c.cascade_id = idbuf;
    c.root = root;
    c.publish_time = 1600000000.0 + static_cast<double>(ci);

    // Independent-cascade simulation: every out-edge of a newly activated
    // node gets one coin; events pop in (time, seq) order.
    using Event = std::tuple<double, std::uint64_t, UserId>;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue;
    std::vector<char> active(nodes, 0);
    std::uint64_t seq = 0;
    active[root] = 1;
    c.activations.push_back({root, kNoParent, 0.0});
    queue.emplace(0.0, seq++, root);
    while (!queue.empty()) {
      const auto [t, s, u] = queue.top();
      queue.pop();
      for (UserId v : res.adjacency[u]) {
        const bool success = rng.next_double() < dp.prob;
        if (!success || active[v]) continue;
        const double delay = -dp.delay_scale * std::log(1.0 - rng.next_double());
        const double tv = std::max(0.001, std::round((t + delay) * 1000.0) / 1000.0);
        active[v] = 1;
        c.activations.push_back({v, u, tv});
        queue.emplace(tv, seq++, v);
      }
    }
    std::stable_sort(c.activations.begin(), c.activations.end(),
                     [](const Activation& a, const Activation& b) { return a.time < b.time; });
    c.horizon_size = c.activations.size();
    res.cascades.push_back(std::move(c));
  }
  return res;
}

void write_synth_manifest(const std::string& path, const SynthResult& synth) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write synth manifest '" + path + "'");
  os << "# rng: " << kRngName << '\n';
  for (UserId v : synth.planted_leaders) os << "leader\t" << synth.users.raw(v) << '\n';
  for (UserId v : synth.sinks) os << "sink\t" << synth.users.raw(v) << '\n';
  for (const Cascade& c : synth.cascades)
    os << "cascade\t" << c.cascade_id << '\t' << c.activations.size() << '\n';
  os.flush();
  if (!os) throw IoError("failed writing synth manifest '" + path + "'");
}

DatasetStats collect_stats(std::size_t total, const DatasetSplit& split, const GlobalGraph& g,
                           std::size_t user_count) {
  DatasetStats st;
  st.total_cascades = total;
  st.train_count = split.train.size();
  st.valid_count = split.valid.size();
  st.test_count = split.test.size();
  st.qualifying_cascades = st.train_count + st.valid_count + st.test_count;
  st.user_count = user_count;
  st.graph_edge_pairs = g.edge_count();
  double sz = 0.0, tgt = 0.0;
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (const LabeledCascade& lc : *part) {
      sz += static_cast<double>(lc.observed.activations.size());
      tgt += static_cast<double>(lc.target_delta_r);
    }
  if (st.qualifying_cascades) {
    sz /= static_cast<double>(st.qualifying_cascades);
    tgt /= static_cast<double>(st.qualifying_cascades);
  }
  st.mean_observed_size = sz;
  st.mean_target = tgt;
  return st;
}

void write_stats_report(const std::string& path, const DatasetStats& st) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write stats report '" + path + "'");
  os << "total_cascades " << st.total_cascades << '\n'
     << "qualifying_cascades " << st.qualifying_cascades << '\n'
     << "train_cascades " << st.train_count << '\n'
     << "valid_cascades " << st.valid_count << '\n'
     << "test_cascades " << st.test_count << '\n'
     << "users " << st.user_count << '\n'
     << "graph_edge_pairs " << st.graph_edge_pairs << '\n'
     << "mean_observed_size " << fmt_double(st.mean_observed_size) << '\n'
     << "mean_target " << fmt_double(st.mean_target) << '\n';
  os.flush();
  if (!os) throw IoError("failed writing stats report '" + path + "'");
}

}  // namespace casciff
