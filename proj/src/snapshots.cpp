#include "casciff/snapshots.hpp"

#include <fstream>
#include <unordered_map>

#include "casciff/detail/wire.hpp"
#include "casciff/errors.hpp"

namespace casciff {

double normalize_time(double t, double t_o) {
  if (!(t_o > 0.0)) throw DataError("observation span must be positive, got " + std::to_string(t_o));
  if (!(t >= 0.0) || t > t_o)
    throw DataError("time " + std::to_string(t) + " outside [0, " + std::to_string(t_o) + "]");
  return 1.0 - t / t_o;
}

Tensor SnapshotSequence::materialize(std::size_t upto) const {
  if (upto == 0 || upto > nodes.size())
    throw ShapeError("snapshot step " + std::to_string(upto) + " out of range for " +
                     std::to_string(nodes.size()) + " nodes");
  Tensor t({upto, upto});
  for (std::size_t r = 0; r < upto; ++r)
    for (std::size_t c = 0; c < upto; ++c) t.at(r, c) = final_alpha.at(r, c);
  return t;
}

Tensor SnapshotSequence::padded(std::size_t upto, std::size_t max_nodes) const {
  if (upto == 0 || upto > nodes.size())
    throw ShapeError("snapshot step " + std::to_string(upto) + " out of range for " +
                     std::to_string(nodes.size()) + " nodes");
  if (max_nodes < upto)
    throw ShapeError("cannot pad " + std::to_string(upto) + " nodes into " +
                     std::to_string(max_nodes));
  Tensor t({max_nodes, max_nodes});
  for (std::size_t r = 0; r < upto; ++r)
    for (std::size_t c = 0; c < upto; ++c) t.at(r, c) = final_alpha.at(r, c);
  return t;
}

SnapshotSequence build_snapshots(const LabeledCascade& lc, const ObservationConfig& cfg) {
  const auto& acts = lc.observed.activations;
  if (acts.empty()) throw DataError("cascade " + lc.observed.cascade_id + " has no activations");
  if (acts.size() > cfg.max_nodes)
    throw DataError("cascade " + lc.observed.cascade_id + " has " + std::to_string(acts.size()) +
                    " observed nodes, limit is " + std::to_string(cfg.max_nodes));
  if (lc.normalized_times.size() != acts.size())
    throw ConsistencyError("cascade " + lc.observed.cascade_id +
                           ": normalized time count does not match activation count");
  SnapshotSequence seq;
  seq.cascade_id = lc.observed.cascade_id;
  seq.window = cfg.window_w;
  seq.t_prime = lc.normalized_times;
  seq.final_alpha = Tensor({acts.size(), acts.size()});
  std::unordered_map<UserId, std::size_t> row_of;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const Activation& a = acts[i];
    seq.nodes.push_back(a.user);
    seq.final_alpha.at(i, i) = lc.normalized_times[i];
    if (a.parent != kNoParent) {
      auto it = row_of.find(a.parent);
      if (it == row_of.end())
        throw ConsistencyError("cascade " + lc.observed.cascade_id + ": parent of user " +
                               std::to_string(a.user) + " not activated earlier");
      seq.final_alpha.at(it->second, i) = lc.normalized_times[i];
    }
    row_of.emplace(a.user, i);
  }
  return seq;
}

namespace {
constexpr std::uint32_t kMagic = 0x504e5343;  // "CSNP"
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_snapshot_cache(const std::string& path, const std::vector<SnapshotSequence>& seqs,
                         double window) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write snapshot cache '" + path + "'");
  wire::put_u32(os, kMagic);
  wire::put_u32(os, kVersion);
  wire::put_f64(os, window);
  wire::put_u64(os, seqs.size());
  for (const SnapshotSequence& s : seqs) {
    wire::put_str(os, s.cascade_id);
    wire::put_u64(os, s.nodes.size());
    for (UserId u : s.nodes) wire::put_u32(os, u);
    for (double t : s.t_prime) wire::put_f64(os, t);
    wire::put_tensor(os, s.final_alpha);
  }
  os.flush();
  if (!os) throw IoError("failed writing snapshot cache '" + path + "'");
}

std::vector<SnapshotSequence> load_snapshot_cache(const std::string& path, double window) {
  wire::Reader rd(path, "snapshot cache");
  if (rd.u32() != kMagic) throw IoError("'" + path + "' is not a snapshot cache");
  const std::uint32_t ver = rd.u32();
  if (ver != kVersion)
    throw ConsistencyError("snapshot cache '" + path + "' has format version " +
                           std::to_string(ver) + ", expected " + std::to_string(kVersion));
  const double w = rd.f64();
  if (w != window)
    throw ConsistencyError("snapshot cache '" + path + "' was built for window " +
                           std::to_string(w) + ", expected " + std::to_string(window));
  const std::uint64_t count = rd.u64();
  std::vector<SnapshotSequence> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SnapshotSequence s;
    s.cascade_id = rd.str();
    s.window = w;
    const std::uint64_t m = rd.u64();
    if (m == 0 || m > (1ULL << 24)) throw IoError("corrupt node count in '" + path + "'");
    for (std::uint64_t r = 0; r < m; ++r) s.nodes.push_back(rd.u32());
    for (std::uint64_t r = 0; r < m; ++r) s.t_prime.push_back(rd.f64());
    s.final_alpha = rd.tensor();
    if (s.final_alpha.ndim() != 2 || s.final_alpha.rows() != m || s.final_alpha.cols() != m)
      throw ConsistencyError("snapshot cache '" + path + "' section " + s.cascade_id +
                             " has adjacency shape " + s.final_alpha.shape_str());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace casciff
