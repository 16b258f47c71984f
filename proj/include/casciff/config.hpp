#pragma once

#include <cstdint>
#include <string>

#include "casciff/cascade.hpp"
#include "casciff/influence.hpp"
#include "casciff/model.hpp"
#include "casciff/train.hpp"

namespace casciff {

// The resolved run configuration. One top-level seed drives the whole
// pipeline (split shuffle, influence sampling, parameter init, epoch order).
// Model fields that mirror the observation/sampling sections (max_nodes,
// window, decay buckets, hop shape, λ) are derived, not set directly.
struct RunConfigFile {
  ObservationConfig observation;
  HopSampleConfig sampling;
  ModelConfig model;
  TrainConfig training;
  double leader_percentile = 95.0;
  std::string data_path;
  std::string out_dir = ".";
  std::string cache_dir;  // empty → out_dir; CASCIFF_CACHE_DIR overrides
  std::uint64_t seed = 1;

  void validate() const;
};

RunConfigFile default_run_config();

// Re-derive the dependent ModelConfig/TrainConfig fields after editing the
// observation/sampling sections or the seed (load_run_config calls this).
void resolve_derived(RunConfigFile& cfg);

// JSON document with sections observation/sampling/model/training/paths plus
// top-level seed; unknown keys are rejected naming the offending key, partial
// documents fall back to defaults.
RunConfigFile parse_run_config(const std::string& json_text);
RunConfigFile load_run_config(const std::string& path);

// Canonical single-line snapshot (sorted keys, shortest numbers). Paths are
// excluded so the hash describes run semantics, not directory layout.
std::string canonical_json(const RunConfigFile& cfg);

std::uint64_t fnv1a(const void* data, std::size_t n);
std::uint64_t fnv1a(const std::string& s);
std::uint64_t config_hash(const RunConfigFile& cfg);  // over canonical_json
std::uint64_t file_content_hash(const std::string& path);

std::string hash_hex(std::uint64_t v);  // 16 lowercase hex digits

// Cache entries are content-addressed by (corpus hash, relevant config
// slice): influence caches key on the sampling section, snapshot caches on
// the observation section, both plus the seed.
std::string cache_dir_for(const RunConfigFile& cfg);
std::string influence_cache_path(const RunConfigFile& cfg, std::uint64_t data_hash);
std::string snapshot_cache_path(const RunConfigFile& cfg, std::uint64_t data_hash);

// Advisory exclusive lock (flock) guarding a cache entry against concurrent
// writers; held from construction to destruction.
class FileLock {
 public:
  explicit FileLock(const std::string& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace casciff
