#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casciff/optim.hpp"
#include "casciff/tape.hpp"

namespace casciff {

// Checkpoint = named parameter tensors + optional optimizer moments, tagged
// with the hash and canonical JSON of the run configuration that produced
// them. The format is versioned little-endian binary; writes are exact, so
// identical runs produce byte-identical files.
struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::string config_json;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<Parameter*>& params, const Adam* opt);

// Loads into the given parameters, matched by name in order. Throws
// ConsistencyError when names/shapes/counts disagree or when `opt` is given
// but the file has no optimizer state, IoError on truncation or bad magic.
CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<Parameter*>& params, Adam* opt);

// Reads just the meta block (cheap header peek).
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace casciff
