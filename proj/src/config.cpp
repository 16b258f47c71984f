#include "casciff/config.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "casciff/errors.hpp"

namespace casciff {

using nlohmann::json;

void RunConfigFile::validate() const {
  observation.validate();
  sampling.validate();
  model.validate();
  training.validate();
  if (!(leader_percentile >= 0.0) || leader_percentile > 100.0)
    throw ConfigError("leader_percentile must be in [0, 100]");
}

void resolve_derived(RunConfigFile& cfg) {
  cfg.model.max_nodes = cfg.observation.max_nodes;
  cfg.model.window_w = cfg.observation.window_w;
  cfg.model.decay_interval = cfg.observation.decay_interval;
  cfg.model.decay_intervals = cfg.observation.num_decay_intervals();
  cfg.model.max_hop = cfg.sampling.max_hop;
  cfg.model.per_hop_len = cfg.sampling.s;
  cfg.model.lambda_init = cfg.sampling.lambda_init;
  cfg.model.lambda_per_dim = cfg.sampling.lambda_per_dim;
  cfg.training.seed = cfg.seed;
}

RunConfigFile default_run_config() {
  RunConfigFile cfg;
  resolve_derived(cfg);
  return cfg;
}

namespace {

[[noreturn]] void bad_key(const std::string& section, const std::string& key) {
  throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

double num(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("config key '" + where + "' must be a number");
  return v.get<double>();
}

std::uint64_t uint(const json& v, const std::string& where) {
  if (!v.is_number_unsigned()) throw ConfigError("config key '" + where + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

bool boolean(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError("config key '" + where + "' must be true or false");
  return v.get<bool>();
}

std::string text(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError("config key '" + where + "' must be a string");
  return v.get<std::string>();
}

void parse_observation(const json& j, ObservationConfig& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string w = "observation." + key;
    if (key == "window_w") c.window_w = num(v, w);
    else if (key == "horizon_t") c.horizon_t = num(v, w);
    else if (key == "min_nodes") c.min_nodes = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "max_nodes") c.max_nodes = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "decay_interval") c.decay_interval = num(v, w);
    else if (key == "filter_at_horizon") c.filter_at_horizon = boolean(v, w);
    else bad_key("observation", key);
  }
}

void parse_sampling(const json& j, HopSampleConfig& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string w = "sampling." + key;
    if (key == "k") c.k = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "max_hop") c.max_hop = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "s") c.s = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "lambda_init") c.lambda_init = num(v, w);
    else if (key == "undirected") c.undirected = boolean(v, w);
    else if (key == "lambda_per_dim") c.lambda_per_dim = boolean(v, w);
    else bad_key("sampling", key);
  }
}

void parse_model(const json& j, ModelConfig& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string w = "model." + key;
    if (key == "embed_dim") c.embed_dim = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "ae1_h1") c.ae1_h1 = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "ae1_h2") c.ae1_h2 = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "fusion_h") c.fusion_h = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "reg_hidden") c.reg_hidden = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "cls_hidden") c.cls_hidden = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "l2") c.l2 = num(v, w);
    else if (key == "w_reg") c.w_reg = num(v, w);
    else if (key == "w_cl") c.w_cl = num(v, w);
    else if (key == "w_ae1") c.w_ae1 = num(v, w);
    else if (key == "w_ae2") c.w_ae2 = num(v, w);
    else if (key == "local_off") c.local_off = boolean(v, w);
    else if (key == "global_off") c.global_off = boolean(v, w);
    else if (key == "time_off") c.time_off = boolean(v, w);
    else if (key == "decay_off") c.decay_off = boolean(v, w);
    else if (key == "class_off") c.class_off = boolean(v, w);
    else bad_key("model", key);
  }
}

void parse_training(const json& j, RunConfigFile& cfg) {
  for (const auto& [key, v] : j.items()) {
    const std::string w = "training." + key;
    if (key == "lr") cfg.training.lr = num(v, w);
    else if (key == "batch_size") cfg.training.batch_size = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "patience") cfg.training.patience = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "max_epochs") cfg.training.max_epochs = static_cast<std::uint32_t>(uint(v, w));
    else if (key == "monitor_total_loss") cfg.training.monitor_total_loss = boolean(v, w);
    else if (key == "leader_percentile") cfg.leader_percentile = num(v, w);
    else bad_key("training", key);
  }
}

void parse_paths(const json& j, RunConfigFile& cfg) {
  for (const auto& [key, v] : j.items()) {
    const std::string w = "paths." + key;
    if (key == "data") cfg.data_path = text(v, w);
    else if (key == "out_dir") cfg.out_dir = text(v, w);
    else if (key == "cache_dir") cfg.cache_dir = text(v, w);
    else bad_key("paths", key);
  }
}

json observation_json(const ObservationConfig& c) {
  return json{{"window_w", c.window_w},
              {"horizon_t", c.horizon_t},
              {"min_nodes", c.min_nodes},
              {"max_nodes", c.max_nodes},
              {"decay_interval", c.decay_interval},
              {"filter_at_horizon", c.filter_at_horizon}};
}

json sampling_json(const HopSampleConfig& c) {
  return json{{"k", c.k},           {"max_hop", c.max_hop},
              {"s", c.s},           {"lambda_init", c.lambda_init},
              {"undirected", c.undirected}, {"lambda_per_dim", c.lambda_per_dim}};
}

json model_json(const ModelConfig& c) {
  return json{{"embed_dim", c.embed_dim}, {"ae1_h1", c.ae1_h1},
              {"ae1_h2", c.ae1_h2},       {"fusion_h", c.fusion_h},
              {"reg_hidden", c.reg_hidden}, {"cls_hidden", c.cls_hidden},
              {"l2", c.l2},               {"w_reg", c.w_reg},
              {"w_cl", c.w_cl},           {"w_ae1", c.w_ae1},
              {"w_ae2", c.w_ae2},         {"local_off", c.local_off},
              {"global_off", c.global_off}, {"time_off", c.time_off},
              {"decay_off", c.decay_off}, {"class_off", c.class_off}};
}

json training_json(const RunConfigFile& cfg) {
  return json{{"lr", cfg.training.lr},
              {"batch_size", cfg.training.batch_size},
              {"patience", cfg.training.patience},
              {"max_epochs", cfg.training.max_epochs},
              {"monitor_total_loss", cfg.training.monitor_total_loss},
              {"leader_percentile", cfg.leader_percentile}};
}

}  // namespace

RunConfigFile parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfigFile cfg;
  for (const auto& [key, v] : doc.items()) {
    if (key == "observation") parse_observation(v, cfg.observation);
    else if (key == "sampling") parse_sampling(v, cfg.sampling);
    else if (key == "model") parse_model(v, cfg.model);
    else if (key == "training") parse_training(v, cfg);
    else if (key == "paths") parse_paths(v, cfg);
    else if (key == "seed") cfg.seed = uint(v, "seed");
    else bad_key("", key);
  }
  resolve_derived(cfg);
  cfg.validate();
  return cfg;
}

RunConfigFile load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string canonical_json(const RunConfigFile& cfg) {
  const json doc{{"observation", observation_json(cfg.observation)},
                 {"sampling", sampling_json(cfg.sampling)},
                 {"model", model_json(cfg.model)},
                 {"training", training_json(cfg)},
                 {"seed", cfg.seed}};
  return doc.dump();
}

std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::uint64_t config_hash(const RunConfigFile& cfg) { return fnv1a(canonical_json(cfg)); }

std::uint64_t file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::string cache_dir_for(const RunConfigFile& cfg) {
  if (const char* env = std::getenv("CASCIFF_CACHE_DIR"); env && *env) return env;
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  return cfg.out_dir;
}

namespace {

std::string cache_path(const RunConfigFile& cfg, const char* kind, std::uint64_t data_hash,
                       const std::string& slice_json) {
  std::uint64_t h = fnv1a(slice_json);
  h ^= data_hash + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return cache_dir_for(cfg) + "/casciff_" + kind + "_" + hash_hex(h) + ".bin";
}

}  // namespace

std::string influence_cache_path(const RunConfigFile& cfg, std::uint64_t data_hash) {
  const json slice{{"sampling", sampling_json(cfg.sampling)}, {"seed", cfg.seed}};
  return cache_path(cfg, "influence", data_hash, slice.dump());
}

std::string snapshot_cache_path(const RunConfigFile& cfg, std::uint64_t data_hash) {
  const json slice{{"observation", observation_json(cfg.observation)}, {"seed", cfg.seed}};
  return cache_path(cfg, "snapshots", data_hash, slice.dump());
}

FileLock::FileLock(const std::string& path) {
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd_ < 0) throw IoError("cannot open lock file '" + path + "'");
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("cannot lock '" + path + "'");
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace casciff
