#include "casciff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "casciff/detail/wire.hpp"
#include "casciff/errors.hpp"

namespace casciff {

using wire::put_f64;
using wire::put_str;
using wire::put_tensor;
using wire::put_u32;
using wire::put_u64;

namespace {

constexpr std::uint32_t kMagic = 0x43534346;  // "CSCF"
constexpr std::uint32_t kVersion = 1;

struct Reader : wire::Reader {
  explicit Reader(const std::string& p) : wire::Reader(p, "checkpoint") {}

  CheckpointMeta header() {
    if (u32() != kMagic) throw IoError("'" + path + "' is not a checkpoint file");
    const std::uint32_t ver = u32();
    if (ver != kVersion)
      throw ConsistencyError("checkpoint '" + path + "' has format version " +
                             std::to_string(ver) + ", expected " + std::to_string(kVersion));
    CheckpointMeta meta;
    meta.config_hash = u64();
    meta.config_json = str();
    return meta;
  }
};

}  // namespace


void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<Parameter*>& params, const Adam* opt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  put_u32(os, kMagic);
  put_u32(os, kVersion);
  put_u64(os, meta.config_hash);
  put_str(os, meta.config_json);

  put_u64(os, params.size());
  for (const Parameter* p : params) {
    put_str(os, p->name);
    os.put(p->regularized ? 1 : 0);
    put_tensor(os, p->value);
  }

  if (opt) {
    os.put(1);
    const Adam::State s = opt->export_state();
    put_u64(os, s.steps);
    for (const Tensor& t : s.m) put_tensor(os, t);
    for (const Tensor& t : s.v) put_tensor(os, t);
  } else {
    os.put(0);
  }
  os.flush();
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<Parameter*>& params, Adam* opt) {
  Reader rd(path);
  CheckpointMeta meta = rd.header();

  const std::uint64_t count = rd.u64();
  if (count != params.size())
    throw ConsistencyError("checkpoint '" + path + "' holds " + std::to_string(count) +
                           " parameters, model has " + std::to_string(params.size()));
  for (Parameter* p : params) {
    const std::string name = rd.str();
    if (name != p->name)
      throw ConsistencyError("checkpoint '" + path + "' parameter '" + name +
                             "' does not match model parameter '" + p->name + "'");
    char reg = 0;
    rd.bytes(&reg, 1);
    Tensor t = rd.tensor();
    if (!t.same_shape(p->value))
      throw ConsistencyError("checkpoint '" + path + "' shape " + t.shape_str() +
                             " for '" + name + "', model has " + p->value.shape_str());
    p->value = std::move(t);
    p->regularized = reg != 0;
    p->zero_grad();
  }

  char has_opt = 0;
  rd.bytes(&has_opt, 1);
  if (opt) {
    if (!has_opt)
      throw ConsistencyError("checkpoint '" + path + "' has no optimizer state");
    Adam::State s;
    s.steps = rd.u64();
    for (std::size_t i = 0; i < params.size(); ++i) s.m.push_back(rd.tensor());
    for (std::size_t i = 0; i < params.size(); ++i) s.v.push_back(rd.tensor());
    opt->import_state(s);
  }
  return meta;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  Reader rd(path);
  return rd.header();
}

}  // namespace casciff
