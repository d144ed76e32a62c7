#pragma once

#include <string>
#include <vector>

#include "dacl/config.hpp"
#include "dacl/network.hpp"

// Versioned binary checkpoint container:
//   "DCKP"  u32 version=1  u8 stage  u64 step
//   config snapshot (length-prefixed canonical key = value text)
//   networks: count, then per net name / arch / ordered (key, shape, f32 blob)
//   optimizer states: count, then per state name / step counter / ordered
//   (shape, f32 first-moment blob, f32 second-moment blob)
// Everything little-endian. Payloads are raw parameter memory, so
// save -> load -> save is byte-identical by construction.

namespace dacl {

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'D', 'C', 'K', 'P'};

struct OptimizerState {
  std::string name;
  int64_t steps = 0;
  std::vector<TensorF> m, v;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  Stage stage = Stage::style;
  int64_t step = 0;
  std::string config_text;
  std::vector<Network<float>> nets;
  std::vector<OptimizerState> opts;

  Network<float>& net(const std::string& name) {
    for (auto& n : nets)
      if (n.name == name) return n;
    throw ContractError("checkpoint has no network named '" + name + "'");
  }
  bool has_net(const std::string& name) const {
    for (const auto& n : nets)
      if (n.name == name) return true;
    return false;
  }
  const OptimizerState& opt(const std::string& name) const {
    for (const auto& o : opts)
      if (o.name == name) return o;
    throw ContractError("checkpoint has no optimizer state named '" + name + "'");
  }
};

namespace detail {

inline void put_str(std::string& out, const std::string& s) {
  put<uint32_t>(out, uint32_t(s.size()));
  out += s;
}

inline std::string take_str(const std::string& bytes, size_t& off, const std::string& path) {
  uint32_t n = take<uint32_t>(bytes, off, path);
  if (off + n > bytes.size()) throw DataError("truncated checkpoint: " + path);
  std::string s = bytes.substr(off, n);
  off += n;
  return s;
}

inline void put_tensor(std::string& out, const TensorF& t) {
  put<uint32_t>(out, uint32_t(t.shape.size()));
  for (int64_t d : t.shape) put<int64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
}

inline TensorF take_tensor(const std::string& bytes, size_t& off, const std::string& path) {
  uint32_t nd = take<uint32_t>(bytes, off, path);
  if (nd > 8) throw DataError("implausible tensor rank in checkpoint: " + path);
  Shape shape;
  for (uint32_t i = 0; i < nd; ++i) shape.push_back(take<int64_t>(bytes, off, path));
  const int64_t n = shape_numel(shape);
  if (n < 0 || off + size_t(n) * 4 > bytes.size())
    throw DataError("truncated checkpoint: " + path);
  TensorF t = TensorF::zeros(shape);
  std::memcpy(t.data.data(), bytes.data() + off, size_t(n) * 4);
  off += size_t(n) * 4;
  return t;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put<uint32_t>(out, kCheckpointVersion);
  detail::put<uint8_t>(out, uint8_t(c.stage));
  detail::put<uint64_t>(out, uint64_t(c.step));
  detail::put_str(out, c.config_text);

  detail::put<uint32_t>(out, uint32_t(c.nets.size()));
  for (const auto& n : c.nets) {
    detail::put_str(out, n.name);
    detail::put_str(out, arch_id_name(n.arch_id));
    detail::put<uint32_t>(out, uint32_t(n.order.size()));
    for (const auto& key : n.order) {
      detail::put_str(out, key);
      detail::put_tensor(out, n.p(key).value());
    }
  }

  detail::put<uint32_t>(out, uint32_t(c.opts.size()));
  for (const auto& o : c.opts) {
    detail::put_str(out, o.name);
    detail::put<uint64_t>(out, uint64_t(o.steps));
    if (o.m.size() != o.v.size()) throw ContractError("optimizer state moment count mismatch");
    detail::put<uint32_t>(out, uint32_t(o.m.size()));
    for (size_t i = 0; i < o.m.size(); ++i) {
      detail::put_tensor(out, o.m[i]);
      detail::put_tensor(out, o.v[i]);
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw DataError("bad checkpoint magic: " + path);
  size_t off = 4;
  Checkpoint c;
  c.version = detail::take<uint32_t>(bytes, off, path);
  if (c.version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(c.version) + ": " + path);
  uint8_t stage = detail::take<uint8_t>(bytes, off, path);
  if (stage > 2) throw DataError("malformed checkpoint stage: " + path);
  c.stage = Stage(stage);
  c.step = int64_t(detail::take<uint64_t>(bytes, off, path));
  c.config_text = detail::take_str(bytes, off, path);

  uint32_t n_nets = detail::take<uint32_t>(bytes, off, path);
  for (uint32_t i = 0; i < n_nets; ++i) {
    Network<float> n;
    n.name = detail::take_str(bytes, off, path);
    n.arch_id = arch_id_from_name(detail::take_str(bytes, off, path));
    uint32_t n_params = detail::take<uint32_t>(bytes, off, path);
    for (uint32_t p = 0; p < n_params; ++p) {
      std::string key = detail::take_str(bytes, off, path);
      n.add(key, detail::take_tensor(bytes, off, path));
    }
    c.nets.push_back(std::move(n));
  }

  uint32_t n_opts = detail::take<uint32_t>(bytes, off, path);
  for (uint32_t i = 0; i < n_opts; ++i) {
    OptimizerState o;
    o.name = detail::take_str(bytes, off, path);
    o.steps = int64_t(detail::take<uint64_t>(bytes, off, path));
    uint32_t n_slots = detail::take<uint32_t>(bytes, off, path);
    for (uint32_t s = 0; s < n_slots; ++s) {
      o.m.push_back(detail::take_tensor(bytes, off, path));
      o.v.push_back(detail::take_tensor(bytes, off, path));
    }
    c.opts.push_back(std::move(o));
  }
  if (off != bytes.size()) throw DataError("trailing bytes in checkpoint: " + path);
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing checkpoint: " + path);
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace dacl
