#include "liquidbench/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace liquidbench {

namespace {

constexpr char kMagic[4] = {'L', 'Q', 'B', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > bytes.size()) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_named_array(std::vector<std::uint8_t>& out, const std::string& name,
                     const Shape& shape, const std::vector<double>& data) {
  put_string(out, name);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u64(out, d);
  for (double v : data) put_f64(out, v);
}

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

NamedArray read_named_array(Reader& r) {
  NamedArray a;
  a.name = r.str();
  std::uint32_t rank = r.u32();
  for (std::uint32_t i = 0; i < rank; ++i) {
    a.shape.push_back(static_cast<std::size_t>(r.u64()));
  }
  std::size_t n = shape_numel(a.shape);
  a.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.data[i] = r.f64();
  return a;
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, const AdamState& adam,
                           std::uint64_t seed, std::uint64_t epochs_done,
                           std::uint64_t config_hash, std::string config_text) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.seed = seed;
  c.epochs_done = epochs_done;
  c.config_text = std::move(config_text);
  for (const auto& [name, t] : model.parameters()) {
    c.tensors.emplace_back(name, t);
  }
  c.adam = adam;
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, Model& model, AdamState& adam) {
  auto& params = model.parameters();
  for (const auto& [name, t] : ckpt.tensors) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw CheckpointError("checkpoint tensor '" + name +
                            "' has no matching model parameter");
    }
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("checkpoint tensor '" + name + "' shape " +
                            shape_str(t.shape()) + " != model shape " +
                            shape_str(it->second.shape()));
    }
    it->second.mutable_values() = t.values();
  }
  if (ckpt.tensors.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model has " + std::to_string(params.size()));
  }
  adam = ckpt.adam;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, ckpt.version);
  put_u64(out, ckpt.config_hash);
  put_u64(out, ckpt.seed);
  put_u64(out, ckpt.epochs_done);
  put_string(out, ckpt.config_text);

  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_named_array(out, name, t.shape(), t.values());
  }

  put_u64(out, ckpt.adam.step);
  put_u32(out, static_cast<std::uint32_t>(ckpt.adam.m.size()));
  for (const auto& [name, m] : ckpt.adam.m) {
    put_named_array(out, name, {m.size()}, m);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.adam.v.size()));
  for (const auto& [name, v] : ckpt.adam.v) {
    put_named_array(out, name, {v.size()}, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic (not a LQBC file)");
  }
  r.pos = 4;
  Checkpoint c;
  c.version = r.u32();
  if (c.version != 1) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(c.version));
  }
  c.config_hash = r.u64();
  c.seed = r.u64();
  c.epochs_done = r.u64();
  c.config_text = r.str();

  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a = read_named_array(r);
    c.tensors.emplace_back(a.name, Tensor(a.shape, std::move(a.data)));
  }
  c.adam.step = r.u64();
  std::uint32_t nm = r.u32();
  for (std::uint32_t i = 0; i < nm; ++i) {
    NamedArray a = read_named_array(r);
    c.adam.m[a.name] = std::move(a.data);
  }
  std::uint32_t nv = r.u32();
  for (std::uint32_t i = 0; i < nv; ++i) {
    NamedArray a = read_named_array(r);
    c.adam.v[a.name] = std::move(a.data);
  }
  if (r.pos != bytes.size()) {
    throw CheckpointError("trailing bytes after checkpoint payload");
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace liquidbench
