#include "scaleseg/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "scaleseg/common.hpp"

namespace scaleseg {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& in) {
  uint64_t lo = get_u32(in);
  uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

void put_f32_array(std::ostream& out, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  for (float f : v) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

void get_f32_array(std::istream& in, std::vector<float>& v) {
  for (float& f : v) {
    uint32_t bits = get_u32(in);
    std::memcpy(&f, &bits, 4);
  }
}

}  // namespace

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw IoError("checkpoint is missing tensor: " + name);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(ckpt.kind));
  put_u32(out, static_cast<uint32_t>(ckpt.header.size()));
  for (uint32_t v : ckpt.header) put_u32(out, v);
  put_u32(out, static_cast<uint32_t>(ckpt.schedule.size()));
  for (const auto& d : ckpt.schedule) {
    put_u32(out, static_cast<uint32_t>(d.h));
    put_u32(out, static_cast<uint32_t>(d.w));
  }
  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_u32(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<uint32_t>(t.dims.size()));
    size_t count = 1;
    for (int d : t.dims) {
      put_u32(out, static_cast<uint32_t>(d));
      count *= static_cast<size_t>(d);
    }
    if (count != t.data.size()) throw ShapeError("tensor dims do not match data: " + t.name);
    put_u64(out, count);
    put_f32_array(out, t.data);
  }
  if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path);
  uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

  Checkpoint ckpt;
  ckpt.kind = static_cast<CkptKind>(get_u32(in));
  uint32_t header_count = get_u32(in);
  ckpt.header.resize(header_count);
  for (auto& v : ckpt.header) v = get_u32(in);
  uint32_t K = get_u32(in);
  ckpt.schedule.resize(K);
  for (auto& d : ckpt.schedule) {
    d.h = static_cast<int>(get_u32(in));
    d.w = static_cast<int>(get_u32(in));
  }
  uint32_t tensor_count = get_u32(in);
  ckpt.tensors.resize(tensor_count);
  for (auto& t : ckpt.tensors) {
    uint32_t name_len = get_u32(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    uint32_t ndim = get_u32(in);
    t.dims.resize(ndim);
    size_t count = 1;
    for (auto& d : t.dims) {
      d = static_cast<int>(get_u32(in));
      count *= static_cast<size_t>(d);
    }
    uint64_t stored = get_u64(in);
    if (stored != count) throw IoError("tensor size mismatch in " + path + ": " + t.name);
    t.data.resize(count);
    get_f32_array(in, t.data);
  }
  if (!in) throw IoError("truncated checkpoint: " + path);
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path, CkptKind expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != expected) throw IoError("checkpoint kind mismatch: " + path);
  return ckpt;
}

}  // namespace scaleseg
