#pragma once

// Checkpoint container shared by backbone ("MSEB") and adapter ("MSEA") files:
//
//   magic       4 bytes
//   version     u32
//   config      u32 length + UTF-8 JSON text
//   count       u32 number of tensors
//   tensor*     u32 name length, name bytes, u32 rank, u32 extents...,
//               f64 little-endian values (row-major)
//   checksum    u64 FNV-1a over every preceding byte
//
// All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/diffmath/parameters.hpp"
#include "mse/io/binary.hpp"

namespace mse::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  diffmath::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string magic;
  nlohmann::json config;
  std::vector<StoredTensor> tensors;
};

inline Bytes encode_body(const Checkpoint& ckpt) {
  if (ckpt.magic.size() != 4) throw FormatError("checkpoint magic must be 4 bytes");
  ByteWriter w;
  w.raw(ckpt.magic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.config.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const StoredTensor& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.values) w.f64(v);
  }
  return w.take();
}

/// Content hash of a checkpoint: covers config and every tensor byte.
inline std::uint64_t checkpoint_checksum(const Checkpoint& ckpt) { return fnv1a64(encode_body(ckpt)); }

inline Bytes encode_checkpoint(const Checkpoint& ckpt) {
  Bytes body = encode_body(ckpt);
  const std::uint64_t sum = fnv1a64(body);
  ByteWriter tail;
  tail.u64(sum);
  body.insert(body.end(), tail.bytes().begin(), tail.bytes().end());
  return body;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& expected_magic) {
  if (bytes.size() < 8 + 4 + 4) throw FormatError("checkpoint too short");
  const auto body = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.last(8));
  const std::uint64_t stored = tail.u64();
  if (fnv1a64(body) != stored) throw ChecksumError("checkpoint checksum mismatch");

  ByteReader r(body);
  Checkpoint ckpt;
  ckpt.magic = r.raw(4);
  if (ckpt.magic != expected_magic) {
    throw FormatError("bad checkpoint magic '" + ckpt.magic + "', expected '" + expected_magic + "'");
  }
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  try {
    ckpt.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 3) throw FormatError("tensor " + t.name + " has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (n * 8 > r.remaining()) throw FormatError("tensor " + t.name + " truncated");
    t.values.resize(n);
    for (double& v : t.values) v = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_magic) {
  return decode_checkpoint(read_file(path), expected_magic);
}

inline std::vector<StoredTensor> to_stored(const diffmath::ParameterSet& params) {
  std::vector<StoredTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({params.name(i), params.shape(i), {params.values(i).begin(), params.values(i).end()}});
  }
  return out;
}

inline diffmath::ParameterSet to_parameters(const std::vector<StoredTensor>& tensors) {
  diffmath::ParameterSet params;
  for (const StoredTensor& t : tensors) params.add(t.name, t.shape, t.values);
  return params;
}

}  // namespace mse::io
