#pragma once

// "MSEF" pre-extracted feature file:
//   magic "MSEF" | u32 rows | u32 cols | rows*cols f32 little-endian, row-major
// Values are widened to f64 in memory; writing narrows them back to f32.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mse/io/binary.hpp"

namespace mse::corpus {

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const FeatureMatrix&) const = default;
};

inline io::Bytes encode_features(const FeatureMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw DimensionError("feature matrix value count does not match its shape");
  io::ByteWriter w;
  w.raw("MSEF");
  w.u32(static_cast<std::uint32_t>(m.rows));
  w.u32(static_cast<std::uint32_t>(m.cols));
  for (double v : m.values) w.f32(static_cast<float>(v));
  return w.take();
}

inline FeatureMatrix decode_features(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 12 || r.raw(4) != "MSEF") throw FormatError("not an MSEF feature file");
  FeatureMatrix m;
  m.rows = r.u32();
  m.cols = r.u32();
  if (r.remaining() != m.rows * m.cols * 4) {
    throw FormatError("MSEF payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(m.rows * m.cols * 4));
  }
  m.values.resize(m.rows * m.cols);
  for (double& v : m.values) v = static_cast<double>(r.f32());
  return m;
}

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& m) {
  io::write_file(path, encode_features(m));
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  try {
    return decode_features(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mse::corpus
