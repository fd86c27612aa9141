#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mse::lm {

// Byte-level vocabulary: ids 0..255 are the raw bytes, followed by three
// special symbols.
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

// Special symbols carry no bytes and are dropped.
inline std::string detokenize(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace mse::lm
