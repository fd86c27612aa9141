#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mse/errors.hpp"

namespace mse::adapter {

struct AdapterConfig {
  std::size_t d_v = 35;   // vision feature width
  std::size_t d_a = 74;   // audio feature width
  std::size_t h_v = 32;   // vision LSTM hidden size
  std::size_t h_a = 64;   // audio LSTM hidden size
  std::size_t h = 128;    // common TGM/MSF width
  std::size_t n = 4;      // pseudo-token count
  std::size_t d_t = 64;   // backbone width
  std::vector<std::size_t> k_set = {8, 16, 32};

  void validate() const {
    if (d_v == 0 || d_a == 0 || h_v == 0 || h_a == 0 || h == 0 || n == 0 || d_t == 0) {
      throw ConfigError("adapter extents must be positive");
    }
    if (k_set.empty()) throw ConfigError("adapter k_set is empty");
    for (std::size_t k : k_set) {
      if (k == 0 || h % k != 0) {
        throw ConfigError("adapter width h=" + std::to_string(h) + " is not divisible by scale divisor " +
                          std::to_string(k));
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"d_v", d_v}, {"d_a", d_a}, {"h_v", h_v}, {"h_a", h_a}, {"h", h},
            {"n", n},     {"d_t", d_t}, {"k_set", k_set}};
  }

  static AdapterConfig from_json(const nlohmann::json& j) {
    AdapterConfig c;
    c.d_v = j.at("d_v").get<std::size_t>();
    c.d_a = j.at("d_a").get<std::size_t>();
    c.h_v = j.at("h_v").get<std::size_t>();
    c.h_a = j.at("h_a").get<std::size_t>();
    c.h = j.at("h").get<std::size_t>();
    c.n = j.at("n").get<std::size_t>();
    c.d_t = j.at("d_t").get<std::size_t>();
    c.k_set = j.at("k_set").get<std::vector<std::size_t>>();
    c.validate();
    return c;
  }
};

// Ablation variants. no_tgm and no_T share the adapter computation; no_T
// additionally leaves the transcript out of the language-model input.
enum class Variant { full, no_tgm, no_msf, no_T, no_A, no_V, no_AV };

inline constexpr std::array<Variant, 7> kAllVariants = {Variant::no_A,   Variant::no_V,   Variant::no_T, Variant::no_AV,
                                                        Variant::no_tgm, Variant::no_msf, Variant::full};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_tgm: return "no_tgm";
    case Variant::no_msf: return "no_msf";
    case Variant::no_T: return "no_T";
    case Variant::no_A: return "no_A";
    case Variant::no_V: return "no_V";
    case Variant::no_AV: return "no_AV";
  }
  return "?";
}

// Row label used in ablation tables.
inline std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::full: return "MSE-Adapter";
    case Variant::no_tgm: return "w/o TGM";
    case Variant::no_msf: return "w/o MSF";
    case Variant::no_T: return "w/o T";
    case Variant::no_A: return "w/o A";
    case Variant::no_V: return "w/o V";
    case Variant::no_AV: return "w/o A,V";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

inline bool uses_tgm(Variant v) { return v != Variant::no_tgm && v != Variant::no_T; }
inline bool uses_msf(Variant v) { return v != Variant::no_msf; }
inline bool uses_audio(Variant v) { return v != Variant::no_A && v != Variant::no_AV; }
inline bool uses_vision(Variant v) { return v != Variant::no_V && v != Variant::no_AV; }
inline bool uses_text_input(Variant v) { return v != Variant::no_T; }

/// Closed-form count of trainable values for the full adapter:
///
///   LSTM_m     4 h_m (d_m + h_m + 1)              for m in {v, a}
///   TGM        h (d_t + 1) + h (h_v + 1) + h (h_a + 1)
///   MSF        sum_k [ (h/k)(h + 1) + h (h/k + 1) ] + |k_set| + 1
///   Projector  d_t (h + 1) + n
inline std::size_t count_trainable(const AdapterConfig& c) {
  c.validate();
  const std::size_t lstm = 4 * c.h_v * (c.d_v + c.h_v + 1) + 4 * c.h_a * (c.d_a + c.h_a + 1);
  const std::size_t tgm = c.h * (c.d_t + 1) + c.h * (c.h_v + 1) + c.h * (c.h_a + 1);
  std::size_t msf = c.k_set.size() + 1;
  for (std::size_t k : c.k_set) {
    const std::size_t r = c.h / k;
    msf += r * (c.h + 1) + c.h * (r + 1);
  }
  const std::size_t proj = c.d_t * (c.h + 1) + c.n;
  return lstm + tgm + msf + proj;
}

}  // namespace mse::adapter
