#pragma once

#include <charconv>
#include <cmath>
#include <regex>
#include <string>
#include <string_view>

#include "mse/corpus/presets.hpp"

namespace mse::metrics {

struct ParsedLabel {
  double value = 0.0;
  bool fallback = false;
};

// Label text used both as the training target and to read generations back.
// MSA: explicit sign ('+' for values >= 0) and one decimal, e.g. "+0.0",
// "-1.2". ERC: the class numeral.
class LabelCodec {
 public:
  LabelCodec(corpus::Task task, double min, double max, int num_classes, int neutral_class)
      : task_(task), min_(min), max_(max), num_classes_(num_classes), neutral_(neutral_class) {}

  static LabelCodec from_preset(const corpus::DatasetPreset& p) {
    return {p.task, p.label_min, p.label_max, p.num_classes, p.neutral_class};
  }

  corpus::Task task() const { return task_; }
  int num_classes() const { return num_classes_; }
  double min() const { return min_; }
  double max() const { return max_; }

  /// Magnitude rounds half to even at one decimal.
  std::string format(double value) const {
    if (task_ == corpus::Task::erc) {
      const int c = static_cast<int>(value);
      if (static_cast<double>(c) != value || c < 0 || c >= num_classes_) {
        throw InputError("class label " + std::to_string(value) + " outside 0.." + std::to_string(num_classes_ - 1));
      }
      return std::to_string(c);
    }
    if (!(value >= min_ && value <= max_)) {
      throw InputError("score " + std::to_string(value) + " outside [" + std::to_string(min_) + ", " +
                       std::to_string(max_) + "]");
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), std::abs(value), std::chars_format::fixed, 1);
    return (value >= 0.0 ? "+" : "-") + std::string(buf, res.ptr);
  }

  /// First signed decimal (MSA) or first valid class digit (ERC) in the
  /// text; otherwise the fallback (0.0 or the neutral class).
  ParsedLabel parse(std::string_view text) const {
    if (task_ == corpus::Task::erc) {
      for (char c : text) {
        if (c >= '0' && c < static_cast<char>('0' + num_classes_)) return {static_cast<double>(c - '0'), false};
      }
      return {static_cast<double>(neutral_), true};
    }
    static const std::regex number(R"([+-]?[0-9]+(\.[0-9]+)?)");
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(text.begin(), text.end(), m, number)) {
      std::string token = m.str(0);
      if (token.front() == '+') token.erase(0, 1);
      double v = 0.0;
      auto res = std::from_chars(token.data(), token.data() + token.size(), v);
      if (res.ec == std::errc()) return {v, false};
    }
    return {0.0, true};
  }

  ParsedLabel parse(std::string_view text, std::size_t& fallback_count) const {
    ParsedLabel p = parse(text);
    if (p.fallback) ++fallback_count;
    return p;
  }

 private:
  corpus::Task task_;
  double min_;
  double max_;
  int num_classes_;
  int neutral_;
};

}  // namespace mse::metrics
