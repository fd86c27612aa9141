#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mse/adapter/config.hpp"
#include "mse/errors.hpp"

namespace mse::metrics {

// Rates are fractions in [0, 1]; renderers print them as percentages.
// Fields a task does not report, or that are undefined (zero-variance Corr,
// empty weak subset), are empty.
struct MetricReport {
  std::string family;
  std::optional<double> acc2, f1, acc7, mae, corr, acc2_weak, acc, wf1;
  std::size_t samples = 0;
  std::size_t fallbacks = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["family"] = family;
    auto put = [&](const char* key, const std::optional<double>& v) {
      if (v) {
        j[key] = *v;
      } else {
        j[key] = nullptr;
      }
    };
    for (const auto& [key, field] : fields()) put(key, this->*field);
    j["samples"] = samples;
    j["fallbacks"] = fallbacks;
    return j;
  }

  using Field = std::optional<double> MetricReport::*;
  static const std::vector<std::pair<const char*, Field>>& fields() {
    static const std::vector<std::pair<const char*, Field>> f = {
        {"Acc-2", &MetricReport::acc2}, {"F1", &MetricReport::f1},     {"Acc-7", &MetricReport::acc7},
        {"MAE", &MetricReport::mae},    {"Corr", &MetricReport::corr}, {"Acc2_weak", &MetricReport::acc2_weak},
        {"Acc", &MetricReport::acc},    {"WF1", &MetricReport::wf1}};
    return f;
  }

  // Columns reported for each metric family, in table order.
  std::vector<std::pair<const char*, Field>> columns() const { return columns_for(family); }

  static std::vector<std::pair<const char*, Field>> columns_for(const std::string& family) {
    if (family == "erc") return {{"Acc", &MetricReport::acc}, {"WF1", &MetricReport::wf1}};
    if (family == "sims") {
      return {{"Acc-2", &MetricReport::acc2},
              {"F1", &MetricReport::f1},
              {"Acc2_weak", &MetricReport::acc2_weak},
              {"MAE", &MetricReport::mae},
              {"Corr", &MetricReport::corr}};
    }
    return {{"Acc-2", &MetricReport::acc2},
            {"F1", &MetricReport::f1},
            {"Acc-7", &MetricReport::acc7},
            {"MAE", &MetricReport::mae},
            {"Corr", &MetricReport::corr}};
  }

  /// Headline number used for model selection: Acc for ERC, Acc-2 for MSA.
  double primary() const {
    if (family == "erc") return acc.value_or(0.0);
    return acc2.value_or(0.0);
  }
};

inline std::string format_metric(const char* name, const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  const std::string n = name;
  if (n == "MAE" || n == "Corr") {
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
  }
  return buf;
}

inline std::string render_table(const MetricReport& r) {
  std::string head, row;
  char buf[64];
  for (const auto& [name, field] : r.columns()) {
    std::snprintf(buf, sizeof(buf), "%10s", name);
    head += buf;
    std::snprintf(buf, sizeof(buf), "%10s", format_metric(name, r.*field).c_str());
    row += buf;
  }
  std::snprintf(buf, sizeof(buf), "%10s%10s", "N", "fallback");
  head += buf;
  std::snprintf(buf, sizeof(buf), "%10zu%10zu", r.samples, r.fallbacks);
  row += buf;
  return head + "\n" + row + "\n";
}

namespace detail {

inline void require_paired(std::size_t a, std::size_t b) {
  if (a != b) throw InputError("prediction/gold lengths differ: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw InputError("metrics need at least one sample");
}

// Pairs sorted into a canonical order so floating sums do not depend on the
// order of the input lists.
inline std::vector<std::pair<double, double>> canonical_pairs(std::span<const double> preds,
                                                              std::span<const double> golds) {
  std::vector<std::pair<double, double>> pairs(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) pairs[i] = {preds[i], golds[i]};
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

inline double mean_absolute_error(const std::vector<std::pair<double, double>>& pairs) {
  double s = 0.0;
  for (auto [p, g] : pairs) s += std::abs(p - g);
  return s / static_cast<double>(pairs.size());
}

inline std::optional<double> pearson(const std::vector<std::pair<double, double>>& pairs) {
  const double n = static_cast<double>(pairs.size());
  double mp = 0.0, mg = 0.0;
  for (auto [p, g] : pairs) {
    mp += p;
    mg += g;
  }
  mp /= n;
  mg /= n;
  double spp = 0.0, sgg = 0.0, spg = 0.0;
  for (auto [p, g] : pairs) {
    spp += (p - mp) * (p - mp);
    sgg += (g - mg) * (g - mg);
    spg += (p - mp) * (g - mg);
  }
  if (spp == 0.0 || sgg == 0.0) return std::nullopt;
  return std::clamp(spg / std::sqrt(spp * sgg), -1.0, 1.0);
}

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool pred_pos, bool gold_pos) {
    if (pred_pos && gold_pos) ++tp;
    else if (pred_pos) ++fp;
    else if (gold_pos) ++fn;
    else ++tn;
  }
  std::size_t total() const { return tp + fp + fn + tn; }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(total()); }
  // F1 of the positive class; 0 when it has no true positives.
  double f1() const {
    if (tp == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
};

}  // namespace detail

/// MOSEI standard: non-negative vs negative for Acc-2/F1 (F1 of the
/// non-negative class); Acc-7 on scores clamped to [-3, 3] and rounded half
/// away from zero.
inline MetricReport mosei_metrics(std::span<const double> preds, std::span<const double> golds) {
  detail::require_paired(preds.size(), golds.size());
  MetricReport r;
  r.family = "mosei";
  r.samples = preds.size();
  detail::BinaryCounts bc;
  std::size_t hits7 = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    bc.add(preds[i] >= 0.0, golds[i] >= 0.0);
    const double p7 = std::round(std::clamp(preds[i], -3.0, 3.0));
    const double g7 = std::round(std::clamp(golds[i], -3.0, 3.0));
    if (p7 == g7) ++hits7;
  }
  r.acc2 = bc.accuracy();
  r.f1 = bc.f1();
  r.acc7 = static_cast<double>(hits7) / static_cast<double>(preds.size());
  const auto pairs = detail::canonical_pairs(preds, golds);
  r.mae = detail::mean_absolute_error(pairs);
  r.corr = detail::pearson(pairs);
  return r;
}

/// SIMS-V2 standard: positive (> 0) vs non-positive; Acc2_weak is the same
/// accuracy on samples with |gold| <= 0.4 (endpoints included).
inline MetricReport sims_metrics(std::span<const double> preds, std::span<const double> golds) {
  detail::require_paired(preds.size(), golds.size());
  MetricReport r;
  r.family = "sims";
  r.samples = preds.size();
  detail::BinaryCounts all, weak;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    all.add(preds[i] > 0.0, golds[i] > 0.0);
    if (std::abs(golds[i]) <= 0.4) weak.add(preds[i] > 0.0, golds[i] > 0.0);
  }
  r.acc2 = all.accuracy();
  r.f1 = all.f1();
  if (weak.total() > 0) r.acc2_weak = weak.accuracy();
  const auto pairs = detail::canonical_pairs(preds, golds);
  r.mae = detail::mean_absolute_error(pairs);
  r.corr = detail::pearson(pairs);
  return r;
}

/// Seven-way (or num_classes-way) accuracy and support-weighted F1.
inline MetricReport erc_metrics(std::span<const int> preds, std::span<const int> golds, int num_classes = 7) {
  detail::require_paired(preds.size(), golds.size());
  auto check = [&](int c) {
    if (c < 0 || c >= num_classes) {
      throw InputError("class " + std::to_string(c) + " outside 0.." + std::to_string(num_classes - 1));
    }
  };
  std::vector<std::size_t> tp(static_cast<std::size_t>(num_classes), 0), fp(tp), fn(tp), support(tp);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(preds[i]);
    check(golds[i]);
    const auto p = static_cast<std::size_t>(preds[i]);
    const auto g = static_cast<std::size_t>(golds[i]);
    ++support[g];
    if (p == g) {
      ++hits;
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double weighted = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    if (support[c] == 0 || tp[c] == 0) continue;
    const double f1 = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    weighted += static_cast<double>(support[c]) * f1;
  }
  MetricReport r;
  r.family = "erc";
  r.samples = preds.size();
  r.acc = static_cast<double>(hits) / static_cast<double>(preds.size());
  r.wf1 = weighted / static_cast<double>(preds.size());
  return r;
}

/// Field-wise arithmetic mean; a field is averaged over the reports that
/// define it.
inline MetricReport average_reports(std::span<const MetricReport> reports) {
  if (reports.empty()) throw InputError("no reports to average");
  MetricReport out;
  out.family = reports.front().family;
  for (const auto& [name, field] : MetricReport::fields()) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (r.*field) {
        s += *(r.*field);
        ++n;
      }
    }
    if (n > 0) out.*field = s / static_cast<double>(n);
  }
  for (const auto& r : reports) {
    out.samples += r.samples;
    out.fallbacks += r.fallbacks;
  }
  out.samples /= reports.size();
  out.fallbacks /= reports.size();
  return out;
}

struct AblationTable {
  std::string text;
  nlohmann::ordered_json json;
  std::vector<std::string> warnings;
};

/// Seed-averaged reports per variant, rendered in the fixed row order
/// w/o A, w/o V, w/o T, w/o A,V, w/o TGM, w/o MSF, full. Missing variants are
/// omitted with a warning; the full model is required.
inline AblationTable ablation_report(const std::map<adapter::Variant, MetricReport>& results) {
  if (!results.contains(adapter::Variant::full)) throw InputError("ablation report needs the full model's results");
  const MetricReport& full = results.at(adapter::Variant::full);
  const auto cols = full.columns();
  AblationTable out;
  out.json = nlohmann::ordered_json::array();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-14s", "Model");
  out.text = buf;
  for (const auto& [name, field] : cols) {
    std::snprintf(buf, sizeof(buf), "%10s", name);
    out.text += buf;
  }
  out.text += "\n";
  for (adapter::Variant v : adapter::kAllVariants) {
    const auto it = results.find(v);
    if (it == results.end()) {
      out.warnings.push_back("no results for " + std::string(adapter::variant_label(v)) + "; row omitted");
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%-14s", std::string(adapter::variant_label(v)).c_str());
    out.text += buf;
    for (const auto& [name, field] : cols) {
      std::snprintf(buf, sizeof(buf), "%10s", format_metric(name, it->second.*field).c_str());
      out.text += buf;
    }
    out.text += "\n";
    nlohmann::ordered_json row;
    row["variant"] = std::string(adapter::variant_name(v));
    row["label"] = std::string(adapter::variant_label(v));
    row["metrics"] = it->second.to_json();
    out.json.push_back(std::move(row));
  }
  return out;
}

}  // namespace mse::metrics
