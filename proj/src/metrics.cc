#include "uniprompt/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace uniprompt {

AccuracyBreakdown accuracy_decomposition(const LabelMap& predictions, const LabelMap& truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(truth.size()) + " samples");
  }
  std::map<int, std::size_t> total, correct;
  std::size_t unknown_total = 0, unknown_correct = 0;
  for (const auto& [id, label] : truth) {
    auto it = predictions.find(id);
    if (it == predictions.end()) {
      throw std::invalid_argument("accuracy: no prediction for sample " + std::to_string(id));
    }
    if (label == kUnknownLabel) {
      ++unknown_total;
      unknown_correct += it->second == kUnknownLabel;
    } else {
      ++total[label];
      correct[label] += it->second == label;
    }
  }
  if (total.empty()) throw std::invalid_argument("accuracy: no known-class samples");
  if (unknown_total == 0) throw std::invalid_argument("accuracy: no unknown samples");

  AccuracyBreakdown out;
  std::size_t known_total = 0, known_correct = 0;
  for (const auto& [label, n] : total) {
    const double acc = static_cast<double>(correct[label]) / static_cast<double>(n);
    out.per_class[label] = acc;
    out.acc_known += acc;
    known_total += n;
    known_correct += correct[label];
  }
  out.acc_known /= static_cast<double>(total.size());
  out.pooled_known = static_cast<double>(known_correct) / static_cast<double>(known_total);
  out.acc_unknown = static_cast<double>(unknown_correct) / static_cast<double>(unknown_total);
  return out;
}

double h_score(double acc_known, double acc_unknown) {
  const double denom = acc_known + acc_unknown;
  return denom > 0.0 ? 2.0 * acc_known * acc_unknown / denom : 0.0;
}

double roc_auc(const std::map<std::size_t, double>& scores,
               const std::map<std::size_t, bool>& is_unknown) {
  if (scores.size() != is_unknown.size()) {
    throw std::invalid_argument("roc_auc: score and label maps differ in size");
  }
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> entries;
  entries.reserve(scores.size());
  double positives = 0, negatives = 0;
  for (const auto& [id, score] : scores) {
    auto it = is_unknown.find(id);
    if (it == is_unknown.end()) {
      throw std::invalid_argument("roc_auc: no label for sample " + std::to_string(id));
    }
    entries.push_back({score, !it->second});
    (it->second ? negatives : positives) += 1;
  }
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("roc_auc: need at least one known and one unknown sample");
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // Mann-Whitney with mid-ranks; every quantity stays a multiple of 1/2.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    while (j < entries.size() && entries[j].score == entries[i].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (entries[k].positive) rank_sum += mid_rank;
    }
    i = j;
  }
  const double u = rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

std::vector<HistogramBin> score_histogram(std::span<const double> scores, std::size_t bins) {
  if (scores.empty()) throw std::invalid_argument("histogram: no scores");
  if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lo = lo + width * static_cast<double>(b);
    out[b].hi = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double s : scores) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((s - lo) / width) : 0;
    out[std::min(b, bins - 1)].count++;
  }
  return out;
}

void write_histogram_csv(const std::vector<HistogramBin>& bins,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "bin,lo,hi,count\n";
  for (std::size_t b = 0; b < bins.size(); ++b) {
    out << b << ',' << bins[b].lo << ',' << bins[b].hi << ',' << bins[b].count << '\n';
  }
}

std::vector<double> quantiles(std::vector<double> values, std::span<const double> probs) {
  if (values.empty()) return std::vector<double>(probs.size(), 0.0);
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  for (double p : probs) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, values.size() - 1);
    out.push_back(values[i] + (pos - static_cast<double>(i)) * (values[j] - values[i]));
  }
  return out;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, acc] : report.per_class_accuracy) {
    per_class[std::to_string(label)] = acc;
  }
  nlohmann::json energy = report.energy.source;
  energy["target_quantiles"] = report.energy.target_quantiles;
  energy["source_mean"] = report.energy.source_mean;
  energy["target_known_mean"] = report.energy.target_known_mean;
  energy["target_unknown_mean"] = report.energy.target_unknown_mean;
  return nlohmann::json{{"acc_known", report.acc_known},
                        {"acc_unknown", report.acc_unknown},
                        {"h_score", report.h_score},
                        {"auc", report.auc},
                        {"auc_orientation", report.auc_orientation},
                        {"pooled_known_accuracy", report.pooled_known_accuracy},
                        {"per_class_accuracy", per_class},
                        {"energy_summary", energy},
                        {"config_fingerprint", report.config_fingerprint}};
}

}  // namespace uniprompt
