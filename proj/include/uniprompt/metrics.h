#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniprompt/uncertainty.h"

namespace uniprompt {

// Predictions and ground truth use a known class index or kUnknownLabel.
using LabelMap = std::map<std::size_t, int>;

struct AccuracyBreakdown {
  double acc_known = 0.0;     // mean of per-class accuracies over known classes
  double acc_unknown = 0.0;   // recall of the unknown class
  double pooled_known = 0.0;  // instance-level accuracy over known samples
  std::map<int, double> per_class;
};

AccuracyBreakdown accuracy_decomposition(const LabelMap& predictions, const LabelMap& truth);

// Harmonic mean; 0 when either argument is 0.
double h_score(double acc_known, double acc_unknown);

// Exact AUC over all (known, unknown) pairs with known as the positive class:
// a pair counts 1 when the known sample scores higher, 1/2 on ties.
double roc_auc(const std::map<std::size_t, double>& scores,
               const std::map<std::size_t, bool>& is_unknown);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

// Equal-width bins over [min, max]; the maximum falls in the last bin.
std::vector<HistogramBin> score_histogram(std::span<const double> scores, std::size_t bins);

void write_histogram_csv(const std::vector<HistogramBin>& bins,
                         const std::filesystem::path& path);

struct EnergySummary {
  EnergyStats source;
  // min, 25%, 50%, 75%, max of target scores (linear interpolation).
  std::vector<double> target_quantiles;
  double source_mean = 0.0;
  double target_known_mean = 0.0;
  double target_unknown_mean = 0.0;
};

struct MetricsReport {
  double acc_known = 0.0;
  double acc_unknown = 0.0;
  double h_score = 0.0;
  double auc = 0.0;
  double pooled_known_accuracy = 0.0;
  std::map<int, double> per_class_accuracy;
  EnergySummary energy;
  // How scores were oriented for AUC.
  std::string auc_orientation = "negated_energy";
  std::string config_fingerprint;
};

nlohmann::json to_json(const MetricsReport& report);

std::vector<double> quantiles(std::vector<double> values, std::span<const double> probs);

}  // namespace uniprompt
