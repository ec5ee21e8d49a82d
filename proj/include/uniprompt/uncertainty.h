#pragma once

// Energy-based uncertainty: class prototypes in image-embedding space, the
// prototype/probability energy score, its margin loss, and the source-derived
// unknown threshold.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniprompt/alignment.h"
#include "uniprompt/graph.h"

namespace uniprompt {

inline constexpr int kUnknownLabel = -1;

// Which sign convention the margin loss and threshold follow.
//   kLiteral:    sum_src max(0, S - M) + sum_tgt max(0, S + M); delta = u - 2 sd
//   kSeparating: sum_src max(0, S + M) + sum_tgt max(0, M - S); delta = u + 2 sd
// Both flag a target as unknown when its score exceeds delta.
enum class MarginMode { kLiteral, kSeparating };

std::string to_string(MarginMode mode);
MarginMode margin_mode_from_string(const std::string& name);

struct Prototypes {
  Tensor means;                     // [C x out]
  std::vector<std::size_t> counts;  // n_c
};

// Per-class mean of `embeddings` rows. Throws when a class in [0, C) has no
// sample.
Prototypes compute_prototypes(const Tensor& embeddings, std::span<const std::size_t> labels,
                              std::size_t num_classes);

// phi_c = -||e - m_c||_2.
std::vector<double> feature_similarity(std::span<const double> embedding,
                                       const Prototypes& prototypes);
// Row-wise, [B x out] -> [B x C].
Tensor feature_similarity(const Tensor& embeddings, const Prototypes& prototypes);

// S = -log sum_c exp(phi_c + p_c), evaluated with a max shift.
double energy_score(std::span<const double> phi, std::span<const double> p);

// Differentiable in `probabilities`: [B x C] -> [B x 1]. `phi` is data.
Var energy_scores(Graph& graph, const Tensor& phi, Var probabilities, double phi_scale = 1.0);

double margin_loss(std::span<const double> source_scores, std::span<const double> target_scores,
                   double margin, MarginMode mode);

// Either side may be absent (no samples); a missing side contributes 0.
Var margin_loss(Graph& graph, const Var* source_scores, const Var* target_scores, double margin,
                MarginMode mode);

struct EnergyStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double delta = 0.0;
  MarginMode mode = MarginMode::kSeparating;

  bool is_unknown(double score) const { return score > delta; }
};

void to_json(nlohmann::json& j, const EnergyStats& stats);

EnergyStats unknown_threshold(std::span<const double> source_scores, MarginMode mode);

struct TargetDecision {
  int label = kUnknownLabel;  // known class index or kUnknownLabel
  double score = 0.0;
  std::vector<double> probabilities;
};

struct ScoringContext {
  const Tensor* text_embeddings = nullptr;  // [D*C x out]
  std::size_t num_classes = 0;
  double temperature = 0.01;
  double phi_scale = 1.0;
};

// Probabilities at lambda = 0 under `domain`, prototype similarities, energy,
// and the threshold rule; otherwise argmax of the probabilities.
std::vector<TargetDecision> classify_targets(const Tensor& image_embeddings, std::size_t domain,
                                             const ScoringContext& context,
                                             const Prototypes& prototypes,
                                             const EnergyStats& stats);

TargetDecision classify_target(std::span<const double> image_embedding, std::size_t domain,
                               const ParamSet& params, const PromptConfig& config,
                               const TextEncoder& encoder, const Prototypes& prototypes,
                               const EnergyStats& stats, double temperature,
                               double phi_scale = 1.0);

// Scores at lambda = 0 for rows drawn from the given domains.
std::vector<double> energy_scores(const Tensor& image_embeddings,
                                  std::span<const std::size_t> domains,
                                  const ScoringContext& context, const Prototypes& prototypes);

}  // namespace uniprompt
