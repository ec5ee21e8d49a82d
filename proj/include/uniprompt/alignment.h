#pragma once

// Image-text alignment: temperature-scaled class probabilities over all
// (domain tag, class) prompts, the optional negative-semantics inflation of
// the denominator, the instance loss, and confidence-thresholded pseudo
// labels for unlabeled target samples.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uniprompt/encoders.h"
#include "uniprompt/graph.h"
#include "uniprompt/prompts.h"

namespace uniprompt {

// Negative semantic distances between textual classes, one [C x C] matrix per
// domain tag: entry (i, j) = 1 - cos(T(p_i^d), T(p_j^d)).
struct MemoryBank {
  std::vector<Tensor> distances;
  int refresh_epoch = -1;

  bool refreshed() const { return refresh_epoch >= 0 && !distances.empty(); }
  std::size_t num_domains() const { return distances.size(); }
  std::size_t num_classes() const { return distances.empty() ? 0 : distances.front().rows(); }

  // Zero diagonal, symmetry and range [0, 2], each within `tol`. Throws
  // std::logic_error describing the first violation.
  void check_invariants(double tol = 1e-9) const;
};

// `text_embeddings` is [D*C x out] with row d*C + c (see text_class_embeddings).
MemoryBank memory_bank_from_embeddings(const Tensor& text_embeddings, std::size_t num_classes,
                                       int epoch);

MemoryBank refresh_memory_bank(const ParamSet& params, const PromptConfig& config,
                               const TextEncoder& encoder, int epoch = 0);

struct AlignmentOptions {
  double lambda = 0.03;
  double temperature = 0.01;
};

// log P(y = c | x_b) for every row b of `image_embeddings` [B x out], where
// row b was drawn from domain `domains[b]`:
//
//   P(c) = exp(s_{d,c} / T) / sum_a sum_j exp((s_{a,j} + lambda M^d[j][c]) / T)
//
// with s_{a,j} the cosine similarity between the image and prompt (j, a).
// With lambda = 0 the bank is not consulted. Returns [B x C].
Var log_class_probabilities(Graph& graph, Var text_embeddings, const Tensor& image_embeddings,
                            std::span<const std::size_t> domains, std::size_t num_classes,
                            const AlignmentOptions& options, const MemoryBank& bank);

Tensor class_probabilities(const Tensor& text_embeddings, const Tensor& image_embeddings,
                           std::span<const std::size_t> domains, std::size_t num_classes,
                           const AlignmentOptions& options, const MemoryBank& bank);

std::vector<double> class_probabilities(std::span<const double> image_embedding,
                                        std::size_t domain, const ParamSet& params,
                                        const PromptConfig& config, const TextEncoder& encoder,
                                        const AlignmentOptions& options, const MemoryBank& bank);

// Mean negative log-probability of the labeled class.
Var instance_loss(Graph& graph, Var text_embeddings, const Tensor& image_embeddings,
                  std::span<const std::size_t> labels, std::span<const std::size_t> domains,
                  std::size_t num_classes, const AlignmentOptions& options,
                  const MemoryBank& bank);

double instance_loss(const ParamSet& params, const PromptConfig& config,
                     const TextEncoder& encoder, const Tensor& image_embeddings,
                     std::span<const std::size_t> labels, std::span<const std::size_t> domains,
                     const AlignmentOptions& options, const MemoryBank& bank);

struct PseudoLabel {
  std::size_t sample_id = 0;
  std::size_t class_index = 0;
  double confidence = 0.0;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> entries;
  double threshold = 0.0;
};

// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

// One entry per row of `probabilities` whose maximum strictly exceeds tau.
PseudoLabelSet assign_pseudo_labels(const Tensor& probabilities,
                                    std::span<const std::size_t> sample_ids, double tau);

// Target probabilities at lambda = 0 under the target domain tag, then the
// threshold rule above.
PseudoLabelSet assign_pseudo_labels(const Tensor& text_embeddings,
                                    const Tensor& target_embeddings,
                                    std::span<const std::size_t> sample_ids,
                                    std::size_t target_domain, std::size_t num_classes,
                                    double tau, double temperature);

// One CSV per domain tag: <dir>/memory_bank_<tag>.csv, C rows of C values.
void write_memory_bank_csv(const MemoryBank& bank, const std::vector<std::string>& domain_tags,
                           const std::filesystem::path& dir);
void write_pseudo_labels_csv(const PseudoLabelSet& labels, const std::filesystem::path& path);

}  // namespace uniprompt
