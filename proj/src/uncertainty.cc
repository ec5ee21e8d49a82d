#include "uniprompt/uncertainty.h"

#include <algorithm>
#include <cmath>

namespace uniprompt {

std::string to_string(MarginMode mode) {
  return mode == MarginMode::kLiteral ? "literal" : "separating";
}

MarginMode margin_mode_from_string(const std::string& name) {
  if (name == "literal") return MarginMode::kLiteral;
  if (name == "separating") return MarginMode::kSeparating;
  throw std::invalid_argument("unknown margin mode \"" + name + "\" (literal | separating)");
}

Prototypes compute_prototypes(const Tensor& embeddings, std::span<const std::size_t> labels,
                              std::size_t num_classes) {
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("compute_prototypes", Shape{labels.size()}, embeddings.shape());
  }
  Prototypes out;
  out.means = Tensor::matrix(num_classes, embeddings.cols());
  out.counts.assign(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw std::out_of_range("prototype label " + std::to_string(labels[i]) + " out of range");
    }
    auto src = embeddings.row_span(i);
    auto dst = out.means.row_span(labels[i]);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    ++out.counts[labels[i]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (out.counts[c] == 0) {
      throw std::invalid_argument("class " + std::to_string(c) + " has no source samples");
    }
    for (double& v : out.means.row_span(c)) v /= static_cast<double>(out.counts[c]);
  }
  return out;
}

std::vector<double> feature_similarity(std::span<const double> embedding,
                                       const Prototypes& prototypes) {
  const Tensor& m = prototypes.means;
  if (embedding.size() != m.cols()) {
    throw ShapeError("feature_similarity", Shape{embedding.size()}, m.shape());
  }
  std::vector<double> phi(m.rows());
  for (std::size_t c = 0; c < m.rows(); ++c) {
    auto mc = m.row_span(c);
    double sq = 0.0;
    for (std::size_t k = 0; k < mc.size(); ++k) sq += (embedding[k] - mc[k]) * (embedding[k] - mc[k]);
    phi[c] = -std::sqrt(sq);
  }
  return phi;
}

Tensor feature_similarity(const Tensor& embeddings, const Prototypes& prototypes) {
  Tensor out = Tensor::matrix(embeddings.rows(), prototypes.means.rows());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const auto phi = feature_similarity(embeddings.row_span(r), prototypes);
    std::copy(phi.begin(), phi.end(), out.row_span(r).begin());
  }
  return out;
}

double energy_score(std::span<const double> phi, std::span<const double> p) {
  if (phi.size() != p.size() || phi.empty()) {
    throw ShapeError("energy_score", Shape{phi.size()}, Shape{p.size()});
  }
  double hi = phi[0] + p[0];
  for (std::size_t c = 1; c < phi.size(); ++c) hi = std::max(hi, phi[c] + p[c]);
  double total = 0.0;
  for (std::size_t c = 0; c < phi.size(); ++c) total += std::exp(phi[c] + p[c] - hi);
  return -(hi + std::log(total));
}

Var energy_scores(Graph& graph, const Tensor& phi, Var probabilities, double phi_scale) {
  if (phi.rows() != probabilities.value().rows() || phi.cols() != probabilities.value().cols()) {
    throw ShapeError("energy_scores", phi.shape(), probabilities.shape());
  }
  Tensor scaled = phi.reshaped({phi.rows(), phi.cols()});
  for (double& v : scaled.values()) v *= phi_scale;
  return scale(logsumexp_rows(add(graph.constant(std::move(scaled)), probabilities)), -1.0);
}

double margin_loss(std::span<const double> source_scores, std::span<const double> target_scores,
                   double margin, MarginMode mode) {
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be > 0");
  double total = 0.0;
  for (double s : source_scores) {
    total += std::max(0.0, mode == MarginMode::kLiteral ? s - margin : s + margin);
  }
  for (double s : target_scores) {
    total += std::max(0.0, mode == MarginMode::kLiteral ? s + margin : margin - s);
  }
  return total;
}

Var margin_loss(Graph& graph, const Var* source_scores, const Var* target_scores, double margin,
                MarginMode mode) {
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be > 0");
  std::vector<Var> terms;
  if (source_scores) {
    const double offset = mode == MarginMode::kLiteral ? -margin : margin;
    terms.push_back(sum(relu(shift(*source_scores, offset))));
  }
  if (target_scores) {
    Var hinge = mode == MarginMode::kLiteral ? shift(*target_scores, margin)
                                             : shift(scale(*target_scores, -1.0), margin);
    terms.push_back(sum(relu(hinge)));
  }
  if (terms.empty()) return graph.constant(Tensor::scalar(0.0));
  return terms.size() == 1 ? terms.front() : add(terms[0], terms[1]);
}

void to_json(nlohmann::json& j, const EnergyStats& stats) {
  j = nlohmann::json{{"u_s", stats.mean},
                     {"sigma_s", stats.stddev},
                     {"delta", stats.delta},
                     {"mode", to_string(stats.mode)},
                     {"rule", "score > delta => unknown"}};
}

EnergyStats unknown_threshold(std::span<const double> source_scores, MarginMode mode) {
  if (source_scores.size() < 2) {
    throw std::invalid_argument("unknown threshold needs at least 2 source scores");
  }
  const double n = static_cast<double>(source_scores.size());
  double mean = 0.0;
  for (double s : source_scores) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : source_scores) var += (s - mean) * (s - mean);
  var /= n;
  EnergyStats stats;
  stats.mean = mean;
  stats.stddev = std::sqrt(var);
  stats.mode = mode;
  stats.delta = mode == MarginMode::kLiteral ? mean - 2.0 * stats.stddev
                                             : mean + 2.0 * stats.stddev;
  return stats;
}

std::vector<double> energy_scores(const Tensor& image_embeddings,
                                  std::span<const std::size_t> domains,
                                  const ScoringContext& context, const Prototypes& prototypes) {
  const Tensor p = class_probabilities(*context.text_embeddings, image_embeddings, domains,
                                       context.num_classes, {0.0, context.temperature},
                                       MemoryBank{});
  const Tensor phi = feature_similarity(image_embeddings, prototypes);
  std::vector<double> scores(image_embeddings.rows());
  std::vector<double> scaled(context.num_classes);
  for (std::size_t r = 0; r < scores.size(); ++r) {
    auto row = phi.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) scaled[c] = row[c] * context.phi_scale;
    scores[r] = energy_score(scaled, p.row_span(r));
  }
  return scores;
}

std::vector<TargetDecision> classify_targets(const Tensor& image_embeddings, std::size_t domain,
                                             const ScoringContext& context,
                                             const Prototypes& prototypes,
                                             const EnergyStats& stats) {
  if (image_embeddings.empty()) return {};
  const std::vector<std::size_t> domains(image_embeddings.rows(), domain);
  const Tensor p = class_probabilities(*context.text_embeddings, image_embeddings, domains,
                                       context.num_classes, {0.0, context.temperature},
                                       MemoryBank{});
  const Tensor phi = feature_similarity(image_embeddings, prototypes);
  std::vector<TargetDecision> out(image_embeddings.rows());
  std::vector<double> scaled(context.num_classes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto prob = p.row_span(r);
    auto row = phi.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) scaled[c] = row[c] * context.phi_scale;
    TargetDecision& d = out[r];
    d.score = energy_score(scaled, prob);
    d.probabilities.assign(prob.begin(), prob.end());
    d.label = stats.is_unknown(d.score) ? kUnknownLabel : static_cast<int>(argmax(prob));
  }
  return out;
}

TargetDecision classify_target(std::span<const double> image_embedding, std::size_t domain,
                               const ParamSet& params, const PromptConfig& config,
                               const TextEncoder& encoder, const Prototypes& prototypes,
                               const EnergyStats& stats, double temperature, double phi_scale) {
  const Tensor text = text_class_embeddings(params, config, encoder);
  const ScoringContext context{&text, config.num_classes(), temperature, phi_scale};
  const Tensor image = Tensor::row({image_embedding.begin(), image_embedding.end()});
  return classify_targets(image, domain, context, prototypes, stats).front();
}

}  // namespace uniprompt
