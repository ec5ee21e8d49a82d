#include "uniprompt/alignment.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace uniprompt {
namespace {

std::size_t domain_count(const Tensor& text_embeddings, std::size_t num_classes) {
  if (num_classes == 0 || text_embeddings.rows() % num_classes != 0) {
    throw ShapeError("class_probabilities",
                     "text embeddings " + shape_string(text_embeddings.shape()) +
                         " are not a whole number of " + std::to_string(num_classes) +
                         "-class blocks");
  }
  return text_embeddings.rows() / num_classes;
}

void check_options(const AlignmentOptions& options, const MemoryBank& bank,
                   std::size_t num_domains, std::size_t num_classes) {
  if (!(options.temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(options.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (options.lambda > 0.0) {
    if (!bank.refreshed()) {
      throw std::logic_error("memory bank must be refreshed before use with lambda > 0");
    }
    if (bank.num_domains() != num_domains || bank.num_classes() != num_classes) {
      throw ShapeError("class_probabilities", Shape{bank.num_domains(), bank.num_classes()},
                       Shape{num_domains, num_classes});
    }
  }
}

}  // namespace

void MemoryBank::check_invariants(double tol) const {
  for (std::size_t d = 0; d < distances.size(); ++d) {
    const Tensor& m = distances[d];
    for (std::size_t i = 0; i < m.rows(); ++i) {
      if (std::abs(m.at(i, i)) > tol) {
        throw std::logic_error("memory bank: nonzero diagonal at domain " + std::to_string(d));
      }
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (std::abs(m.at(i, j) - m.at(j, i)) > tol) {
          throw std::logic_error("memory bank: asymmetric at domain " + std::to_string(d));
        }
        if (m.at(i, j) < -tol || m.at(i, j) > 2.0 + tol) {
          throw std::logic_error("memory bank: entry outside [0, 2] at domain " +
                                 std::to_string(d));
        }
      }
    }
  }
}

MemoryBank memory_bank_from_embeddings(const Tensor& text_embeddings, std::size_t num_classes,
                                       int epoch) {
  const std::size_t num_domains = domain_count(text_embeddings, num_classes);
  MemoryBank bank;
  bank.refresh_epoch = epoch;
  for (std::size_t d = 0; d < num_domains; ++d) {
    Tensor m = Tensor::matrix(num_classes, num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) {
      auto ei = text_embeddings.row_span(d * num_classes + i);
      for (std::size_t j = i + 1; j < num_classes; ++j) {
        auto ej = text_embeddings.row_span(d * num_classes + j);
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t k = 0; k < ei.size(); ++k) {
          dot += ei[k] * ej[k];
          ni += ei[k] * ei[k];
          nj += ej[k] * ej[k];
        }
        const double cos = std::clamp(dot / std::sqrt(ni * nj), -1.0, 1.0);
        m.at(i, j) = m.at(j, i) = 1.0 - cos;
      }
    }
    bank.distances.push_back(std::move(m));
  }
  return bank;
}

MemoryBank refresh_memory_bank(const ParamSet& params, const PromptConfig& config,
                               const TextEncoder& encoder, int epoch) {
  return memory_bank_from_embeddings(text_class_embeddings(params, config, encoder),
                                     config.num_classes(), epoch);
}

Var log_class_probabilities(Graph& graph, Var text_embeddings, const Tensor& image_embeddings,
                            std::span<const std::size_t> domains, std::size_t num_classes,
                            const AlignmentOptions& options, const MemoryBank& bank) {
  const Tensor& text = text_embeddings.value();
  const std::size_t num_domains = domain_count(text, num_classes);
  check_options(options, bank, num_domains, num_classes);
  const std::size_t batch = image_embeddings.rows();
  if (batch == 0 || domains.size() != batch) {
    throw ShapeError("class_probabilities", "need one domain per image, got " +
                                                std::to_string(domains.size()) + " for " +
                                                std::to_string(batch) + " images");
  }
  if (image_embeddings.cols() != text.cols()) {
    throw ShapeError("class_probabilities", image_embeddings.shape(), text.shape());
  }
  const std::size_t width = num_domains * num_classes;
  const double inv_t = 1.0 / options.temperature;

  Var images = graph.constant(image_embeddings.reshaped({batch, image_embeddings.cols()}));
  Var sims = matmul(images, transpose(text_embeddings));

  std::vector<Var> groups;
  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < num_domains; ++d) {
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < batch; ++b) {
      if (domains[b] >= num_domains) {
        throw std::out_of_range("domain index " + std::to_string(domains[b]) + " out of range");
      }
      if (domains[b] == d) rows.push_back(b);
    }
    if (rows.empty()) continue;
    Var group = rows.size() == batch ? sims : gather_rows(sims, rows);

    // Per-row max shift; cancels exactly between numerator and denominator.
    const Tensor& gs = group.value();
    Tensor offsets = Tensor::matrix(rows.size(), width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto row = gs.row_span(r);
      const double hi = *std::max_element(row.begin(), row.end());
      std::fill(offsets.row_span(r).begin(), offsets.row_span(r).end(), hi);
    }
    Var logits = scale(sub(group, graph.constant(std::move(offsets))), inv_t);

    Var denominator;
    if (options.lambda > 0.0) {
      // W[(a, j), c] = exp(lambda M^d[j][c] / T) weights each denominator term.
      const Tensor& m = bank.distances[d];
      Tensor weights = Tensor::matrix(width, num_classes);
      for (std::size_t a = 0; a < num_domains; ++a) {
        for (std::size_t j = 0; j < num_classes; ++j) {
          for (std::size_t c = 0; c < num_classes; ++c) {
            weights.at(a * num_classes + j, c) = std::exp(options.lambda * m.at(j, c) * inv_t);
          }
        }
      }
      denominator = matmul(exp(logits), graph.constant(std::move(weights)));
    } else {
      denominator = matmul(exp(logits), graph.constant(Tensor::matrix(width, num_classes, 1.0)));
    }
    Var numerator = slice(logits, 0, rows.size(), d * num_classes, num_classes);
    groups.push_back(sub(numerator, log(denominator)));
    order.insert(order.end(), rows.begin(), rows.end());
  }

  Var stacked = groups.size() == 1 ? groups.front() : concat_rows(groups);
  bool identity = true;
  for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
  if (identity) return stacked;
  std::vector<std::size_t> position(batch);
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  return gather_rows(stacked, position);
}

Tensor class_probabilities(const Tensor& text_embeddings, const Tensor& image_embeddings,
                           std::span<const std::size_t> domains, std::size_t num_classes,
                           const AlignmentOptions& options, const MemoryBank& bank) {
  Graph graph;
  Var text = graph.constant(text_embeddings);
  return exp(log_class_probabilities(graph, text, image_embeddings, domains, num_classes,
                                     options, bank))
      .value();
}

std::vector<double> class_probabilities(std::span<const double> image_embedding,
                                        std::size_t domain, const ParamSet& params,
                                        const PromptConfig& config, const TextEncoder& encoder,
                                        const AlignmentOptions& options, const MemoryBank& bank) {
  const Tensor text = text_class_embeddings(params, config, encoder);
  const Tensor image = Tensor::row({image_embedding.begin(), image_embedding.end()});
  const std::size_t domains[] = {domain};
  const Tensor p =
      class_probabilities(text, image, domains, config.num_classes(), options, bank);
  return {p.values().begin(), p.values().end()};
}

Var instance_loss(Graph& graph, Var text_embeddings, const Tensor& image_embeddings,
                  std::span<const std::size_t> labels, std::span<const std::size_t> domains,
                  std::size_t num_classes, const AlignmentOptions& options,
                  const MemoryBank& bank) {
  if (labels.empty()) throw std::invalid_argument("instance loss: empty batch");
  if (labels.size() != image_embeddings.rows()) {
    throw ShapeError("instance_loss", Shape{labels.size()}, image_embeddings.shape());
  }
  Tensor one_hot = Tensor::matrix(labels.size(), num_classes);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= num_classes) {
      throw std::out_of_range("label " + std::to_string(labels[b]) + " >= class count " +
                              std::to_string(num_classes));
    }
    one_hot.at(b, labels[b]) = 1.0;
  }
  Var log_p = log_class_probabilities(graph, text_embeddings, image_embeddings, domains,
                                      num_classes, options, bank);
  return scale(sum(mul(log_p, graph.constant(std::move(one_hot)))),
               -1.0 / static_cast<double>(labels.size()));
}

double instance_loss(const ParamSet& params, const PromptConfig& config,
                     const TextEncoder& encoder, const Tensor& image_embeddings,
                     std::span<const std::size_t> labels, std::span<const std::size_t> domains,
                     const AlignmentOptions& options, const MemoryBank& bank) {
  Graph graph;
  const ParamBindings bound = bind(graph, params);
  Var text = text_class_embeddings(graph, bound, config, encoder);
  return instance_loss(graph, text, image_embeddings, labels, domains, config.num_classes(),
                       options, bank)
      .value()
      .item();
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

PseudoLabelSet assign_pseudo_labels(const Tensor& probabilities,
                                    std::span<const std::size_t> sample_ids, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0, 1)");
  if (sample_ids.size() != probabilities.rows()) {
    throw ShapeError("assign_pseudo_labels", Shape{sample_ids.size()}, probabilities.shape());
  }
  PseudoLabelSet out;
  out.threshold = tau;
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    auto row = probabilities.row_span(r);
    const std::size_t best = argmax(row);
    if (row[best] > tau) out.entries.push_back({sample_ids[r], best, row[best]});
  }
  return out;
}

PseudoLabelSet assign_pseudo_labels(const Tensor& text_embeddings,
                                    const Tensor& target_embeddings,
                                    std::span<const std::size_t> sample_ids,
                                    std::size_t target_domain, std::size_t num_classes,
                                    double tau, double temperature) {
  if (target_embeddings.empty()) return PseudoLabelSet{{}, tau};
  const std::vector<std::size_t> domains(target_embeddings.rows(), target_domain);
  const Tensor p = class_probabilities(text_embeddings, target_embeddings, domains, num_classes,
                                       {0.0, temperature}, MemoryBank{});
  return assign_pseudo_labels(p, sample_ids, tau);
}

void write_memory_bank_csv(const MemoryBank& bank, const std::vector<std::string>& domain_tags,
                           const std::filesystem::path& dir) {
  if (domain_tags.size() != bank.num_domains()) {
    throw ShapeError("write_memory_bank_csv", Shape{domain_tags.size()},
                     Shape{bank.num_domains()});
  }
  std::filesystem::create_directories(dir);
  for (std::size_t d = 0; d < bank.num_domains(); ++d) {
    std::ofstream out(dir / ("memory_bank_" + domain_tags[d] + ".csv"));
    out.precision(std::numeric_limits<double>::max_digits10);
    const Tensor& m = bank.distances[d];
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m.at(i, j);
      out << '\n';
    }
  }
}

void write_pseudo_labels_csv(const PseudoLabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "id,class,confidence\n";
  for (const PseudoLabel& e : labels.entries) {
    out << e.sample_id << ',' << e.class_index << ',' << e.confidence << '\n';
  }
}

}  // namespace uniprompt
