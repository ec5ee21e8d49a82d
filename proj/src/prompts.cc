#include "uniprompt/prompts.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "uniprompt/random.h"

namespace uniprompt {
namespace {

constexpr double kPromptInitStd = 0.02;
const std::vector<std::string> kPrefix = {"a", "photo", "of"};
const std::vector<std::string> kPositiveJoin = {",", "a"};
const std::vector<std::string> kNegativeJoin = {",", "not", "a"};
const std::vector<std::string> kSuffix = {"image"};

std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> tokens;
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  return tokens;
}

Tensor frozen_rows(const TextEncoder& encoder, const std::vector<std::string>& tokens) {
  const std::size_t d = encoder.spec().token_dim;
  Tensor out = Tensor::matrix(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor row = encoder.token_embedding(tokens[i]);
    std::copy(row.values().begin(), row.values().end(), out.row_span(i).begin());
  }
  return out;
}

void append(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

void PromptConfig::validate() const {
  if (m1 == 0 || m2 == 0) throw std::invalid_argument("prompt config: M1 and M2 must be >= 1");
  if (class_names.empty()) throw std::invalid_argument("prompt config: no classes");
  std::set<std::string> names;
  for (const auto& n : class_names) {
    if (split_tokens(n).empty()) throw std::invalid_argument("prompt config: empty class name");
    if (!names.insert(n).second) {
      throw std::invalid_argument("prompt config: duplicate class name \"" + n + "\"");
    }
  }
  std::set<std::string> tags;
  for (const auto& t : domain_tags) {
    if (split_tokens(t).empty()) throw std::invalid_argument("prompt config: empty domain tag");
    if (!tags.insert(t).second) {
      throw std::invalid_argument("prompt config: duplicate domain tag \"" + t + "\"");
    }
  }
  if (std::count(domain_tags.begin(), domain_tags.end(), target_tag) != 1) {
    throw std::invalid_argument("prompt config: domain tags must contain target tag \"" +
                                target_tag + "\" exactly once");
  }
  for (const auto& [c, owner] : source_private_owner) {
    if (c >= class_names.size()) throw std::invalid_argument("prompt config: bad private class");
    if (!tags.count(owner) || owner == target_tag) {
      throw std::invalid_argument("prompt config: private class owner \"" + owner +
                                  "\" is not a source tag");
    }
  }
}

std::size_t PromptConfig::domain_index(const std::string& tag) const {
  auto it = std::find(domain_tags.begin(), domain_tags.end(), tag);
  if (it == domain_tags.end()) throw std::out_of_range("unknown domain tag: " + tag);
  return static_cast<std::size_t>(it - domain_tags.begin());
}

Polarity PromptConfig::polarity(std::size_t class_index, std::size_t domain_index) const {
  if (!negate_foreign_source_privates) return Polarity::kPositive;
  auto it = source_private_owner.find(class_index);
  if (it == source_private_owner.end()) return Polarity::kPositive;
  return domain_tags.at(domain_index) == it->second ? Polarity::kPositive : Polarity::kNegative;
}

void to_json(nlohmann::json& j, const PromptConfig& config) {
  nlohmann::json owners = nlohmann::json::object();
  for (const auto& [c, tag] : config.source_private_owner) owners[std::to_string(c)] = tag;
  j = nlohmann::json{{"m1", config.m1},
                     {"m2", config.m2},
                     {"class_names", config.class_names},
                     {"domain_tags", config.domain_tags},
                     {"target_tag", config.target_tag},
                     {"source_private_owner", owners},
                     {"negate_foreign_source_privates", config.negate_foreign_source_privates},
                     {"use_class_context", config.use_class_context},
                     {"use_domain_context", config.use_domain_context},
                     {"seed", config.seed}};
}

void from_json(const nlohmann::json& j, PromptConfig& config) {
  config = PromptConfig{};
  config.m1 = j.value("m1", config.m1);
  config.m2 = j.value("m2", config.m2);
  config.class_names = j.value("class_names", config.class_names);
  config.domain_tags = j.value("domain_tags", config.domain_tags);
  config.target_tag = j.value("target_tag", config.target_tag);
  if (j.contains("source_private_owner")) {
    for (const auto& [key, tag] : j.at("source_private_owner").items()) {
      config.source_private_owner[std::stoul(key)] = tag.get<std::string>();
    }
  }
  config.negate_foreign_source_privates =
      j.value("negate_foreign_source_privates", config.negate_foreign_source_privates);
  config.use_class_context = j.value("use_class_context", config.use_class_context);
  config.use_domain_context = j.value("use_domain_context", config.use_domain_context);
  config.seed = j.value("seed", config.seed);
}

std::vector<std::string> prompt_vocabulary(const PromptConfig& config) {
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto push = [&](const std::string& w) {
    if (seen.insert(w).second) words.push_back(w);
  };
  for (const auto* group : {&kPrefix, &kNegativeJoin, &kSuffix}) {
    for (const auto& w : *group) push(w);
  }
  for (const auto& name : config.class_names) {
    for (const auto& w : split_tokens(name)) push(w);
  }
  for (const auto& tag : config.domain_tags) {
    for (const auto& w : split_tokens(tag)) push(w);
  }
  return words;
}

ParamSet init_params(const PromptConfig& config, std::size_t token_dim) {
  config.validate();
  Rng rng(derive_seed(config.seed, "prompt-init"));
  // Both tensors are always drawn so enabling a segment never reshuffles the other.
  Tensor v = gaussian_tensor({config.num_classes(), config.m1, token_dim}, kPromptInitStd, rng);
  Tensor t = gaussian_tensor({config.num_domains(), config.m2, token_dim}, kPromptInitStd, rng);
  ParamSet params;
  if (config.use_class_context) params.set(kClassContextParam, std::move(v));
  if (config.use_domain_context) params.set(kDomainContextParam, std::move(t));
  return params;
}

std::size_t prompt_length(const PromptConfig& config, std::size_t class_index,
                          std::size_t domain_index, Polarity polarity) {
  std::size_t n = kPrefix.size() + split_tokens(config.class_names.at(class_index)).size() +
                  (polarity == Polarity::kPositive ? kPositiveJoin : kNegativeJoin).size() +
                  kSuffix.size();
  n += config.use_class_context ? config.m1 : 0;
  n += config.use_domain_context ? config.m2
                                 : split_tokens(config.domain_tags.at(domain_index)).size();
  return n;
}

Var assemble_prompt(Graph& graph, const ParamBindings& params, const PromptConfig& config,
                    const TextEncoder& encoder, std::size_t class_index, std::size_t domain_index,
                    Polarity polarity) {
  if (class_index >= config.num_classes()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range");
  }
  if (domain_index >= config.num_domains()) {
    throw std::out_of_range("domain index " + std::to_string(domain_index) + " out of range");
  }
  const std::size_t dim = encoder.spec().token_dim;
  std::vector<Var> parts;
  std::vector<std::string> pending = kPrefix;
  auto flush = [&] {
    if (!pending.empty()) parts.push_back(graph.constant(frozen_rows(encoder, pending)));
    pending.clear();
  };

  if (config.use_class_context) {
    flush();
    parts.push_back(slice(params.at(kClassContextParam), class_index * config.m1, config.m1, 0, dim));
  }
  append(pending, split_tokens(config.class_names[class_index]));
  append(pending, polarity == Polarity::kPositive ? kPositiveJoin : kNegativeJoin);
  if (config.use_domain_context) {
    flush();
    parts.push_back(
        slice(params.at(kDomainContextParam), domain_index * config.m2, config.m2, 0, dim));
  } else {
    append(pending, split_tokens(config.domain_tags[domain_index]));
  }
  append(pending, kSuffix);
  flush();
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor assemble_prompt(const ParamSet& params, const PromptConfig& config,
                       const TextEncoder& encoder, std::size_t class_index,
                       std::size_t domain_index, Polarity polarity) {
  Graph graph;
  const ParamBindings bound = bind(graph, params);
  return assemble_prompt(graph, bound, config, encoder, class_index, domain_index, polarity)
      .value();
}

Tensor text_class_embedding(const ParamSet& params, const PromptConfig& config,
                            const TextEncoder& encoder, std::size_t class_index,
                            std::size_t domain_index, Polarity polarity) {
  Graph graph;
  const ParamBindings bound = bind(graph, params);
  Var seq = assemble_prompt(graph, bound, config, encoder, class_index, domain_index, polarity);
  return encoder.encode(graph, seq).value();
}

Var text_class_embeddings(Graph& graph, const ParamBindings& params, const PromptConfig& config,
                          const TextEncoder& encoder) {
  std::vector<Var> sequences;
  sequences.reserve(config.num_domains() * config.num_classes());
  for (std::size_t d = 0; d < config.num_domains(); ++d) {
    for (std::size_t c = 0; c < config.num_classes(); ++c) {
      sequences.push_back(
          assemble_prompt(graph, params, config, encoder, c, d, config.polarity(c, d)));
    }
  }
  return encoder.encode_batch(graph, sequences);
}

Tensor text_class_embeddings(const ParamSet& params, const PromptConfig& config,
                             const TextEncoder& encoder) {
  Graph graph;
  const ParamBindings bound = bind(graph, params);
  return text_class_embeddings(graph, bound, config, encoder).value();
}

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, tensor] : params) {
    j[name] = {{"shape", tensor.shape()},
               {"values", std::vector<double>(tensor.values().begin(), tensor.values().end())}};
  }
  return j;
}

ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet params;
  for (const auto& [name, entry] : j.items()) {
    params.set(name, Tensor(entry.at("shape").get<Shape>(),
                            entry.at("values").get<std::vector<double>>()));
  }
  return params;
}

}  // namespace uniprompt
