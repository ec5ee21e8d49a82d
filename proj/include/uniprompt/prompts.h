#pragma once

// Learnable prompt construction.
//
// A prompt for class c under domain tag d is the token sequence
//
//   a photo of  v_1^c .. v_M1^c  <class tokens>  , [not] a  t_1^d .. t_M2^d  image
//
// where v^c are class context vectors owned by class c and t^d are domain
// vectors shared by every class. Only v and t are learnable; all other tokens
// are frozen rows of the text encoder's embedding table.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniprompt/encoders.h"
#include "uniprompt/graph.h"

namespace uniprompt {

inline constexpr const char* kClassContextParam = "class_context";
inline constexpr const char* kDomainContextParam = "domain_context";

enum class Polarity { kPositive, kNegative };

struct PromptConfig {
  std::size_t m1 = 16;
  std::size_t m2 = 16;
  // Known classes C^S in index order. Whitespace separates multi-token names.
  std::vector<std::string> class_names;
  // Domain tags, e.g. {"target", "source1", "source2"}.
  std::vector<std::string> domain_tags;
  std::string target_tag = "target";
  // Class index -> owning source tag, for source-private classes only.
  std::map<std::size_t, std::string> source_private_owner;
  // Use "not a {d}" when a source-private class meets a foreign domain tag.
  bool negate_foreign_source_privates = false;
  // Ablation switches: without class context the class token stands alone;
  // without domain context the frozen domain-name token fills the {d} slot.
  bool use_class_context = true;
  bool use_domain_context = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t num_classes() const { return class_names.size(); }
  std::size_t num_domains() const { return domain_tags.size(); }
  std::size_t domain_index(const std::string& tag) const;
  std::size_t target_index() const { return domain_index(target_tag); }
  Polarity polarity(std::size_t class_index, std::size_t domain_index) const;
};

void to_json(nlohmann::json& j, const PromptConfig& config);
void from_json(const nlohmann::json& j, PromptConfig& config);

// Template words, class-name tokens and domain-tag tokens, deduplicated in
// first-seen order. Feed to TextEncoderSpec::vocabulary.
std::vector<std::string> prompt_vocabulary(const PromptConfig& config);

// Class context [C x M1 x dim] and domain context [D x M2 x dim], entries
// drawn N(0, 0.02^2) from config.seed. Disabled segments are omitted.
ParamSet init_params(const PromptConfig& config, std::size_t token_dim);

// Sequence length of the prompt for (c, d, polarity).
std::size_t prompt_length(const PromptConfig& config, std::size_t class_index,
                          std::size_t domain_index, Polarity polarity);

// Token embedding sequence [len x token_dim]. Learnable segments are slices of
// the bound parameters, so gradients flow back into v^c and t^d.
Var assemble_prompt(Graph& graph, const ParamBindings& params, const PromptConfig& config,
                    const TextEncoder& encoder, std::size_t class_index, std::size_t domain_index,
                    Polarity polarity);

Tensor assemble_prompt(const ParamSet& params, const PromptConfig& config,
                       const TextEncoder& encoder, std::size_t class_index,
                       std::size_t domain_index, Polarity polarity);

// Unit text embedding T(p_c^d), [1 x out_dim].
Tensor text_class_embedding(const ParamSet& params, const PromptConfig& config,
                            const TextEncoder& encoder, std::size_t class_index,
                            std::size_t domain_index, Polarity polarity);

// All class embeddings, [D*C x out_dim], row d*C + c, polarity from the
// config rule.
Var text_class_embeddings(Graph& graph, const ParamBindings& params, const PromptConfig& config,
                          const TextEncoder& encoder);
Tensor text_class_embeddings(const ParamSet& params, const PromptConfig& config,
                             const TextEncoder& encoder);

// Portable JSON: {"name": {"shape": [...], "values": [...]}}. Values are
// written with round-trip precision.
nlohmann::json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

}  // namespace uniprompt
