#pragma once

// Frozen toy stand-ins for a vision-language model's text and image towers.
//
// Weights are a pure function of the spec (including its seed) and are never
// exposed mutably. The text tower is differentiable with respect to its input
// token embeddings so gradients reach learnable prompt vectors; the image
// tower is only ever evaluated on data.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "uniprompt/graph.h"
#include "uniprompt/tensor.h"

namespace uniprompt {

class UnknownTokenError : public std::out_of_range {
 public:
  explicit UnknownTokenError(const std::string& token)
      : std::out_of_range("unknown token: \"" + token + "\""), token_(token) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

struct TextEncoderSpec {
  std::vector<std::string> vocabulary;
  std::size_t token_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden_dim = 64;
  std::size_t out_dim = 32;
  std::size_t max_len = 77;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageEncoderSpec {
  std::size_t in_dim = 16;
  std::vector<std::size_t> hidden_dims = {64};
  std::size_t out_dim = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TextEncoderSpec& spec);
void from_json(const nlohmann::json& j, TextEncoderSpec& spec);
void to_json(nlohmann::json& j, const ImageEncoderSpec& spec);
void from_json(const nlohmann::json& j, ImageEncoderSpec& spec);

// Pre-LN transformer: per block, multi-head self-attention then a GELU MLP,
// both residual. The final layer-normed sequence is mean-pooled, projected to
// out_dim and L2-normalized. Learned positional embeddings make token order
// significant.
class TextEncoder {
 public:
  explicit TextEncoder(TextEncoderSpec spec);

  const TextEncoderSpec& spec() const { return spec_; }

  bool has_token(std::string_view token) const;
  // Frozen embedding row, shape [1 x token_dim].
  Tensor token_embedding(std::string_view token) const;

  // [seq_len x token_dim] -> [1 x out_dim].
  Var encode(Graph& graph, Var sequence) const;
  // Each sequence [len_i x token_dim] -> [n x out_dim], row i for sequence i.
  Var encode_batch(Graph& graph, std::span<const Var> sequences) const;

  Tensor encode(const Tensor& sequence) const;

  // Every frozen buffer, in a fixed order.
  std::vector<std::span<const double>> weight_buffers() const;

 private:
  struct Block {
    Tensor wq, wk, wv, wo;
    Tensor w1, b1, w2, b2;
  };

  TextEncoderSpec spec_;
  std::unordered_map<std::string, std::size_t> token_index_;
  Tensor token_table_;
  Tensor positions_;
  std::vector<Block> blocks_;
  Tensor projection_;
};

// Feed-forward tower: GELU hidden layers, linear output, L2 normalization.
class ImageEncoder {
 public:
  explicit ImageEncoder(ImageEncoderSpec spec);

  const ImageEncoderSpec& spec() const { return spec_; }

  // [n x in_dim] -> [n x out_dim], unit rows.
  Tensor encode(const Tensor& features) const;

  std::vector<std::span<const double>> weight_buffers() const;

 private:
  ImageEncoderSpec spec_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

// Byte-level digest of every frozen buffer; equal digests mean untouched weights.
std::uint64_t weights_digest(const std::vector<std::span<const double>>& buffers);

}  // namespace uniprompt
