#include "uniprompt/encoders.h"

#include <cmath>
#include <cstring>

#include "uniprompt/random.h"

namespace uniprompt {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kImageBias = 0.01;

}  // namespace

void TextEncoderSpec::validate() const {
  if (vocabulary.empty()) throw std::invalid_argument("text encoder: empty vocabulary");
  if (token_dim == 0 || out_dim == 0 || hidden_dim == 0 || layers == 0 || max_len == 0) {
    throw std::invalid_argument("text encoder: dimensions must be positive");
  }
  if (heads == 0 || token_dim % heads != 0) {
    throw std::invalid_argument("text encoder: token_dim " + std::to_string(token_dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

void ImageEncoderSpec::validate() const {
  if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("image encoder: zero dimension");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("image encoder: zero hidden width");
  }
}

void to_json(nlohmann::json& j, const TextEncoderSpec& spec) {
  j = nlohmann::json{{"vocabulary", spec.vocabulary}, {"token_dim", spec.token_dim},
                     {"layers", spec.layers},         {"heads", spec.heads},
                     {"hidden_dim", spec.hidden_dim}, {"out_dim", spec.out_dim},
                     {"max_len", spec.max_len},       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, TextEncoderSpec& spec) {
  spec = TextEncoderSpec{};
  spec.vocabulary = j.value("vocabulary", spec.vocabulary);
  spec.token_dim = j.value("token_dim", spec.token_dim);
  spec.layers = j.value("layers", spec.layers);
  spec.heads = j.value("heads", spec.heads);
  spec.hidden_dim = j.value("hidden_dim", spec.hidden_dim);
  spec.out_dim = j.value("out_dim", spec.out_dim);
  spec.max_len = j.value("max_len", spec.max_len);
  spec.seed = j.value("seed", spec.seed);
}

void to_json(nlohmann::json& j, const ImageEncoderSpec& spec) {
  j = nlohmann::json{{"in_dim", spec.in_dim},
                     {"hidden_dims", spec.hidden_dims},
                     {"out_dim", spec.out_dim},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, ImageEncoderSpec& spec) {
  spec = ImageEncoderSpec{};
  spec.in_dim = j.value("in_dim", spec.in_dim);
  spec.hidden_dims = j.value("hidden_dims", spec.hidden_dims);
  spec.out_dim = j.value("out_dim", spec.out_dim);
  spec.seed = j.value("seed", spec.seed);
}

// --- text ------------------------------------------------------------------

TextEncoder::TextEncoder(TextEncoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i) {
    if (!token_index_.emplace(spec_.vocabulary[i], i).second) {
      throw std::invalid_argument("text encoder: duplicate token \"" + spec_.vocabulary[i] + "\"");
    }
  }
  Rng rng(derive_seed(spec_.seed, "text-encoder"));
  const std::size_t d = spec_.token_dim;
  token_table_ = gaussian_tensor({spec_.vocabulary.size(), d}, kInitStd, rng);
  positions_ = gaussian_tensor({spec_.max_len, d}, kInitStd, rng);
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    Block b;
    b.wq = gaussian_tensor({d, d}, kInitStd, rng);
    b.wk = gaussian_tensor({d, d}, kInitStd, rng);
    b.wv = gaussian_tensor({d, d}, kInitStd, rng);
    b.wo = gaussian_tensor({d, d}, kInitStd, rng);
    b.w1 = gaussian_tensor({d, spec_.hidden_dim}, kInitStd, rng);
    b.b1 = Tensor::matrix(1, spec_.hidden_dim);
    b.w2 = gaussian_tensor({spec_.hidden_dim, d}, kInitStd, rng);
    b.b2 = Tensor::matrix(1, d);
    blocks_.push_back(std::move(b));
  }
  projection_ = gaussian_tensor({d, spec_.out_dim}, kInitStd, rng);
}

bool TextEncoder::has_token(std::string_view token) const {
  return token_index_.count(std::string(token)) != 0;
}

Tensor TextEncoder::token_embedding(std::string_view token) const {
  auto it = token_index_.find(std::string(token));
  if (it == token_index_.end()) throw UnknownTokenError(std::string(token));
  auto row = token_table_.row_span(it->second);
  return Tensor::row(std::vector<double>(row.begin(), row.end()));
}

Var TextEncoder::encode(Graph& graph, Var sequence) const {
  return encode_batch(graph, std::span<const Var>(&sequence, 1));
}

Var TextEncoder::encode_batch(Graph& graph, std::span<const Var> sequences) const {
  if (sequences.empty()) throw ShapeError("encode_text", "no sequences");
  const std::size_t d = spec_.token_dim;
  const std::size_t heads = spec_.heads;
  const std::size_t head_dim = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<std::size_t> offsets, lengths;
  std::vector<Var> placed;
  std::size_t total = 0;
  for (const Var& seq : sequences) {
    const Tensor& x = seq.value();
    if (x.cols() != d) {
      throw ShapeError("encode_text", x.shape(), Shape{x.rows(), d});
    }
    if (x.rows() > spec_.max_len) {
      throw ShapeError("encode_text", "sequence length " + std::to_string(x.rows()) +
                                          " exceeds max_len " + std::to_string(spec_.max_len));
    }
    // Read the length first: emitting nodes may reallocate the tape under `x`.
    const std::size_t len = x.rows();
    Tensor pos = Tensor::matrix(len, d);
    std::copy_n(positions_.data(), len * d, pos.data());
    placed.push_back(add(seq, graph.constant(std::move(pos))));
    offsets.push_back(total);
    lengths.push_back(len);
    total += len;
  }
  Var x = placed.size() == 1 ? placed.front() : concat_rows(placed);

  for (const Block& b : blocks_) {
    Var h = layer_norm_rows(x);
    Var q = matmul(h, graph.constant(b.wq));
    Var k = matmul(h, graph.constant(b.wk));
    Var v = matmul(h, graph.constant(b.wv));
    std::vector<Var> per_sequence;
    per_sequence.reserve(sequences.size());
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      std::vector<Var> per_head;
      per_head.reserve(heads);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t c0 = hd * head_dim;
        Var qs = slice(q, offsets[s], lengths[s], c0, head_dim);
        Var ks = slice(k, offsets[s], lengths[s], c0, head_dim);
        Var vs = slice(v, offsets[s], lengths[s], c0, head_dim);
        Var weights = softmax_rows(scale(matmul(qs, transpose(ks)), attn_scale));
        per_head.push_back(matmul(weights, vs));
      }
      per_sequence.push_back(heads == 1 ? per_head.front() : concat_cols(per_head));
    }
    Var attended = per_sequence.size() == 1 ? per_sequence.front() : concat_rows(per_sequence);
    x = add(x, matmul(attended, graph.constant(b.wo)));

    Var h2 = layer_norm_rows(x);
    Var hidden = gelu(add_row(matmul(h2, graph.constant(b.w1)), graph.constant(b.b1)));
    x = add(x, add_row(matmul(hidden, graph.constant(b.w2)), graph.constant(b.b2)));
  }

  Var normed = layer_norm_rows(x);
  std::vector<Var> pooled;
  pooled.reserve(sequences.size());
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    pooled.push_back(mean_rows(slice_rows(normed, offsets[s], lengths[s])));
  }
  Var stacked = pooled.size() == 1 ? pooled.front() : concat_rows(pooled);
  return l2_normalize_rows(matmul(stacked, graph.constant(projection_)));
}

Tensor TextEncoder::encode(const Tensor& sequence) const {
  Graph graph;
  return encode(graph, graph.constant(sequence)).value();
}

std::vector<std::span<const double>> TextEncoder::weight_buffers() const {
  std::vector<std::span<const double>> out = {token_table_.values(), positions_.values()};
  for (const Block& b : blocks_) {
    for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.b1, &b.w2, &b.b2}) {
      out.push_back(t->values());
    }
  }
  out.push_back(projection_.values());
  return out;
}

// --- image -----------------------------------------------------------------

ImageEncoder::ImageEncoder(ImageEncoderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(spec_.seed, "image-encoder"));
  std::size_t fan_in = spec_.in_dim;
  std::vector<std::size_t> widths = spec_.hidden_dims;
  widths.push_back(spec_.out_dim);
  for (std::size_t width : widths) {
    // Unit-gain scale keeps raw feature geometry visible through the tower.
    weights_.push_back(gaussian_tensor({fan_in, width}, 1.0 / std::sqrt(double(fan_in)), rng));
    biases_.push_back(Tensor::matrix(1, width, kImageBias));
    fan_in = width;
  }
}

Tensor ImageEncoder::encode(const Tensor& features) const {
  if (features.cols() != spec_.in_dim) {
    throw ShapeError("encode_image", features.shape(), Shape{features.rows(), spec_.in_dim});
  }
  Graph graph;
  Var x = graph.constant(features.reshaped({features.rows(), features.cols()}));
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = add_row(matmul(x, graph.constant(weights_[i])), graph.constant(biases_[i]));
    if (i + 1 < weights_.size()) x = gelu(x);
  }
  return l2_normalize_rows(x).value();
}

std::vector<std::span<const double>> ImageEncoder::weight_buffers() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(weights_[i].values());
    out.push_back(biases_[i].values());
  }
  return out;
}

std::uint64_t weights_digest(const std::vector<std::span<const double>>& buffers) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto buffer : buffers) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(buffer.data());
    for (std::size_t i = 0; i < buffer.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace uniprompt
