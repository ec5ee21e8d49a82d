#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "uniprompt/alignment.h"
#include "uniprompt/graph.h"
#include "uniprompt/prompts.h"
#include "uniprompt/random.h"

namespace uniprompt::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  return gaussian_tensor({rows, cols}, stddev, rng);
}

// Unit rows.
inline Tensor random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = random_matrix(rows, cols, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (double v : t.row_span(r)) n += v * v;
    n = std::sqrt(n);
    for (double& v : t.row_span(r)) v /= n;
  }
  return t;
}

// Reverse-mode vs central differences on `count` sampled coordinates.
inline void expect_gradient_matches(const LossBuilder& build, const ParamSet& params,
                                    std::size_t count, std::uint64_t seed, double step = 1e-5,
                                    double rel_tol = 1e-4, double abs_tol = 1e-7) {
  const ParamSet grads = grad_loss(build, params);
  std::vector<Coordinate> all;
  for (const auto& [name, tensor] : params) {
    for (std::size_t i = 0; i < tensor.size(); ++i) all.push_back({name, i});
  }
  Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(count, all.size()));
  for (const Coordinate& c : all) {
    const double analytic = grads.at(c.name)[c.index];
    const double numeric = finite_difference_gradient(build, params, c, step);
    const double err = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    EXPECT_TRUE(err < abs_tol || err < rel_tol * scale)
        << c.name << "[" << c.index << "]: analytic " << analytic << " numeric " << numeric;
  }
}

// A small prompt problem: C classes, D domain tags, short contexts.
struct PromptFixture {
  PromptConfig config;
  std::unique_ptr<TextEncoder> encoder;
  ParamSet params;

  explicit PromptFixture(std::size_t classes = 3, std::size_t domains = 2, std::size_t m = 4,
                         std::uint64_t seed = 7) {
    for (std::size_t c = 0; c < classes; ++c) config.class_names.push_back("cls" + std::to_string(c));
    config.domain_tags.push_back("target");
    for (std::size_t d = 1; d < domains; ++d) config.domain_tags.push_back("source" + std::to_string(d));
    config.m1 = m;
    config.m2 = m;
    config.seed = seed;
    TextEncoderSpec spec;
    spec.vocabulary = prompt_vocabulary(config);
    spec.token_dim = 16;
    spec.hidden_dim = 32;
    spec.out_dim = 16;
    spec.seed = seed;
    encoder = std::make_unique<TextEncoder>(spec);
    params = init_params(config, spec.token_dim);
  }

  std::size_t num_classes() const { return config.num_classes(); }
  std::size_t num_domains() const { return config.num_domains(); }
  std::size_t out_dim() const { return encoder->spec().out_dim; }
};

}  // namespace uniprompt::testing
