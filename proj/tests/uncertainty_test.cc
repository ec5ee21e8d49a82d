#include <cmath>

#include "oracles.h"
#include "test_util.h"
#include "uniprompt/uncertainty.h"

using namespace uniprompt;
using namespace uniprompt::testing;

TEST(Energy, KnownValues) {
  const double zero[] = {0.0};
  EXPECT_NEAR(energy_score(zero, std::array<double, 1>{1.0}), -1.0, 1e-15);
  const double phi[] = {0.0, 0.0}, p[] = {0.0, 0.0};
  EXPECT_NEAR(energy_score(phi, p), -std::log(2.0), 1e-15);
}

TEST(Energy, MatchesOracleAndIsStable) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const std::size_t C = 2 + rng() % 8;
    std::vector<double> phi(C), p(C);
    for (auto& v : phi) v = -std::abs(random_matrix(1, 1, rng)[0]) * 2.0;
    for (auto& v : p) v = std::uniform_real_distribution<double>(0, 1)(rng);
    ASSERT_NEAR(energy_score(phi, p), oracle::energy_score(phi, p), 1e-10);
  }
  const double big[] = {900.0, 901.0}, p[] = {0.0, 0.0};
  EXPECT_TRUE(std::isfinite(energy_score(big, p)));
}

TEST(Energy, PermutationInvariantAndMonotone) {
  std::vector<double> phi = {-0.3, -1.2, -0.7}, p = {0.2, 0.5, 0.1};
  const double s = energy_score(phi, p);
  std::vector<double> phi2 = {phi[2], phi[0], phi[1]}, p2 = {p[2], p[0], p[1]};
  EXPECT_NEAR(energy_score(phi2, p2), s, 1e-14);
  phi[1] += 0.4;
  EXPECT_LT(energy_score(phi, p), s);
}

TEST(Energy, RejectsMismatchedLengths) {
  const double phi[] = {0.0, 1.0}, p[] = {0.0};
  EXPECT_THROW(energy_score(phi, p), ShapeError);
}

TEST(Energy, GraphScoresMatchScalar) {
  Rng rng(4);
  const Tensor phi = random_matrix(5, 3, rng);
  const Tensor p = random_matrix(5, 3, rng, 0.3);
  Graph g;
  const Tensor s = energy_scores(g, phi, g.constant(p), 2.0).value();
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> scaled(phi.row_span(r).begin(), phi.row_span(r).end());
    for (double& v : scaled) v *= 2.0;
    EXPECT_NEAR(s[r], energy_score(scaled, p.row_span(r)), 1e-12);
  }
}

TEST(Prototypes, MatchOracle) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t C = 2 + rng() % 4, n = C * 3;
    const Tensor e = random_matrix(n, 5, rng);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(i % C);
    const Prototypes protos = compute_prototypes(e, labels, C);
    oracle::Mat rows;
    for (std::size_t i = 0; i < n; ++i) rows.emplace_back(e.row_span(i).begin(), e.row_span(i).end());
    const oracle::Mat expect = oracle::prototypes(rows, labels, C);
    for (std::size_t c = 0; c < C; ++c) {
      EXPECT_EQ(protos.counts[c], 3u);
      for (std::size_t k = 0; k < 5; ++k) ASSERT_NEAR(protos.means.at(c, k), expect[c][k], 1e-12);
    }
    const auto phi = feature_similarity(e.row_span(0), protos);
    const auto want = oracle::feature_similarity(rows[0], expect);
    for (std::size_t c = 0; c < C; ++c) ASSERT_NEAR(phi[c], want[c], 1e-12);
  }
}

TEST(Prototypes, EmptyClassIsAnError) {
  const Tensor e = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const std::size_t labels[] = {0, 0};
  EXPECT_THROW(compute_prototypes(e, labels, 2), std::invalid_argument);
}

TEST(Prototypes, SimilarityIsNegativeDistance) {
  Prototypes protos{Tensor::matrix({{0.0, 0.0}, {3.0, 4.0}}), {1, 1}};
  const double e[] = {0.0, 0.0};
  const auto phi = feature_similarity(e, protos);
  EXPECT_EQ(phi[0], 0.0);
  EXPECT_NEAR(phi[1], -5.0, 1e-15);
}

TEST(Margin, LiteralAndSeparatingExamples) {
  const double src[] = {-10.0, 1.0}, tgt[] = {-9.0, 2.0};
  // literal: max(0,-18)+max(0,-7) + max(0,-1)+max(0,10)
  EXPECT_DOUBLE_EQ(margin_loss(src, tgt, 8.0, MarginMode::kLiteral), 10.0);
  // separating: max(0,-2)+max(0,9) + max(0,17)+max(0,6)
  EXPECT_DOUBLE_EQ(margin_loss(src, tgt, 8.0, MarginMode::kSeparating), 32.0);
  EXPECT_DOUBLE_EQ(margin_loss({}, {}, 8.0, MarginMode::kSeparating), 0.0);
  EXPECT_THROW(margin_loss(src, tgt, 0.0, MarginMode::kLiteral), std::invalid_argument);
}

TEST(Margin, ConvexInScores) {
  Rng rng(6);
  for (MarginMode mode : {MarginMode::kLiteral, MarginMode::kSeparating}) {
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(4), b(4), mid(4);
      for (auto& v : a) v = random_matrix(1, 1, rng, 10.0)[0];
      for (auto& v : b) v = random_matrix(1, 1, rng, 10.0)[0];
      for (int i = 0; i < 4; ++i) mid[i] = 0.5 * (a[i] + b[i]);
      const auto f = [&](const std::vector<double>& s) {
        return margin_loss(std::span(s).first(2), std::span(s).last(2), 8.0, mode);
      };
      ASSERT_LE(f(mid), 0.5 * (f(a) + f(b)) + 1e-12);
    }
  }
}

TEST(Margin, GraphMatchesScalarAndMissingSideIsZero) {
  const Tensor src({2, 1}, {-10.0, 1.0}), tgt({2, 1}, {-9.0, 2.0});
  for (MarginMode mode : {MarginMode::kLiteral, MarginMode::kSeparating}) {
    Graph g;
    const Var s = g.constant(src), t = g.constant(tgt);
    EXPECT_DOUBLE_EQ(margin_loss(g, &s, &t, 8.0, mode).value().item(),
                     margin_loss(src.values(), tgt.values(), 8.0, mode));
    EXPECT_DOUBLE_EQ(margin_loss(g, &s, nullptr, 8.0, mode).value().item(),
                     margin_loss(src.values(), {}, 8.0, mode));
    EXPECT_EQ(margin_loss(g, nullptr, nullptr, 8.0, mode).value().item(), 0.0);
  }
}

TEST(Margin, GradientThroughProbabilitiesMatchesFiniteDifferences) {
  PromptFixture f(3, 2, 3);
  Rng rng(8);
  const Tensor src_img = random_unit_rows(4, f.out_dim(), rng);
  const Tensor tgt_img = random_unit_rows(3, f.out_dim(), rng);
  const std::vector<std::size_t> src_dom = {1, 1, 1, 1}, tgt_dom = {0, 0, 0};
  const Tensor src_phi = random_matrix(4, 3, rng), tgt_phi = random_matrix(3, 3, rng);
  for (MarginMode mode : {MarginMode::kLiteral, MarginMode::kSeparating}) {
    const LossBuilder build = [&](Graph& g, const ParamBindings& p) {
      Var text = text_class_embeddings(g, p, f.config, *f.encoder);
      Var ps = exp(log_class_probabilities(g, text, src_img, src_dom, 3, {0.0, 0.01}, MemoryBank{}));
      Var pt = exp(log_class_probabilities(g, text, tgt_img, tgt_dom, 3, {0.0, 0.01}, MemoryBank{}));
      Var ss = energy_scores(g, src_phi, ps, 4.0);
      Var st = energy_scores(g, tgt_phi, pt, 4.0);
      // Small margin so some hinges are active on both sides.
      return scale(margin_loss(g, &ss, &st, 0.5, mode), 0.1);
    };
    expect_gradient_matches(build, f.params, 20, 9);
  }
}

TEST(Threshold, Examples) {
  const double scores[] = {0.0, 2.0};
  const EnergyStats lit = unknown_threshold(scores, MarginMode::kLiteral);
  EXPECT_DOUBLE_EQ(lit.mean, 1.0);
  EXPECT_DOUBLE_EQ(lit.stddev, 1.0);
  EXPECT_DOUBLE_EQ(lit.delta, -1.0);
  EXPECT_DOUBLE_EQ(unknown_threshold(scores, MarginMode::kSeparating).delta, 3.0);
  const double same[] = {4.0, 4.0, 4.0};
  const EnergyStats flat = unknown_threshold(same, MarginMode::kSeparating);
  EXPECT_EQ(flat.stddev, 0.0);
  EXPECT_EQ(flat.delta, 4.0);
  const double one[] = {1.0};
  EXPECT_THROW(unknown_threshold(one, MarginMode::kLiteral), std::invalid_argument);
}

TEST(Threshold, BoundaryScoreIsKnown) {
  EnergyStats stats;
  stats.delta = 0.5;
  EXPECT_FALSE(stats.is_unknown(0.5));
  EXPECT_TRUE(stats.is_unknown(std::nextafter(0.5, 1.0)));
}

TEST(Threshold, ModeNamesRoundTrip) {
  for (MarginMode m : {MarginMode::kLiteral, MarginMode::kSeparating}) {
    EXPECT_EQ(margin_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(margin_mode_from_string("other"), std::invalid_argument);
}

TEST(Classify, FarFromPrototypesIsUnknownOtherwiseArgmax) {
  // Two classes, single tag. Prototypes sit at the text directions.
  const Tensor text = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const Prototypes protos{Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), {1, 1}};
  const ScoringContext ctx{&text, 2, 0.05, 1.0};
  const std::size_t dom[] = {0, 0};
  const Tensor sources = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const auto src_scores = energy_scores(sources, dom, ctx, protos);
  EnergyStats stats = unknown_threshold(src_scores, MarginMode::kSeparating);
  stats.delta += 1e-9;
  const Tensor targets = Tensor::matrix({{0.0, 1.0}, {-1.0, 0.0}});
  const auto out = classify_targets(targets, 0, ctx, protos, stats);
  EXPECT_EQ(out[0].label, 1);
  EXPECT_EQ(out[1].label, kUnknownLabel);
  EXPECT_GT(out[1].score, out[0].score);
}
