#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.h"
#include "test_util.h"

using namespace uniprompt;
using namespace uniprompt::testing;

namespace {

struct RandomProblem {
  std::size_t tags, classes, dim;
  Tensor text;    // [tags*classes x dim], unit rows
  Tensor images;  // [batch x dim], unit rows
  std::vector<std::size_t> domains;
  MemoryBank bank;

  std::vector<oracle::Mat> text_blocks() const {
    std::vector<oracle::Mat> out(tags, oracle::Mat(classes));
    for (std::size_t a = 0; a < tags; ++a) {
      for (std::size_t j = 0; j < classes; ++j) {
        auto r = text.row_span(a * classes + j);
        out[a][j] = {r.begin(), r.end()};
      }
    }
    return out;
  }
  oracle::Vec image(std::size_t b) const {
    auto r = images.row_span(b);
    return {r.begin(), r.end()};
  }
  oracle::Mat bank_for(std::size_t d) const {
    oracle::Mat m(classes, oracle::Vec(classes));
    for (std::size_t i = 0; i < classes; ++i) {
      for (std::size_t j = 0; j < classes; ++j) m[i][j] = bank.distances[d].at(i, j);
    }
    return m;
  }
};

RandomProblem random_problem(std::uint64_t seed, std::size_t batch = 4) {
  Rng rng(seed);
  RandomProblem p;
  p.tags = 1 + rng() % 3;
  p.classes = 2 + rng() % 5;
  p.dim = 3 + rng() % 6;
  p.text = random_unit_rows(p.tags * p.classes, p.dim, rng);
  p.images = random_unit_rows(batch, p.dim, rng);
  for (std::size_t b = 0; b < batch; ++b) p.domains.push_back(rng() % p.tags);
  p.bank = memory_bank_from_embeddings(p.text, p.classes, 0);
  return p;
}

}  // namespace

TEST(Alignment, TwoClassSymmetricIsHalf) {
  const Tensor text = Tensor::matrix({{1.0, 0.0}, {1.0, 0.0}});
  const Tensor image = Tensor::matrix({{0.6, 0.8}});
  const std::size_t domains[] = {0};
  const Tensor p = class_probabilities(text, image, domains, 2, {0.0, 0.01}, MemoryBank{});
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}

TEST(Alignment, MatchesScalarOracleWithAndWithoutBank) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomProblem prob = random_problem(seed);
    for (double lambda : {0.0, 0.03}) {
      const Tensor p = class_probabilities(prob.text, prob.images, prob.domains, prob.classes,
                                           {lambda, 0.01}, prob.bank);
      for (std::size_t b = 0; b < prob.images.rows(); ++b) {
        const auto expect = oracle::class_probabilities(
            prob.text_blocks(), prob.image(b), prob.domains[b], lambda, 0.01,
            prob.bank_for(prob.domains[b]));
        for (std::size_t c = 0; c < prob.classes; ++c) {
          ASSERT_NEAR(p.at(b, c), expect[c], 1e-10) << "seed " << seed << " lambda " << lambda;
        }
      }
    }
  }
}

TEST(Alignment, ZeroLambdaReducesToConventionalForm) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomProblem prob = random_problem(seed);
    const Tensor p = class_probabilities(prob.text, prob.images, prob.domains, prob.classes,
                                         {0.0, 0.05}, prob.bank);
    for (std::size_t b = 0; b < prob.images.rows(); ++b) {
      const auto expect = oracle::conventional_probabilities(prob.text_blocks(), prob.image(b),
                                                             prob.domains[b], 0.05);
      for (std::size_t c = 0; c < prob.classes; ++c) ASSERT_NEAR(p.at(b, c), expect[c], 1e-12);
    }
  }
}

TEST(Alignment, JointProbabilitiesSumToOneAtZeroLambda) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomProblem prob = random_problem(seed, 1);
    // Summed over every (tag, class) prompt the distribution is normalized.
    double total = 0.0;
    for (std::size_t a = 0; a < prob.tags; ++a) {
      const std::size_t domains[] = {a};
      const Tensor p = class_probabilities(prob.text, prob.images, domains, prob.classes,
                                           {0.0, 0.01}, prob.bank);
      for (double v : p.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
    }
    ASSERT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Alignment, SingleTagProbabilitiesSumToOne) {
  Rng rng(3);
  const Tensor text = random_unit_rows(5, 8, rng), images = random_unit_rows(6, 8, rng);
  const std::vector<std::size_t> domains(6, 0);
  const Tensor p = class_probabilities(text, images, domains, 5, {0.0, 0.01}, MemoryBank{});
  for (std::size_t b = 0; b < 6; ++b) {
    double s = 0.0;
    for (double v : p.row_span(b)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Alignment, NonnegativeBankNeverIncreasesMass) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RandomProblem prob = random_problem(seed);
    const Tensor p = class_probabilities(prob.text, prob.images, prob.domains, prob.classes,
                                         {0.03, 0.01}, prob.bank);
    for (std::size_t b = 0; b < prob.images.rows(); ++b) {
      double s = 0.0;
      for (double v : p.row_span(b)) s += v;
      EXPECT_LE(s, 1.0 + 1e-12);
    }
  }
}

TEST(Alignment, UnrefreshedBankRejectedWhenLambdaPositive) {
  Rng rng(1);
  const Tensor text = random_unit_rows(3, 4, rng), images = random_unit_rows(1, 4, rng);
  const std::size_t domains[] = {0};
  EXPECT_THROW(class_probabilities(text, images, domains, 3, {0.03, 0.01}, MemoryBank{}),
               std::logic_error);
  EXPECT_NO_THROW(class_probabilities(text, images, domains, 3, {0.0, 0.01}, MemoryBank{}));
}

TEST(Alignment, UniformSimilaritiesGiveLogOfPromptCount) {
  const std::size_t K = 4, A = 3;
  const Tensor text(Shape{A * K, 2}, std::vector<double>(A * K * 2, std::sqrt(0.5)));
  const Tensor images = Tensor::matrix({{std::sqrt(0.5), std::sqrt(0.5)}, {0.6, 0.8}});
  const std::size_t labels[] = {1, 3}, domains[] = {0, 2};
  Graph g;
  const Var loss = instance_loss(g, g.constant(text), images, labels, domains, K, {0.0, 0.01},
                                 MemoryBank{});
  EXPECT_NEAR(loss.value().item(), std::log(static_cast<double>(K * A)), 1e-12);
}

TEST(Alignment, InstanceLossMatchesPerSampleOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RandomProblem prob = random_problem(seed, 8);
    Rng rng(seed + 1000);
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < 8; ++b) labels.push_back(rng() % prob.classes);
    std::vector<oracle::Mat> banks;
    for (std::size_t d = 0; d < prob.tags; ++d) banks.push_back(prob.bank_for(d));
    oracle::Mat images;
    for (std::size_t b = 0; b < 8; ++b) images.push_back(prob.image(b));
    for (double lambda : {0.0, 0.03}) {
      Graph g;
      const double got = instance_loss(g, g.constant(prob.text), prob.images, labels,
                                       prob.domains, prob.classes, {lambda, 0.01}, prob.bank)
                             .value()
                             .item();
      const double want = oracle::instance_loss(prob.text_blocks(), images, labels, prob.domains,
                                                lambda, 0.01, banks);
      ASSERT_NEAR(got, want, 1e-10 * std::max(1.0, std::abs(want))) << "seed " << seed;
    }
  }
}

TEST(Alignment, InstanceLossRejectsEmptyBatch) {
  Graph g;
  const Var text = g.constant(Tensor::matrix({{1.0, 0.0}}));
  EXPECT_THROW(instance_loss(g, text, Tensor::matrix(0, 2), {}, {}, 1, {0.0, 0.01}, MemoryBank{}),
               std::invalid_argument);
}

TEST(Alignment, InstanceLossGradientMatchesFiniteDifferences) {
  PromptFixture f(3, 2, 3);
  Rng rng(17);
  const Tensor images = random_unit_rows(6, f.out_dim(), rng);
  const std::vector<std::size_t> labels = {0, 1, 2, 2, 1, 0}, domains = {0, 1, 1, 0, 0, 1};
  const MemoryBank bank =
      memory_bank_from_embeddings(text_class_embeddings(f.params, f.config, *f.encoder), 3, 0);
  for (double lambda : {0.0, 0.03}) {
    SCOPED_TRACE(lambda);
    const LossBuilder build = [&](Graph& g, const ParamBindings& p) {
      Var text = text_class_embeddings(g, p, f.config, *f.encoder);
      return instance_loss(g, text, images, labels, domains, 3, {lambda, 0.01}, bank);
    };
    expect_gradient_matches(build, f.params, 20, 5);
  }
}

TEST(MemoryBank, InvariantsHoldOnRandomEmbeddings) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RandomProblem prob = random_problem(seed);
    EXPECT_NO_THROW(prob.bank.check_invariants(0.0));
    for (const Tensor& m : prob.bank.distances) {
      for (std::size_t i = 0; i < m.rows(); ++i) EXPECT_EQ(m.at(i, i), 0.0);
    }
  }
}

TEST(MemoryBank, DistanceIsOneMinusCosine) {
  const Tensor text = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}});
  const MemoryBank bank = memory_bank_from_embeddings(text, 3, 4);
  EXPECT_EQ(bank.refresh_epoch, 4);
  EXPECT_NEAR(bank.distances[0].at(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(bank.distances[0].at(0, 2), 2.0, 1e-15);
}

TEST(MemoryBank, InvariantCheckDetectsViolations) {
  MemoryBank bank;
  bank.refresh_epoch = 0;
  bank.distances.push_back(Tensor::matrix({{0.0, 0.5}, {0.4, 0.0}}));
  EXPECT_THROW(bank.check_invariants(), std::logic_error);
  bank.distances[0] = Tensor::matrix({{0.1, 0.5}, {0.5, 0.0}});
  EXPECT_THROW(bank.check_invariants(), std::logic_error);
  bank.distances[0] = Tensor::matrix({{0.0, 2.5}, {2.5, 0.0}});
  EXPECT_THROW(bank.check_invariants(), std::logic_error);
}

TEST(MemoryBank, RefreshFromPromptsIsPerDomain) {
  PromptFixture f(3, 2, 2);
  const MemoryBank bank = refresh_memory_bank(f.params, f.config, *f.encoder, 2);
  EXPECT_EQ(bank.num_domains(), 2u);
  EXPECT_EQ(bank.num_classes(), 3u);
  EXPECT_NO_THROW(bank.check_invariants());
}

TEST(PseudoLabels, ThresholdIsStrict) {
  const Tensor probs = Tensor::matrix({{0.39, 0.2}, {0.41, 0.3}, {0.1, 0.4}});
  const std::size_t ids[] = {10, 11, 12};
  const PseudoLabelSet set = assign_pseudo_labels(probs, ids, 0.4);
  ASSERT_EQ(set.entries.size(), 1u);
  EXPECT_EQ(set.entries[0].sample_id, 11u);
  EXPECT_EQ(set.entries[0].class_index, 0u);
  EXPECT_DOUBLE_EQ(set.entries[0].confidence, 0.41);
  for (const auto& e : set.entries) EXPECT_GT(e.confidence, set.threshold);
}

TEST(PseudoLabels, EmptyWhenAllBelowThreshold) {
  const Tensor probs = Tensor::matrix({{0.2, 0.2}, {0.3, 0.1}});
  const std::size_t ids[] = {0, 1};
  EXPECT_TRUE(assign_pseudo_labels(probs, ids, 0.4).entries.empty());
}

TEST(PseudoLabels, TiesResolveToLowestIndex) {
  const double values[] = {0.45, 0.45, 0.1};
  EXPECT_EQ(argmax(values), 0u);
  const Tensor probs = Tensor::matrix({{0.1, 0.45, 0.45}});
  const std::size_t ids[] = {3};
  EXPECT_EQ(assign_pseudo_labels(probs, ids, 0.4).entries.at(0).class_index, 1u);
}

TEST(PseudoLabels, UsesTargetTagAtZeroLambda) {
  // Image aligned with the target-tag prompt of class 1.
  const Tensor text = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.6, 0.8}});
  const Tensor image = Tensor::matrix({{0.0, 1.0}});
  const std::size_t ids[] = {5};
  const PseudoLabelSet set = assign_pseudo_labels(text, image, ids, 0, 2, 0.4, 0.05);
  ASSERT_EQ(set.entries.size(), 1u);
  EXPECT_EQ(set.entries[0].class_index, 1u);
}

TEST(Alignment, CsvWritersEmitOneFilePerTag) {
  const auto dir = std::filesystem::temp_directory_path() / "uniprompt_bank_test";
  std::filesystem::remove_all(dir);
  const MemoryBank bank =
      memory_bank_from_embeddings(Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}}), 2, 0);
  write_memory_bank_csv(bank, {"target", "source1"}, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "memory_bank_target.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "memory_bank_source1.csv"));
  EXPECT_THROW(write_memory_bank_csv(bank, {"target"}, dir), ShapeError);
}
