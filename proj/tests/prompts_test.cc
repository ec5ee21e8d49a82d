#include "test_util.h"

using namespace uniprompt;
using namespace uniprompt::testing;

TEST(Prompts, ParameterShapesFollowConfig) {
  PromptFixture f(3, 2, 4);
  EXPECT_EQ(f.params.at(kClassContextParam).shape(), (Shape{3, 4, 16}));
  EXPECT_EQ(f.params.at(kDomainContextParam).shape(), (Shape{2, 4, 16}));
}

TEST(Prompts, InitIsSeededAndSmall) {
  PromptFixture a(3, 2, 4, 7), b(3, 2, 4, 7), c(3, 2, 4, 8);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
  double sq = 0.0;
  const Tensor& v = a.params.at(kClassContextParam);
  for (double x : v.values()) sq += x * x;
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(v.size())), 0.02, 0.006);
}

TEST(Prompts, DisabledSegmentsAreOmitted) {
  PromptFixture f;
  f.config.use_class_context = false;
  ParamSet p = init_params(f.config, 16);
  EXPECT_FALSE(p.contains(kClassContextParam));
  EXPECT_TRUE(p.contains(kDomainContextParam));
  f.config.use_domain_context = false;
  EXPECT_TRUE(init_params(f.config, 16).empty());
}

TEST(Prompts, DisablingClassContextKeepsDomainDraw) {
  PromptFixture f;
  const Tensor full = f.params.at(kDomainContextParam);
  f.config.use_class_context = false;
  EXPECT_EQ(init_params(f.config, 16).at(kDomainContextParam), full);
}

TEST(Prompts, LengthMatchesTemplate) {
  PromptFixture f(3, 2, 4);
  // a photo of + v(4) + cls + , a + t(4) + image
  EXPECT_EQ(prompt_length(f.config, 0, 0, Polarity::kPositive), 3u + 4 + 1 + 2 + 4 + 1);
  EXPECT_EQ(prompt_length(f.config, 0, 0, Polarity::kNegative), 3u + 4 + 1 + 3 + 4 + 1);
  const Tensor seq = assemble_prompt(f.params, f.config, *f.encoder, 1, 1, Polarity::kPositive);
  EXPECT_EQ(seq.rows(), prompt_length(f.config, 1, 1, Polarity::kPositive));
}

TEST(Prompts, SequenceEmbedsLearnableAndFrozenSegments) {
  PromptFixture f(3, 2, 4);
  const Tensor seq = assemble_prompt(f.params, f.config, *f.encoder, 2, 1, Polarity::kPositive);
  const Tensor& v = f.params.at(kClassContextParam);
  const Tensor& t = f.params.at(kDomainContextParam);
  const std::size_t d = 16;
  auto row_equals = [&](std::size_t seq_row, std::span<const double> expected) {
    for (std::size_t k = 0; k < d; ++k) {
      if (seq.at(seq_row, k) != expected[k]) return false;
    }
    return true;
  };
  EXPECT_TRUE(row_equals(0, f.encoder->token_embedding("a").values()));
  EXPECT_TRUE(row_equals(2, f.encoder->token_embedding("of").values()));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(row_equals(3 + i, v.values().subspan((2 * 4 + i) * d, d)));
    EXPECT_TRUE(row_equals(3 + 4 + 1 + 2 + i, t.values().subspan((1 * 4 + i) * d, d)));
  }
  EXPECT_TRUE(row_equals(7, f.encoder->token_embedding("cls2").values()));
  EXPECT_TRUE(row_equals(seq.rows() - 1, f.encoder->token_embedding("image").values()));
}

TEST(Prompts, WithoutDomainContextUsesTagToken) {
  PromptFixture f(2, 2, 3);
  f.config.use_domain_context = false;
  const ParamSet p = init_params(f.config, 16);
  const Tensor seq = assemble_prompt(p, f.config, *f.encoder, 0, 1, Polarity::kPositive);
  EXPECT_EQ(seq.rows(), 3u + 3 + 1 + 2 + 1 + 1);
  const Tensor tag = f.encoder->token_embedding("source1");
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(seq.at(seq.rows() - 2, k), tag[k]);
}

TEST(Prompts, NegativePolarityRuleIsOptIn) {
  PromptFixture f(3, 3, 2);
  f.config.source_private_owner = {{2, "source1"}};
  EXPECT_EQ(f.config.polarity(2, 2), Polarity::kPositive);
  f.config.negate_foreign_source_privates = true;
  EXPECT_EQ(f.config.polarity(2, 1), Polarity::kPositive);
  EXPECT_EQ(f.config.polarity(2, 2), Polarity::kNegative);
  EXPECT_EQ(f.config.polarity(2, 0), Polarity::kNegative);
  EXPECT_EQ(f.config.polarity(0, 2), Polarity::kPositive);
}

TEST(Prompts, VocabularyCoversTemplateClassesAndTags) {
  PromptFixture f;
  const auto vocab = prompt_vocabulary(f.config);
  for (const char* w : {"a", "photo", "of", ",", "not", "image", "cls0", "cls2", "target", "source1"}) {
    EXPECT_NE(std::find(vocab.begin(), vocab.end(), w), vocab.end()) << w;
  }
  std::set<std::string> unique(vocab.begin(), vocab.end());
  EXPECT_EQ(unique.size(), vocab.size());
}

TEST(Prompts, EmbeddingsAreUnitRowsInDomainMajorOrder) {
  PromptFixture f(3, 2, 2);
  const Tensor all = text_class_embeddings(f.params, f.config, *f.encoder);
  ASSERT_EQ(all.rows(), 6u);
  const Tensor one = text_class_embedding(f.params, f.config, *f.encoder, 2, 1, Polarity::kPositive);
  for (std::size_t k = 0; k < all.cols(); ++k) EXPECT_NEAR(all.at(1 * 3 + 2, k), one[k], 1e-12);
}

TEST(Prompts, ChangingContextChangesEmbedding) {
  PromptFixture f(2, 2, 2);
  const Tensor before = text_class_embeddings(f.params, f.config, *f.encoder);
  f.params.at(kDomainContextParam)[0] += 0.5;
  const Tensor after = text_class_embeddings(f.params, f.config, *f.encoder);
  // Domain 0 rows move, domain 1 rows do not.
  EXPECT_NE(before.row_span(0)[0], after.row_span(0)[0]);
  for (std::size_t k = 0; k < before.cols(); ++k) EXPECT_EQ(before.at(2, k), after.at(2, k));
}

TEST(Prompts, ParamsRoundTripThroughJson) {
  PromptFixture f;
  const ParamSet back = params_from_json(nlohmann::json::parse(params_to_json(f.params).dump()));
  EXPECT_EQ(back, f.params);
}

TEST(Prompts, ConfigRoundTripsAndValidates) {
  PromptFixture f;
  f.config.source_private_owner = {{1, "source1"}};
  const PromptConfig back = nlohmann::json(f.config).get<PromptConfig>();
  EXPECT_EQ(back.class_names, f.config.class_names);
  EXPECT_EQ(back.source_private_owner, f.config.source_private_owner);
  PromptConfig bad = f.config;
  bad.class_names.push_back("cls0");
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = f.config;
  bad.domain_tags = {"source1"};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
