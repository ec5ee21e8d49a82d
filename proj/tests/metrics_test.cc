#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.h"
#include "uniprompt/metrics.h"
#include "uniprompt/random.h"

using namespace uniprompt;

TEST(Metrics, HScoreExamples) {
  EXPECT_NEAR(h_score(0.8, 0.6), 0.685714, 1e-6);
  EXPECT_EQ(h_score(0.0, 0.9), 0.0);
  EXPECT_EQ(h_score(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(h_score(1.0, 1.0), 1.0);
}

TEST(Metrics, AccuracyIsClassAveraged) {
  // Class 0: 3/4 right, class 1: 0/1, unknown: 1/2.
  const LabelMap truth = {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 1}, {5, -1}, {6, -1}};
  const LabelMap pred = {{0, 0}, {1, 0}, {2, 0}, {3, 1}, {4, -1}, {5, -1}, {6, 0}};
  const AccuracyBreakdown acc = accuracy_decomposition(pred, truth);
  EXPECT_DOUBLE_EQ(acc.acc_known, 0.375);
  EXPECT_DOUBLE_EQ(acc.pooled_known, 0.6);
  EXPECT_DOUBLE_EQ(acc.acc_unknown, 0.5);
  EXPECT_DOUBLE_EQ(acc.per_class.at(0), 0.75);
}

TEST(Metrics, AccuracyRejectsBadInput) {
  const LabelMap truth = {{0, 0}, {1, -1}};
  EXPECT_THROW(accuracy_decomposition({{0, 0}}, truth), std::invalid_argument);
  EXPECT_THROW(accuracy_decomposition({{0, 0}, {2, -1}}, truth), std::invalid_argument);
  EXPECT_THROW(accuracy_decomposition({{0, 0}}, {{0, 0}}), std::invalid_argument);
  EXPECT_THROW(accuracy_decomposition({{0, -1}}, {{0, -1}}), std::invalid_argument);
}

TEST(Metrics, AucMatchesPairwiseCount) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::map<std::size_t, double> scores;
    std::map<std::size_t, bool> unknown;
    std::vector<double> s;
    std::vector<bool> u;
    for (std::size_t i = 0; i < 20; ++i) {
      // Coarse scores so ties occur.
      const double v = static_cast<double>(rng() % 7);
      const bool unk = i < 2 ? i == 1 : rng() % 3 == 0;
      scores[i] = v;
      unknown[i] = unk;
      s.push_back(v);
      u.push_back(unk);
    }
    ASSERT_NEAR(roc_auc(scores, unknown), oracle::pairwise_auc(s, u), 1e-12);
  }
}

TEST(Metrics, AucEdgeCases) {
  EXPECT_EQ(roc_auc({{0, 2.0}, {1, 3.0}, {2, -1.0}}, {{0, false}, {1, false}, {2, true}}), 1.0);
  EXPECT_EQ(roc_auc({{0, 2.0}, {1, 2.0}}, {{0, false}, {1, true}}), 0.5);
  EXPECT_THROW(roc_auc({{0, 1.0}}, {{0, false}}), std::invalid_argument);
  EXPECT_THROW(roc_auc({{0, 1.0}}, {{1, false}}), std::invalid_argument);
}

TEST(Metrics, HistogramCoversRange) {
  const double scores[] = {0.0, 0.5, 1.0, 1.0, 2.0};
  const auto bins = score_histogram(scores, 4);
  ASSERT_EQ(bins.size(), 4u);
  EXPECT_EQ(bins.front().lo, 0.0);
  EXPECT_EQ(bins.back().hi, 2.0);
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  EXPECT_EQ(n, 5u);
  EXPECT_EQ(bins.back().count, 1u);
  const double flat[] = {3.0, 3.0};
  EXPECT_EQ(score_histogram(flat, 3).front().count, 2u);
  EXPECT_THROW(score_histogram({}, 3), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "uniprompt_hist.csv";
  write_histogram_csv(bins, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "bin,lo,hi,count");
}

TEST(Metrics, QuantilesInterpolate) {
  const double probs[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  const auto q = quantiles({4.0, 0.0, 2.0, 1.0, 3.0}, probs);
  EXPECT_EQ(q, (std::vector<double>{0.0, 1.0, 2.0, 3.0, 4.0}));
  const double half[] = {0.5};
  EXPECT_DOUBLE_EQ(quantiles({0.0, 1.0}, half)[0], 0.5);
}

TEST(Metrics, ReportJsonHasAllFields) {
  MetricsReport r;
  r.acc_known = 0.8;
  r.per_class_accuracy = {{0, 1.0}, {3, 0.5}};
  const nlohmann::json j = to_json(r);
  for (const char* key : {"acc_known", "acc_unknown", "h_score", "auc", "auc_orientation",
                          "per_class_accuracy", "energy_summary", "config_fingerprint"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["per_class_accuracy"]["3"], 0.5);
  EXPECT_EQ(j["energy_summary"]["rule"], "score > delta => unknown");
}
