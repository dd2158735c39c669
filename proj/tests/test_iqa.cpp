#include <gtest/gtest.h>

#include <cmath>

#include "discq/iqa.hpp"
#include "discq/metrics.hpp"
#include "support/helpers.hpp"

using namespace discq;

namespace {

TEST(CountRelevant, PicksRubricCodesFromInstances) {
  Transcript tr = testutil::sample_exchange();
  std::vector<AtmCode> codes = {AtmCode::Others, AtmCode::Press,
                                AtmCode::StrongEvidence};
  auto inst = merge_adjacent(tr, codes);
  CountVector s4 = count_relevant(inst, IqaRubric::S4);
  ASSERT_EQ(s4.counts.size(), 2u);  // evidence, explanation
  EXPECT_EQ(s4.counts[0], 1);
  EXPECT_EQ(s4.counts[1], 0);
  EXPECT_EQ(s4.total(), 1);
  CountVector s2 = count_relevant(inst, IqaRubric::S2);
  EXPECT_EQ(s2.counts, (std::vector<int>{1}));
  CountVector s1 = count_relevant(inst, IqaRubric::S1);
  EXPECT_EQ(s1.total(), 0);
}

TEST(CountRelevant, EmptyInstancesGiveZeroVector) {
  std::vector<CodeInstance> none;
  CountVector cv = count_relevant(none, IqaRubric::S4);
  EXPECT_EQ(cv.counts, (std::vector<int>{0, 0}));
}

TEST(CountRelevant, FromArrayKeepsRubricOrder) {
  std::array<int, kNumFocalCodes> counts = {7, 3, 2, 5, 4};
  EXPECT_EQ(count_vector_from(counts, IqaRubric::S1).counts,
            (std::vector<int>{7}));
  EXPECT_EQ(count_vector_from(counts, IqaRubric::S2).counts,
            (std::vector<int>{3}));
  EXPECT_EQ(count_vector_from(counts, IqaRubric::S3).counts,
            (std::vector<int>{2}));
  EXPECT_EQ(count_vector_from(counts, IqaRubric::S4).counts,
            (std::vector<int>{5, 4}));
}

TEST(Threshold, PredictionCountsCrossedCuts) {
  ThresholdModel m;
  m.rubric = IqaRubric::S2;
  m.cuts = {1.0, 3.0, 5.0};
  auto at = [&](int total) {
    CountVector cv;
    cv.rubric = IqaRubric::S2;
    cv.counts = {total};
    return predict_threshold(m, cv);
  };
  EXPECT_EQ(at(0), 1);
  EXPECT_EQ(at(1), 2);
  EXPECT_EQ(at(3), 3);
  EXPECT_EQ(at(9), 4);
  CountVector wrong;
  wrong.rubric = IqaRubric::S1;
  wrong.counts = {1};
  EXPECT_THROW(predict_threshold(m, wrong), ValidationError);
}

TEST(Threshold, FitSeparatesCleanTrainingData) {
  std::vector<std::pair<int, int>> data = {{0, 1}, {0, 1}, {5, 3}, {9, 4},
                                           {1, 2}, {6, 3}, {10, 4}};
  ThresholdModel m = fit_thresholds(IqaRubric::S2, data);
  std::vector<int> gold, pred;
  for (const auto& [t, g] : data) {
    CountVector cv;
    cv.rubric = IqaRubric::S2;
    cv.counts = {t};
    gold.push_back(g);
    pred.push_back(predict_threshold(m, cv));
  }
  EXPECT_DOUBLE_EQ(qwk(gold, pred), 1.0);
  EXPECT_LE(m.cuts[0], m.cuts[1]);
  EXPECT_LE(m.cuts[1], m.cuts[2]);
}

TEST(Threshold, DegenerateGoldStaysConstant) {
  std::vector<std::pair<int, int>> data = {{0, 2}, {3, 2}, {8, 2}};
  ThresholdModel m = fit_thresholds(IqaRubric::S1, data);
  for (int t : {0, 3, 8, 20}) {
    CountVector cv;
    cv.rubric = IqaRubric::S1;
    cv.counts = {t};
    EXPECT_EQ(predict_threshold(m, cv), 2);
  }
}

TEST(Threshold, SingleExampleIsFittable) {
  std::vector<std::pair<int, int>> data = {{4, 3}};
  ThresholdModel m = fit_thresholds(IqaRubric::S3, data);
  CountVector cv;
  cv.rubric = IqaRubric::S3;
  cv.counts = {4};
  EXPECT_EQ(predict_threshold(m, cv), 3);
}

TEST(Threshold, ValidatesInputs) {
  std::vector<std::pair<int, int>> empty;
  EXPECT_THROW(fit_thresholds(IqaRubric::S1, empty), ValidationError);
  std::vector<std::pair<int, int>> neg = {{-1, 2}};
  EXPECT_THROW(fit_thresholds(IqaRubric::S1, neg), ValidationError);
  std::vector<std::pair<int, int>> bad_gold = {{1, 5}};
  EXPECT_THROW(fit_thresholds(IqaRubric::S1, bad_gold), ValidationError);
}

CountVector s2_counts(int n) {
  CountVector cv;
  cv.rubric = IqaRubric::S2;
  cv.counts = {n};
  return cv;
}

TEST(Regression, RecoversLinearScoreMap) {
  // Gold was produced by clamp(round(0.5*count + 1)); regression should find
  // the generating slope from the unclamped interior and beat the cuts on a
  // held-out sweep.
  std::vector<std::pair<CountVector, int>> train;
  for (int n = 0; n <= 4; ++n) {
    int g = static_cast<int>(std::lround(0.5 * n + 1.0));
    train.push_back({s2_counts(n), std::min(g, 4)});
  }
  IqaRegressionModel m = fit_iqa_regression(IqaRubric::S2, train);
  ASSERT_EQ(m.reg.weights.size(), 1u);
  EXPECT_NEAR(m.reg.weights[0], 0.5, 0.1);
  EXPECT_EQ(predict_iqa_regression(m, s2_counts(2)), 2);
  EXPECT_EQ(predict_iqa_regression(m, s2_counts(6)), 4);
  EXPECT_EQ(predict_iqa_regression(m, s2_counts(40)), 4);  // clamped
}

TEST(Regression, InterpolatesBetweenSparseTrainingTotals) {
  // Totals 0 and 8 with scores 1 and 4 pin the line; held-out totals in the
  // gap get graded scores a threshold fit on the same two points cannot give.
  std::vector<std::pair<CountVector, int>> train = {{s2_counts(0), 1},
                                                    {s2_counts(8), 4}};
  IqaRegressionModel reg = fit_iqa_regression(IqaRubric::S2, train);
  std::vector<std::pair<int, int>> thr_train = {{0, 1}, {8, 4}};
  ThresholdModel thr = fit_thresholds(IqaRubric::S2, thr_train);

  std::vector<int> gold, pr, pt;
  for (int n = 0; n <= 8; ++n) {
    int g = std::min(4, static_cast<int>(std::lround(3.0 * n / 8.0 + 1.0)));
    gold.push_back(g);
    pr.push_back(predict_iqa_regression(reg, s2_counts(n)));
    pt.push_back(predict_threshold(thr, s2_counts(n)));
  }
  EXPECT_GT(qwk(gold, pr), qwk(gold, pt));
  EXPECT_GE(qwk(gold, pr), 0.95);
}

TEST(Regression, ConstantGoldHasFlatSlope) {
  std::vector<std::pair<CountVector, int>> train;
  for (int n = 0; n <= 6; ++n) train.push_back({s2_counts(n), 3});
  IqaRegressionModel m = fit_iqa_regression(IqaRubric::S2, train);
  EXPECT_NEAR(m.reg.weights[0], 0.0, 1e-6);
  EXPECT_EQ(predict_iqa_regression(m, s2_counts(100)), 3);
}

TEST(Regression, S4UsesTwoCodeCounts) {
  std::vector<std::pair<CountVector, int>> train;
  for (int e = 0; e <= 3; ++e)
    for (int x = 0; x <= 3; ++x) {
      CountVector cv;
      cv.rubric = IqaRubric::S4;
      cv.counts = {e, x};
      int g = std::min(4, 1 + e);  // evidence drives the score; explanation noise
      train.push_back({cv, g});
    }
  IqaRegressionModel m = fit_iqa_regression(IqaRubric::S4, train);
  ASSERT_EQ(m.reg.weights.size(), 2u);
  EXPECT_GT(m.reg.weights[0], 0.5);
  EXPECT_NEAR(m.reg.weights[1], 0.0, 1e-6);
  CountVector probe;
  probe.rubric = IqaRubric::S4;
  probe.counts = {2, 1};
  EXPECT_EQ(predict_iqa_regression(m, probe), 3);
}

TEST(Regression, RoundsHalfAwayFromZeroAndClamps) {
  EXPECT_EQ(score_from_raw(2.5), 3);
  EXPECT_EQ(score_from_raw(2.49), 2);
  EXPECT_EQ(score_from_raw(0.2), 1);
  EXPECT_EQ(score_from_raw(-3.0), 1);
  EXPECT_EQ(score_from_raw(4.51), 4);
  EXPECT_EQ(score_from_raw(17.0), 4);
}

TEST(Regression, ValidatesInputs) {
  std::vector<std::pair<CountVector, int>> empty;
  EXPECT_THROW(fit_iqa_regression(IqaRubric::S2, empty), ValidationError);
  std::vector<std::pair<CountVector, int>> wrong = {{s2_counts(1), 2}};
  EXPECT_THROW(fit_iqa_regression(IqaRubric::S1, wrong), ValidationError);
  IqaRegressionModel m = fit_iqa_regression(
      IqaRubric::S2, std::vector<std::pair<CountVector, int>>{
                         {s2_counts(0), 1}, {s2_counts(4), 3}});
  CountVector s1;
  s1.rubric = IqaRubric::S1;
  s1.counts = {1};
  EXPECT_THROW(predict_iqa_regression(m, s1), ValidationError);
}

TEST(E2eBaseline, LearnsGrossScoreSignalFromText) {
  // Transcripts whose text literally encodes their score level.
  Corpus c;
  Rng rng(29);
  const std::vector<std::string> markers = {
      "quiet short recall session", "some discussion happened here",
      "students pressed claims with reasons", "rich linked argument evidence"};
  for (int i = 0; i < 40; ++i) {
    int score = i % 4 + 1;
    std::vector<Turn> turns;
    for (int g = 0; g < 3; ++g)
      turns.push_back(testutil::turn(
          g % 2 ? Speaker::Student : Speaker::Teacher,
          {testutil::sent(markers[static_cast<size_t>(score - 1)] + " " +
                          std::to_string(rng.below(9)) + ".")}));
    c.transcripts.push_back(testutil::transcript(
        "t" + std::to_string(i), std::move(turns),
        testutil::full_iqa(score, score, score, score)));
  }
  EncoderConfig enc;
  enc.dim = 1u << 10;
  OptimConfig opt;
  opt.epochs = 80;
  E2eScoreModel m = train_e2e_baseline(c, IqaRubric::S2, enc, opt);
  int correct = 0;
  for (const Transcript& tr : c.transcripts)
    correct += predict_e2e(m, tr) == tr.gold_iqa.at(IqaRubric::S2);
  EXPECT_GE(correct, 36);
}

TEST(E2eBaseline, RequiresGoldScores) {
  Corpus c;
  c.transcripts.push_back(testutil::sample_exchange());
  EncoderConfig enc;
  enc.dim = 1u << 10;
  EXPECT_THROW(train_e2e_baseline(c, IqaRubric::S1, enc, OptimConfig{}),
               ValidationError);
}

}  // namespace
