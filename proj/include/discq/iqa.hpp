#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <vector>

#include "atm_pipeline.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "linmodels.hpp"
#include "metrics.hpp"

namespace discq {

// Per-transcript counts of the codes relevant to one rubric, in
// rubric_relevant_codes order.
struct CountVector {
  IqaRubric rubric = IqaRubric::S1;
  std::vector<int> counts;

  bool operator==(const CountVector&) const = default;

  int total() const {
    int s = 0;
    for (int c : counts) s += c;
    return s;
  }
};

inline CountVector count_relevant(std::span<const CodeInstance> instances,
                                  IqaRubric rubric) {
  const auto& codes = rubric_relevant_codes(rubric);
  CountVector cv;
  cv.rubric = rubric;
  cv.counts.assign(codes.size(), 0);
  for (const CodeInstance& inst : instances)
    for (size_t j = 0; j < codes.size(); ++j)
      if (inst.code == codes[j]) ++cv.counts[j];
  return cv;
}

inline CountVector count_vector_from(const std::array<int, kNumFocalCodes>& counts,
                                     IqaRubric rubric) {
  const auto& codes = rubric_relevant_codes(rubric);
  CountVector cv;
  cv.rubric = rubric;
  cv.counts.reserve(codes.size());
  for (AtmCode c : codes) cv.counts.push_back(counts[static_cast<size_t>(c)]);
  return cv;
}

// ---------------------------------------------------------------------------
// Count-threshold estimator: three ordered cut points on the total relevant
// count map a transcript to a score in [1,4]. Fitting searches every ordered
// triple of candidate cuts (midpoints between consecutive distinct totals,
// plus sentinels below the minimum and above the maximum) and keeps the one
// maximizing training QWK; ties go to the lexicographically smallest triple.

struct ThresholdModel {
  IqaRubric rubric = IqaRubric::S1;
  std::array<double, 3> cuts{};

  bool operator==(const ThresholdModel&) const = default;
};

inline int predict_threshold(const ThresholdModel& m, const CountVector& cv) {
  if (cv.rubric != m.rubric)
    throw ValidationError("threshold model rubric mismatch");
  double t = static_cast<double>(cv.total());
  int score = 1;
  for (double c : m.cuts) score += c <= t ? 1 : 0;
  return score;
}

inline ThresholdModel fit_thresholds(
    IqaRubric rubric, std::span<const std::pair<int, int>> totals_and_gold) {
  if (totals_and_gold.empty())
    throw ValidationError("fit_thresholds: empty training set");
  for (const auto& [t, g] : totals_and_gold) {
    if (t < 0) throw ValidationError("fit_thresholds: negative count");
    if (g < kMinIqaScore || g > kMaxIqaScore)
      throw ValidationError("fit_thresholds: gold score outside [1,4]");
  }
  std::vector<int> distinct;
  distinct.reserve(totals_and_gold.size());
  for (const auto& [t, g] : totals_and_gold) distinct.push_back(t);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> cand;
  cand.push_back(static_cast<double>(distinct.front()) - 1.0);
  for (size_t i = 0; i + 1 < distinct.size(); ++i)
    cand.push_back((static_cast<double>(distinct[i]) + distinct[i + 1]) / 2.0);
  cand.push_back(static_cast<double>(distinct.back()) + 1.0);

  // rank[i] = number of candidates <= total_i, so a cut at candidate index a
  // fires on example i iff a < rank[i].
  const size_t n = totals_and_gold.size();
  std::vector<int> rank(n), gold(n), pred(n);
  for (size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(totals_and_gold[i].first);
    int r = 0;
    for (double c : cand) r += c <= t ? 1 : 0;
    rank[i] = r;
    gold[i] = totals_and_gold[i].second;
  }

  ThresholdModel best;
  best.rubric = rubric;
  double best_qwk = -2.0;
  const int m = static_cast<int>(cand.size());
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b)
      for (int c = b; c < m; ++c) {
        for (size_t i = 0; i < n; ++i)
          pred[i] = 1 + (a < rank[i]) + (b < rank[i]) + (c < rank[i]);
        double k = qwk(gold, pred);
        if (k > best_qwk) {
          best_qwk = k;
          best.cuts = {cand[static_cast<size_t>(a)], cand[static_cast<size_t>(b)],
                       cand[static_cast<size_t>(c)]};
        }
      }
  return best;
}

// ---------------------------------------------------------------------------
// Linear-regression estimator: OLS on the per-code count vector, prediction
// rounded half-away-from-zero and clamped to [1,4].

struct IqaRegressionModel {
  IqaRubric rubric = IqaRubric::S1;
  LinearRegressor reg;

  bool operator==(const IqaRegressionModel&) const = default;
};

inline IqaRegressionModel fit_iqa_regression(
    IqaRubric rubric, std::span<const std::pair<CountVector, int>> data) {
  if (data.empty()) throw ValidationError("fit_iqa_regression: empty training set");
  size_t d = rubric_relevant_codes(rubric).size();
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  X.reserve(data.size());
  y.reserve(data.size());
  for (const auto& [cv, g] : data) {
    if (cv.rubric != rubric || cv.counts.size() != d)
      throw ValidationError("fit_iqa_regression: count vector rubric mismatch");
    if (g < kMinIqaScore || g > kMaxIqaScore)
      throw ValidationError("fit_iqa_regression: gold score outside [1,4]");
    std::vector<double> row(d);
    for (size_t j = 0; j < d; ++j) row[j] = static_cast<double>(cv.counts[j]);
    X.push_back(std::move(row));
    y.push_back(static_cast<double>(g));
  }
  IqaRegressionModel m;
  m.rubric = rubric;
  m.reg = fit_ols(X, y);
  return m;
}

inline double predict_iqa_raw(const IqaRegressionModel& m,
                              const CountVector& cv) {
  if (cv.rubric != m.rubric)
    throw ValidationError("regression model rubric mismatch");
  std::vector<double> x(cv.counts.size());
  for (size_t j = 0; j < x.size(); ++j) x[j] = static_cast<double>(cv.counts[j]);
  return predict_linear(m.reg, x);
}

inline int score_from_raw(double raw) {
  long s = std::llround(raw);  // half away from zero
  if (s < kMinIqaScore) return kMinIqaScore;
  if (s > kMaxIqaScore) return kMaxIqaScore;
  return static_cast<int>(s);
}

inline int predict_iqa_regression(const IqaRegressionModel& m,
                                  const CountVector& cv) {
  return score_from_raw(predict_iqa_raw(m, cv));
}

// ---------------------------------------------------------------------------
// End-to-end baseline: 4-way softmax over the whole-transcript n-gram bag,
// no sentence codes involved.

struct E2eScoreModel {
  IqaRubric rubric = IqaRubric::S1;
  EncoderConfig encoder;
  SoftmaxModel clf;  // label k = score k+1
};

inline E2eScoreModel train_e2e_baseline(const Corpus& train, IqaRubric rubric,
                                        const EncoderConfig& cfg,
                                        const OptimConfig& optim) {
  cfg.validate();
  optim.validate();
  if (train.transcripts.empty()) throw ValidationError("empty corpus");
  std::vector<FeatureVector> X;
  std::vector<int> y;
  X.reserve(train.transcripts.size());
  for (const Transcript& tr : train.transcripts) {
    auto it = tr.gold_iqa.find(rubric);
    if (it == tr.gold_iqa.end())
      throw ValidationError("transcript '" + tr.id + "': missing gold " +
                            rubric_name(rubric) + " score");
    X.push_back(encode_transcript_bag(tr, cfg));
    y.push_back(it->second - 1);
  }
  E2eScoreModel m;
  m.rubric = rubric;
  m.encoder = cfg;
  OptimConfig o = optim;
  o.seed = derive_seed(optim.seed, "e2e", static_cast<uint64_t>(rubric));
  m.clf = train_softmax(X, y, 4, o, {"1", "2", "3", "4"});
  return m;
}

inline int predict_e2e(const E2eScoreModel& m, const Transcript& tr) {
  FeatureVector x = encode_transcript_bag(tr, m.encoder);
  return predict_softmax(m.clf, x).first + 1;
}

}  // namespace discq
