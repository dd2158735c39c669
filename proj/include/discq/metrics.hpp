#pragma once

#include <span>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"

namespace discq {

// Per-class F1 with the 0/0 := 0 convention for precision, recall, and F1.
inline double per_class_f1(std::span<const int> gold, std::span<const int> pred,
                           int label) {
  if (gold.size() != pred.size() || gold.empty())
    throw ValidationError("f1: gold/pred must be non-empty and equal length");
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < gold.size(); ++i) {
    bool g = gold[i] == label, p = pred[i] == label;
    tp += g && p;
    fp += !g && p;
    fn += g && !p;
  }
  double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
}

// Unweighted mean of per-class F1 over class_set; classes absent from both
// gold and pred are excluded from the mean.
inline double macro_f1(std::span<const int> gold, std::span<const int> pred,
                       std::span<const int> class_set) {
  if (gold.size() != pred.size() || gold.empty())
    throw ValidationError("macro_f1: gold/pred must be non-empty and equal length");
  if (class_set.empty()) throw ValidationError("macro_f1: empty class set");
  double sum = 0.0;
  int used = 0;
  for (int label : class_set) {
    bool present = false;
    for (size_t i = 0; i < gold.size() && !present; ++i)
      present = gold[i] == label || pred[i] == label;
    if (!present) continue;
    sum += per_class_f1(gold, pred, label);
    ++used;
  }
  if (used == 0)
    throw ValidationError("macro_f1: no class from the set occurs in the data");
  return sum / static_cast<double>(used);
}

inline std::vector<int> codes_to_ints(std::span<const AtmCode> codes) {
  std::vector<int> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<int>(codes[i]);
  return out;
}

inline double macro_f1_codes(std::span<const AtmCode> gold,
                             std::span<const AtmCode> pred) {
  static const int all[kNumAtmCodes] = {0, 1, 2, 3, 4, 5};
  auto g = codes_to_ints(gold);
  auto p = codes_to_ints(pred);
  return macro_f1(g, p, all);
}

// Binary focal-vs-others F1 (macro over the two classes), used to report the
// quality of the first routing stage in isolation.
inline double step1_macro_f1(std::span<const AtmCode> gold,
                             std::span<const AtmCode> pred) {
  static const int both[2] = {0, 1};
  std::vector<int> g(gold.size()), p(pred.size());
  for (size_t i = 0; i < gold.size(); ++i) g[i] = is_focal(gold[i]) ? 1 : 0;
  for (size_t i = 0; i < pred.size(); ++i) p[i] = is_focal(pred[i]) ? 1 : 0;
  return macro_f1(g, p, both);
}

// Quadratic weighted kappa over ordinal scores in [1, num_levels]. The
// degenerate case (zero expected disagreement, i.e. both raters constant)
// returns 1.0 on perfect agreement by convention.
inline double qwk(std::span<const int> gold, std::span<const int> pred,
                  int num_levels = kMaxIqaScore) {
  if (gold.size() != pred.size() || gold.empty())
    throw ValidationError("qwk: gold/pred must be non-empty and equal length");
  if (num_levels < 2) throw ConfigError("qwk: need at least 2 levels");
  const int K = num_levels;
  std::vector<double> conf(static_cast<size_t>(K) * K, 0.0);
  std::vector<double> row(K, 0.0), col(K, 0.0);
  for (size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 1 || gold[i] > K || pred[i] < 1 || pred[i] > K)
      throw ValidationError("qwk: score outside [1," + std::to_string(K) + "]");
    int g = gold[i] - 1, p = pred[i] - 1;
    conf[static_cast<size_t>(g) * K + p] += 1.0;
    row[static_cast<size_t>(g)] += 1.0;
    col[static_cast<size_t>(p)] += 1.0;
  }
  double n = static_cast<double>(gold.size());
  double denom_sq = static_cast<double>((K - 1) * (K - 1));
  double observed = 0.0, expected = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      double w = static_cast<double>((i - j) * (i - j)) / denom_sq;
      observed += w * conf[static_cast<size_t>(i) * K + j] / n;
      expected += w * row[static_cast<size_t>(i)] * col[static_cast<size_t>(j)] / (n * n);
    }
  if (expected == 0.0) return observed == 0.0 ? 1.0 : 0.0;
  return 1.0 - observed / expected;
}

// Two-sided paired approximate randomization test: p-value for the observed
// |mean difference| under random sign flips, with plus-one smoothing so the
// result is never exactly zero.
inline double paired_randomization_pvalue(std::span<const double> a,
                                          std::span<const double> b,
                                          int num_permutations = 10000,
                                          uint64_t seed = 17) {
  if (a.size() != b.size())
    throw ValidationError("significance: paired samples must have equal length");
  if (a.size() < 2)
    throw ValidationError("significance: need at least 2 pairs");
  if (num_permutations < 1)
    throw ConfigError("significance: need at least 1 permutation");
  std::vector<double> d(a.size());
  double obs = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
    obs += d[i];
  }
  obs = std::abs(obs / static_cast<double>(d.size()));
  Rng rng(seed);
  long hits = 0;
  for (int p = 0; p < num_permutations; ++p) {
    double s = 0.0;
    for (double di : d) s += rng.bernoulli(0.5) ? di : -di;
    if (std::abs(s / static_cast<double>(d.size())) >= obs) ++hits;
  }
  return static_cast<double>(1 + hits) / static_cast<double>(1 + num_permutations);
}

}  // namespace discq
