#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "discq/corpus.hpp"
#include "discq/crf.hpp"

namespace testutil {

using namespace discq;

inline Sentence sent(std::string text, std::optional<AtmCode> code = {}) {
  Sentence s;
  s.text = std::move(text);
  s.gold_code = code;
  return s;
}

inline Turn turn(Speaker sp, std::vector<Sentence> sentences) {
  Turn t;
  t.speaker = sp;
  for (size_t i = 0; i < sentences.size(); ++i)
    sentences[i].sentence_index = static_cast<int>(i);
  t.sentences = std::move(sentences);
  return t;
}

inline Transcript transcript(std::string id, std::vector<Turn> turns,
                             std::map<IqaRubric, int> iqa = {}) {
  Transcript tr;
  tr.id = std::move(id);
  for (size_t ti = 0; ti < turns.size(); ++ti)
    for (Sentence& s : turns[ti].sentences) s.turn_index = static_cast<int>(ti);
  tr.turns = std::move(turns);
  tr.gold_iqa = std::move(iqa);
  return tr;
}

inline std::map<IqaRubric, int> full_iqa(int s1, int s2, int s3, int s4) {
  return {{IqaRubric::S1, s1}, {IqaRubric::S2, s2},
          {IqaRubric::S3, s3}, {IqaRubric::S4, s4}};
}

// Two turns: teacher [Others, Press], student [StrongEvidence].
inline Transcript sample_exchange(std::string id = "t1") {
  return transcript(
      std::move(id),
      {turn(Speaker::Teacher, {sent("I hear you saying the hat mattered."),
                               sent("Where did you get that from the text?",
                                    AtmCode::Press)}),
       turn(Speaker::Student, {sent("On page two it says the hat was torn.",
                                    AtmCode::StrongEvidence)})});
}

// Sparse vector over `width` features from (index, value) pairs.
inline FeatureVector fv(uint32_t width,
                        std::vector<std::pair<uint32_t, float>> entries) {
  FeatureVector x;
  x.width = width;
  for (auto& [i, v] : entries) x.entries.push_back({i, v});
  return x;
}

// All label sequences allowed by the mask, scored against the model.
inline void enumerate_paths(const CrfEmissions& em, const CrfModel& m,
                            const LabelMask& mask, std::vector<int>& prefix,
                            std::vector<double>& scores,
                            std::vector<std::vector<int>>* paths) {
  size_t t = prefix.size();
  if (t == em.size()) {
    double s = lattice_path_score(em, m, prefix);
    scores.push_back(s);
    if (paths) paths->push_back(prefix);
    return;
  }
  for (int k = 0; k < kCrfLabels; ++k) {
    if (!mask.is_allowed(t, k)) continue;
    prefix.push_back(k);
    enumerate_paths(em, m, mask, prefix, scores, paths);
    prefix.pop_back();
  }
}

inline double brute_log_partition(const CrfEmissions& em, const CrfModel& m,
                                  const LabelMask& mask) {
  std::vector<int> prefix;
  std::vector<double> scores;
  enumerate_paths(em, m, mask, prefix, scores, nullptr);
  return logsumexp(scores.data(), static_cast<int>(scores.size()));
}

inline double brute_best_score(const CrfEmissions& em, const CrfModel& m,
                               const LabelMask& mask) {
  std::vector<int> prefix;
  std::vector<double> scores;
  enumerate_paths(em, m, mask, prefix, scores, nullptr);
  double best = -HUGE_VAL;
  for (double s : scores) best = std::max(best, s);
  return best;
}

// Random CRF model and sequence for oracle comparisons.
inline CrfModel random_crf(Rng& rng, uint32_t width, double spread = 1.0) {
  CrfModel m;
  m.width = width;
  m.emission.resize(static_cast<size_t>(width) * kCrfLabels);
  for (double& v : m.emission) v = rng.normal(0.0, spread);
  for (double& v : m.emission_bias) v = rng.normal(0.0, spread);
  for (auto& row : m.transition)
    for (double& v : row) v = rng.normal(0.0, spread);
  for (double& v : m.start) v = rng.normal(0.0, spread);
  for (double& v : m.stop) v = rng.normal(0.0, spread);
  return m;
}

inline std::vector<FeatureVector> random_features(Rng& rng, size_t len,
                                                  uint32_t width) {
  std::vector<FeatureVector> feats(len);
  for (FeatureVector& x : feats) {
    x.width = width;
    for (uint32_t j = 0; j < width; ++j)
      if (rng.bernoulli(0.4))
        x.entries.push_back({j, static_cast<float>(rng.normal(0.0, 1.0))});
  }
  return feats;
}

inline LabelMask random_mask(Rng& rng, size_t len) {
  LabelMask m;
  m.allowed.resize(len);
  for (uint8_t& bits : m.allowed) {
    bits = static_cast<uint8_t>(rng.below(1u << kCrfLabels));
    if (bits == 0) bits = (1u << kCrfLabels) - 1;
  }
  return m;
}

}  // namespace testutil
