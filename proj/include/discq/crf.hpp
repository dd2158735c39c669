#pragma once

#include <array>
#include <span>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "linmodels.hpp"

namespace discq {

inline constexpr int kCrfLabels = kNumAtmCodes;

// Per-position allowed-label sets, one bit per label. Used to hard-constrain
// decoding and training to speaker-consistent codes.
struct LabelMask {
  std::vector<uint8_t> allowed;

  bool operator==(const LabelMask&) const = default;

  static LabelMask open(size_t len) {
    LabelMask m;
    m.allowed.assign(len, (1u << kCrfLabels) - 1);
    return m;
  }

  static LabelMask for_speakers(std::span<const Speaker> speakers) {
    constexpr uint8_t teacher_bits =
        (1u << static_cast<int>(AtmCode::Recap)) |
        (1u << static_cast<int>(AtmCode::Press)) |
        (1u << static_cast<int>(AtmCode::Others));
    constexpr uint8_t student_bits =
        (1u << static_cast<int>(AtmCode::StrongLink)) |
        (1u << static_cast<int>(AtmCode::StrongEvidence)) |
        (1u << static_cast<int>(AtmCode::StrongExplanation)) |
        (1u << static_cast<int>(AtmCode::Others));
    LabelMask m;
    m.allowed.reserve(speakers.size());
    for (Speaker s : speakers)
      m.allowed.push_back(s == Speaker::Teacher ? teacher_bits : student_bits);
    return m;
  }

  size_t size() const { return allowed.size(); }

  bool is_allowed(size_t t, int k) const { return (allowed[t] >> k) & 1; }
};

struct CrfModel {
  uint32_t width = 0;
  std::vector<double> emission;  // width * kCrfLabels, [index*K + k]
  std::array<double, kCrfLabels> emission_bias{};
  std::array<std::array<double, kCrfLabels>, kCrfLabels> transition{};
  std::array<double, kCrfLabels> start{};
  std::array<double, kCrfLabels> stop{};
  double final_train_loss = 0.0;

  bool operator==(const CrfModel&) const = default;
};

// One training sequence: a transcript's sentences in flat order. gold entries
// at unsupervised positions are ignored by the loss (the lattice marginalizes
// over them); an empty supervised vector means every position is supervised.
struct CrfSequence {
  std::vector<FeatureVector> features;
  std::vector<int> gold;
  LabelMask mask;
  std::vector<uint8_t> supervised;
};

using CrfEmissions = std::vector<std::array<double, kCrfLabels>>;

namespace detail {

constexpr double kNegInf = -HUGE_VAL;

inline CrfEmissions scaled_emissions(const double* w,
                                     const std::array<double, kCrfLabels>& bias,
                                     double scale,
                                     std::span<const FeatureVector> feats) {
  CrfEmissions em(feats.size());
  for (size_t t = 0; t < feats.size(); ++t)
    sparse_logits(w, bias.data(), kCrfLabels, scale, feats[t], em[t].data());
  return em;
}

inline void check_lattice(const CrfEmissions& em, const LabelMask& mask) {
  if (em.empty()) throw ValidationError("crf: empty sequence");
  if (mask.size() != em.size())
    throw ValidationError("crf: mask length does not match sequence length");
  for (size_t t = 0; t < em.size(); ++t)
    if ((mask.allowed[t] & ((1u << kCrfLabels) - 1)) == 0)
      throw ValidationError("crf: no label allowed at position " +
                            std::to_string(t));
}

}  // namespace detail

inline CrfEmissions crf_emissions(const CrfModel& m,
                                  std::span<const FeatureVector> feats) {
  for (const FeatureVector& x : feats) detail::check_example(x, m.width);
  return detail::scaled_emissions(m.emission.data(), m.emission_bias, 1.0,
                                  feats);
}

// ---------------------------------------------------------------------------
// Lattice operations. These take precomputed emissions so tests can exercise
// them directly (e.g. the shift-invariance property) and training can reuse
// emissions across the two lattices of the partial-supervision objective.

inline double lattice_log_partition(const CrfEmissions& em, const CrfModel& m,
                                    const LabelMask& mask) {
  detail::check_lattice(em, mask);
  const size_t L = em.size();
  std::array<double, kCrfLabels> alpha, next;
  for (int k = 0; k < kCrfLabels; ++k)
    alpha[static_cast<size_t>(k)] =
        mask.is_allowed(0, k) ? m.start[static_cast<size_t>(k)] + em[0][static_cast<size_t>(k)]
                              : detail::kNegInf;
  std::array<double, kCrfLabels> tmp;
  for (size_t t = 1; t < L; ++t) {
    for (int k = 0; k < kCrfLabels; ++k) {
      if (!mask.is_allowed(t, k)) {
        next[static_cast<size_t>(k)] = detail::kNegInf;
        continue;
      }
      for (int j = 0; j < kCrfLabels; ++j)
        tmp[static_cast<size_t>(j)] =
            alpha[static_cast<size_t>(j)] +
            m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)];
      next[static_cast<size_t>(k)] =
          em[t][static_cast<size_t>(k)] + logsumexp(tmp.data(), kCrfLabels);
    }
    alpha = next;
  }
  for (int k = 0; k < kCrfLabels; ++k)
    alpha[static_cast<size_t>(k)] += m.stop[static_cast<size_t>(k)];
  double z = logsumexp(alpha.data(), kCrfLabels);
  if (!(z > detail::kNegInf))
    throw ValidationError("crf: log-partition diverged to -inf");
  return z;
}

// Max-score decoding. Ties break toward the lower label index at every
// backtrack step (ascending scans keep the first maximum).
inline std::vector<int> lattice_viterbi(const CrfEmissions& em,
                                        const CrfModel& m,
                                        const LabelMask& mask) {
  detail::check_lattice(em, mask);
  const size_t L = em.size();
  std::vector<std::array<double, kCrfLabels>> delta(L);
  std::vector<std::array<int, kCrfLabels>> back(L);
  for (int k = 0; k < kCrfLabels; ++k)
    delta[0][static_cast<size_t>(k)] =
        mask.is_allowed(0, k) ? m.start[static_cast<size_t>(k)] + em[0][static_cast<size_t>(k)]
                              : detail::kNegInf;
  for (size_t t = 1; t < L; ++t) {
    for (int k = 0; k < kCrfLabels; ++k) {
      if (!mask.is_allowed(t, k)) {
        delta[t][static_cast<size_t>(k)] = detail::kNegInf;
        back[t][static_cast<size_t>(k)] = 0;
        continue;
      }
      double best = detail::kNegInf;
      int arg = 0;
      for (int j = 0; j < kCrfLabels; ++j) {
        double v = delta[t - 1][static_cast<size_t>(j)] +
                   m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)];
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      delta[t][static_cast<size_t>(k)] = em[t][static_cast<size_t>(k)] + best;
      back[t][static_cast<size_t>(k)] = arg;
    }
  }
  double best = detail::kNegInf;
  int arg = 0;
  for (int k = 0; k < kCrfLabels; ++k) {
    double v = delta[L - 1][static_cast<size_t>(k)] + m.stop[static_cast<size_t>(k)];
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  if (!(best > detail::kNegInf))
    throw ValidationError("crf: no feasible path");
  std::vector<int> path(L);
  path[L - 1] = arg;
  for (size_t t = L - 1; t > 0; --t)
    path[t - 1] = back[t][static_cast<size_t>(path[t])];
  return path;
}

struct CrfPosteriors {
  double log_z = 0.0;
  // unary[t][k] = P(y_t = k); pairwise[t][j][k] = P(y_t = j, y_{t+1} = k)
  std::vector<std::array<double, kCrfLabels>> unary;
  std::vector<std::array<std::array<double, kCrfLabels>, kCrfLabels>> pairwise;
};

inline CrfPosteriors lattice_posteriors(const CrfEmissions& em,
                                        const CrfModel& m,
                                        const LabelMask& mask) {
  detail::check_lattice(em, mask);
  const size_t L = em.size();
  std::vector<std::array<double, kCrfLabels>> alpha(L), beta(L);
  std::array<double, kCrfLabels> tmp;

  for (int k = 0; k < kCrfLabels; ++k)
    alpha[0][static_cast<size_t>(k)] =
        mask.is_allowed(0, k) ? m.start[static_cast<size_t>(k)] + em[0][static_cast<size_t>(k)]
                              : detail::kNegInf;
  for (size_t t = 1; t < L; ++t)
    for (int k = 0; k < kCrfLabels; ++k) {
      if (!mask.is_allowed(t, k)) {
        alpha[t][static_cast<size_t>(k)] = detail::kNegInf;
        continue;
      }
      for (int j = 0; j < kCrfLabels; ++j)
        tmp[static_cast<size_t>(j)] =
            alpha[t - 1][static_cast<size_t>(j)] +
            m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)];
      alpha[t][static_cast<size_t>(k)] =
          em[t][static_cast<size_t>(k)] + logsumexp(tmp.data(), kCrfLabels);
    }

  for (int k = 0; k < kCrfLabels; ++k)
    beta[L - 1][static_cast<size_t>(k)] = m.stop[static_cast<size_t>(k)];
  for (size_t t = L - 1; t > 0; --t)
    for (int j = 0; j < kCrfLabels; ++j) {
      for (int k = 0; k < kCrfLabels; ++k)
        tmp[static_cast<size_t>(k)] =
            mask.is_allowed(t, k)
                ? m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)] +
                      em[t][static_cast<size_t>(k)] + beta[t][static_cast<size_t>(k)]
                : detail::kNegInf;
      beta[t - 1][static_cast<size_t>(j)] = logsumexp(tmp.data(), kCrfLabels);
    }

  for (int k = 0; k < kCrfLabels; ++k)
    tmp[static_cast<size_t>(k)] =
        alpha[L - 1][static_cast<size_t>(k)] + m.stop[static_cast<size_t>(k)];
  double log_z = logsumexp(tmp.data(), kCrfLabels);
  if (!(log_z > detail::kNegInf))
    throw ValidationError("crf: log-partition diverged to -inf");

  CrfPosteriors post;
  post.log_z = log_z;
  post.unary.resize(L);
  post.pairwise.resize(L > 0 ? L - 1 : 0);
  for (size_t t = 0; t < L; ++t)
    for (int k = 0; k < kCrfLabels; ++k) {
      double a = alpha[t][static_cast<size_t>(k)];
      post.unary[t][static_cast<size_t>(k)] =
          a == detail::kNegInf
              ? 0.0
              : std::exp(a + beta[t][static_cast<size_t>(k)] - log_z);
    }
  for (size_t t = 1; t < L; ++t)
    for (int j = 0; j < kCrfLabels; ++j)
      for (int k = 0; k < kCrfLabels; ++k) {
        double a = alpha[t - 1][static_cast<size_t>(j)];
        bool ok = a != detail::kNegInf && mask.is_allowed(t, k);
        post.pairwise[t - 1][static_cast<size_t>(j)][static_cast<size_t>(k)] =
            ok ? std::exp(a +
                          m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)] +
                          em[t][static_cast<size_t>(k)] +
                          beta[t][static_cast<size_t>(k)] - log_z)
               : 0.0;
      }
  return post;
}

inline double lattice_path_score(const CrfEmissions& em, const CrfModel& m,
                                 std::span<const int> labels) {
  if (labels.size() != em.size())
    throw ValidationError("crf: label length does not match sequence length");
  double s = m.start[static_cast<size_t>(labels[0])];
  for (size_t t = 0; t < labels.size(); ++t) {
    s += em[t][static_cast<size_t>(labels[t])];
    if (t > 0)
      s += m.transition[static_cast<size_t>(labels[t - 1])]
                       [static_cast<size_t>(labels[t])];
  }
  s += m.stop[static_cast<size_t>(labels.back())];
  return s;
}

// ---------------------------------------------------------------------------
// Loss and gradients.

struct CrfGradient {
  std::vector<double> emission;
  std::array<double, kCrfLabels> emission_bias{};
  std::array<std::array<double, kCrfLabels>, kCrfLabels> transition{};
  std::array<double, kCrfLabels> start{};
  std::array<double, kCrfLabels> stop{};
  std::vector<uint32_t> touched;      // emission rows with nonzero gradient
  std::vector<uint8_t> touched_flag;  // width entries

  explicit CrfGradient(uint32_t width)
      : emission(static_cast<size_t>(width) * kCrfLabels, 0.0),
        touched_flag(width, 0) {}

  void clear_sparse() {
    for (uint32_t j : touched) {
      double* row = emission.data() + static_cast<size_t>(j) * kCrfLabels;
      for (int k = 0; k < kCrfLabels; ++k) row[static_cast<size_t>(k)] = 0.0;
      touched_flag[j] = 0;
    }
    touched.clear();
    emission_bias.fill(0.0);
    for (auto& row : transition) row.fill(0.0);
    start.fill(0.0);
    stop.fill(0.0);
  }
};

namespace detail {

inline void validate_sequence(const CrfSequence& seq, uint32_t width) {
  if (seq.features.empty()) throw ValidationError("crf: empty sequence");
  const size_t L = seq.features.size();
  if (seq.gold.size() != L)
    throw ValidationError("crf: gold length does not match sequence length");
  if (seq.mask.size() != L)
    throw ValidationError("crf: mask length does not match sequence length");
  if (!seq.supervised.empty() && seq.supervised.size() != L)
    throw ValidationError("crf: supervised length does not match sequence length");
  for (const FeatureVector& x : seq.features) check_example(x, width);
  for (size_t t = 0; t < L; ++t) {
    if (seq.gold[t] < 0 || seq.gold[t] >= kCrfLabels)
      throw ValidationError("crf: gold label out of range");
    bool sup = seq.supervised.empty() || seq.supervised[t];
    if (sup && !seq.mask.is_allowed(t, seq.gold[t]))
      throw ValidationError("crf: gold label forbidden by mask at position " +
                            std::to_string(t));
  }
}

// Clamped mask: supervised positions pinned to gold, others free.
inline LabelMask clamped_mask(const CrfSequence& seq) {
  LabelMask m = seq.mask;
  for (size_t t = 0; t < m.size(); ++t) {
    bool sup = seq.supervised.empty() || seq.supervised[t];
    if (sup) m.allowed[t] = static_cast<uint8_t>(1u << seq.gold[t]);
  }
  return m;
}

// Negative marginal log-likelihood of one sequence and (optionally) its
// parameter gradient scaled by coef: expected counts under the free lattice
// minus expected counts under the gold-clamped lattice.
inline double seq_nll_grad(const double* w,
                           const std::array<double, kCrfLabels>& bias,
                           double scale, const CrfModel& tables,
                           const CrfSequence& seq, CrfGradient* grad,
                           double coef) {
  CrfEmissions em = scaled_emissions(w, bias, scale, seq.features);
  CrfPosteriors free_post = lattice_posteriors(em, tables, seq.mask);
  CrfPosteriors clamp_post = lattice_posteriors(em, tables, clamped_mask(seq));
  double nll = free_post.log_z - clamp_post.log_z;
  if (!grad) return nll;

  const size_t L = em.size();
  for (size_t t = 0; t < L; ++t) {
    std::array<double, kCrfLabels> d;
    for (int k = 0; k < kCrfLabels; ++k)
      d[static_cast<size_t>(k)] =
          coef * (free_post.unary[t][static_cast<size_t>(k)] -
                  clamp_post.unary[t][static_cast<size_t>(k)]);
    for (int k = 0; k < kCrfLabels; ++k)
      grad->emission_bias[static_cast<size_t>(k)] += d[static_cast<size_t>(k)];
    for (const FeatureEntry& e : seq.features[t].entries) {
      double* row = grad->emission.data() + static_cast<size_t>(e.index) * kCrfLabels;
      if (!grad->touched_flag[e.index]) {
        grad->touched_flag[e.index] = 1;
        grad->touched.push_back(e.index);
      }
      for (int k = 0; k < kCrfLabels; ++k)
        row[static_cast<size_t>(k)] +=
            d[static_cast<size_t>(k)] * static_cast<double>(e.value);
    }
    if (t == 0)
      for (int k = 0; k < kCrfLabels; ++k)
        grad->start[static_cast<size_t>(k)] += d[static_cast<size_t>(k)];
    if (t + 1 == L)
      for (int k = 0; k < kCrfLabels; ++k)
        grad->stop[static_cast<size_t>(k)] += d[static_cast<size_t>(k)];
  }
  for (size_t t = 0; t + 1 < L; ++t)
    for (int j = 0; j < kCrfLabels; ++j)
      for (int k = 0; k < kCrfLabels; ++k)
        grad->transition[static_cast<size_t>(j)][static_cast<size_t>(k)] +=
            coef * (free_post.pairwise[t][static_cast<size_t>(j)][static_cast<size_t>(k)] -
                    clamp_post.pairwise[t][static_cast<size_t>(j)][static_cast<size_t>(k)]);
  return nll;
}

}  // namespace detail

inline double crf_nll(const CrfModel& m, const CrfSequence& seq) {
  detail::validate_sequence(seq, m.width);
  CrfEmissions em = crf_emissions(m, seq.features);
  double free_z = lattice_log_partition(em, m, seq.mask);
  double clamp_z = lattice_log_partition(em, m, detail::clamped_mask(seq));
  return free_z - clamp_z;
}

inline double crf_nll_grad(const CrfModel& m, const CrfSequence& seq,
                           CrfGradient& grad, double coef = 1.0) {
  detail::validate_sequence(seq, m.width);
  return detail::seq_nll_grad(m.emission.data(), m.emission_bias, 1.0, m, seq,
                              &grad, coef);
}

// Mean nll + (l2/2)(||emission||^2 + ||transition||^2); emission bias and the
// boundary potentials are unregularized, mirroring the classifier objective.
inline double crf_objective(const CrfModel& m,
                            std::span<const CrfSequence> seqs, double l2) {
  if (seqs.empty()) throw ValidationError("crf: empty training set");
  double loss = 0.0;
  for (const CrfSequence& s : seqs) loss += crf_nll(m, s);
  loss /= static_cast<double>(seqs.size());
  double reg = 0.0;
  for (double v : m.emission) reg += v * v;
  for (const auto& row : m.transition)
    for (double v : row) reg += v * v;
  return loss + 0.5 * l2 * reg;
}

inline std::vector<int> crf_viterbi(const CrfModel& m,
                                    std::span<const FeatureVector> feats,
                                    const LabelMask& mask) {
  return lattice_viterbi(crf_emissions(m, feats), m, mask);
}

// Seeded mini-batch training of the marginal-likelihood objective. Emission
// weight decay runs through a scalar (as in train_softmax) so each step costs
// only the touched feature rows.
inline CrfModel train_crf(std::span<const CrfSequence> seqs,
                          const OptimConfig& optim) {
  optim.validate();
  if (seqs.empty()) throw ValidationError("crf: empty training set");
  const uint32_t width = seqs[0].features[0].width;
  for (const CrfSequence& s : seqs) detail::validate_sequence(s, width);

  CrfModel m;
  m.width = width;
  m.emission.assign(static_cast<size_t>(width) * kCrfLabels, 0.0);
  double scale = 1.0;

  CrfGradient grad(width);
  Rng rng(optim.seed);
  std::vector<size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t B = static_cast<size_t>(optim.batch_size);
  const double lr = optim.learning_rate;
  const double decay = 1.0 - lr * optim.l2;

  for (int epoch = 0; epoch < optim.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t begin = 0; begin < seqs.size(); begin += B) {
      size_t count = std::min(B, seqs.size() - begin);
      grad.clear_sparse();
      for (size_t i = 0; i < count; ++i)
        detail::seq_nll_grad(m.emission.data(), m.emission_bias, scale, m,
                             seqs[order[begin + i]], &grad,
                             1.0 / static_cast<double>(count));
      scale *= decay;
      double wstep = lr / scale;
      for (uint32_t j : grad.touched) {
        double* row = m.emission.data() + static_cast<size_t>(j) * kCrfLabels;
        const double* g = grad.emission.data() + static_cast<size_t>(j) * kCrfLabels;
        for (int k = 0; k < kCrfLabels; ++k)
          row[static_cast<size_t>(k)] -= wstep * g[static_cast<size_t>(k)];
      }
      for (int k = 0; k < kCrfLabels; ++k) {
        m.emission_bias[static_cast<size_t>(k)] -=
            lr * grad.emission_bias[static_cast<size_t>(k)];
        m.start[static_cast<size_t>(k)] -= lr * grad.start[static_cast<size_t>(k)];
        m.stop[static_cast<size_t>(k)] -= lr * grad.stop[static_cast<size_t>(k)];
      }
      for (int j = 0; j < kCrfLabels; ++j)
        for (int k = 0; k < kCrfLabels; ++k) {
          double& tv = m.transition[static_cast<size_t>(j)][static_cast<size_t>(k)];
          tv = tv * decay - lr * grad.transition[static_cast<size_t>(j)][static_cast<size_t>(k)];
        }
      if (scale < 1e-6) {
        for (double& wi : m.emission) wi *= scale;
        scale = 1.0;
      }
    }
  }
  if (scale != 1.0)
    for (double& wi : m.emission) wi *= scale;
  m.final_train_loss = crf_objective(m, seqs, optim.l2);
  return m;
}

}  // namespace discq
