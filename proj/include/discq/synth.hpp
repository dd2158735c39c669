#pragma once

#include <array>
#include <string>
#include <vector>

#include "atm_pipeline.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "encoder.hpp"

namespace discq {

// Affine count -> raw score map for one rubric.
struct ScoreMap {
  double alpha = 1.0;
  double beta = 1.0;

  bool operator==(const ScoreMap&) const = default;
};

// Synthetic classroom-discussion generator. Produces a corpus with the same
// shape as real annotated transcripts: alternating-biased teacher/student
// turns, short multi-sentence runs of focal codes at configurable per-code
// sentence rates, StrongLink occurring only right after another student focal
// sentence, disjoint per-code lexicons mixed into filler text with
// probability lambda (the separability dial), and rubric scores derived from
// merged instance counts through an affine map plus Gaussian noise.
struct SynthConfig {
  int n_transcripts = 90;
  int turns_min = 150;
  int turns_max = 250;
  int sentences_min = 1;
  int sentences_max = 4;
  double alternate_prob = 0.75;  // chance the speaker flips between turns

  // Sentence-level occurrence rates per focal code (recap, press, link,
  // evidence, explanation). Defaults mirror a heavily imbalanced reference
  // annotation distribution over 54479 sentences.
  std::array<double, kNumFocalCodes> code_rates = {
      75.0 / 54479.0, 927.0 / 54479.0, 101.0 / 54479.0, 403.0 / 54479.0,
      286.0 / 54479.0};
  int run_min = 1;  // focal run length range (sentences, clipped at turn end)
  int run_max = 3;

  double lambda_sep = 0.9;  // probability a focal sentence carries its lexicon token
  std::array<double, kNumFocalCodes> lambda_per_code = {-1.0, -1.0, -1.0, -1.0,
                                                        -1.0};  // <0: use lambda_sep
  // Lexicon token types per code, roughly proportional to code frequency so
  // each type recurs often enough for a linear model to pick it up.
  std::array<int, kNumFocalCodes> lexicon_size = {1, 8, 2, 5, 4};
  int filler_vocab = 400;
  int filler_min = 3;
  int filler_max = 9;

  // Log-sigma of a per-transcript rate multiplier (normalized to mean one
  // across the corpus). Zero makes every transcript statistically identical,
  // which flattens the count spread rubric scores are derived from.
  double quality_sigma = 0.6;

  std::array<ScoreMap, kNumRubrics> score_map = {
      ScoreMap{1.16, 1.0},  // S1 <- recap instances
      ScoreMap{0.24, 2.5},  // S2 <- press instances
      ScoreMap{1.2, 0.7},   // S3 <- link instances
      ScoreMap{0.2, 1.6},   // S4 <- evidence + explanation instances
  };
  double sigma = 0.5;  // score noise

  uint64_t seed = 17;

  bool operator==(const SynthConfig&) const = default;

  void validate() const {
    if (n_transcripts < 1) throw ConfigError("synth: n_transcripts must be >= 1");
    if (turns_min < 1 || turns_max < turns_min)
      throw ConfigError("synth: bad turns range");
    if (sentences_min < 1 || sentences_max < sentences_min)
      throw ConfigError("synth: bad sentences range");
    if (run_min < 1 || run_max < run_min) throw ConfigError("synth: bad run range");
    if (alternate_prob < 0.0 || alternate_prob > 1.0)
      throw ConfigError("synth: alternate_prob must be in [0,1]");
    double sum = 0.0;
    for (double r : code_rates) {
      if (r < 0.0) throw ConfigError("synth: code rates must be non-negative");
      sum += r;
    }
    if (sum > 1.0) throw ConfigError("synth: code rates must sum to <= 1");
    if (lambda_sep < 0.0 || lambda_sep > 1.0)
      throw ConfigError("synth: lambda must be in [0,1]");
    for (double l : lambda_per_code)
      if (l > 1.0) throw ConfigError("synth: per-code lambda must be <= 1");
    for (int n : lexicon_size)
      if (n < 1) throw ConfigError("synth: lexicon_size must be >= 1");
    if (filler_vocab < 1) throw ConfigError("synth: filler_vocab must be >= 1");
    if (filler_min < 1 || filler_max < filler_min)
      throw ConfigError("synth: bad filler length range");
    if (quality_sigma < 0.0)
      throw ConfigError("synth: quality_sigma must be non-negative");
    if (sigma < 0.0) throw ConfigError("synth: sigma must be non-negative");
    if (code_rates[static_cast<size_t>(AtmCode::StrongLink)] > 0.0 &&
        code_rates[static_cast<size_t>(AtmCode::StrongEvidence)] +
                code_rates[static_cast<size_t>(AtmCode::StrongExplanation)] <=
            0.0)
      throw ConfigError(
          "synth: a nonzero link rate needs nonzero evidence/explanation rates");
  }

  double lambda_for(AtmCode c) const {
    double l = lambda_per_code[static_cast<size_t>(c)];
    return l >= 0.0 ? l : lambda_sep;
  }
};

// Disjoint lexicon token prefixes, one per focal code. Tokens are plain
// alphanumeric so they survive tokenization as single tokens.
inline constexpr std::array<const char*, kNumFocalCodes> kLexPrefixes = {
    "recaplex", "presslex", "slinklex", "sevidlex", "sexpllex"};

namespace detail {

struct TurnSkeleton {
  Speaker speaker;
  int size;
};

// Mean realized run length under the configured turn shapes: a run is
// clipped at its turn's end, so the realized mean sits below the drawn mean.
// Positions within a turn are uniform, which fixes the remaining-length
// distribution given the size range.
inline double mean_realized_run(int sentences_min, int sentences_max,
                                int run_min, int run_max) {
  double e_real = 0.0;
  double avg_size = (sentences_min + sentences_max) / 2.0;
  int n_sizes = sentences_max - sentences_min + 1;
  int n_lens = run_max - run_min + 1;
  for (int r = 1; r <= sentences_max; ++r) {
    int sizes_ge = 0;
    for (int s = sentences_min; s <= sentences_max; ++s)
      if (s >= r) ++sizes_ge;
    double pr = static_cast<double>(sizes_ge) / n_sizes / avg_size;
    for (int l = run_min; l <= run_max; ++l)
      e_real += pr / n_lens * std::min(l, r);
  }
  return e_real;
}

}  // namespace detail

inline Corpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Corpus corpus;

  const double e_real = detail::mean_realized_run(
      cfg.sentences_min, cfg.sentences_max, cfg.run_min, cfg.run_max);

  // Per-transcript quality multipliers scale every code rate up or down for
  // that transcript. Normalizing them to mean one keeps corpus-level rates
  // centered; the spread is what gives rubric scores a learnable count signal.
  std::vector<double> quality(static_cast<size_t>(cfg.n_transcripts), 1.0);
  if (cfg.quality_sigma > 0.0) {
    Rng qrng(derive_seed(cfg.seed, "quality"));
    double sum = 0.0;
    for (double& q : quality) {
      q = std::exp(qrng.normal(0.0, cfg.quality_sigma));
      sum += q;
    }
    for (double& q : quality) q *= cfg.n_transcripts / sum;
  }

  // Fractional quota remainders carried across transcripts (largest-remainder
  // rounding), so corpus-level code totals track the configured rates within
  // one run start per code even for the rarest codes.
  std::array<double, kNumFocalCodes> carry{};

  for (int tn = 0; tn < cfg.n_transcripts; ++tn) {
    // Isolated stream per transcript, so corpora differ only locally when a
    // config change touches one stage.
    Rng rng(derive_seed(cfg.seed, "transcript", static_cast<uint64_t>(tn)));

    // Turn skeleton first: speakers and sizes, independent of codes.
    int n_turns = rng.uniform_int(cfg.turns_min, cfg.turns_max);
    std::vector<detail::TurnSkeleton> skel(static_cast<size_t>(n_turns));
    Speaker cur = rng.bernoulli(0.5) ? Speaker::Teacher : Speaker::Student;
    int n_total = 0;
    for (int t = 0; t < n_turns; ++t) {
      if (t > 0 && rng.bernoulli(cfg.alternate_prob))
        cur = cur == Speaker::Teacher ? Speaker::Student : Speaker::Teacher;
      int size = rng.uniform_int(cfg.sentences_min, cfg.sentences_max);
      skel[static_cast<size_t>(t)] = {cur, size};
      n_total += size;
    }

    // Quota placement: each code gets a target number of run starts (expected
    // sentences / expected realized run length, remainder carried between
    // transcripts), so corpus-level rates concentrate tightly around the
    // configured targets for any seed. Runs start at random free positions of
    // the right speaker and extend right, clipped by the turn end and earlier
    // runs.
    std::vector<std::vector<AtmCode>> codes(skel.size());
    for (size_t t = 0; t < skel.size(); ++t)
      codes[t].assign(static_cast<size_t>(skel[t].size), AtmCode::Others);
    const double q_mult = quality[static_cast<size_t>(tn)];
    auto quota = [&](AtmCode c) {
      double expect = cfg.code_rates[static_cast<size_t>(c)] * q_mult *
                      static_cast<double>(n_total) / e_real;
      // Link runs attach behind existing runs where turn room is scarcer, so
      // they get clipped ~12% harder than free-position runs under the
      // default geometry; the quota compensates.
      if (c == AtmCode::StrongLink) expect /= 0.88;
      double& resid = carry[static_cast<size_t>(c)];
      double total = expect + resid;
      double whole = std::floor(total);
      resid = total - whole;
      return static_cast<int>(whole);
    };
    auto place_run = [&](AtmCode code, size_t t, int i) {
      int len = rng.uniform_int(cfg.run_min, cfg.run_max);
      int end = std::min(skel[t].size, i + len);
      for (; i < end && codes[t][static_cast<size_t>(i)] == AtmCode::Others; ++i)
        codes[t][static_cast<size_t>(i)] = code;
    };

    // Primary runs: recap/press on teacher turns, evidence/explanation on
    // student turns, at uniformly random free positions.
    for (AtmCode code : {AtmCode::Recap, AtmCode::Press,
                         AtmCode::StrongEvidence, AtmCode::StrongExplanation}) {
      Speaker spk = *code_speaker(code);
      for (int k = quota(code); k > 0; --k) {
        std::vector<std::pair<size_t, int>> free;
        for (size_t t = 0; t < skel.size(); ++t) {
          if (skel[t].speaker != spk) continue;
          for (int i = 0; i < skel[t].size; ++i)
            if (codes[t][static_cast<size_t>(i)] == AtmCode::Others)
              free.push_back({t, i});
        }
        if (free.empty()) break;
        auto [t, i] = free[static_cast<size_t>(rng.below(free.size()))];
        place_run(code, t, i);
      }
    }

    // Link runs attach right after an existing student focal sentence:
    // either the next free position inside the same turn, or the first
    // position of an immediately following student turn. Chains happen when
    // several links pick the same neighborhood.
    auto student_focal = [&](size_t t, int i) {
      AtmCode c = codes[t][static_cast<size_t>(i)];
      return is_focal(c) && code_speaker(c) == Speaker::Student;
    };
    for (int k = quota(AtmCode::StrongLink); k > 0; --k) {
      std::vector<std::pair<size_t, int>> attach;
      for (size_t t = 0; t < skel.size(); ++t)
        for (int i = 0; i < skel[t].size; ++i) {
          if (codes[t][static_cast<size_t>(i)] != AtmCode::Others) continue;
          bool after_focal =
              (i > 0 && student_focal(t, i - 1)) ||
              (i == 0 && t > 0 && skel[t].speaker == Speaker::Student &&
               student_focal(t - 1, skel[t - 1].size - 1));
          if (after_focal) attach.push_back({t, i});
        }
      if (attach.empty()) break;
      auto [t, i] = attach[static_cast<size_t>(rng.below(attach.size()))];
      place_run(AtmCode::StrongLink, t, i);
    }

    // Text: filler tokens, plus the code's lexicon token with prob lambda.
    Transcript tr;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%04d", tn + 1);
    tr.id = idbuf;
    for (size_t t = 0; t < skel.size(); ++t) {
      Turn turn;
      turn.speaker = skel[t].speaker;
      for (int si = 0; si < skel[t].size; ++si) {
        Sentence s;
        s.turn_index = static_cast<int>(t);
        s.sentence_index = si;
        AtmCode code = codes[t][static_cast<size_t>(si)];
        s.gold_code = code;
        int n_fill = rng.uniform_int(cfg.filler_min, cfg.filler_max);
        std::vector<std::string> toks;
        toks.reserve(static_cast<size_t>(n_fill) + 1);
        for (int w = 0; w < n_fill; ++w)
          toks.push_back(
              "filler" +
              std::to_string(rng.below(static_cast<uint64_t>(cfg.filler_vocab))));
        if (is_focal(code) && rng.bernoulli(cfg.lambda_for(code))) {
          std::string lex =
              std::string(kLexPrefixes[static_cast<size_t>(code)]) +
              std::to_string(rng.below(static_cast<uint64_t>(
                  cfg.lexicon_size[static_cast<size_t>(code)])));
          size_t at = static_cast<size_t>(rng.below(toks.size() + 1));
          toks.insert(toks.begin() + static_cast<long>(at), std::move(lex));
        }
        for (size_t w = 0; w < toks.size(); ++w) {
          if (w) s.text += ' ';
          s.text += toks[w];
        }
        s.text += '.';
        turn.sentences.push_back(std::move(s));
      }
      tr.turns.push_back(std::move(turn));
    }

    // Rubric scores from merged instance counts. The noise draw happens even
    // at sigma == 0 so the random stream does not depend on sigma.
    std::vector<int> sizes;
    sizes.reserve(skel.size());
    for (const auto& ts : skel) sizes.push_back(ts.size);
    std::vector<AtmCode> flat;
    flat.reserve(static_cast<size_t>(n_total));
    for (const auto& row : codes) flat.insert(flat.end(), row.begin(), row.end());
    auto counts = count_codes(sizes, flat, MergeMode::WithinTurn);
    for (int r = 0; r < kNumRubrics; ++r) {
      IqaRubric rubric = static_cast<IqaRubric>(r);
      int total = 0;
      for (AtmCode c : rubric_relevant_codes(rubric))
        total += counts[static_cast<size_t>(c)];
      const ScoreMap& sm = cfg.score_map[static_cast<size_t>(r)];
      double raw = sm.alpha * total + sm.beta + rng.normal(0.0, cfg.sigma);
      long s = std::llround(raw);
      tr.gold_iqa[rubric] = static_cast<int>(
          std::min<long>(kMaxIqaScore, std::max<long>(kMinIqaScore, s)));
    }
    corpus.transcripts.push_back(std::move(tr));
  }
  return corpus;
}

// Lexicon-lookup tagger: the generator's inverse. Perfect on corpora
// generated with lambda = 1; degrades with lambda since unlexicalized focal
// sentences look like filler.
inline AtmCode rule_tag_sentence(std::string_view text) {
  auto toks = tokenize(text, true);
  for (const std::string& tok : toks)
    for (int c = 0; c < kNumFocalCodes; ++c) {
      std::string_view prefix = kLexPrefixes[static_cast<size_t>(c)];
      if (tok.size() > prefix.size() && tok.compare(0, prefix.size(), prefix) == 0)
        return static_cast<AtmCode>(c);
    }
  return AtmCode::Others;
}

inline std::vector<AtmCode> rule_tag(const Transcript& tr) {
  std::vector<AtmCode> out;
  out.reserve(static_cast<size_t>(tr.sentence_count()));
  for_each_sentence(tr, [&](int, int, const Sentence& s, Speaker) {
    out.push_back(rule_tag_sentence(s.text));
  });
  return out;
}

}  // namespace discq
