#include <gtest/gtest.h>

#include <set>

#include "discq/atm_pipeline.hpp"
#include "discq/metrics.hpp"
#include "discq/synth.hpp"
#include "support/helpers.hpp"

using namespace discq;

namespace {

SynthConfig small_config(uint64_t seed) {
  SynthConfig cfg;
  cfg.n_transcripts = 12;
  cfg.turns_min = 60;
  cfg.turns_max = 90;
  cfg.seed = seed;
  return cfg;
}

TEST(Synth, DefaultCorpusTracksConfiguredRates) {
  SynthConfig cfg;  // full default size
  Corpus c = generate_corpus(cfg);
  ASSERT_EQ(c.transcripts.size(), static_cast<size_t>(cfg.n_transcripts));

  std::array<long, kNumFocalCodes> counts{};
  long total = 0;
  for (const Transcript& tr : c.transcripts) {
    for (AtmCode code : gold_codes_flat(tr)) {
      ++total;
      if (is_focal(code)) ++counts[static_cast<size_t>(code)];
    }
  }
  for (size_t k = 0; k < kNumFocalCodes; ++k) {
    double expected = cfg.code_rates[k] * static_cast<double>(total);
    double actual = static_cast<double>(counts[k]);
    EXPECT_GT(actual, 0.0) << "code " << k;
    EXPECT_LT(std::abs(actual - expected) / expected, 0.2)
        << "code " << k << ": " << actual << " vs " << expected;
  }
}

TEST(Synth, GoldScoresCoverTheScale) {
  Corpus c = generate_corpus(SynthConfig{});
  std::array<std::set<int>, kNumRubrics> seen;
  for (const Transcript& tr : c.transcripts) {
    ASSERT_TRUE(tr.has_full_iqa());
    for (const auto& [r, v] : tr.gold_iqa) {
      EXPECT_GE(v, 1);
      EXPECT_LE(v, 4);
      seen[static_cast<size_t>(r)].insert(v);
    }
  }
  for (const auto& s : seen) EXPECT_GE(s.size(), 2u);
}

TEST(Synth, SameSeedIsByteIdentical) {
  SynthConfig cfg = small_config(21);
  std::string a = serialize_corpus(generate_corpus(cfg));
  std::string b = serialize_corpus(generate_corpus(cfg));
  EXPECT_EQ(a, b);
  cfg.seed = 22;
  std::string d = serialize_corpus(generate_corpus(cfg));
  EXPECT_NE(a, d);
}

TEST(Synth, SpeakerConstraintsHoldEverywhere) {
  Corpus c = generate_corpus(small_config(5));
  for (const Transcript& tr : c.transcripts)
    for (const Turn& turn : tr.turns)
      for (const Sentence& s : turn.sentences) {
        ASSERT_TRUE(s.gold_code.has_value());
        if (auto sp = code_speaker(*s.gold_code))
          EXPECT_EQ(*sp, turn.speaker);
      }
}

TEST(Synth, LinkRunsFollowStudentFocalTalk) {
  // A link move refers back to another student's contribution, so the
  // generator only opens a link run right after a student focal sentence.
  Corpus c = generate_corpus(small_config(9));
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> flat = gold_codes_flat(tr);
    std::vector<Speaker> sp = speakers_flat(tr);
    for (size_t i = 0; i < flat.size(); ++i) {
      if (flat[i] != AtmCode::StrongLink) continue;
      if (i > 0 && flat[i - 1] == AtmCode::StrongLink) continue;  // run body
      ASSERT_GT(i, 0u);
      EXPECT_EQ(sp[i - 1], Speaker::Student);
      EXPECT_TRUE(is_focal(flat[i - 1]))
          << "link run at " << i << " follows " << atm_code_name(flat[i - 1]);
    }
  }
}

TEST(Synth, FullLexiconSeparationMakesRuleTaggerExact) {
  SynthConfig cfg = small_config(13);
  cfg.lambda_sep = 1.0;
  cfg.lambda_per_code.fill(1.0);
  Corpus c = generate_corpus(cfg);
  std::vector<AtmCode> gold, pred;
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> g = gold_codes_flat(tr);
    std::vector<AtmCode> p = rule_tag(tr);
    gold.insert(gold.end(), g.begin(), g.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  EXPECT_EQ(gold, pred);
  EXPECT_DOUBLE_EQ(macro_f1_codes(gold, pred), 1.0);
}

TEST(Synth, PartialSeparationLeavesRuleTaggerMisses) {
  SynthConfig cfg = small_config(13);
  cfg.lambda_sep = 0.5;
  Corpus c = generate_corpus(cfg);
  long focal = 0, tagged = 0;
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> g = gold_codes_flat(tr);
    std::vector<AtmCode> p = rule_tag(tr);
    for (size_t i = 0; i < g.size(); ++i) {
      if (!is_focal(g[i])) {
        // Filler text never contains lexicon tokens, so no false positives.
        EXPECT_EQ(p[i], AtmCode::Others);
        continue;
      }
      ++focal;
      if (p[i] == g[i]) ++tagged;
      // A lexicon hit is always the right code; misses collapse to others.
      EXPECT_TRUE(p[i] == g[i] || p[i] == AtmCode::Others);
    }
  }
  double recall = static_cast<double>(tagged) / static_cast<double>(focal);
  EXPECT_GT(recall, 0.3);
  EXPECT_LT(recall, 0.7);
}

TEST(Synth, ZeroSeparationErasesLexicalSignal) {
  SynthConfig cfg = small_config(31);
  cfg.lambda_sep = 0.0;
  Corpus c = generate_corpus(cfg);
  for (const Transcript& tr : c.transcripts)
    for (AtmCode p : rule_tag(tr)) EXPECT_EQ(p, AtmCode::Others);
}

TEST(Synth, RuleTaggerReadsLexiconTokens) {
  EXPECT_EQ(rule_tag_sentence("well presslex3 then."), AtmCode::Press);
  EXPECT_EQ(rule_tag_sentence("recaplex0 to start"), AtmCode::Recap);
  EXPECT_EQ(rule_tag_sentence("see slinklex1 here"), AtmCode::StrongLink);
  EXPECT_EQ(rule_tag_sentence("sevidlex4 on page two"),
            AtmCode::StrongEvidence);
  EXPECT_EQ(rule_tag_sentence("sexpllex2 because of this"),
            AtmCode::StrongExplanation);
  EXPECT_EQ(rule_tag_sentence("plain filler words"), AtmCode::Others);
}

TEST(Synth, MetaCarriesGeneratorTag) {
  // Serialized synthetic corpora parse back identically.
  Corpus c = generate_corpus(small_config(3));
  std::string text = serialize_corpus(c, {{"generator", "synth"}});
  Corpus back = parse_corpus_text(text);
  EXPECT_EQ(back.transcripts.size(), c.transcripts.size());
  EXPECT_EQ(serialize_corpus(back, {{"generator", "synth"}}), text);
}

TEST(Synth, ValidatesConfig) {
  SynthConfig cfg;
  cfg.n_transcripts = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.turns_max = cfg.turns_min - 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.alternate_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.code_rates = {0.5, 0.3, 0.3, 0.1, 0.1};  // sums past one
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.lambda_sep = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.quality_sigma = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.run_max = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  EXPECT_NO_THROW(cfg.validate());
}

}  // namespace
