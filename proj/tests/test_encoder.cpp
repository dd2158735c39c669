#include <gtest/gtest.h>

#include <cmath>

#include "discq/encoder.hpp"
#include "support/helpers.hpp"

using namespace discq;

namespace {

EncoderConfig small_cfg() {
  EncoderConfig cfg;
  cfg.dim = 1u << 10;
  return cfg;
}

TEST(Tokenize, AlphanumericRunsLowercased) {
  EXPECT_EQ(tokenize("Why? Read it, NOW!", true),
            (std::vector<std::string>{"why", "read", "it", "now"}));
  EXPECT_EQ(tokenize("Why", false), (std::vector<std::string>{"Why"}));
  EXPECT_EQ(tokenize("p.42", true), (std::vector<std::string>{"p", "42"}));
  EXPECT_TRUE(tokenize("?!...", true).empty());
}

TEST(Idf, TwoDocumentHandValues) {
  IdfBuilder b(small_cfg());
  b.add_document("the hat");
  b.add_document("the coat");
  IdfTable t = b.finish();
  EXPECT_EQ(t.doc_count, 2u);
  // In both documents: ln(3/3) + 1.
  EXPECT_NEAR(t.value_for("the"), 1.0, 1e-12);
  // In one of two: ln(3/2) + 1.
  EXPECT_NEAR(t.value_for("hat"), std::log(1.5) + 1.0, 1e-12);
  EXPECT_NEAR(t.value_for("the\x1ehat"), std::log(1.5) + 1.0, 1e-12);
  // Unseen n-grams fall back to 1.0.
  EXPECT_DOUBLE_EQ(t.value_for("unseen"), 1.0);
}

TEST(Idf, RepeatsWithinOneDocumentCountOnce) {
  IdfBuilder b(small_cfg());
  b.add_document("hat hat hat");
  b.add_document("coat");
  EXPECT_NEAR(b.finish().value_for("hat"), std::log(1.5) + 1.0, 1e-12);
}

TEST(Idf, EmptyFitThrows) {
  IdfBuilder b(small_cfg());
  EXPECT_THROW(b.finish(), ValidationError);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig cfg;
  cfg.dim = 1000;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.dim = 1u << 10;
  cfg.ngram_max = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.ngram_min = 0;
  cfg.ngram_max = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.ngram_min = 2;
  cfg.ngram_max = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Encoder, IdenticalWindowsEncodeBitExact) {
  Transcript tr = testutil::sample_exchange();
  EncoderConfig cfg = small_cfg();
  auto windows = transcript_windows(tr, 64);
  IdfTable idf = fit_idf(windows, cfg);
  FeatureVector a = encode_window(windows[2], idf, cfg);
  FeatureVector b = encode_window(windows[2], idf, cfg);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.entries.empty());
  EXPECT_EQ(a.width, cfg.feature_width());
}

TEST(Encoder, PrevTurnContentChangesVector) {
  EncoderConfig cfg = small_cfg();
  Transcript tr = testutil::sample_exchange();
  auto windows = transcript_windows(tr, 64);
  IdfTable idf = fit_idf(windows, cfg);
  ContextWindow w = windows[2];
  FeatureVector a = encode_window(w, idf, cfg);
  w.prev_turn[0].text = "Entirely different lead-in sentence.";
  FeatureVector b = encode_window(w, idf, cfg);
  EXPECT_NE(a, b);
}

TEST(Encoder, SameTextDifferentFieldsHashApart) {
  // The same token contributes different indices as target vs context.
  EncoderConfig cfg = small_cfg();
  std::vector<Sentence> one = {testutil::sent("hat")};
  FeatureVector tgt = encode_field(one, Field::Target, nullptr, cfg);
  FeatureVector prv = encode_field(one, Field::PrevTurn, nullptr, cfg);
  ASSERT_EQ(tgt.entries.size(), 1u);
  ASSERT_EQ(prv.entries.size(), 1u);
  EXPECT_NE(tgt.entries[0].index, prv.entries[0].index);
}

TEST(Encoder, EmptyContextYieldsTargetPlusDenseOnly) {
  EncoderConfig cfg = small_cfg();
  ContextWindow w;
  w.target = testutil::sent("hat");
  w.target_speaker = Speaker::Teacher;
  IdfBuilder b(cfg);
  b.add_document("hat");
  IdfTable idf = b.finish();
  FeatureVector x = encode_window(w, idf, cfg);
  // One hashed unigram plus the teacher indicator; position 0 stays implicit.
  ASSERT_EQ(x.entries.size(), 2u);
  EXPECT_LT(x.entries[0].index, cfg.dim);
  EXPECT_EQ(x.entries[1].index, cfg.dim);
  EXPECT_FLOAT_EQ(x.entries[1].value, 1.0f);
  EXPECT_NEAR(std::abs(x.entries[0].value), 1.0, 1e-6);

  w.target_speaker = Speaker::Student;
  w.position_fraction = 0.5;
  FeatureVector y = encode_window(w, idf, cfg);
  ASSERT_EQ(y.entries.size(), 2u);
  EXPECT_EQ(y.entries[1].index, cfg.dim + 1);
  EXPECT_FLOAT_EQ(y.entries[1].value, 0.5f);
}

TEST(Encoder, FieldsAreUnitNormalized) {
  EncoderConfig cfg = small_cfg();
  std::vector<Sentence> sentences = {testutil::sent("the hat was torn"),
                                     testutil::sent("the coat was fine")};
  FeatureVector x = encode_field(sentences, Field::PrevTurn, nullptr, cfg);
  EXPECT_NEAR(x.l2_norm(), 1.0, 1e-6);
}

TEST(Encoder, EntriesAreSortedUnique) {
  EncoderConfig cfg = small_cfg();
  Transcript tr = testutil::sample_exchange();
  auto windows = transcript_windows(tr, 64);
  IdfTable idf = fit_idf(windows, cfg);
  FeatureVector x = encode_window(windows[2], idf, cfg);
  for (size_t i = 1; i < x.entries.size(); ++i)
    EXPECT_LT(x.entries[i - 1].index, x.entries[i].index);
}

TEST(Encoder, TranscriptBagIsUnitNormWithoutDenseSlots) {
  EncoderConfig cfg = small_cfg();
  Transcript tr = testutil::sample_exchange();
  FeatureVector x = encode_transcript_bag(tr, cfg);
  EXPECT_EQ(x.width, cfg.dim);
  EXPECT_NEAR(x.l2_norm(), 1.0, 1e-6);
  for (const auto& e : x.entries) EXPECT_LT(e.index, cfg.dim);
}

}  // namespace
