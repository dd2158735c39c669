#include <gtest/gtest.h>

#include <sstream>

#include "discq/corpus.hpp"
#include "support/helpers.hpp"

using namespace discq;

namespace {

const char* kExchangeJson = R"({
  "transcripts": [
    {
      "id": "t1",
      "iqa": {"S1": 2, "S2": 3, "S3": 1, "S4": 4},
      "turns": [
        {"speaker": "teacher", "sentences": [
          {"text": "I hear you saying the hat mattered."},
          {"text": "Where did you get that from the text?", "atm": "press"}
        ]},
        {"speaker": "student", "sentences": [
          {"text": "On page two it says the hat was torn.",
           "atm": "strong_evidence"}
        ]}
      ]
    }
  ]
})";

TEST(Corpus, ParsesAnnotatedExchange) {
  Corpus c = parse_corpus_text(kExchangeJson);
  ASSERT_EQ(c.transcripts.size(), 1u);
  const Transcript& tr = c.transcripts[0];
  EXPECT_EQ(tr.id, "t1");
  ASSERT_EQ(tr.turns.size(), 2u);
  EXPECT_EQ(tr.sentence_count(), 3);
  EXPECT_EQ(tr.turns[0].speaker, Speaker::Teacher);
  EXPECT_EQ(tr.turns[1].speaker, Speaker::Student);
  EXPECT_FALSE(tr.turns[0].sentences[0].gold_code.has_value());
  EXPECT_EQ(tr.turns[0].sentences[1].gold_code, AtmCode::Press);
  EXPECT_EQ(tr.turns[1].sentences[0].gold_code, AtmCode::StrongEvidence);
  EXPECT_EQ(tr.turns[1].sentences[0].turn_index, 1);
  EXPECT_EQ(tr.turns[0].sentences[1].sentence_index, 1);
  ASSERT_TRUE(tr.has_full_iqa());
  EXPECT_EQ(tr.gold_iqa.at(IqaRubric::S2), 3);
}

TEST(Corpus, RejectsEmptyCorpus) {
  try {
    parse_corpus_text(R"({"transcripts": []})");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(Corpus, RejectsCodeForWrongSpeaker) {
  const char* bad = R"({
    "transcripts": [{"id": "t1", "turns": [
      {"speaker": "student", "sentences": [{"text": "ok.", "atm": "press"}]}
    ]}]
  })";
  try {
    parse_corpus_text(bad);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("'press'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'student'"), std::string::npos) << msg;
  }
}

TEST(Corpus, RejectsUnknownKeys) {
  const char* bad = R"({
    "transcripts": [{"id": "t1", "bogus": 1, "turns": [
      {"speaker": "teacher", "sentences": [{"text": "ok."}]}
    ]}]
  })";
  EXPECT_THROW(parse_corpus_text(bad), ValidationError);
}

TEST(Corpus, RejectsDuplicateTranscriptIds) {
  const char* bad = R"({
    "transcripts": [
      {"id": "t1", "turns": [{"speaker": "teacher", "text": "Hi."}]},
      {"id": "t1", "turns": [{"speaker": "teacher", "text": "Hi."}]}
    ]
  })";
  EXPECT_THROW(parse_corpus_text(bad), ValidationError);
}

TEST(Corpus, RejectsIqaOutOfRange) {
  const char* bad = R"({
    "transcripts": [{"id": "t1", "iqa": {"S1": 5},
      "turns": [{"speaker": "teacher", "text": "Hi."}]}]
  })";
  EXPECT_THROW(parse_corpus_text(bad), ValidationError);
}

TEST(Segmentation, SplitsOnTerminatorPlusWhitespace) {
  EXPECT_EQ(segment_turn_text("Why? Read it."),
            (std::vector<std::string>{"Why?", "Read it."}));
}

TEST(Segmentation, KeepsAbbreviationStyleSplit) {
  // Terminator + whitespace always splits; abbreviations are not special.
  EXPECT_EQ(segment_turn_text("Mr. Smith spoke"),
            (std::vector<std::string>{"Mr.", "Smith spoke"}));
}

TEST(Segmentation, NoTerminatorIsIdentity) {
  EXPECT_EQ(segment_turn_text("no terminator"),
            (std::vector<std::string>{"no terminator"}));
}

TEST(Segmentation, TurnTextFormParsesIntoSentences) {
  const char* doc = R"({
    "transcripts": [{"id": "t1", "turns": [
      {"speaker": "teacher", "text": "Why? Read it."}
    ]}]
  })";
  Corpus c = parse_corpus_text(doc);
  ASSERT_EQ(c.transcripts[0].turns[0].sentences.size(), 2u);
  EXPECT_EQ(c.transcripts[0].turns[0].sentences[0].text, "Why?");
  EXPECT_EQ(c.transcripts[0].turns[0].sentences[1].text, "Read it.");
}

TEST(ContextWindow, StudentSentenceSeesPriorTeacherTurn) {
  Transcript tr = testutil::sample_exchange();
  ContextWindow w = build_context_window(tr, 1, 0, 64);
  EXPECT_EQ(w.target.text, "On page two it says the hat was torn.");
  EXPECT_EQ(w.target_speaker, Speaker::Student);
  EXPECT_TRUE(w.same_turn_prefix.empty());
  ASSERT_EQ(w.prev_turn.size(), 2u);
  EXPECT_EQ(w.prev_turn[0].text, "I hear you saying the hat mattered.");
  EXPECT_EQ(w.prev_turn[1].text, "Where did you get that from the text?");
  EXPECT_DOUBLE_EQ(w.position_fraction, 0.0);
}

TEST(ContextWindow, FirstSentenceHasEmptyContext) {
  Transcript tr = testutil::sample_exchange();
  ContextWindow w = build_context_window(tr, 0, 0, 64);
  EXPECT_TRUE(w.same_turn_prefix.empty());
  EXPECT_TRUE(w.prev_turn.empty());
  EXPECT_EQ(w.target_speaker, Speaker::Teacher);
}

TEST(ContextWindow, PositionFractionSpansTurn) {
  Transcript tr = testutil::sample_exchange();
  EXPECT_DOUBLE_EQ(build_context_window(tr, 0, 0, 64).position_fraction, 0.0);
  EXPECT_DOUBLE_EQ(build_context_window(tr, 0, 1, 64).position_fraction, 1.0);
}

TEST(ContextWindow, CapDropsOldestSentencesFirst) {
  std::vector<Sentence> prev;
  for (int i = 0; i < 12; ++i)
    prev.push_back(testutil::sent("prev " + std::to_string(i) + "."));
  Transcript tr = testutil::transcript(
      "t1", {testutil::turn(Speaker::Teacher, prev),
             testutil::turn(Speaker::Student, {testutil::sent("mine.")})});
  ContextWindow w = build_context_window(tr, 1, 0, 10);
  ASSERT_EQ(w.prev_turn.size(), 10u);
  EXPECT_EQ(w.prev_turn.front().text, "prev 2.");
  EXPECT_EQ(w.prev_turn.back().text, "prev 11.");

  // cap also eats into the same-turn prefix once prev_turn is exhausted.
  Transcript tr2 = testutil::transcript(
      "t2", {testutil::turn(Speaker::Teacher, prev)});
  ContextWindow w2 = build_context_window(tr2, 0, 11, 5);
  EXPECT_TRUE(w2.prev_turn.empty());
  ASSERT_EQ(w2.same_turn_prefix.size(), 5u);
  EXPECT_EQ(w2.same_turn_prefix.front().text, "prev 6.");
}

TEST(ContextWindow, ZeroCapIsTargetOnly) {
  Transcript tr = testutil::sample_exchange();
  ContextWindow w = build_context_window(tr, 1, 0, 0);
  EXPECT_TRUE(w.same_turn_prefix.empty());
  EXPECT_TRUE(w.prev_turn.empty());
}

TEST(Corpus, SerializeParseRoundTripIsByteIdentical) {
  Corpus c = parse_corpus_text(kExchangeJson);
  std::string once = serialize_corpus(c, {{"generator", "test"}});
  Corpus back = parse_corpus_text(once);
  std::string twice = serialize_corpus(back, {{"generator", "test"}});
  EXPECT_EQ(once, twice);
  ASSERT_EQ(back.transcripts.size(), 1u);
  EXPECT_EQ(back.transcripts[0].turns[1].sentences[0].gold_code,
            AtmCode::StrongEvidence);
}

TEST(Corpus, GoldCodesFlatThrowsOnMissingLabels) {
  Transcript tr = testutil::sample_exchange();
  EXPECT_THROW(gold_codes_flat(tr), ValidationError);
  tr.turns[0].sentences[0].gold_code = AtmCode::Others;
  std::vector<AtmCode> flat = gold_codes_flat(tr);
  ASSERT_EQ(flat.size(), 3u);
  EXPECT_EQ(flat[1], AtmCode::Press);
  std::vector<Speaker> sp = speakers_flat(tr);
  EXPECT_EQ(sp, (std::vector<Speaker>{Speaker::Teacher, Speaker::Teacher,
                                      Speaker::Student}));
}

TEST(Corpus, CodeSpeakerConstraintTable) {
  EXPECT_EQ(code_speaker(AtmCode::Recap), Speaker::Teacher);
  EXPECT_EQ(code_speaker(AtmCode::Press), Speaker::Teacher);
  EXPECT_EQ(code_speaker(AtmCode::StrongLink), Speaker::Student);
  EXPECT_EQ(code_speaker(AtmCode::StrongEvidence), Speaker::Student);
  EXPECT_EQ(code_speaker(AtmCode::StrongExplanation), Speaker::Student);
  EXPECT_EQ(code_speaker(AtmCode::Others), std::nullopt);
}

}  // namespace
