#include <gtest/gtest.h>

#include "discq/atm_pipeline.hpp"
#include "discq/metrics.hpp"
#include "support/helpers.hpp"

using namespace discq;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.dim = 1u << 10;
  return cfg;
}

// Teacher turns where the word "why" marks a press move; everything else is
// uncoded talk. Fully separable, so trained models should nail it.
Corpus why_corpus(int n_transcripts, uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::string> filler = {"good", "point", "class", "book",
                                           "page", "story", "idea", "turn"};
  Corpus c;
  for (int t = 0; t < n_transcripts; ++t) {
    std::vector<Turn> turns;
    for (int g = 0; g < 4; ++g) {
      std::string extra = filler[rng.below(filler.size())];
      if (g % 2 == 0) {
        bool press = rng.bernoulli(0.5);
        std::string text =
            press ? "why do you say the " + extra + " matters?"
                  : "let us look at the " + extra + " together.";
        turns.push_back(testutil::turn(
            Speaker::Teacher,
            {testutil::sent(text,
                            press ? AtmCode::Press : AtmCode::Others)}));
      } else {
        turns.push_back(testutil::turn(
            Speaker::Student,
            {testutil::sent("i think the " + extra + " was fine.",
                            AtmCode::Others)}));
      }
    }
    c.transcripts.push_back(
        testutil::transcript("t" + std::to_string(t), std::move(turns)));
  }
  return c;
}

TEST(Merge, AdjacentSameCodeRunCollapses) {
  std::vector<int> sizes = {2};
  std::vector<AtmCode> codes = {AtmCode::StrongEvidence,
                                AtmCode::StrongEvidence};
  auto inst = merge_adjacent_runs(sizes, codes);
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].code, AtmCode::StrongEvidence);
  EXPECT_EQ(inst[0].turn_index, 0);
  EXPECT_EQ(inst[0].first_sentence, 0);
  EXPECT_EQ(inst[0].last_sentence, 1);
}

TEST(Merge, InterruptedRunSplits) {
  std::vector<int> sizes = {3};
  std::vector<AtmCode> codes = {AtmCode::Press, AtmCode::Others, AtmCode::Press};
  auto inst = merge_adjacent_runs(sizes, codes);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].first_sentence, 0);
  EXPECT_EQ(inst[1].first_sentence, 2);
}

TEST(Merge, TurnBoundaryBreaksRuns) {
  std::vector<int> sizes = {1, 1};
  std::vector<AtmCode> codes = {AtmCode::Recap, AtmCode::Recap};
  auto inst = merge_adjacent_runs(sizes, codes);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].turn_index, 0);
  EXPECT_EQ(inst[1].turn_index, 1);
}

TEST(Merge, OthersNeverFormsInstances) {
  std::vector<int> sizes = {3};
  std::vector<AtmCode> codes = {AtmCode::Others, AtmCode::Others,
                                AtmCode::Others};
  EXPECT_TRUE(merge_adjacent_runs(sizes, codes).empty());
}

TEST(Merge, TranscriptOverloadUsesTurnShape) {
  Transcript tr = testutil::sample_exchange();
  std::vector<AtmCode> codes = {AtmCode::Others, AtmCode::Press,
                                AtmCode::StrongEvidence};
  auto inst = merge_adjacent(tr, codes);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].code, AtmCode::Press);
  EXPECT_EQ(inst[1].code, AtmCode::StrongEvidence);
  std::vector<AtmCode> short_codes = {AtmCode::Others};
  EXPECT_THROW(merge_adjacent(tr, short_codes), ValidationError);
}

TEST(CountCodes, ModesDifferExactlyAtMergeBoundaries) {
  std::vector<int> one_turn = {4};
  std::vector<AtmCode> codes = {AtmCode::Press, AtmCode::Press, AtmCode::Others,
                                AtmCode::Press};
  EXPECT_EQ(count_codes(one_turn, codes, MergeMode::None)[1], 3);
  EXPECT_EQ(count_codes(one_turn, codes, MergeMode::WithinTurn)[1], 2);
  EXPECT_EQ(count_codes(one_turn, codes, MergeMode::CrossTurn)[1], 2);

  std::vector<int> two_turns = {2, 1};
  std::vector<AtmCode> run = {AtmCode::Press, AtmCode::Press, AtmCode::Press};
  EXPECT_EQ(count_codes(two_turns, run, MergeMode::None)[1], 3);
  EXPECT_EQ(count_codes(two_turns, run, MergeMode::WithinTurn)[1], 2);
  EXPECT_EQ(count_codes(two_turns, run, MergeMode::CrossTurn)[1], 1);
}

TEST(Downsample, HitsExactRatioTarget) {
  std::vector<std::vector<AtmCode>> gold(1);
  gold[0].assign(1792, AtmCode::Press);
  gold[0].insert(gold[0].end(), 52687, AtmCode::Others);
  DownsampleConfig cfg;
  cfg.others_ratio = 0.6;
  DownsamplePlan plan = plan_downsample(gold, cfg);
  EXPECT_EQ(plan.focal_total, 1792u);
  EXPECT_EQ(plan.others_total, 52687u);
  // 0.6/0.4 * 1792 = 2688 uncoded sentences kept.
  EXPECT_EQ(plan.others_kept, 2688u);
  size_t kept = 0;
  for (uint8_t k : plan.keep[0]) kept += k;
  EXPECT_EQ(kept, 1792u + 2688u);
  // Focal sentences are never dropped.
  for (size_t i = 0; i < 1792; ++i) EXPECT_EQ(plan.keep[0][i], 1);
}

TEST(Downsample, TargetCapsAtAvailableOthers) {
  std::vector<std::vector<AtmCode>> gold(1);
  gold[0].assign(100, AtmCode::Recap);
  gold[0].insert(gold[0].end(), 10, AtmCode::Others);
  DownsampleConfig cfg;
  cfg.others_ratio = 0.9;  // wants 900, only 10 exist
  DownsamplePlan plan = plan_downsample(gold, cfg);
  EXPECT_EQ(plan.others_kept, 10u);
  for (uint8_t k : plan.keep[0]) EXPECT_EQ(k, 1);
}

TEST(Downsample, SameSeedSamePlan) {
  Rng rng(15);
  std::vector<std::vector<AtmCode>> gold(4);
  for (auto& g : gold)
    for (int i = 0; i < 60; ++i)
      g.push_back(rng.bernoulli(0.1) ? AtmCode::Press : AtmCode::Others);
  DownsampleConfig cfg;
  DownsamplePlan a = plan_downsample(gold, cfg);
  DownsamplePlan b = plan_downsample(gold, cfg);
  EXPECT_EQ(a.keep, b.keep);
  cfg.seed = 99;
  DownsamplePlan c = plan_downsample(gold, cfg);
  EXPECT_EQ(c.others_kept, a.others_kept);  // count is seed-independent
}

TEST(Downsample, RequiresFocalSentences) {
  std::vector<std::vector<AtmCode>> gold = {{AtmCode::Others, AtmCode::Others}};
  EXPECT_THROW(plan_downsample(gold, DownsampleConfig{}), ValidationError);
  DownsampleConfig bad;
  bad.others_ratio = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.others_ratio = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Downsample, FullRatioMatchesNoDownsamplingBitwise) {
  Corpus c = why_corpus(10, 3);
  OptimConfig opt;
  opt.epochs = 30;
  DownsampleConfig ds;
  ds.others_ratio = 1.0;
  FlatModel with = train_flat(c, tiny_encoder(), 10, opt, &ds);
  FlatModel without = train_flat(c, tiny_encoder(), 10, opt, nullptr);
  EXPECT_EQ(with.clf.weights, without.clf.weights);
  EXPECT_EQ(with.clf.bias, without.clf.bias);
}

TEST(Hierarchical, LearnsSeparableTeacherMove) {
  Corpus train;
  Corpus test;
  Corpus all = why_corpus(40, 7);
  for (size_t i = 0; i < all.transcripts.size(); ++i)
    (i < 30 ? train : test).transcripts.push_back(all.transcripts[i]);
  OptimConfig opt;
  opt.epochs = 120;
  HierModel m = train_hierarchical(train, tiny_encoder(), 10, opt);
  std::vector<int> gold, pred;
  for (const Transcript& tr : test.transcripts) {
    std::vector<AtmCode> p = predict_hierarchical(m, tr);
    std::vector<AtmCode> g = gold_codes_flat(tr);
    for (size_t i = 0; i < p.size(); ++i) {
      gold.push_back(static_cast<int>(g[i]));
      pred.push_back(static_cast<int>(p[i]));
    }
  }
  EXPECT_GE(per_class_f1(gold, pred, static_cast<int>(AtmCode::Press)), 0.95);
}

TEST(Hierarchical, OracleFlagsOverrideStepOne) {
  Corpus c = why_corpus(10, 11);
  OptimConfig opt;
  opt.epochs = 40;
  HierModel m = train_hierarchical(c, tiny_encoder(), 10, opt);
  const Transcript& tr = c.transcripts[0];
  std::vector<uint8_t> none(static_cast<size_t>(tr.sentence_count()), 0);
  for (AtmCode code : predict_hierarchical(m, tr, &none))
    EXPECT_EQ(code, AtmCode::Others);
  std::vector<uint8_t> every(static_cast<size_t>(tr.sentence_count()), 1);
  std::vector<AtmCode> p = predict_hierarchical(m, tr, &every);
  std::vector<Speaker> sp = speakers_flat(tr);
  for (size_t i = 0; i < p.size(); ++i) {
    EXPECT_TRUE(is_focal(p[i]));
    EXPECT_EQ(code_speaker(p[i]), sp[i]);  // step 2 is speaker-routed
  }
  std::vector<uint8_t> short_flags = {1};
  EXPECT_THROW(predict_hierarchical(m, tr, &short_flags), ValidationError);
}

TEST(Hierarchical, OracleFocalFlagsComeFromGold) {
  Transcript tr = testutil::sample_exchange();
  tr.turns[0].sentences[0].gold_code = AtmCode::Others;
  EXPECT_EQ(oracle_focal_flags(tr), (std::vector<uint8_t>{0, 1, 1}));
}

TEST(Hierarchical, MissingTeacherFocalFallsBackToPrior) {
  // Student-only focal codes: the teacher head cannot be trained.
  Corpus c;
  for (int t = 0; t < 6; ++t) {
    std::vector<Turn> turns;
    turns.push_back(testutil::turn(
        Speaker::Teacher, {testutil::sent("let us begin now.",
                                          AtmCode::Others)}));
    turns.push_back(testutil::turn(
        Speaker::Student,
        {testutil::sent("on page four it says so.", AtmCode::StrongEvidence),
         testutil::sent("that is because the hat tore.",
                        AtmCode::StrongExplanation)}));
    c.transcripts.push_back(
        testutil::transcript("t" + std::to_string(t), std::move(turns)));
  }
  OptimConfig opt;
  opt.epochs = 30;
  HierModel m = train_hierarchical(c, tiny_encoder(), 10, opt);
  EXPECT_TRUE(m.teacher_fallback);
  EXPECT_FALSE(m.student_fallback);
  // Forced-focal teacher sentence routes through the uniform prior and still
  // produces a teacher code.
  const Transcript& tr = c.transcripts[0];
  std::vector<uint8_t> every(static_cast<size_t>(tr.sentence_count()), 1);
  std::vector<AtmCode> p = predict_hierarchical(m, tr, &every);
  EXPECT_TRUE(p[0] == AtmCode::Recap || p[0] == AtmCode::Press);
}

TEST(Flat, SeparableCorpusTrainAccuracy) {
  Corpus c = why_corpus(20, 19);
  OptimConfig opt;
  opt.epochs = 120;
  FlatModel m = train_flat(c, tiny_encoder(), 10, opt);
  int total = 0, correct = 0;
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> p = predict_flat(m, tr);
    std::vector<AtmCode> g = gold_codes_flat(tr);
    for (size_t i = 0; i < p.size(); ++i) {
      ++total;
      correct += p[i] == g[i];
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.9);
}

TEST(Seqlab, HandlesSingleSentenceTranscripts) {
  Corpus c;
  for (int t = 0; t < 8; ++t) {
    bool press = t % 2 == 0;
    c.transcripts.push_back(testutil::transcript(
        "t" + std::to_string(t),
        {testutil::turn(Speaker::Teacher,
                        {testutil::sent(press ? "why is that true?"
                                              : "open your books.",
                                        press ? AtmCode::Press
                                              : AtmCode::Others)})}));
  }
  OptimConfig opt;
  opt.epochs = 60;
  opt.batch_size = 4;
  SeqModel m = train_seqlab(c, tiny_encoder(), 10, opt);
  std::vector<AtmCode> p = predict_seqlab(m, c.transcripts[0]);
  ASSERT_EQ(p.size(), 1u);
  // Speaker mask keeps student codes off teacher sentences.
  EXPECT_NE(code_speaker(p[0]), Speaker::Student);
}

TEST(Seqlab, SpeakerMaskConstrainsPredictions) {
  Corpus c = why_corpus(12, 23);
  OptimConfig opt;
  opt.epochs = 40;
  opt.batch_size = 4;
  SeqModel m = train_seqlab(c, tiny_encoder(), 10, opt);
  EXPECT_TRUE(m.speaker_mask);
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> p = predict_seqlab(m, tr);
    std::vector<Speaker> sp = speakers_flat(tr);
    for (size_t i = 0; i < p.size(); ++i)
      if (is_focal(p[i])) EXPECT_EQ(code_speaker(p[i]), sp[i]);
  }
}

}  // namespace
