#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "crf.hpp"
#include "encoder.hpp"
#include "linmodels.hpp"

namespace discq {

// ---------------------------------------------------------------------------
// Majority-class downsampling. Kept Others sentences are chosen uniformly at
// random; the ratio r fixes the share of Others among kept sentences, i.e.
// kept_others = round(r/(1-r) * focal_count), capped at availability. r = 1
// keeps everything.

struct DownsampleConfig {
  double others_ratio = 0.6;
  uint64_t seed = 17;

  void validate() const {
    if (!(others_ratio > 0.0) || others_ratio > 1.0)
      throw ConfigError("others_ratio must be in (0, 1]");
  }
};

struct DownsamplePlan {
  std::vector<std::vector<uint8_t>> keep;  // [transcript][flat sentence]
  size_t focal_total = 0;
  size_t others_total = 0;
  size_t others_kept = 0;
};

inline DownsamplePlan plan_downsample(
    const std::vector<std::vector<AtmCode>>& gold, const DownsampleConfig& cfg) {
  cfg.validate();
  DownsamplePlan plan;
  plan.keep.resize(gold.size());
  std::vector<std::pair<size_t, size_t>> others_pos;
  for (size_t t = 0; t < gold.size(); ++t) {
    plan.keep[t].assign(gold[t].size(), 1);
    for (size_t i = 0; i < gold[t].size(); ++i) {
      if (is_focal(gold[t][i]))
        ++plan.focal_total;
      else
        others_pos.push_back({t, i});
    }
  }
  plan.others_total = others_pos.size();
  if (plan.focal_total == 0)
    throw ValidationError("downsample: no focal sentences in training data");
  if (cfg.others_ratio == 1.0) {
    plan.others_kept = plan.others_total;
    return plan;
  }
  double want = cfg.others_ratio / (1.0 - cfg.others_ratio) *
                static_cast<double>(plan.focal_total);
  size_t target = static_cast<size_t>(std::llround(want));
  target = std::min(target, plan.others_total);
  plan.others_kept = target;

  Rng rng(cfg.seed);
  rng.shuffle(others_pos);
  for (size_t i = target; i < others_pos.size(); ++i)
    plan.keep[others_pos[i].first][others_pos[i].second] = 0;
  return plan;
}

inline std::vector<std::vector<AtmCode>> gold_by_transcript(const Corpus& c) {
  std::vector<std::vector<AtmCode>> out;
  out.reserve(c.transcripts.size());
  for (const Transcript& tr : c.transcripts) out.push_back(gold_codes_flat(tr));
  return out;
}

inline DownsamplePlan plan_downsample_corpus(const Corpus& c,
                                             const DownsampleConfig& cfg) {
  return plan_downsample(gold_by_transcript(c), cfg);
}

// ---------------------------------------------------------------------------
// Shared encoded view of a corpus: one feature vector per sentence in flat
// (turn-major) order, plus everything needed downstream without keeping the
// Corpus alive.

struct EncodedTranscript {
  std::string id;
  std::vector<int> turn_sizes;
  std::vector<Speaker> speakers;             // flat, per sentence
  std::vector<FeatureVector> features;       // flat, per sentence
  std::vector<std::optional<AtmCode>> gold;  // flat, per sentence
};

struct EncodedCorpus {
  EncoderConfig encoder;
  int context_cap = 10;
  IdfTable idf;
  std::vector<EncodedTranscript> transcripts;
};

namespace detail {

inline EncodedTranscript encode_transcript(const Transcript& tr,
                                           const IdfTable& idf,
                                           const EncoderConfig& cfg, int cap) {
  EncodedTranscript et;
  et.id = tr.id;
  et.turn_sizes.reserve(tr.turns.size());
  for (const Turn& t : tr.turns)
    et.turn_sizes.push_back(static_cast<int>(t.sentences.size()));
  for (size_t ti = 0; ti < tr.turns.size(); ++ti)
    for (size_t si = 0; si < tr.turns[ti].sentences.size(); ++si) {
      ContextWindow w = build_context_window(tr, static_cast<int>(ti),
                                             static_cast<int>(si), cap);
      et.features.push_back(encode_window(w, idf, cfg));
      et.speakers.push_back(tr.turns[ti].speaker);
      et.gold.push_back(tr.turns[ti].sentences[si].gold_code);
    }
  return et;
}

}  // namespace detail

// Fits idf on the corpus (training use) and encodes every sentence.
inline EncodedCorpus encode_corpus(const Corpus& c, const EncoderConfig& cfg,
                                   int cap) {
  if (cap < 0) throw ConfigError("context cap must be non-negative");
  cfg.validate();
  if (c.transcripts.empty()) throw ValidationError("empty corpus");
  IdfBuilder builder(cfg);
  for (const Transcript& tr : c.transcripts)
    for_each_sentence(tr, [&](int, int, const Sentence& s, Speaker) {
      builder.add_document(s.text);
    });
  EncodedCorpus enc;
  enc.encoder = cfg;
  enc.context_cap = cap;
  enc.idf = builder.finish();
  enc.transcripts.reserve(c.transcripts.size());
  for (const Transcript& tr : c.transcripts)
    enc.transcripts.push_back(detail::encode_transcript(tr, enc.idf, cfg, cap));
  return enc;
}

// Encodes with a previously fitted idf table (test-time use; no refit).
inline EncodedCorpus encode_corpus_with(const Corpus& c, const IdfTable& idf,
                                        const EncoderConfig& cfg, int cap) {
  if (cap < 0) throw ConfigError("context cap must be non-negative");
  cfg.validate();
  if (c.transcripts.empty()) throw ValidationError("empty corpus");
  EncodedCorpus enc;
  enc.encoder = cfg;
  enc.context_cap = cap;
  enc.idf = idf;
  enc.transcripts.reserve(c.transcripts.size());
  for (const Transcript& tr : c.transcripts)
    enc.transcripts.push_back(detail::encode_transcript(tr, enc.idf, cfg, cap));
  return enc;
}

namespace detail {

inline AtmCode require_gold(const EncodedTranscript& et, size_t i) {
  if (!et.gold[i])
    throw ValidationError("transcript '" + et.id +
                          "': sentence without a gold code");
  return *et.gold[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hierarchical classifier: binary focal-vs-others step, then a speaker-routed
// second step among that speaker's focal codes.

struct HierModel {
  EncoderConfig encoder;
  int context_cap = 10;
  IdfTable idf;
  SoftmaxModel step1;          // 0 = others, 1 = focal
  SoftmaxModel teacher_step2;  // 0 = recap, 1 = press
  SoftmaxModel student_step2;  // 0 = strong_link, 1 = strong_evidence, 2 = strong_explanation
  bool teacher_fallback = false;
  bool student_fallback = false;
};

inline HierModel train_hierarchical_enc(const EncodedCorpus& enc,
                                        const DownsamplePlan* plan,
                                        const OptimConfig& optim) {
  optim.validate();
  if (plan && plan->keep.size() != enc.transcripts.size())
    throw ValidationError("downsample plan does not match corpus");
  HierModel m;
  m.encoder = enc.encoder;
  m.context_cap = enc.context_cap;
  m.idf = enc.idf;

  std::vector<FeatureVector> x1, xt, xs;
  std::vector<int> y1, yt, ys;
  for (size_t t = 0; t < enc.transcripts.size(); ++t) {
    const EncodedTranscript& et = enc.transcripts[t];
    for (size_t i = 0; i < et.features.size(); ++i) {
      AtmCode code = detail::require_gold(et, i);
      bool kept = !plan || plan->keep[t][i];
      if (kept) {
        x1.push_back(et.features[i]);
        y1.push_back(is_focal(code) ? 1 : 0);
      }
      if (!is_focal(code)) continue;
      if (et.speakers[i] == Speaker::Teacher) {
        xt.push_back(et.features[i]);
        yt.push_back(static_cast<int>(code));  // recap 0, press 1
      } else {
        xs.push_back(et.features[i]);
        ys.push_back(static_cast<int>(code) - 2);  // link 0, evidence 1, explanation 2
      }
    }
  }

  OptimConfig o1 = optim;
  o1.seed = derive_seed(optim.seed, "hier-step1");
  m.step1 = train_softmax(x1, y1, 2, o1, {"others", "focal"});

  uint32_t width = enc.encoder.feature_width();
  OptimConfig ot = optim;
  ot.seed = derive_seed(optim.seed, "hier-teacher");
  if (xt.empty()) {
    warn("no focal teacher sentences in training data; using a constant prior");
    m.teacher_fallback = true;
    m.teacher_step2 = uniform_softmax(2, width, {"recap", "press"});
  } else {
    m.teacher_step2 = train_softmax(xt, yt, 2, ot, {"recap", "press"});
  }
  OptimConfig os = optim;
  os.seed = derive_seed(optim.seed, "hier-student");
  if (xs.empty()) {
    warn("no focal student sentences in training data; using a constant prior");
    m.student_fallback = true;
    m.student_step2 = uniform_softmax(
        3, width, {"strong_link", "strong_evidence", "strong_explanation"});
  } else {
    m.student_step2 = train_softmax(
        xs, ys, 3, os, {"strong_link", "strong_evidence", "strong_explanation"});
  }
  return m;
}

// oracle, when given, replaces the step-1 decision with the provided
// focal/others flags (one per sentence, flat order).
inline std::vector<AtmCode> predict_hierarchical_enc(
    const HierModel& m, const EncodedTranscript& et,
    const std::vector<uint8_t>* oracle = nullptr) {
  if (oracle && oracle->size() != et.features.size())
    throw ValidationError("oracle flag count does not match sentence count");
  std::vector<AtmCode> out;
  out.reserve(et.features.size());
  for (size_t i = 0; i < et.features.size(); ++i) {
    bool focal = oracle ? (*oracle)[i] != 0
                        : predict_softmax(m.step1, et.features[i]).first == 1;
    if (!focal) {
      out.push_back(AtmCode::Others);
    } else if (et.speakers[i] == Speaker::Teacher) {
      int k = predict_softmax(m.teacher_step2, et.features[i]).first;
      out.push_back(static_cast<AtmCode>(k));
    } else {
      int k = predict_softmax(m.student_step2, et.features[i]).first;
      out.push_back(static_cast<AtmCode>(k + 2));
    }
  }
  return out;
}

inline std::vector<uint8_t> oracle_focal_flags(const Transcript& tr) {
  std::vector<uint8_t> flags;
  flags.reserve(static_cast<size_t>(tr.sentence_count()));
  for (AtmCode c : gold_codes_flat(tr)) flags.push_back(is_focal(c) ? 1 : 0);
  return flags;
}

// ---------------------------------------------------------------------------
// Flat 6-way classifier baseline. No speaker constraint: it may emit any code
// for any speaker, which is part of what the comparison measures.

struct FlatModel {
  EncoderConfig encoder;
  int context_cap = 10;
  IdfTable idf;
  SoftmaxModel clf;  // label = AtmCode value
};

inline FlatModel train_flat_enc(const EncodedCorpus& enc,
                                const DownsamplePlan* plan,
                                const OptimConfig& optim) {
  optim.validate();
  if (plan && plan->keep.size() != enc.transcripts.size())
    throw ValidationError("downsample plan does not match corpus");
  FlatModel m;
  m.encoder = enc.encoder;
  m.context_cap = enc.context_cap;
  m.idf = enc.idf;
  std::vector<FeatureVector> x;
  std::vector<int> y;
  for (size_t t = 0; t < enc.transcripts.size(); ++t) {
    const EncodedTranscript& et = enc.transcripts[t];
    for (size_t i = 0; i < et.features.size(); ++i) {
      AtmCode code = detail::require_gold(et, i);
      if (plan && !plan->keep[t][i]) continue;
      x.push_back(et.features[i]);
      y.push_back(static_cast<int>(code));
    }
  }
  OptimConfig o = optim;
  o.seed = derive_seed(optim.seed, "flat");
  std::vector<std::string> labels;
  for (int k = 0; k < kNumAtmCodes; ++k)
    labels.push_back(atm_code_name(static_cast<AtmCode>(k)));
  m.clf = train_softmax(x, y, kNumAtmCodes, o, std::move(labels));
  return m;
}

inline std::vector<AtmCode> predict_flat_enc(const FlatModel& m,
                                             const EncodedTranscript& et) {
  std::vector<AtmCode> out;
  out.reserve(et.features.size());
  for (const FeatureVector& f : et.features)
    out.push_back(static_cast<AtmCode>(predict_softmax(m.clf, f).first));
  return out;
}

// ---------------------------------------------------------------------------
// Sequence labeler: one linear chain per transcript over flat sentence order.
// Downsampled-away positions stay in the chain but are unsupervised (the
// objective marginalizes over them), so transition structure is kept intact.

struct SeqModel {
  EncoderConfig encoder;
  int context_cap = 10;
  IdfTable idf;
  CrfModel crf;
  bool speaker_mask = true;
};

namespace detail {

inline LabelMask mask_for(const EncodedTranscript& et, bool speaker_mask) {
  return speaker_mask ? LabelMask::for_speakers(et.speakers)
                      : LabelMask::open(et.speakers.size());
}

}  // namespace detail

inline SeqModel train_seqlab_enc(const EncodedCorpus& enc,
                                 const DownsamplePlan* plan,
                                 const OptimConfig& optim,
                                 bool speaker_mask = true) {
  optim.validate();
  if (plan && plan->keep.size() != enc.transcripts.size())
    throw ValidationError("downsample plan does not match corpus");
  SeqModel m;
  m.encoder = enc.encoder;
  m.context_cap = enc.context_cap;
  m.idf = enc.idf;
  m.speaker_mask = speaker_mask;

  std::vector<CrfSequence> seqs;
  seqs.reserve(enc.transcripts.size());
  for (size_t t = 0; t < enc.transcripts.size(); ++t) {
    const EncodedTranscript& et = enc.transcripts[t];
    CrfSequence seq;
    seq.features = et.features;
    seq.gold.reserve(et.features.size());
    for (size_t i = 0; i < et.features.size(); ++i)
      seq.gold.push_back(static_cast<int>(detail::require_gold(et, i)));
    seq.mask = detail::mask_for(et, speaker_mask);
    if (plan) seq.supervised = plan->keep[t];
    seqs.push_back(std::move(seq));
  }
  OptimConfig o = optim;
  o.seed = derive_seed(optim.seed, "seqlab");
  m.crf = train_crf(seqs, o);
  return m;
}

inline std::vector<AtmCode> predict_seqlab_enc(const SeqModel& m,
                                               const EncodedTranscript& et) {
  std::vector<int> path =
      crf_viterbi(m.crf, et.features, detail::mask_for(et, m.speaker_mask));
  std::vector<AtmCode> out;
  out.reserve(path.size());
  for (int k : path) out.push_back(static_cast<AtmCode>(k));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level wrappers (encode internally; ds == nullptr disables
// downsampling).

inline HierModel train_hierarchical(const Corpus& c, const EncoderConfig& cfg,
                                    int cap, const OptimConfig& optim,
                                    const DownsampleConfig* ds = nullptr) {
  EncodedCorpus enc = encode_corpus(c, cfg, cap);
  if (!ds) return train_hierarchical_enc(enc, nullptr, optim);
  DownsamplePlan plan = plan_downsample_corpus(c, *ds);
  return train_hierarchical_enc(enc, &plan, optim);
}

inline FlatModel train_flat(const Corpus& c, const EncoderConfig& cfg, int cap,
                            const OptimConfig& optim,
                            const DownsampleConfig* ds = nullptr) {
  EncodedCorpus enc = encode_corpus(c, cfg, cap);
  if (!ds) return train_flat_enc(enc, nullptr, optim);
  DownsamplePlan plan = plan_downsample_corpus(c, *ds);
  return train_flat_enc(enc, &plan, optim);
}

inline SeqModel train_seqlab(const Corpus& c, const EncoderConfig& cfg, int cap,
                             const OptimConfig& optim,
                             const DownsampleConfig* ds = nullptr,
                             bool speaker_mask = true) {
  EncodedCorpus enc = encode_corpus(c, cfg, cap);
  if (!ds) return train_seqlab_enc(enc, nullptr, optim, speaker_mask);
  DownsamplePlan plan = plan_downsample_corpus(c, *ds);
  return train_seqlab_enc(enc, &plan, optim, speaker_mask);
}

inline std::vector<AtmCode> predict_hierarchical(
    const HierModel& m, const Transcript& tr,
    const std::vector<uint8_t>* oracle = nullptr) {
  EncodedTranscript et =
      detail::encode_transcript(tr, m.idf, m.encoder, m.context_cap);
  return predict_hierarchical_enc(m, et, oracle);
}

inline std::vector<AtmCode> predict_flat(const FlatModel& m,
                                         const Transcript& tr) {
  EncodedTranscript et =
      detail::encode_transcript(tr, m.idf, m.encoder, m.context_cap);
  return predict_flat_enc(m, et);
}

inline std::vector<AtmCode> predict_seqlab(const SeqModel& m,
                                           const Transcript& tr) {
  EncodedTranscript et =
      detail::encode_transcript(tr, m.idf, m.encoder, m.context_cap);
  return predict_seqlab_enc(m, et);
}

// ---------------------------------------------------------------------------
// Instance merging. Adjacent same-code sentences within one turn collapse
// into a single coded instance; Others never forms instances.

struct CodeInstance {
  AtmCode code = AtmCode::Others;
  int turn_index = 0;
  int first_sentence = 0;  // sentence_index within the turn
  int last_sentence = 0;

  bool operator==(const CodeInstance&) const = default;
};

inline std::vector<CodeInstance> merge_adjacent_runs(
    std::span<const int> turn_sizes, std::span<const AtmCode> codes) {
  size_t total = 0;
  for (int n : turn_sizes) total += static_cast<size_t>(n);
  if (codes.size() != total)
    throw ValidationError("merge: code count does not match sentence count");
  std::vector<CodeInstance> out;
  size_t pos = 0;
  for (size_t ti = 0; ti < turn_sizes.size(); ++ti) {
    int n = turn_sizes[ti];
    int si = 0;
    while (si < n) {
      AtmCode c = codes[pos + static_cast<size_t>(si)];
      int first = si;
      while (si < n && codes[pos + static_cast<size_t>(si)] == c) ++si;
      if (is_focal(c))
        out.push_back({c, static_cast<int>(ti), first, si - 1});
    }
    pos += static_cast<size_t>(n);
  }
  return out;
}

inline std::vector<CodeInstance> merge_adjacent(const Transcript& tr,
                                                std::span<const AtmCode> codes) {
  std::vector<int> sizes;
  sizes.reserve(tr.turns.size());
  for (const Turn& t : tr.turns)
    sizes.push_back(static_cast<int>(t.sentences.size()));
  return merge_adjacent_runs(sizes, codes);
}

enum class MergeMode { None, WithinTurn, CrossTurn };

inline const char* merge_mode_name(MergeMode m) {
  switch (m) {
    case MergeMode::None: return "none";
    case MergeMode::WithinTurn: return "within_turn";
    case MergeMode::CrossTurn: return "cross_turn";
  }
  return "none";
}

inline MergeMode merge_mode_from_string(std::string_view s) {
  if (s == "none") return MergeMode::None;
  if (s == "within_turn") return MergeMode::WithinTurn;
  if (s == "cross_turn") return MergeMode::CrossTurn;
  throw ConfigError("unknown merge mode '" + std::string(s) + "'");
}

// Per-code instance counts for one transcript under the given merge mode.
inline std::array<int, kNumFocalCodes> count_codes(
    std::span<const int> turn_sizes, std::span<const AtmCode> codes,
    MergeMode mode) {
  size_t total = 0;
  for (int n : turn_sizes) total += static_cast<size_t>(n);
  if (codes.size() != total)
    throw ValidationError("count: code count does not match sentence count");
  std::array<int, kNumFocalCodes> counts{};
  size_t pos = 0;
  std::optional<AtmCode> prev;
  for (size_t ti = 0; ti < turn_sizes.size(); ++ti) {
    if (mode != MergeMode::CrossTurn) prev.reset();
    for (int si = 0; si < turn_sizes[ti]; ++si, ++pos) {
      AtmCode c = codes[pos];
      bool starts_new = mode == MergeMode::None || !prev || *prev != c;
      if (is_focal(c) && starts_new) ++counts[static_cast<size_t>(c)];
      prev = c;
    }
  }
  return counts;
}

inline std::array<int, kNumFocalCodes> count_codes(
    const Transcript& tr, std::span<const AtmCode> codes, MergeMode mode) {
  std::vector<int> sizes;
  sizes.reserve(tr.turns.size());
  for (const Turn& t : tr.turns)
    sizes.push_back(static_cast<int>(t.sentences.size()));
  return count_codes(sizes, codes, mode);
}

}  // namespace discq
