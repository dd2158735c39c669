#pragma once

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace discq {

enum class Speaker : uint8_t { Teacher = 0, Student = 1 };

// Discussion-move codes. Others is the catch-all non-focal class; the five
// focal codes are split between speaker roles (teacher: Recap/Press,
// student: the three Strong* codes). Enum order is load-bearing: it fixes the
// label indexing of every classifier and the sequence model.
enum class AtmCode : uint8_t {
  Recap = 0,
  Press = 1,
  StrongLink = 2,
  StrongEvidence = 3,
  StrongExplanation = 4,
  Others = 5,
};

inline constexpr int kNumAtmCodes = 6;
inline constexpr int kNumFocalCodes = 5;

enum class IqaRubric : uint8_t { S1 = 0, S2 = 1, S3 = 2, S4 = 3 };

inline constexpr int kNumRubrics = 4;
inline constexpr int kMinIqaScore = 1;
inline constexpr int kMaxIqaScore = 4;

inline const char* speaker_name(Speaker s) {
  return s == Speaker::Teacher ? "teacher" : "student";
}

inline Speaker speaker_from_string(std::string_view s) {
  if (s == "teacher") return Speaker::Teacher;
  if (s == "student") return Speaker::Student;
  throw ValidationError("unknown speaker '" + std::string(s) + "'");
}

inline const char* atm_code_name(AtmCode c) {
  switch (c) {
    case AtmCode::Recap: return "recap";
    case AtmCode::Press: return "press";
    case AtmCode::StrongLink: return "strong_link";
    case AtmCode::StrongEvidence: return "strong_evidence";
    case AtmCode::StrongExplanation: return "strong_explanation";
    case AtmCode::Others: return "others";
  }
  throw ValidationError("invalid code value");
}

inline AtmCode atm_code_from_string(std::string_view s) {
  if (s == "recap") return AtmCode::Recap;
  if (s == "press") return AtmCode::Press;
  if (s == "strong_link") return AtmCode::StrongLink;
  if (s == "strong_evidence") return AtmCode::StrongEvidence;
  if (s == "strong_explanation") return AtmCode::StrongExplanation;
  if (s == "others") return AtmCode::Others;
  throw ValidationError("unknown code '" + std::string(s) + "'");
}

inline bool is_focal(AtmCode c) { return c != AtmCode::Others; }

// Speaker role a focal code is restricted to; nullopt for Others.
inline std::optional<Speaker> code_speaker(AtmCode c) {
  switch (c) {
    case AtmCode::Recap:
    case AtmCode::Press:
      return Speaker::Teacher;
    case AtmCode::StrongLink:
    case AtmCode::StrongEvidence:
    case AtmCode::StrongExplanation:
      return Speaker::Student;
    case AtmCode::Others:
      return std::nullopt;
  }
  return std::nullopt;
}

inline const char* rubric_name(IqaRubric r) {
  switch (r) {
    case IqaRubric::S1: return "S1";
    case IqaRubric::S2: return "S2";
    case IqaRubric::S3: return "S3";
    case IqaRubric::S4: return "S4";
  }
  throw ValidationError("invalid rubric value");
}

inline IqaRubric rubric_from_string(std::string_view s) {
  if (s == "S1") return IqaRubric::S1;
  if (s == "S2") return IqaRubric::S2;
  if (s == "S3") return IqaRubric::S3;
  if (s == "S4") return IqaRubric::S4;
  throw ValidationError("unknown rubric '" + std::string(s) + "'");
}

// Codes whose (merged) instance counts feed a rubric's score estimate.
inline const std::vector<AtmCode>& rubric_relevant_codes(IqaRubric r) {
  static const std::vector<AtmCode> s1{AtmCode::Recap};
  static const std::vector<AtmCode> s2{AtmCode::Press};
  static const std::vector<AtmCode> s3{AtmCode::StrongLink};
  static const std::vector<AtmCode> s4{AtmCode::StrongEvidence,
                                       AtmCode::StrongExplanation};
  switch (r) {
    case IqaRubric::S1: return s1;
    case IqaRubric::S2: return s2;
    case IqaRubric::S3: return s3;
    case IqaRubric::S4: return s4;
  }
  throw ValidationError("invalid rubric value");
}

// ---------------------------------------------------------------------------
// Data model. Immutable after parsing by convention: nothing in the library
// mutates a Corpus it did not create.

struct Sentence {
  std::string text;
  int turn_index = 0;
  int sentence_index = 0;  // position within the turn
  std::optional<AtmCode> gold_code;

  bool operator==(const Sentence&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::Teacher;
  std::vector<Sentence> sentences;

  bool operator==(const Turn&) const = default;
};

struct Transcript {
  std::string id;
  std::vector<Turn> turns;
  std::map<IqaRubric, int> gold_iqa;  // empty when unscored

  bool operator==(const Transcript&) const = default;

  int sentence_count() const {
    int n = 0;
    for (const auto& t : turns) n += static_cast<int>(t.sentences.size());
    return n;
  }

  bool has_full_iqa() const {
    return static_cast<int>(gold_iqa.size()) == kNumRubrics;
  }
};

struct Corpus {
  std::vector<Transcript> transcripts;

  bool operator==(const Corpus&) const = default;

  const Transcript* find(const std::string& id) const {
    for (const auto& t : transcripts)
      if (t.id == id) return &t;
    return nullptr;
  }
};

// Visit sentences of a transcript in flat order (turn-major).
template <class Fn>
void for_each_sentence(const Transcript& tr, Fn&& fn) {
  for (size_t ti = 0; ti < tr.turns.size(); ++ti)
    for (size_t si = 0; si < tr.turns[ti].sentences.size(); ++si)
      fn(static_cast<int>(ti), static_cast<int>(si),
         tr.turns[ti].sentences[si], tr.turns[ti].speaker);
}

inline std::vector<AtmCode> gold_codes_flat(const Transcript& tr) {
  std::vector<AtmCode> out;
  out.reserve(static_cast<size_t>(tr.sentence_count()));
  for_each_sentence(tr, [&](int, int, const Sentence& s, Speaker) {
    if (!s.gold_code)
      throw ValidationError("transcript '" + tr.id +
                            "': sentence without a gold code");
    out.push_back(*s.gold_code);
  });
  return out;
}

inline std::vector<Speaker> speakers_flat(const Transcript& tr) {
  std::vector<Speaker> out;
  out.reserve(static_cast<size_t>(tr.sentence_count()));
  for_each_sentence(tr, [&](int, int, const Sentence&, Speaker sp) {
    out.push_back(sp);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sentence segmentation. Splits after '.', '!' or '?' when followed by
// whitespace; the delimiter stays with the left piece. Abbreviations are not
// special-cased, so "Mr. Smith spoke" segments as ["Mr.", "Smith spoke"] --
// a known limitation accepted for determinism.

namespace detail {

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

inline std::vector<std::string> segment_turn_text(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::string piece = detail::trim(cur);
    if (!piece.empty()) out.push_back(std::move(piece));
    cur.clear();
  };
  for (size_t i = 0; i < raw.size(); ++i) {
    char c = raw[i];
    cur.push_back(c);
    bool terminator = (c == '.' || c == '!' || c == '?');
    if (terminator && i + 1 < raw.size() &&
        std::isspace(static_cast<unsigned char>(raw[i + 1]))) {
      flush();
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Context windows: the classifier input for one target sentence.

struct ContextWindow {
  Sentence target;
  std::vector<Sentence> same_turn_prefix;  // earlier sentences of the turn
  std::vector<Sentence> prev_turn;         // all sentences of the prior turn
  Speaker target_speaker = Speaker::Teacher;
  double position_fraction = 0.0;  // target position within its turn, in [0,1]
};

// cap bounds the total context size |same_turn_prefix| + |prev_turn|; the
// oldest sentences (prev_turn front first) are dropped beyond it.
inline ContextWindow build_context_window(const Transcript& tr, int turn_index,
                                          int sentence_index, int cap) {
  if (cap < 0) throw ConfigError("context cap must be non-negative");
  if (turn_index < 0 || turn_index >= static_cast<int>(tr.turns.size()))
    throw ValidationError("transcript '" + tr.id + "': turn index " +
                          std::to_string(turn_index) + " out of range");
  const Turn& turn = tr.turns[static_cast<size_t>(turn_index)];
  if (sentence_index < 0 ||
      sentence_index >= static_cast<int>(turn.sentences.size()))
    throw ValidationError("transcript '" + tr.id + "': sentence index " +
                          std::to_string(sentence_index) + " out of range");

  ContextWindow w;
  w.target = turn.sentences[static_cast<size_t>(sentence_index)];
  w.target_speaker = turn.speaker;
  w.same_turn_prefix.assign(turn.sentences.begin(),
                            turn.sentences.begin() + sentence_index);
  if (turn_index > 0) {
    const Turn& prev = tr.turns[static_cast<size_t>(turn_index - 1)];
    w.prev_turn = prev.sentences;
  }
  size_t total = w.same_turn_prefix.size() + w.prev_turn.size();
  if (total > static_cast<size_t>(cap)) {
    size_t drop = total - static_cast<size_t>(cap);
    size_t from_prev = std::min(drop, w.prev_turn.size());
    w.prev_turn.erase(w.prev_turn.begin(),
                      w.prev_turn.begin() + static_cast<long>(from_prev));
    drop -= from_prev;
    if (drop > 0)
      w.same_turn_prefix.erase(
          w.same_turn_prefix.begin(),
          w.same_turn_prefix.begin() + static_cast<long>(drop));
  }
  size_t n = turn.sentences.size();
  w.position_fraction =
      n > 1 ? static_cast<double>(sentence_index) / static_cast<double>(n - 1)
            : 0.0;
  return w;
}

inline std::vector<ContextWindow> transcript_windows(const Transcript& tr,
                                                     int cap) {
  std::vector<ContextWindow> out;
  out.reserve(static_cast<size_t>(tr.sentence_count()));
  for (size_t ti = 0; ti < tr.turns.size(); ++ti)
    for (size_t si = 0; si < tr.turns[ti].sentences.size(); ++si)
      out.push_back(build_context_window(tr, static_cast<int>(ti),
                                         static_cast<int>(si), cap));
  return out;
}

// ---------------------------------------------------------------------------
// JSON parsing / serialization.

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ValidationError("unknown key '" + it.key() + "' in " + where);
}

inline std::string require_string(const json& obj, const char* key,
                                  const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw ValidationError("missing or non-string '" + std::string(key) +
                          "' in " + where);
  return it->get<std::string>();
}

inline Turn parse_turn(const json& jt, const std::string& tr_id, int turn_index) {
  std::string where =
      "transcript '" + tr_id + "' turn " + std::to_string(turn_index);
  if (!jt.is_object()) throw ValidationError(where + ": not an object");
  reject_unknown_keys(jt, {"speaker", "sentences", "text"}, where);

  Turn turn;
  turn.speaker = speaker_from_string(require_string(jt, "speaker", where));

  bool has_sentences = jt.contains("sentences");
  bool has_text = jt.contains("text");
  if (has_sentences == has_text)
    throw ValidationError(where +
                          ": exactly one of 'sentences' or 'text' required");

  if (has_text) {
    std::string raw = require_string(jt, "text", where);
    auto pieces = segment_turn_text(raw);
    if (pieces.empty())
      throw ValidationError(where + ": turn has no sentences");
    for (size_t si = 0; si < pieces.size(); ++si) {
      Sentence s;
      s.text = std::move(pieces[si]);
      s.turn_index = turn_index;
      s.sentence_index = static_cast<int>(si);
      turn.sentences.push_back(std::move(s));
    }
    return turn;
  }

  const json& js = jt.at("sentences");
  if (!js.is_array() || js.empty())
    throw ValidationError(where + ": turn has no sentences");
  for (size_t si = 0; si < js.size(); ++si) {
    const json& jsent = js[si];
    std::string swhere = where + " sentence " + std::to_string(si);
    if (!jsent.is_object()) throw ValidationError(swhere + ": not an object");
    reject_unknown_keys(jsent, {"text", "atm"}, swhere);
    Sentence s;
    s.text = require_string(jsent, "text", swhere);
    if (detail::trim(s.text).empty())
      throw ValidationError(swhere + ": sentence text empty");
    s.turn_index = turn_index;
    s.sentence_index = static_cast<int>(si);
    if (jsent.contains("atm")) {
      if (!jsent.at("atm").is_string())
        throw ValidationError(swhere + ": 'atm' must be a string");
      AtmCode code = atm_code_from_string(jsent.at("atm").get<std::string>());
      auto req = code_speaker(code);
      if (req && *req != turn.speaker)
        throw ValidationError(swhere + ": code '" + atm_code_name(code) +
                              "' not allowed for speaker '" +
                              speaker_name(turn.speaker) + "'");
      s.gold_code = code;
    }
    turn.sentences.push_back(std::move(s));
  }
  return turn;
}

inline Transcript parse_transcript(const json& jt, size_t pos) {
  std::string where = "transcript at position " + std::to_string(pos);
  if (!jt.is_object()) throw ValidationError(where + ": not an object");
  reject_unknown_keys(jt, {"id", "iqa", "turns"}, where);

  Transcript tr;
  tr.id = require_string(jt, "id", where);
  if (tr.id.empty()) throw ValidationError(where + ": empty id");
  where = "transcript '" + tr.id + "'";

  if (jt.contains("iqa")) {
    const json& ji = jt.at("iqa");
    if (!ji.is_object()) throw ValidationError(where + ": 'iqa' not an object");
    reject_unknown_keys(ji, {"S1", "S2", "S3", "S4"}, where + " iqa");
    for (auto it = ji.begin(); it != ji.end(); ++it) {
      IqaRubric r = rubric_from_string(it.key());
      if (!it->is_number_integer())
        throw ValidationError(where + ": rubric " + it.key() +
                              " must be an integer");
      int v = it->get<int>();
      if (v < kMinIqaScore || v > kMaxIqaScore)
        throw ValidationError(where + ": rubric " + it.key() + " score " +
                              std::to_string(v) + " outside [1,4]");
      tr.gold_iqa[r] = v;
    }
  }

  auto it = jt.find("turns");
  if (it == jt.end() || !it->is_array() || it->empty())
    throw ValidationError(where + ": 'turns' must be a non-empty array");
  for (size_t ti = 0; ti < it->size(); ++ti)
    tr.turns.push_back(parse_turn((*it)[ti], tr.id, static_cast<int>(ti)));
  return tr;
}

}  // namespace detail

// Parses and validates a corpus document. The optional top-level "meta"
// object (provenance written by the generator and tools) is ignored.
inline Corpus parse_corpus_text(std::string_view text) {
  detail::json doc;
  try {
    doc = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ValidationError(std::string("malformed corpus document: ") + e.what());
  }
  if (!doc.is_object())
    throw ValidationError("corpus document root must be an object");
  detail::reject_unknown_keys(doc, {"transcripts", "meta"}, "corpus root");
  auto it = doc.find("transcripts");
  if (it == doc.end() || !it->is_array())
    throw ValidationError("corpus document needs a 'transcripts' array");
  if (it->empty()) throw ValidationError("empty corpus");

  Corpus corpus;
  std::set<std::string> ids;
  for (size_t i = 0; i < it->size(); ++i) {
    Transcript tr = detail::parse_transcript((*it)[i], i);
    if (!ids.insert(tr.id).second)
      throw ValidationError("duplicate transcript id '" + tr.id + "'");
    corpus.transcripts.push_back(std::move(tr));
  }
  return corpus;
}

inline Corpus parse_corpus(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus_text(ss.str());
}

// Serialization is canonical: nlohmann orders object keys alphabetically and
// we dump with a fixed indent, so equal corpora yield byte-identical text.
inline std::string serialize_corpus(const Corpus& corpus,
                                    const std::map<std::string, std::string>& meta = {}) {
  detail::json root;
  if (!meta.empty()) {
    detail::json jm;
    for (const auto& [k, v] : meta) jm[k] = v;
    root["meta"] = std::move(jm);
  }
  detail::json jts = detail::json::array();
  for (const Transcript& tr : corpus.transcripts) {
    detail::json jt;
    jt["id"] = tr.id;
    if (!tr.gold_iqa.empty()) {
      detail::json ji;
      for (const auto& [r, v] : tr.gold_iqa) ji[rubric_name(r)] = v;
      jt["iqa"] = std::move(ji);
    }
    detail::json jturns = detail::json::array();
    for (const Turn& turn : tr.turns) {
      detail::json jturn;
      jturn["speaker"] = speaker_name(turn.speaker);
      detail::json jsents = detail::json::array();
      for (const Sentence& s : turn.sentences) {
        detail::json jsent;
        jsent["text"] = s.text;
        if (s.gold_code) jsent["atm"] = atm_code_name(*s.gold_code);
        jsents.push_back(std::move(jsent));
      }
      jturn["sentences"] = std::move(jsents);
      jturns.push_back(std::move(jturn));
    }
    jt["turns"] = std::move(jturns);
    jts.push_back(std::move(jt));
  }
  root["transcripts"] = std::move(jts);
  return root.dump(2) + "\n";
}

}  // namespace discq
