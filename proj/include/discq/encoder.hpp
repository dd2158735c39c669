#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"

namespace discq {

struct EncoderConfig {
  uint32_t dim = 1u << 18;  // hash buckets; must be a power of two >= 1024
  int ngram_min = 1;
  int ngram_max = 2;
  bool lowercase = true;

  bool operator==(const EncoderConfig&) const = default;

  void validate() const {
    if (dim < 1024 || (dim & (dim - 1)) != 0)
      throw ConfigError("encoder dim must be a power of two >= 1024");
    if (ngram_min < 1 || ngram_max < ngram_min || ngram_max > 3)
      throw ConfigError("encoder ngram range must satisfy 1 <= min <= max <= 3");
  }

  // Two dense slots beyond the hashed range: speaker indicator and
  // position-in-turn fraction.
  uint32_t feature_width() const { return dim + 2; }
};

// Alphanumeric runs, optionally lowercased (ASCII only; bytes >= 0x80 are
// treated as separators).
inline std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!cur.empty()) {
      toks.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(std::move(cur));
  return toks;
}

// Calls fn(ngram) for every n-gram in [nmin, nmax]; tokens are joined with
// \x1e so "a b" and "ab" cannot collide as strings.
template <class Fn>
void for_each_ngram(const std::vector<std::string>& toks, int nmin, int nmax,
                    Fn&& fn) {
  std::string buf;
  for (size_t i = 0; i < toks.size(); ++i) {
    for (int n = nmin; n <= nmax; ++n) {
      if (i + static_cast<size_t>(n) > toks.size()) break;
      buf.clear();
      for (int j = 0; j < n; ++j) {
        if (j) buf.push_back('\x1e');
        buf += toks[i + static_cast<size_t>(j)];
      }
      fn(std::string_view(buf));
    }
  }
}

// ---------------------------------------------------------------------------
// IDF. Document frequency is computed over target sentences only; weights are
// keyed by the 64-bit content hash of the n-gram, and unseen n-grams fall back
// to 1.0 so test-time encoding never fails.

struct IdfTable {
  uint64_t doc_count = 0;
  std::unordered_map<uint64_t, double> weights;

  bool operator==(const IdfTable&) const = default;

  double value_for_hash(uint64_t h) const {
    auto it = weights.find(h);
    return it == weights.end() ? 1.0 : it->second;
  }

  double value_for(std::string_view ngram) const {
    return value_for_hash(fnv1a64(ngram));
  }
};

// Incremental IDF fitting; one add_document call per training target sentence.
class IdfBuilder {
 public:
  explicit IdfBuilder(const EncoderConfig& cfg) : cfg_(cfg) { cfg.validate(); }

  void add_document(std::string_view text) {
    seen_.clear();
    auto toks = tokenize(text, cfg_.lowercase);
    for_each_ngram(toks, cfg_.ngram_min, cfg_.ngram_max,
                   [&](std::string_view g) { seen_.insert(fnv1a64(g)); });
    for (uint64_t h : seen_) ++df_[h];
    ++docs_;
  }

  IdfTable finish() const {
    if (docs_ == 0) throw ValidationError("idf fit: empty training set");
    IdfTable t;
    t.doc_count = docs_;
    double n = static_cast<double>(docs_);
    t.weights.reserve(df_.size());
    for (const auto& [h, d] : df_)
      t.weights.emplace(h, std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0);
    return t;
  }

 private:
  EncoderConfig cfg_;
  std::unordered_map<uint64_t, uint64_t> df_;
  std::unordered_set<uint64_t> seen_;
  uint64_t docs_ = 0;
};

inline IdfTable fit_idf(std::span<const ContextWindow> windows,
                        const EncoderConfig& cfg) {
  IdfBuilder b(cfg);
  for (const ContextWindow& w : windows) b.add_document(w.target.text);
  return b.finish();
}

// ---------------------------------------------------------------------------
// Sparse feature vectors.

struct FeatureEntry {
  uint32_t index;
  float value;

  bool operator==(const FeatureEntry&) const = default;
};

struct FeatureVector {
  uint32_t width = 0;
  std::vector<FeatureEntry> entries;  // sorted by index, unique

  bool operator==(const FeatureVector&) const = default;

  double l2_norm() const {
    double s = 0.0;
    for (const auto& e : entries) s += static_cast<double>(e.value) * e.value;
    return std::sqrt(s);
  }
};

enum class Field { Target, SameTurnPrefix, PrevTurn };

namespace detail {

inline const char* field_prefix(Field f) {
  switch (f) {
    case Field::Target: return "tgt";
    case Field::SameTurnPrefix: return "ctx";
    case Field::PrevTurn: return "prv";
  }
  return "tgt";
}

struct RawEntry {
  uint32_t index;
  double value;
};

// Accumulates one field's hashed n-grams into raw (index, value) pairs and
// L2-normalizes the field in place. Determinism note: entries are merged via
// stable_sort so the floating-point summation order never depends on hash-map
// layout.
inline void accumulate_field(std::span<const Sentence> sentences, Field field,
                             const IdfTable* idf, const EncoderConfig& cfg,
                             std::vector<RawEntry>& out) {
  uint64_t prefix_state =
      fnv1a64_byte(0x1f, fnv1a64(field_prefix(field)));
  size_t begin = out.size();
  for (const Sentence& s : sentences) {
    auto toks = tokenize(s.text, cfg.lowercase);
    for_each_ngram(toks, cfg.ngram_min, cfg.ngram_max, [&](std::string_view g) {
      uint64_t h = fnv1a64(g, prefix_state);
      double w = 1.0;
      if (field == Field::Target && idf) w = idf->value_for_hash(fnv1a64(g));
      double sign = ((h >> 33) & 1) ? 1.0 : -1.0;
      out.push_back({static_cast<uint32_t>(h & (cfg.dim - 1)), sign * w});
    });
  }
  std::stable_sort(out.begin() + static_cast<long>(begin), out.end(),
                   [](const RawEntry& a, const RawEntry& b) {
                     return a.index < b.index;
                   });
  // Merge duplicates, then normalize the field to unit L2 norm.
  size_t w = begin;
  for (size_t r = begin; r < out.size();) {
    uint32_t idx = out[r].index;
    double sum = 0.0;
    while (r < out.size() && out[r].index == idx) sum += out[r++].value;
    out[w++] = {idx, sum};
  }
  out.resize(w);
  double n2 = 0.0;
  for (size_t i = begin; i < out.size(); ++i) n2 += out[i].value * out[i].value;
  if (n2 > 0.0) {
    double inv = 1.0 / std::sqrt(n2);
    for (size_t i = begin; i < out.size(); ++i) out[i].value *= inv;
  }
}

inline FeatureVector finish_vector(std::vector<RawEntry>& raw, uint32_t width) {
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawEntry& a, const RawEntry& b) {
                     return a.index < b.index;
                   });
  FeatureVector fv;
  fv.width = width;
  fv.entries.reserve(raw.size());
  for (size_t r = 0; r < raw.size();) {
    uint32_t idx = raw[r].index;
    double sum = 0.0;
    while (r < raw.size() && raw[r].index == idx) sum += raw[r++].value;
    float f = static_cast<float>(sum);
    if (f != 0.0f) fv.entries.push_back({idx, f});
  }
  return fv;
}

}  // namespace detail

// Encodes a single field in isolation (exposed for tests of the per-field
// norm invariant).
inline FeatureVector encode_field(std::span<const Sentence> sentences,
                                  Field field, const IdfTable* idf,
                                  const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<detail::RawEntry> raw;
  detail::accumulate_field(sentences, field, idf, cfg, raw);
  return detail::finish_vector(raw, cfg.feature_width());
}

// Full window encoding: three hashed fields plus two dense extras. The target
// field carries tf-idf weights; context fields are unweighted. Each field is
// L2-normalized independently before the fields are summed into one sparse
// vector, so no field dominates by length.
inline FeatureVector encode_window(const ContextWindow& w, const IdfTable& idf,
                                   const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<detail::RawEntry> raw;
  detail::accumulate_field({&w.target, 1}, Field::Target, &idf, cfg, raw);
  detail::accumulate_field(w.same_turn_prefix, Field::SameTurnPrefix, nullptr,
                           cfg, raw);
  detail::accumulate_field(w.prev_turn, Field::PrevTurn, nullptr, cfg, raw);
  if (w.target_speaker == Speaker::Teacher) raw.push_back({cfg.dim, 1.0});
  if (w.position_fraction != 0.0)
    raw.push_back({cfg.dim + 1, w.position_fraction});
  return detail::finish_vector(raw, cfg.feature_width());
}

inline std::vector<FeatureVector> encode_windows(
    std::span<const ContextWindow> windows, const IdfTable& idf,
    const EncoderConfig& cfg) {
  std::vector<FeatureVector> out;
  out.reserve(windows.size());
  for (const ContextWindow& w : windows) out.push_back(encode_window(w, idf, cfg));
  return out;
}

// Whole-transcript bag of n-grams for the direct transcript->score baseline.
// No field prefixes, no idf, no dense extras; width equals dim.
inline FeatureVector encode_transcript_bag(const Transcript& tr,
                                           const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<detail::RawEntry> raw;
  for_each_sentence(tr, [&](int, int, const Sentence& s, Speaker) {
    auto toks = tokenize(s.text, cfg.lowercase);
    for_each_ngram(toks, cfg.ngram_min, cfg.ngram_max, [&](std::string_view g) {
      uint64_t h = fnv1a64(g);
      double sign = ((h >> 33) & 1) ? 1.0 : -1.0;
      raw.push_back({static_cast<uint32_t>(h & (cfg.dim - 1)), sign});
    });
  });
  FeatureVector fv = detail::finish_vector(raw, cfg.dim);
  double n2 = 0.0;
  for (const auto& e : fv.entries) n2 += static_cast<double>(e.value) * e.value;
  if (n2 > 0.0) {
    float inv = static_cast<float>(1.0 / std::sqrt(n2));
    for (auto& e : fv.entries) e.value *= inv;
  }
  return fv;
}

}  // namespace discq
