#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "atm_pipeline.hpp"
#include "common.hpp"
#include "iqa.hpp"

namespace discq {

// ---------------------------------------------------------------------------
// Little-endian binary encoding, explicit byte order so artifacts are
// portable.

class BinaryWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }

  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }

  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }

  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }

  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const std::vector<uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class BinaryReader {
 public:
  BinaryReader(const uint8_t* data, size_t size) : p_(data), n_(size) {}

  uint8_t u8() {
    need(1);
    return p_[off_++];
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[off_++]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[off_++]) << (8 * i);
    return v;
  }

  int32_t i32() { return static_cast<int32_t>(u32()); }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    uint64_t len = u64();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + off_), len);
    off_ += len;
    return s;
  }

  bool exhausted() const { return off_ == n_; }

 private:
  void need(uint64_t k) const {
    if (off_ + k > n_) throw ArtifactError("truncated model artifact");
  }

  const uint8_t* p_;
  size_t n_;
  size_t off_ = 0;
};

// ---------------------------------------------------------------------------
// Component writers/readers.

namespace detail {

inline void write_encoder(BinaryWriter& w, const EncoderConfig& c) {
  w.u32(c.dim);
  w.i32(c.ngram_min);
  w.i32(c.ngram_max);
  w.u8(c.lowercase ? 1 : 0);
}

inline EncoderConfig read_encoder(BinaryReader& r) {
  EncoderConfig c;
  c.dim = r.u32();
  c.ngram_min = r.i32();
  c.ngram_max = r.i32();
  c.lowercase = r.u8() != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ArtifactError(std::string("artifact encoder config invalid: ") + e.what());
  }
  return c;
}

inline void write_idf(BinaryWriter& w, const IdfTable& t) {
  w.u64(t.doc_count);
  std::vector<std::pair<uint64_t, double>> entries(t.weights.begin(),
                                                   t.weights.end());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  w.u64(entries.size());
  for (const auto& [k, v] : entries) {
    w.u64(k);
    w.f64(v);
  }
}

inline IdfTable read_idf(BinaryReader& r) {
  IdfTable t;
  t.doc_count = r.u64();
  uint64_t n = r.u64();
  t.weights.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    uint64_t k = r.u64();
    t.weights[k] = r.f64();
  }
  return t;
}

inline void write_softmax(BinaryWriter& w, const SoftmaxModel& m) {
  w.u32(m.num_classes);
  w.u32(m.width);
  w.u64(m.class_labels.size());
  for (const std::string& s : m.class_labels) w.str(s);
  w.f64(m.final_train_loss);
  for (double v : m.bias) w.f64(v);
  for (double v : m.weights) w.f64(v);
}

inline SoftmaxModel read_softmax(BinaryReader& r) {
  SoftmaxModel m;
  m.num_classes = r.u32();
  m.width = r.u32();
  if (m.num_classes < 2 || m.num_classes > 64)
    throw ArtifactError("artifact softmax class count out of range");
  uint64_t nl = r.u64();
  for (uint64_t i = 0; i < nl; ++i) m.class_labels.push_back(r.str());
  m.final_train_loss = r.f64();
  m.bias.resize(m.num_classes);
  for (double& v : m.bias) v = r.f64();
  m.weights.resize(static_cast<size_t>(m.width) * m.num_classes);
  for (double& v : m.weights) v = r.f64();
  return m;
}

inline void write_crf(BinaryWriter& w, const CrfModel& m) {
  w.u32(m.width);
  w.f64(m.final_train_loss);
  for (double v : m.emission_bias) w.f64(v);
  for (const auto& row : m.transition)
    for (double v : row) w.f64(v);
  for (double v : m.start) w.f64(v);
  for (double v : m.stop) w.f64(v);
  for (double v : m.emission) w.f64(v);
}

inline CrfModel read_crf(BinaryReader& r) {
  CrfModel m;
  m.width = r.u32();
  m.final_train_loss = r.f64();
  for (double& v : m.emission_bias) v = r.f64();
  for (auto& row : m.transition)
    for (double& v : row) v = r.f64();
  for (double& v : m.start) v = r.f64();
  for (double& v : m.stop) v = r.f64();
  m.emission.resize(static_cast<size_t>(m.width) * kCrfLabels);
  for (double& v : m.emission) v = r.f64();
  return m;
}

inline void write_regressor(BinaryWriter& w, const LinearRegressor& m) {
  w.u64(m.weights.size());
  for (double v : m.weights) w.f64(v);
  w.f64(m.intercept);
}

inline LinearRegressor read_regressor(BinaryReader& r) {
  LinearRegressor m;
  uint64_t d = r.u64();
  if (d > 16) throw ArtifactError("artifact regressor dimension out of range");
  m.weights.resize(d);
  for (double& v : m.weights) v = r.f64();
  m.intercept = r.f64();
  return m;
}

}  // namespace detail

inline void write_hier(BinaryWriter& w, const HierModel& m) {
  detail::write_encoder(w, m.encoder);
  w.i32(m.context_cap);
  detail::write_idf(w, m.idf);
  detail::write_softmax(w, m.step1);
  detail::write_softmax(w, m.teacher_step2);
  detail::write_softmax(w, m.student_step2);
  w.u8(m.teacher_fallback ? 1 : 0);
  w.u8(m.student_fallback ? 1 : 0);
}

inline HierModel read_hier(BinaryReader& r) {
  HierModel m;
  m.encoder = detail::read_encoder(r);
  m.context_cap = r.i32();
  m.idf = detail::read_idf(r);
  m.step1 = detail::read_softmax(r);
  m.teacher_step2 = detail::read_softmax(r);
  m.student_step2 = detail::read_softmax(r);
  m.teacher_fallback = r.u8() != 0;
  m.student_fallback = r.u8() != 0;
  return m;
}

inline void write_flat(BinaryWriter& w, const FlatModel& m) {
  detail::write_encoder(w, m.encoder);
  w.i32(m.context_cap);
  detail::write_idf(w, m.idf);
  detail::write_softmax(w, m.clf);
}

inline FlatModel read_flat(BinaryReader& r) {
  FlatModel m;
  m.encoder = detail::read_encoder(r);
  m.context_cap = r.i32();
  m.idf = detail::read_idf(r);
  m.clf = detail::read_softmax(r);
  return m;
}

inline void write_seq(BinaryWriter& w, const SeqModel& m) {
  detail::write_encoder(w, m.encoder);
  w.i32(m.context_cap);
  detail::write_idf(w, m.idf);
  w.u8(m.speaker_mask ? 1 : 0);
  detail::write_crf(w, m.crf);
}

inline SeqModel read_seq(BinaryReader& r) {
  SeqModel m;
  m.encoder = detail::read_encoder(r);
  m.context_cap = r.i32();
  m.idf = detail::read_idf(r);
  m.speaker_mask = r.u8() != 0;
  m.crf = detail::read_crf(r);
  return m;
}

inline uint64_t fingerprint_bytes(const std::vector<uint8_t>& bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                  bytes.size()));
}

inline uint64_t fingerprint_hier(const HierModel& m) {
  BinaryWriter w;
  write_hier(w, m);
  return fingerprint_bytes(w.bytes());
}

inline uint64_t fingerprint_flat(const FlatModel& m) {
  BinaryWriter w;
  write_flat(w, m);
  return fingerprint_bytes(w.bytes());
}

inline uint64_t fingerprint_seq(const SeqModel& m) {
  BinaryWriter w;
  write_seq(w, m);
  return fingerprint_bytes(w.bytes());
}

// ---------------------------------------------------------------------------
// Trained bundle: one sentence-code model plus fitted score estimators, as
// written by the train command and consumed by predict.

enum class AtmMethod { Hierarchical, Flat, Seqlab };

inline const char* atm_method_name(AtmMethod m) {
  switch (m) {
    case AtmMethod::Hierarchical: return "hierarchical";
    case AtmMethod::Flat: return "flat";
    case AtmMethod::Seqlab: return "seqlab";
  }
  return "hierarchical";
}

inline AtmMethod atm_method_from_string(std::string_view s) {
  if (s == "hierarchical") return AtmMethod::Hierarchical;
  if (s == "flat") return AtmMethod::Flat;
  if (s == "seqlab") return AtmMethod::Seqlab;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

struct IqaEstimatorSet {
  std::array<ThresholdModel, kNumRubrics> thresholds;
  std::array<IqaRegressionModel, kNumRubrics> regressions;
};

struct TrainedBundle {
  uint64_t config_hash = 0;
  AtmMethod method = AtmMethod::Hierarchical;
  MergeMode merge = MergeMode::WithinTurn;
  std::string primary_estimator = "regression";  // "regression" | "threshold"
  std::optional<HierModel> hier;
  std::optional<FlatModel> flat;
  std::optional<SeqModel> seq;
  IqaEstimatorSet iqa;

  const EncoderConfig& encoder() const {
    switch (method) {
      case AtmMethod::Hierarchical: return hier->encoder;
      case AtmMethod::Flat: return flat->encoder;
      case AtmMethod::Seqlab: return seq->encoder;
    }
    return hier->encoder;
  }
};

inline constexpr char kBundleMagic[4] = {'D', 'Q', 'B', '1'};
inline constexpr uint32_t kBundleVersion = 1;

inline std::vector<uint8_t> serialize_bundle(const TrainedBundle& b) {
  if (b.primary_estimator != "regression" && b.primary_estimator != "threshold")
    throw ValidationError("bundle: unknown primary estimator");
  BinaryWriter w;
  for (char c : kBundleMagic) w.u8(static_cast<uint8_t>(c));
  w.u32(kBundleVersion);
  w.u64(b.config_hash);
  w.u8(static_cast<uint8_t>(b.method));
  w.u8(static_cast<uint8_t>(b.merge));
  w.str(b.primary_estimator);
  switch (b.method) {
    case AtmMethod::Hierarchical:
      if (!b.hier) throw ValidationError("bundle: missing hierarchical model");
      write_hier(w, *b.hier);
      break;
    case AtmMethod::Flat:
      if (!b.flat) throw ValidationError("bundle: missing flat model");
      write_flat(w, *b.flat);
      break;
    case AtmMethod::Seqlab:
      if (!b.seq) throw ValidationError("bundle: missing seqlab model");
      write_seq(w, *b.seq);
      break;
  }
  for (const auto& t : b.iqa.thresholds) {
    w.u8(static_cast<uint8_t>(t.rubric));
    for (double c : t.cuts) w.f64(c);
  }
  for (const auto& m : b.iqa.regressions) {
    w.u8(static_cast<uint8_t>(m.rubric));
    detail::write_regressor(w, m.reg);
  }
  return w.bytes();
}

inline TrainedBundle deserialize_bundle(const uint8_t* data, size_t size) {
  BinaryReader r(data, size);
  for (char c : kBundleMagic)
    if (r.u8() != static_cast<uint8_t>(c))
      throw ArtifactError("not a model artifact (bad magic)");
  uint32_t version = r.u32();
  if (version != kBundleVersion)
    throw ArtifactError("unsupported artifact version " + std::to_string(version));
  TrainedBundle b;
  b.config_hash = r.u64();
  uint8_t method = r.u8();
  if (method > 2) throw ArtifactError("artifact method byte out of range");
  b.method = static_cast<AtmMethod>(method);
  uint8_t merge = r.u8();
  if (merge > 2) throw ArtifactError("artifact merge byte out of range");
  b.merge = static_cast<MergeMode>(merge);
  b.primary_estimator = r.str();
  if (b.primary_estimator != "regression" && b.primary_estimator != "threshold")
    throw ArtifactError("artifact has unknown primary estimator");
  switch (b.method) {
    case AtmMethod::Hierarchical: b.hier = read_hier(r); break;
    case AtmMethod::Flat: b.flat = read_flat(r); break;
    case AtmMethod::Seqlab: b.seq = read_seq(r); break;
  }
  for (int i = 0; i < kNumRubrics; ++i) {
    ThresholdModel t;
    uint8_t rb = r.u8();
    if (rb != i) throw ArtifactError("artifact estimator rubric order corrupt");
    t.rubric = static_cast<IqaRubric>(rb);
    for (double& c : t.cuts) c = r.f64();
    b.iqa.thresholds[static_cast<size_t>(i)] = t;
  }
  for (int i = 0; i < kNumRubrics; ++i) {
    IqaRegressionModel m;
    uint8_t rb = r.u8();
    if (rb != i) throw ArtifactError("artifact estimator rubric order corrupt");
    m.rubric = static_cast<IqaRubric>(rb);
    m.reg = detail::read_regressor(r);
    size_t want = rubric_relevant_codes(m.rubric).size();
    if (m.reg.weights.size() != want)
      throw ArtifactError("artifact regressor dimension mismatch");
    b.iqa.regressions[static_cast<size_t>(i)] = m;
  }
  if (!r.exhausted()) throw ArtifactError("trailing bytes in model artifact");

  // Cross-checks: stored matrices must agree with the stored encoder config.
  auto check_softmax = [](const SoftmaxModel& m, uint32_t width) {
    if (m.width != width || m.weights.size() != static_cast<size_t>(width) * m.num_classes)
      throw ArtifactError("artifact dimension mismatch");
  };
  switch (b.method) {
    case AtmMethod::Hierarchical: {
      uint32_t width = b.hier->encoder.feature_width();
      check_softmax(b.hier->step1, width);
      check_softmax(b.hier->teacher_step2, width);
      check_softmax(b.hier->student_step2, width);
      break;
    }
    case AtmMethod::Flat:
      check_softmax(b.flat->clf, b.flat->encoder.feature_width());
      break;
    case AtmMethod::Seqlab:
      if (b.seq->crf.width != b.seq->encoder.feature_width())
        throw ArtifactError("artifact dimension mismatch");
      break;
  }
  return b;
}

inline void save_bundle(const std::string& path, const TrainedBundle& b) {
  std::vector<uint8_t> bytes = serialize_bundle(b);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline TrainedBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes.data(), bytes.size());
}

}  // namespace discq
