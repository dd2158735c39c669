#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "common.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "iqa.hpp"
#include "model_io.hpp"
#include "synth.hpp"

namespace discq {

// Exit codes, one per failure family.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitValidation = 4;
inline constexpr int kExitArtifact = 5;
inline constexpr int kExitNetwork = 6;
inline constexpr int kExitInternal = 7;

// ---------------------------------------------------------------------------
// RunConfig: one JSON document holding every tunable. Unknown keys are
// rejected so typos fail loudly; the canonical serialization of the effective
// config (defaults materialized, flag overrides applied) is hashed into every
// output for provenance.

struct RunConfig {
  uint64_t seed = 17;
  int jobs = 1;
  int k = 5;
  int context_cap = 10;
  EncoderConfig encoder;
  OptimConfig optim;
  OptimConfig crf_optim{1.0, 40, 1e-4, 4, 17};
  OptimConfig e2e_optim{0.2, 100, 1e-4, 16, 17};
  double downsample_ratio = 0.6;
  MergeMode merge = MergeMode::WithinTurn;
  bool speaker_mask = true;
  AtmMethod method = AtmMethod::Hierarchical;
  bool downsample = true;
  bool oracle_step1 = false;
  std::string estimator = "regression";
  bool fit_iqa_on_gold_counts = false;
  std::vector<std::string> rows = {"flat",   "flat_ds",      "hier",
                                   "hier_ds", "seq",          "seq_ds",
                                   "hier_oracle", "hier_oracle_ds"};
  std::vector<std::string> iqa_sources = {"hier_ds", "seq_ds"};
  bool baseline = true;
  std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  SynthConfig synth;

  void validate() const {
    if (estimator != "regression" && estimator != "threshold")
      throw ConfigError("estimator must be 'regression' or 'threshold'");
    to_cv().validate();
    SynthConfig sc = synth;
    sc.seed = seed;
    sc.validate();
  }

  CvConfig to_cv() const {
    CvConfig cv;
    cv.k = k;
    cv.seed = seed;
    cv.jobs = jobs;
    cv.config_hash = 0;  // stamped by the caller
    cv.encoder = encoder;
    cv.context_cap = context_cap;
    cv.optim = optim;
    cv.crf_optim = crf_optim;
    cv.e2e_optim = e2e_optim;
    cv.downsample_ratio = downsample_ratio;
    cv.speaker_mask = speaker_mask;
    cv.merge = merge;
    cv.fit_iqa_on_gold_counts = fit_iqa_on_gold_counts;
    cv.rows.clear();
    for (const std::string& name : rows) cv.rows.push_back(row_spec_from_name(name));
    cv.iqa_sources = iqa_sources;
    cv.baseline = baseline;
    return cv;
  }
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object())
    throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + where);
}

inline double get_num(const json& obj, const char* key, double dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_number())
    throw ConfigError(std::string("config: '") + key + "' must be a number");
  return obj[key].get<double>();
}

inline int get_int(const json& obj, const char* key, int dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_number_integer())
    throw ConfigError(std::string("config: '") + key + "' must be an integer");
  return obj[key].get<int>();
}

inline uint64_t get_u64(const json& obj, const char* key, uint64_t dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_number_unsigned() && !obj[key].is_number_integer())
    throw ConfigError(std::string("config: '") + key + "' must be an integer");
  return obj[key].get<uint64_t>();
}

inline bool get_bool(const json& obj, const char* key, bool dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_boolean())
    throw ConfigError(std::string("config: '") + key + "' must be a boolean");
  return obj[key].get<bool>();
}

inline std::string get_str(const json& obj, const char* key,
                           const std::string& dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj[key].is_string())
    throw ConfigError(std::string("config: '") + key + "' must be a string");
  return obj[key].get<std::string>();
}

inline OptimConfig parse_optim(const json& obj, const OptimConfig& dflt,
                               const std::string& where) {
  check_keys(obj, {"learning_rate", "epochs", "l2", "batch_size"}, where);
  OptimConfig o = dflt;
  o.learning_rate = get_num(obj, "learning_rate", o.learning_rate);
  o.epochs = get_int(obj, "epochs", o.epochs);
  o.l2 = get_num(obj, "l2", o.l2);
  o.batch_size = get_int(obj, "batch_size", o.batch_size);
  return o;
}

inline json optim_to_json(const OptimConfig& o) {
  json j;
  j["learning_rate"] = o.learning_rate;
  j["epochs"] = o.epochs;
  j["l2"] = o.l2;
  j["batch_size"] = o.batch_size;
  return j;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  using detail::json;
  detail::check_keys(
      doc,
      {"seed", "jobs", "k", "context_cap", "encoder", "optim", "crf_optim",
       "e2e_optim", "downsample_ratio", "merge", "speaker_mask", "method",
       "downsample", "oracle_step1", "estimator", "fit_iqa_on_gold_counts",
       "rows", "iqa_sources", "baseline", "fractions", "synth"},
      "the top level");
  RunConfig cfg;
  cfg.seed = detail::get_u64(doc, "seed", cfg.seed);
  cfg.jobs = detail::get_int(doc, "jobs", cfg.jobs);
  cfg.k = detail::get_int(doc, "k", cfg.k);
  cfg.context_cap = detail::get_int(doc, "context_cap", cfg.context_cap);
  if (doc.contains("encoder")) {
    const json& e = doc["encoder"];
    detail::check_keys(e, {"dim", "ngram_min", "ngram_max", "lowercase"},
                       "'encoder'");
    cfg.encoder.dim = static_cast<uint32_t>(
        detail::get_u64(e, "dim", cfg.encoder.dim));
    cfg.encoder.ngram_min = detail::get_int(e, "ngram_min", cfg.encoder.ngram_min);
    cfg.encoder.ngram_max = detail::get_int(e, "ngram_max", cfg.encoder.ngram_max);
    cfg.encoder.lowercase = detail::get_bool(e, "lowercase", cfg.encoder.lowercase);
  }
  if (doc.contains("optim"))
    cfg.optim = detail::parse_optim(doc["optim"], cfg.optim, "'optim'");
  if (doc.contains("crf_optim"))
    cfg.crf_optim = detail::parse_optim(doc["crf_optim"], cfg.crf_optim, "'crf_optim'");
  if (doc.contains("e2e_optim"))
    cfg.e2e_optim = detail::parse_optim(doc["e2e_optim"], cfg.e2e_optim, "'e2e_optim'");
  cfg.downsample_ratio = detail::get_num(doc, "downsample_ratio", cfg.downsample_ratio);
  cfg.merge = merge_mode_from_string(
      detail::get_str(doc, "merge", merge_mode_name(cfg.merge)));
  cfg.speaker_mask = detail::get_bool(doc, "speaker_mask", cfg.speaker_mask);
  cfg.method = atm_method_from_string(
      detail::get_str(doc, "method", atm_method_name(cfg.method)));
  cfg.downsample = detail::get_bool(doc, "downsample", cfg.downsample);
  cfg.oracle_step1 = detail::get_bool(doc, "oracle_step1", cfg.oracle_step1);
  cfg.estimator = detail::get_str(doc, "estimator", cfg.estimator);
  cfg.fit_iqa_on_gold_counts =
      detail::get_bool(doc, "fit_iqa_on_gold_counts", cfg.fit_iqa_on_gold_counts);
  auto str_list = [](const json& arr, const char* key) {
    if (!arr.is_array()) throw ConfigError(std::string("config: '") + key + "' must be an array");
    std::vector<std::string> out;
    for (const json& x : arr) {
      if (!x.is_string())
        throw ConfigError(std::string("config: '") + key + "' entries must be strings");
      out.push_back(x.get<std::string>());
    }
    return out;
  };
  if (doc.contains("rows")) cfg.rows = str_list(doc["rows"], "rows");
  if (doc.contains("iqa_sources"))
    cfg.iqa_sources = str_list(doc["iqa_sources"], "iqa_sources");
  cfg.baseline = detail::get_bool(doc, "baseline", cfg.baseline);
  if (doc.contains("fractions")) {
    if (!doc["fractions"].is_array())
      throw ConfigError("config: 'fractions' must be an array");
    cfg.fractions.clear();
    for (const json& x : doc["fractions"]) {
      if (!x.is_number())
        throw ConfigError("config: 'fractions' entries must be numbers");
      cfg.fractions.push_back(x.get<double>());
    }
  }
  if (doc.contains("synth")) {
    const json& s = doc["synth"];
    detail::check_keys(
        s,
        {"n_transcripts", "turns_min", "turns_max", "sentences_min",
         "sentences_max", "alternate_prob", "code_rates", "run_min", "run_max",
         "lambda", "lambda_per_code", "lexicon_size", "filler_vocab",
         "filler_min", "filler_max", "quality_sigma", "score_map", "sigma"},
        "'synth'");
    SynthConfig& sc = cfg.synth;
    sc.n_transcripts = detail::get_int(s, "n_transcripts", sc.n_transcripts);
    sc.turns_min = detail::get_int(s, "turns_min", sc.turns_min);
    sc.turns_max = detail::get_int(s, "turns_max", sc.turns_max);
    sc.sentences_min = detail::get_int(s, "sentences_min", sc.sentences_min);
    sc.sentences_max = detail::get_int(s, "sentences_max", sc.sentences_max);
    sc.alternate_prob = detail::get_num(s, "alternate_prob", sc.alternate_prob);
    auto rate_array = [&](const char* key, std::array<double, kNumFocalCodes>& dst) {
      if (!s.contains(key)) return;
      if (!s[key].is_array() || s[key].size() != static_cast<size_t>(kNumFocalCodes))
        throw ConfigError(std::string("config: '") + key + "' must be an array of " +
                          std::to_string(kNumFocalCodes) + " numbers");
      for (size_t i = 0; i < static_cast<size_t>(kNumFocalCodes); ++i) {
        if (!s[key][i].is_number())
          throw ConfigError(std::string("config: '") + key + "' entries must be numbers");
        dst[i] = s[key][i].get<double>();
      }
    };
    rate_array("code_rates", sc.code_rates);
    rate_array("lambda_per_code", sc.lambda_per_code);
    sc.run_min = detail::get_int(s, "run_min", sc.run_min);
    sc.run_max = detail::get_int(s, "run_max", sc.run_max);
    sc.lambda_sep = detail::get_num(s, "lambda", sc.lambda_sep);
    if (s.contains("lexicon_size")) {
      const json& lx = s["lexicon_size"];
      if (lx.is_number_integer()) {
        sc.lexicon_size.fill(lx.get<int>());
      } else if (lx.is_array() && lx.size() == static_cast<size_t>(kNumFocalCodes)) {
        for (size_t i = 0; i < static_cast<size_t>(kNumFocalCodes); ++i) {
          if (!lx[i].is_number_integer())
            throw ConfigError("config: 'lexicon_size' entries must be integers");
          sc.lexicon_size[i] = lx[i].get<int>();
        }
      } else {
        throw ConfigError(std::string("config: 'lexicon_size' must be an integer or an array of ") +
                          std::to_string(kNumFocalCodes) + " integers");
      }
    }
    sc.filler_vocab = detail::get_int(s, "filler_vocab", sc.filler_vocab);
    sc.filler_min = detail::get_int(s, "filler_min", sc.filler_min);
    sc.filler_max = detail::get_int(s, "filler_max", sc.filler_max);
    if (s.contains("score_map")) {
      const json& sm = s["score_map"];
      detail::check_keys(sm, {"S1", "S2", "S3", "S4"}, "'score_map'");
      for (int ri = 0; ri < kNumRubrics; ++ri) {
        const char* rn = rubric_name(static_cast<IqaRubric>(ri));
        if (!sm.contains(rn)) continue;
        detail::check_keys(sm[rn], {"alpha", "beta"},
                           std::string("'score_map.") + rn + "'");
        ScoreMap& m = sc.score_map[static_cast<size_t>(ri)];
        m.alpha = detail::get_num(sm[rn], "alpha", m.alpha);
        m.beta = detail::get_num(sm[rn], "beta", m.beta);
      }
    }
    sc.quality_sigma = detail::get_num(s, "quality_sigma", sc.quality_sigma);
    sc.sigma = detail::get_num(s, "sigma", sc.sigma);
  }
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  using detail::json;
  json j;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["k"] = cfg.k;
  j["context_cap"] = cfg.context_cap;
  json e;
  e["dim"] = cfg.encoder.dim;
  e["ngram_min"] = cfg.encoder.ngram_min;
  e["ngram_max"] = cfg.encoder.ngram_max;
  e["lowercase"] = cfg.encoder.lowercase;
  j["encoder"] = std::move(e);
  j["optim"] = detail::optim_to_json(cfg.optim);
  j["crf_optim"] = detail::optim_to_json(cfg.crf_optim);
  j["e2e_optim"] = detail::optim_to_json(cfg.e2e_optim);
  j["downsample_ratio"] = cfg.downsample_ratio;
  j["merge"] = merge_mode_name(cfg.merge);
  j["speaker_mask"] = cfg.speaker_mask;
  j["method"] = atm_method_name(cfg.method);
  j["downsample"] = cfg.downsample;
  j["oracle_step1"] = cfg.oracle_step1;
  j["estimator"] = cfg.estimator;
  j["fit_iqa_on_gold_counts"] = cfg.fit_iqa_on_gold_counts;
  j["rows"] = cfg.rows;
  j["iqa_sources"] = cfg.iqa_sources;
  j["baseline"] = cfg.baseline;
  j["fractions"] = cfg.fractions;
  json s;
  s["n_transcripts"] = cfg.synth.n_transcripts;
  s["turns_min"] = cfg.synth.turns_min;
  s["turns_max"] = cfg.synth.turns_max;
  s["sentences_min"] = cfg.synth.sentences_min;
  s["sentences_max"] = cfg.synth.sentences_max;
  s["alternate_prob"] = cfg.synth.alternate_prob;
  s["code_rates"] = cfg.synth.code_rates;
  s["run_min"] = cfg.synth.run_min;
  s["run_max"] = cfg.synth.run_max;
  s["lambda"] = cfg.synth.lambda_sep;
  s["lambda_per_code"] = cfg.synth.lambda_per_code;
  s["lexicon_size"] = cfg.synth.lexicon_size;
  s["filler_vocab"] = cfg.synth.filler_vocab;
  s["filler_min"] = cfg.synth.filler_min;
  s["filler_max"] = cfg.synth.filler_max;
  json sm;
  for (int ri = 0; ri < kNumRubrics; ++ri) {
    json m;
    m["alpha"] = cfg.synth.score_map[static_cast<size_t>(ri)].alpha;
    m["beta"] = cfg.synth.score_map[static_cast<size_t>(ri)].beta;
    sm[rubric_name(static_cast<IqaRubric>(ri))] = std::move(m);
  }
  s["quality_sigma"] = cfg.synth.quality_sigma;
  s["score_map"] = std::move(sm);
  s["sigma"] = cfg.synth.sigma;
  j["synth"] = std::move(s);
  return j;
}

inline uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(run_config_to_json(cfg).dump());
}

// ---------------------------------------------------------------------------
// File helpers.

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Corpus load_corpus(const std::string& path) {
  return parse_corpus_text(read_file(path));
}

inline nlohmann::json load_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse_run_config(load_json(path));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each is a pure function of (inputs, effective config); outputs
// are byte-stable across reruns.

inline int cmd_synth(const RunConfig& cfg, const std::string& out_path) {
  cfg.validate();
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  Corpus c = generate_corpus(sc);
  std::map<std::string, std::string> meta;
  meta["config_hash"] = detail::hex64(config_hash(cfg));
  meta["generator"] = "synth";
  detail::write_file(out_path, serialize_corpus(c, meta));
  return kExitOk;
}

namespace detail {

// Sentence codes for one transcript under the bundle's model.
inline std::vector<AtmCode> bundle_predict(const TrainedBundle& b,
                                           const Transcript& tr,
                                           bool oracle_step1) {
  if (oracle_step1 && b.method != AtmMethod::Hierarchical)
    throw ConfigError("--oracle-step1 requires a hierarchical model");
  switch (b.method) {
    case AtmMethod::Hierarchical:
      if (oracle_step1) {
        std::vector<uint8_t> flags = oracle_focal_flags(tr);
        return predict_hierarchical(*b.hier, tr, &flags);
      }
      return predict_hierarchical(*b.hier, tr);
    case AtmMethod::Flat: return predict_flat(*b.flat, tr);
    case AtmMethod::Seqlab: return predict_seqlab(*b.seq, tr);
  }
  throw ValidationError("bundle has an unknown method");
}

}  // namespace detail

inline int cmd_train(const RunConfig& cfg, const std::string& corpus_path,
                     const std::string& out_path) {
  cfg.validate();
  Corpus c = detail::load_corpus(corpus_path);
  detail::require_full_gold(c);

  TrainedBundle b;
  b.config_hash = config_hash(cfg);
  b.method = cfg.method;
  b.merge = cfg.merge;
  b.primary_estimator = cfg.estimator;

  std::optional<DownsampleConfig> ds;
  if (cfg.downsample)
    ds = DownsampleConfig{cfg.downsample_ratio, derive_seed(cfg.seed, "downsample", 0)};
  std::string tag = atm_method_name(cfg.method);
  if (cfg.downsample) tag += "-ds";
  switch (cfg.method) {
    case AtmMethod::Hierarchical: {
      OptimConfig o = cfg.optim;
      o.seed = derive_seed(cfg.seed, tag, 0);
      b.hier = train_hierarchical(c, cfg.encoder, cfg.context_cap, o,
                                  ds ? &*ds : nullptr);
      break;
    }
    case AtmMethod::Flat: {
      OptimConfig o = cfg.optim;
      o.seed = derive_seed(cfg.seed, tag, 0);
      b.flat = train_flat(c, cfg.encoder, cfg.context_cap, o, ds ? &*ds : nullptr);
      break;
    }
    case AtmMethod::Seqlab: {
      OptimConfig o = cfg.crf_optim;
      o.seed = derive_seed(cfg.seed, tag, 0);
      b.seq = train_seqlab(c, cfg.encoder, cfg.context_cap, o,
                           ds ? &*ds : nullptr, cfg.speaker_mask);
      break;
    }
  }

  // Fit both estimator families on this corpus's counts (predicted by the
  // fresh model, or gold when configured) so the bundle can score any corpus.
  for (int ri = 0; ri < kNumRubrics; ++ri) {
    IqaRubric rubric = static_cast<IqaRubric>(ri);
    std::vector<std::pair<int, int>> totals;
    std::vector<std::pair<CountVector, int>> cvs;
    for (const Transcript& tr : c.transcripts) {
      std::vector<AtmCode> codes = cfg.fit_iqa_on_gold_counts
                                       ? gold_codes_flat(tr)
                                       : detail::bundle_predict(b, tr, false);
      CountVector cv = count_vector_from(count_codes(tr, codes, cfg.merge), rubric);
      int gold = tr.gold_iqa.at(rubric);
      totals.push_back({cv.total(), gold});
      cvs.push_back({std::move(cv), gold});
    }
    b.iqa.thresholds[static_cast<size_t>(ri)] = fit_thresholds(rubric, totals);
    b.iqa.regressions[static_cast<size_t>(ri)] = fit_iqa_regression(rubric, cvs);
  }

  save_bundle(out_path, b);
  return kExitOk;
}

inline int cmd_predict(const std::string& model_path,
                       const std::string& corpus_path,
                       const std::string& out_dir, bool oracle_step1) {
  TrainedBundle b = load_bundle(model_path);
  Corpus c = detail::load_corpus(corpus_path);
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  std::string predictions, instances;
  nlohmann::json scores, scores_raw;
  for (const Transcript& tr : c.transcripts) {
    std::vector<AtmCode> codes = detail::bundle_predict(b, tr, oracle_step1);
    size_t flat = 0;
    for (size_t ti = 0; ti < tr.turns.size(); ++ti)
      for (size_t si = 0; si < tr.turns[ti].sentences.size(); ++si, ++flat) {
        nlohmann::json line;
        line["transcript_id"] = tr.id;
        line["turn"] = ti;
        line["idx"] = si;
        line["speaker"] = speaker_name(tr.turns[ti].speaker);
        if (tr.turns[ti].sentences[si].gold_code)
          line["gold"] = atm_code_name(*tr.turns[ti].sentences[si].gold_code);
        line["pred"] = atm_code_name(codes[flat]);
        predictions += line.dump();
        predictions += "\n";
      }
    // Instance dump is always within-turn runs; scoring counts follow the
    // bundle's merge mode.
    for (const CodeInstance& inst : merge_adjacent(tr, codes)) {
      nlohmann::json line;
      line["transcript_id"] = tr.id;
      line["code"] = atm_code_name(inst.code);
      line["turn"] = inst.turn_index;
      line["first"] = inst.first_sentence;
      line["last"] = inst.last_sentence;
      instances += line.dump();
      instances += "\n";
    }
    std::array<int, kNumFocalCodes> counts = count_codes(tr, codes, b.merge);
    nlohmann::json sj, rj;
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      IqaRubric rubric = static_cast<IqaRubric>(ri);
      CountVector cv = count_vector_from(counts, rubric);
      const char* rn = rubric_name(rubric);
      sj[rn] = b.primary_estimator == "threshold"
                   ? predict_threshold(b.iqa.thresholds[static_cast<size_t>(ri)], cv)
                   : predict_iqa_regression(
                         b.iqa.regressions[static_cast<size_t>(ri)], cv);
      rj[rn] = predict_iqa_raw(b.iqa.regressions[static_cast<size_t>(ri)], cv);
    }
    scores[tr.id] = std::move(sj);
    scores_raw[tr.id] = std::move(rj);
  }

  nlohmann::json meta;
  meta["config_hash"] = detail::hex64(b.config_hash);
  meta["model_fingerprint"] = detail::hex64(fingerprint_bytes(serialize_bundle(b)));
  meta["method"] = atm_method_name(b.method);
  meta["merge"] = merge_mode_name(b.merge);
  meta["estimator"] = b.primary_estimator;
  meta["oracle_step1"] = oracle_step1;

  detail::write_file(dir / "predictions.jsonl", predictions);
  detail::write_file(dir / "instances.jsonl", instances);
  detail::write_file(dir / "scores.json", scores.dump(2) + "\n");
  detail::write_file(dir / "scores_raw.json", scores_raw.dump(2) + "\n");
  detail::write_file(dir / "meta.json", meta.dump(2) + "\n");
  return kExitOk;
}

inline int cmd_cv(const RunConfig& cfg, const std::string& corpus_path,
                  const std::string& out_dir) {
  cfg.validate();
  Corpus c = detail::load_corpus(corpus_path);
  CvConfig cv = cfg.to_cv();
  cv.config_hash = config_hash(cfg);
  CvReport report = run_cv(c, cv);
  std::filesystem::path dir(out_dir);
  detail::write_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
  detail::write_file(dir / "report.csv", report_to_csv(report));
  return kExitOk;
}

inline int cmd_curve(const RunConfig& cfg, const std::string& corpus_path,
                     const std::string& out_dir) {
  cfg.validate();
  Corpus c = detail::load_corpus(corpus_path);
  CvConfig cv = cfg.to_cv();
  cv.config_hash = config_hash(cfg);
  CurveReport report = learning_curve(c, cv, cfg.fractions);
  std::filesystem::path dir(out_dir);
  detail::write_file(dir / "curve.json", curve_to_json(report).dump(2) + "\n");
  detail::write_file(dir / "curve.csv", curve_to_csv(report));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// compare: paired randomization significance between two cv reports.

namespace detail {

struct CompareCell {
  std::string name;
  std::vector<double> a, b;
  std::map<std::string, double> a_tr, b_tr;  // per-transcript (atm rows only)
};

inline std::vector<double> per_fold_of(const nlohmann::json& summary) {
  std::vector<double> out;
  for (const nlohmann::json& v : summary.at("per_fold"))
    out.push_back(v.get<double>());
  return out;
}

inline std::map<std::string, double> per_transcript_of(const nlohmann::json& row) {
  std::map<std::string, double> out;
  if (!row.contains("per_transcript_f1")) return out;
  for (const auto& [id, v] : row.at("per_transcript_f1").items())
    out[id] = v.get<double>();
  return out;
}

inline std::vector<CompareCell> collect_cells(const nlohmann::json& a,
                                              const nlohmann::json& b,
                                              const std::string& only) {
  std::vector<CompareCell> cells;
  auto want = [&](const std::string& name) { return only.empty() || only == name; };

  std::map<std::string, const nlohmann::json*> b_atm;
  for (const nlohmann::json& row : b.at("atm"))
    b_atm[row.at("name").get<std::string>()] = &row;
  for (const nlohmann::json& row : a.at("atm")) {
    std::string name = row.at("name").get<std::string>();
    auto it = b_atm.find(name);
    if (it == b_atm.end()) continue;
    if (want("atm:" + name)) {
      CompareCell c;
      c.name = "atm:" + name;
      c.a = per_fold_of(row.at("f1"));
      c.b = per_fold_of(it->second->at("f1"));
      c.a_tr = per_transcript_of(row);
      c.b_tr = per_transcript_of(*it->second);
      cells.push_back(std::move(c));
    }
    if (row.contains("step1_f1") && it->second->contains("step1_f1") &&
        want("atm:" + name + ":step1")) {
      CompareCell c;
      c.name = "atm:" + name + ":step1";
      c.a = per_fold_of(row.at("step1_f1"));
      c.b = per_fold_of(it->second->at("step1_f1"));
      cells.push_back(std::move(c));
    }
  }

  auto cell_key = [](const nlohmann::json& cell) {
    return "iqa:" + cell.at("source").get<std::string>() + ":" +
           cell.at("estimator").get<std::string>() + ":" +
           (cell.at("merged").get<bool>() ? "merged" : "unmerged");
  };
  std::map<std::string, const nlohmann::json*> b_iqa;
  for (const nlohmann::json& cell : b.at("iqa")) b_iqa[cell_key(cell)] = &cell;
  for (const nlohmann::json& cell : a.at("iqa")) {
    std::string key = cell_key(cell);
    auto it = b_iqa.find(key);
    if (it == b_iqa.end()) continue;
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      const char* rn = rubric_name(static_cast<IqaRubric>(ri));
      if (!want(key + ":" + rn)) continue;
      CompareCell c;
      c.name = key + ":" + rn;
      c.a = per_fold_of(cell.at("qwk").at(rn));
      c.b = per_fold_of(it->second->at("qwk").at(rn));
      cells.push_back(std::move(c));
    }
  }

  if (a.contains("baseline") && b.contains("baseline")) {
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      const char* rn = rubric_name(static_cast<IqaRubric>(ri));
      if (!want(std::string("baseline:") + rn)) continue;
      CompareCell c;
      c.name = std::string("baseline:") + rn;
      c.a = per_fold_of(a.at("baseline").at(rn));
      c.b = per_fold_of(b.at("baseline").at(rn));
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

}  // namespace detail

inline int cmd_compare(const std::string& report_a, const std::string& report_b,
                       const std::string& cell, uint64_t seed,
                       const std::string& out_path, std::ostream& out) {
  nlohmann::json a = detail::load_json(report_a);
  nlohmann::json b = detail::load_json(report_b);
  if (a.at("k") != b.at("k"))
    throw ValidationError("reports have different fold counts");

  std::vector<detail::CompareCell> cells;
  try {
    cells = detail::collect_cells(a, b, cell);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  if (cells.empty())
    throw ValidationError(cell.empty() ? "reports share no comparable cells"
                                       : "cell '" + cell + "' not found in both reports");

  nlohmann::json result;
  result["report_a"] = a.value("config_hash", "");
  result["report_b"] = b.value("config_hash", "");
  result["seed"] = seed;
  nlohmann::json arr = nlohmann::json::array();
  for (const detail::CompareCell& c : cells) {
    if (c.a.size() != c.b.size())
      throw ValidationError("cell '" + c.name + "': per-fold lengths differ");
    nlohmann::json jc;
    jc["cell"] = c.name;
    jc["mean_a"] = mean_of(c.a);
    jc["mean_b"] = mean_of(c.b);
    jc["delta"] = mean_of(c.a) - mean_of(c.b);
    jc["n_folds"] = c.a.size();
    jc["p_per_fold"] = paired_randomization_pvalue(
        c.a, c.b, 10000, derive_seed(seed, "compare-fold"));
    if (!c.a_tr.empty() && !c.b_tr.empty()) {
      std::vector<double> pa, pb;
      for (const auto& [id, va] : c.a_tr) {
        auto it = c.b_tr.find(id);
        if (it == c.b_tr.end()) continue;
        pa.push_back(va);
        pb.push_back(it->second);
      }
      if (pa.size() >= 2) {
        jc["n_transcripts"] = pa.size();
        jc["p_per_transcript"] = paired_randomization_pvalue(
            pa, pb, 10000, derive_seed(seed, "compare-transcript"));
      }
    }
    arr.push_back(std::move(jc));
  }
  result["cells"] = std::move(arr);
  std::string text = result.dump(2) + "\n";
  if (!out_path.empty()) detail::write_file(out_path, text);
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.

inline int cli_main(int argc, const char* const* argv,
                    std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  try {
    CLI::App app{"classroom discussion coding and scoring pipeline"};
    app.require_subcommand(1);

    std::string config_path, corpus_path, out_path, out_dir, model_path;
    std::string report_a, report_b, cell, compare_out;
    uint64_t seed_flag = 0;
    int jobs_flag = 0;
    double ds_ratio_flag = 0.0;
    std::string method_flag;
    bool no_merge = false, no_speaker_mask = false, oracle_flag = false;
    bool no_downsample = false;

    auto add_common = [&](CLI::App* sub, bool with_train_flags) {
      sub->add_option("--config", config_path, "run config JSON path");
      sub->add_option("--seed", seed_flag, "override config seed");
      if (with_train_flags) {
        sub->add_option("--jobs", jobs_flag, "parallel fold workers");
        sub->add_flag("--no-merge", no_merge, "disable adjacent-code merging");
        sub->add_flag("--no-speaker-mask", no_speaker_mask,
                      "disable speaker-constrained decoding");
        sub->add_option("--downsample-ratio", ds_ratio_flag,
                        "majority-class share kept for training");
      }
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth, false);
    synth->add_option("--out", out_path, "corpus JSON output path")->required();

    CLI::App* train = app.add_subcommand("train", "train a model bundle");
    add_common(train, true);
    train->add_option("--corpus", corpus_path, "corpus JSON path")->required();
    train->add_option("--out", out_path, "model bundle output path")->required();
    train->add_option("--method", method_flag,
                      "sentence model: hierarchical|flat|seqlab");
    train->add_flag("--no-downsample", no_downsample,
                    "train on the full class distribution");

    CLI::App* predict = app.add_subcommand("predict", "apply a trained bundle");
    predict->add_option("--model", model_path, "model bundle path")->required();
    predict->add_option("--corpus", corpus_path, "corpus JSON path")->required();
    predict->add_option("--out-dir", out_dir, "output directory")->required();
    predict->add_flag("--oracle-step1", oracle_flag,
                      "use gold focal/other routing (needs gold codes)");

    CLI::App* cv = app.add_subcommand("cv", "cross-validated evaluation");
    add_common(cv, true);
    cv->add_option("--corpus", corpus_path, "corpus JSON path")->required();
    cv->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* curve = app.add_subcommand("curve", "training-size learning curve");
    add_common(curve, true);
    curve->add_option("--corpus", corpus_path, "corpus JSON path")->required();
    curve->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* compare = app.add_subcommand("compare", "significance test between two cv reports");
    compare->add_option("--report-a", report_a, "first report.json")->required();
    compare->add_option("--report-b", report_b, "second report.json")->required();
    compare->add_option("--cell", cell, "restrict to one cell (e.g. atm:hier_ds)");
    compare->add_option("--seed", seed_flag, "randomization seed");
    compare->add_option("--out", compare_out, "also write the result JSON here");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n";
      return kExitConfig;
    }

    auto given = [](CLI::App* sub, const char* name) {
      const CLI::Option* o = sub->get_option_no_throw(name);
      return o && o->count() > 0;
    };
    auto effective = [&](CLI::App* sub) {
      RunConfig cfg = detail::load_run_config(config_path);
      if (given(sub, "--seed")) cfg.seed = seed_flag;
      if (given(sub, "--jobs")) cfg.jobs = jobs_flag;
      if (given(sub, "--no-merge")) cfg.merge = MergeMode::None;
      if (given(sub, "--no-speaker-mask")) cfg.speaker_mask = false;
      if (given(sub, "--downsample-ratio")) cfg.downsample_ratio = ds_ratio_flag;
      if (given(sub, "--method")) cfg.method = atm_method_from_string(method_flag);
      if (given(sub, "--no-downsample")) cfg.downsample = false;
      return cfg;
    };

    if (synth->parsed()) return cmd_synth(effective(synth), out_path);
    if (train->parsed()) return cmd_train(effective(train), corpus_path, out_path);
    if (predict->parsed())
      return cmd_predict(model_path, corpus_path, out_dir, oracle_flag);
    if (cv->parsed()) return cmd_cv(effective(cv), corpus_path, out_dir);
    if (curve->parsed()) return cmd_curve(effective(curve), corpus_path, out_dir);
    if (compare->parsed()) {
      uint64_t seed = given(compare, "--seed") ? seed_flag : 17;
      return cmd_compare(report_a, report_b, cell, seed, compare_out, out);
    }
    err << "error: no subcommand\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const NetworkError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNetwork;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace discq
