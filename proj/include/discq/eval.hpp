#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "atm_pipeline.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "iqa.hpp"
#include "metrics.hpp"
#include "model_io.hpp"

namespace discq {

// ---------------------------------------------------------------------------
// Transcript-level k-fold split: seeded shuffle, then round-robin assignment,
// so fold sizes differ by at most one.

struct FoldSplit {
  int k = 5;
  uint64_t seed = 17;
  std::vector<std::vector<std::string>> folds;  // transcript ids
};

inline FoldSplit kfold_split(const Corpus& c, int k = 5, uint64_t seed = 17) {
  if (k < 2) throw ConfigError("kfold: k must be >= 2");
  if (static_cast<int>(c.transcripts.size()) < k)
    throw ValidationError("kfold: fewer transcripts than folds");
  std::vector<std::string> ids;
  ids.reserve(c.transcripts.size());
  for (const Transcript& tr : c.transcripts) ids.push_back(tr.id);
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(ids);
  FoldSplit split;
  split.k = k;
  split.seed = seed;
  split.folds.resize(static_cast<size_t>(k));
  for (size_t i = 0; i < ids.size(); ++i)
    split.folds[i % static_cast<size_t>(k)].push_back(std::move(ids[i]));
  return split;
}

// ---------------------------------------------------------------------------
// Cross-validation configuration. Row names are fixed vocabulary; each row is
// one sentence-code model variant evaluated across all folds.

struct AtmRowSpec {
  std::string name;
  AtmMethod method = AtmMethod::Hierarchical;
  bool downsample = false;
  bool oracle_step1 = false;

  bool operator==(const AtmRowSpec&) const = default;
};

inline std::vector<AtmRowSpec> default_rows() {
  return {
      {"flat", AtmMethod::Flat, false, false},
      {"flat_ds", AtmMethod::Flat, true, false},
      {"hier", AtmMethod::Hierarchical, false, false},
      {"hier_ds", AtmMethod::Hierarchical, true, false},
      {"seq", AtmMethod::Seqlab, false, false},
      {"seq_ds", AtmMethod::Seqlab, true, false},
      {"hier_oracle", AtmMethod::Hierarchical, false, true},
      {"hier_oracle_ds", AtmMethod::Hierarchical, true, true},
  };
}

inline AtmRowSpec row_spec_from_name(const std::string& name) {
  for (const AtmRowSpec& spec : default_rows())
    if (spec.name == name) return spec;
  throw ConfigError("unknown model row '" + name + "'");
}

struct CvConfig {
  int k = 5;
  uint64_t seed = 17;
  int jobs = 1;
  uint64_t config_hash = 0;  // provenance stamp copied into reports

  EncoderConfig encoder;
  int context_cap = 10;
  OptimConfig optim;                              // step classifiers
  OptimConfig crf_optim{1.0, 40, 1e-4, 4, 17};    // sequence labeler
  OptimConfig e2e_optim{0.2, 100, 1e-4, 16, 17};  // transcript-level baseline

  double downsample_ratio = 0.6;
  bool speaker_mask = true;
  MergeMode merge = MergeMode::WithinTurn;
  bool fit_iqa_on_gold_counts = false;

  std::vector<AtmRowSpec> rows = default_rows();
  std::vector<std::string> iqa_sources = {"hier_ds", "seq_ds"};
  bool baseline = true;

  void validate() const {
    if (k < 2) throw ConfigError("cv: k must be >= 2");
    if (jobs < 1) throw ConfigError("cv: jobs must be >= 1");
    if (context_cap < 0) throw ConfigError("cv: context cap must be non-negative");
    encoder.validate();
    optim.validate();
    crf_optim.validate();
    e2e_optim.validate();
    DownsampleConfig ds{downsample_ratio, 0};
    ds.validate();
    if (rows.empty()) throw ConfigError("cv: no model rows configured");
    std::set<std::string> names;
    for (const AtmRowSpec& r : rows)
      if (!names.insert(r.name).second)
        throw ConfigError("cv: duplicate model row '" + r.name + "'");
    for (const std::string& s : iqa_sources)
      if (!names.count(s))
        throw ConfigError("cv: iqa source '" + s + "' is not a configured row");
  }
};

// ---------------------------------------------------------------------------
// Results.

struct MetricSummary {
  std::vector<double> per_fold;
  double mean = 0.0;
  double stddev = 0.0;  // population std over folds

  bool operator==(const MetricSummary&) const = default;
};

inline MetricSummary summarize(std::vector<double> per_fold) {
  MetricSummary s;
  s.mean = mean_of(per_fold);
  s.stddev = pop_stddev(per_fold);
  s.per_fold = std::move(per_fold);
  return s;
}

struct FoldRowOutput {
  std::string name;
  double f1_6way = 0.0;
  std::optional<double> step1_f1;
  std::vector<std::pair<std::string, double>> per_transcript_f1;
};

struct FoldIqaOutput {
  std::string source;
  std::string estimator;  // "threshold" | "regression"
  bool merged = false;
  std::array<double, kNumRubrics> qwk{};
};

struct FoldOutput {
  int fold = 0;
  std::vector<FoldRowOutput> rows;
  std::vector<FoldIqaOutput> iqa;
  std::optional<std::array<double, kNumRubrics>> baseline_qwk;
  std::map<std::string, uint64_t> model_fingerprints;
};

struct CvAtmRow {
  AtmRowSpec spec;
  MetricSummary f1;
  std::optional<MetricSummary> step1_f1;
  std::map<std::string, double> per_transcript_f1;
};

struct CvIqaCell {
  std::string source;
  std::string estimator;
  bool merged = false;
  std::array<MetricSummary, kNumRubrics> qwk;
};

struct CvReport {
  int k = 5;
  uint64_t seed = 17;
  uint64_t config_hash = 0;
  std::vector<std::vector<std::string>> fold_ids;
  std::vector<CvAtmRow> atm;
  std::vector<CvIqaCell> iqa;
  std::optional<std::array<MetricSummary, kNumRubrics>> baseline;
  std::vector<std::map<std::string, uint64_t>> fingerprints;  // per fold

  const CvAtmRow* find_row(const std::string& name) const {
    for (const CvAtmRow& r : atm)
      if (r.spec.name == name) return &r;
    return nullptr;
  }

  const CvIqaCell* find_cell(const std::string& source,
                             const std::string& estimator, bool merged) const {
    for (const CvIqaCell& c : iqa)
      if (c.source == source && c.estimator == estimator && c.merged == merged)
        return &c;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Fold execution.

namespace detail {

inline void require_full_gold(const Corpus& c) {
  for (const Transcript& tr : c.transcripts) {
    if (!tr.has_full_iqa())
      throw ValidationError("transcript '" + tr.id +
                            "': missing gold rubric scores");
    for_each_sentence(tr, [&](int, int, const Sentence& s, Speaker) {
      if (!s.gold_code)
        throw ValidationError("transcript '" + tr.id +
                              "': sentence without a gold code");
    });
  }
}

inline std::vector<uint8_t> focal_flags(const EncodedTranscript& et) {
  std::vector<uint8_t> flags(et.gold.size());
  for (size_t i = 0; i < et.gold.size(); ++i)
    flags[i] = et.gold[i] && is_focal(*et.gold[i]) ? 1 : 0;
  return flags;
}

// Cheap deterministic task pool; exceptions propagate to the caller.
inline void parallel_for(int jobs, size_t n,
                         const std::function<void(size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t workers = std::min(static_cast<size_t>(jobs), n);
  std::atomic<size_t> next{0};
  std::mutex mtx;
  std::exception_ptr error;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (size_t w = 0; w < workers; ++w)
    threads.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard<std::mutex> lock(mtx);
          if (error) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mtx);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Runs one fold end to end: trains every configured row on the training
// transcripts (optionally a fraction of them), evaluates sentence codes on
// the held-out fold, fits score estimators on training-fold predictions, and
// scores the held-out transcripts. Exposed so tests can pin determinism and
// leakage properties at the fold level.
inline FoldOutput run_fold(const Corpus& corpus, const FoldSplit& split,
                           int fold, const CvConfig& cfg,
                           double train_fraction = 1.0) {
  cfg.validate();
  if (fold < 0 || fold >= static_cast<int>(split.folds.size()))
    throw ValidationError("run_fold: fold index out of range");
  if (!(train_fraction > 0.0) || train_fraction > 1.0)
    throw ConfigError("run_fold: train fraction must be in (0, 1]");

  std::set<std::string> test_ids(split.folds[static_cast<size_t>(fold)].begin(),
                                 split.folds[static_cast<size_t>(fold)].end());
  Corpus train, test;
  for (const Transcript& tr : corpus.transcripts)
    (test_ids.count(tr.id) ? test : train).transcripts.push_back(tr);
  if (train.transcripts.empty() || test.transcripts.empty())
    throw ValidationError("run_fold: empty train or test fold");

  if (train_fraction < 1.0) {
    // Nested prefix of a fixed per-fold shuffle, restored to corpus order so
    // the full fraction reproduces the unsubsampled fold bit for bit.
    std::vector<size_t> order(train.transcripts.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_seed(cfg.seed, "curve-subset", static_cast<uint64_t>(fold)));
    rng.shuffle(order);
    size_t keep = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(order.size())));
    if (keep < 1)
      throw ValidationError("run_fold: train fraction leaves no transcripts");
    order.resize(keep);
    std::sort(order.begin(), order.end());
    Corpus reduced;
    for (size_t i : order)
      reduced.transcripts.push_back(std::move(train.transcripts[i]));
    train = std::move(reduced);
  }
  detail::require_full_gold(train);

  EncodedCorpus enc_train = encode_corpus(train, cfg.encoder, cfg.context_cap);
  EncodedCorpus enc_test =
      encode_corpus_with(test, enc_train.idf, cfg.encoder, cfg.context_cap);

  bool need_ds = false, need_full = false;
  for (const AtmRowSpec& r : cfg.rows) (r.downsample ? need_ds : need_full) = true;
  std::optional<DownsamplePlan> plan;
  if (need_ds) {
    DownsampleConfig ds{cfg.downsample_ratio,
                        derive_seed(cfg.seed, "downsample", static_cast<uint64_t>(fold))};
    plan = plan_downsample_corpus(train, ds);
  }

  FoldOutput out;
  out.fold = fold;

  // Train each (method, downsample) combination at most once; oracle rows
  // reuse the plain model and differ only at prediction time.
  std::map<std::pair<int, bool>, HierModel> hiers;
  std::map<std::pair<int, bool>, FlatModel> flats;
  std::map<std::pair<int, bool>, SeqModel> seqs;
  auto tag_of = [](AtmMethod m, bool ds) {
    std::string t = atm_method_name(m);
    if (ds) t += "-ds";
    return t;
  };
  auto optim_for = [&](const OptimConfig& base, AtmMethod m, bool ds) {
    OptimConfig o = base;
    o.seed = derive_seed(cfg.seed, tag_of(m, ds), static_cast<uint64_t>(fold));
    return o;
  };
  auto get_hier = [&](bool ds) -> const HierModel& {
    auto key = std::make_pair(static_cast<int>(AtmMethod::Hierarchical), ds);
    auto it = hiers.find(key);
    if (it == hiers.end()) {
      it = hiers
               .emplace(key, train_hierarchical_enc(
                                 enc_train, ds ? &*plan : nullptr,
                                 optim_for(cfg.optim, AtmMethod::Hierarchical, ds)))
               .first;
      out.model_fingerprints[tag_of(AtmMethod::Hierarchical, ds)] =
          fingerprint_hier(it->second);
    }
    return it->second;
  };
  auto get_flat = [&](bool ds) -> const FlatModel& {
    auto key = std::make_pair(static_cast<int>(AtmMethod::Flat), ds);
    auto it = flats.find(key);
    if (it == flats.end()) {
      it = flats
               .emplace(key, train_flat_enc(enc_train, ds ? &*plan : nullptr,
                                            optim_for(cfg.optim, AtmMethod::Flat, ds)))
               .first;
      out.model_fingerprints[tag_of(AtmMethod::Flat, ds)] =
          fingerprint_flat(it->second);
    }
    return it->second;
  };
  auto get_seq = [&](bool ds) -> const SeqModel& {
    auto key = std::make_pair(static_cast<int>(AtmMethod::Seqlab), ds);
    auto it = seqs.find(key);
    if (it == seqs.end()) {
      it = seqs
               .emplace(key, train_seqlab_enc(
                                 enc_train, ds ? &*plan : nullptr,
                                 optim_for(cfg.crf_optim, AtmMethod::Seqlab, ds),
                                 cfg.speaker_mask))
               .first;
      out.model_fingerprints[tag_of(AtmMethod::Seqlab, ds)] =
          fingerprint_seq(it->second);
    }
    return it->second;
  };

  auto predict_row = [&](const AtmRowSpec& spec, const EncodedTranscript& et) {
    switch (spec.method) {
      case AtmMethod::Hierarchical: {
        const HierModel& m = get_hier(spec.downsample);
        if (spec.oracle_step1) {
          std::vector<uint8_t> flags = detail::focal_flags(et);
          return predict_hierarchical_enc(m, et, &flags);
        }
        return predict_hierarchical_enc(m, et);
      }
      case AtmMethod::Flat:
        return predict_flat_enc(get_flat(spec.downsample), et);
      case AtmMethod::Seqlab:
        return predict_seqlab_enc(get_seq(spec.downsample), et);
    }
    throw ValidationError("run_fold: bad method");
  };

  std::map<std::string, std::vector<std::vector<AtmCode>>> test_preds;
  for (const AtmRowSpec& spec : cfg.rows) {
    std::vector<std::vector<AtmCode>> preds;
    preds.reserve(enc_test.transcripts.size());
    std::vector<AtmCode> gold_all, pred_all;
    FoldRowOutput row;
    row.name = spec.name;
    for (const EncodedTranscript& et : enc_test.transcripts) {
      std::vector<AtmCode> p = predict_row(spec, et);
      std::vector<AtmCode> g;
      g.reserve(et.gold.size());
      for (const auto& c : et.gold) g.push_back(*c);
      row.per_transcript_f1.push_back({et.id, macro_f1_codes(g, p)});
      gold_all.insert(gold_all.end(), g.begin(), g.end());
      pred_all.insert(pred_all.end(), p.begin(), p.end());
      preds.push_back(std::move(p));
    }
    row.f1_6way = macro_f1_codes(gold_all, pred_all);
    if (spec.method == AtmMethod::Hierarchical)
      row.step1_f1 = step1_macro_f1(gold_all, pred_all);
    out.rows.push_back(std::move(row));
    test_preds.emplace(spec.name, std::move(preds));
  }

  // Score estimation: fit on training-fold counts (predicted by the source
  // row's model, or gold when configured), evaluate on the held-out fold.
  if (!cfg.iqa_sources.empty()) {
    std::vector<bool> merged_variants =
        cfg.merge == MergeMode::None ? std::vector<bool>{false}
                                     : std::vector<bool>{true, false};
    for (const std::string& source : cfg.iqa_sources) {
      const AtmRowSpec* spec = nullptr;
      for (const AtmRowSpec& r : cfg.rows)
        if (r.name == source) spec = &r;
      if (!spec) throw ConfigError("cv: iqa source '" + source + "' missing");

      std::vector<std::vector<AtmCode>> train_codes;
      train_codes.reserve(enc_train.transcripts.size());
      for (const EncodedTranscript& et : enc_train.transcripts) {
        if (cfg.fit_iqa_on_gold_counts) {
          std::vector<AtmCode> g;
          g.reserve(et.gold.size());
          for (const auto& c : et.gold) g.push_back(*c);
          train_codes.push_back(std::move(g));
        } else {
          train_codes.push_back(predict_row(*spec, et));
        }
      }
      const auto& tpreds = test_preds.at(source);

      for (bool merged : merged_variants) {
        MergeMode mode = merged ? cfg.merge : MergeMode::None;
        std::vector<std::array<int, kNumFocalCodes>> train_counts, test_counts;
        for (size_t i = 0; i < enc_train.transcripts.size(); ++i)
          train_counts.push_back(count_codes(enc_train.transcripts[i].turn_sizes,
                                             train_codes[i], mode));
        for (size_t i = 0; i < enc_test.transcripts.size(); ++i)
          test_counts.push_back(count_codes(enc_test.transcripts[i].turn_sizes,
                                            tpreds[i], mode));

        FoldIqaOutput cell_t{source, "threshold", merged, {}};
        FoldIqaOutput cell_r{source, "regression", merged, {}};
        for (int ri = 0; ri < kNumRubrics; ++ri) {
          IqaRubric rubric = static_cast<IqaRubric>(ri);
          std::vector<std::pair<int, int>> totals;
          std::vector<std::pair<CountVector, int>> cvs;
          for (size_t i = 0; i < train_counts.size(); ++i) {
            CountVector cv = count_vector_from(train_counts[i], rubric);
            int gold = train.transcripts[i].gold_iqa.at(rubric);
            totals.push_back({cv.total(), gold});
            cvs.push_back({std::move(cv), gold});
          }
          ThresholdModel tm = fit_thresholds(rubric, totals);
          IqaRegressionModel rm = fit_iqa_regression(rubric, cvs);
          std::vector<int> gold_scores, pred_t, pred_r;
          for (size_t i = 0; i < test_counts.size(); ++i) {
            CountVector cv = count_vector_from(test_counts[i], rubric);
            gold_scores.push_back(test.transcripts[i].gold_iqa.at(rubric));
            pred_t.push_back(predict_threshold(tm, cv));
            pred_r.push_back(predict_iqa_regression(rm, cv));
          }
          cell_t.qwk[static_cast<size_t>(ri)] = qwk(gold_scores, pred_t);
          cell_r.qwk[static_cast<size_t>(ri)] = qwk(gold_scores, pred_r);
        }
        out.iqa.push_back(std::move(cell_t));
        out.iqa.push_back(std::move(cell_r));
      }
    }
  }

  if (cfg.baseline) {
    OptimConfig eo = cfg.e2e_optim;
    eo.seed = derive_seed(cfg.seed, "e2e", static_cast<uint64_t>(fold));
    std::array<double, kNumRubrics> bq{};
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      IqaRubric rubric = static_cast<IqaRubric>(ri);
      E2eScoreModel m = train_e2e_baseline(train, rubric, cfg.encoder, eo);
      std::vector<int> gold_scores, preds;
      for (const Transcript& tr : test.transcripts) {
        gold_scores.push_back(tr.gold_iqa.at(rubric));
        preds.push_back(predict_e2e(m, tr));
      }
      bq[static_cast<size_t>(ri)] = qwk(gold_scores, preds);
    }
    out.baseline_qwk = bq;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full cross-validation.

inline CvReport run_cv(const Corpus& corpus, const CvConfig& cfg) {
  cfg.validate();
  detail::require_full_gold(corpus);
  FoldSplit split = kfold_split(corpus, cfg.k, cfg.seed);

  std::vector<FoldOutput> folds(static_cast<size_t>(cfg.k));
  detail::parallel_for(cfg.jobs, static_cast<size_t>(cfg.k), [&](size_t f) {
    folds[f] = run_fold(corpus, split, static_cast<int>(f), cfg);
  });

  CvReport report;
  report.k = cfg.k;
  report.seed = cfg.seed;
  report.config_hash = cfg.config_hash;
  report.fold_ids = split.folds;
  for (const FoldOutput& fo : folds) report.fingerprints.push_back(fo.model_fingerprints);

  for (size_t r = 0; r < cfg.rows.size(); ++r) {
    CvAtmRow row;
    row.spec = cfg.rows[r];
    std::vector<double> f1s, s1s;
    bool any_s1 = false;
    for (const FoldOutput& fo : folds) {
      f1s.push_back(fo.rows[r].f1_6way);
      if (fo.rows[r].step1_f1) {
        any_s1 = true;
        s1s.push_back(*fo.rows[r].step1_f1);
      }
      for (const auto& [id, v] : fo.rows[r].per_transcript_f1)
        row.per_transcript_f1[id] = v;
    }
    row.f1 = summarize(std::move(f1s));
    if (any_s1) row.step1_f1 = summarize(std::move(s1s));
    report.atm.push_back(std::move(row));
  }

  size_t n_cells = folds[0].iqa.size();
  for (size_t c = 0; c < n_cells; ++c) {
    CvIqaCell cell;
    cell.source = folds[0].iqa[c].source;
    cell.estimator = folds[0].iqa[c].estimator;
    cell.merged = folds[0].iqa[c].merged;
    std::array<std::vector<double>, kNumRubrics> vals;
    for (const FoldOutput& fo : folds)
      for (int ri = 0; ri < kNumRubrics; ++ri)
        vals[static_cast<size_t>(ri)].push_back(fo.iqa[c].qwk[static_cast<size_t>(ri)]);
    for (int ri = 0; ri < kNumRubrics; ++ri)
      cell.qwk[static_cast<size_t>(ri)] =
          summarize(std::move(vals[static_cast<size_t>(ri)]));
    report.iqa.push_back(std::move(cell));
  }

  if (cfg.baseline) {
    std::array<std::vector<double>, kNumRubrics> vals;
    for (const FoldOutput& fo : folds)
      for (int ri = 0; ri < kNumRubrics; ++ri)
        vals[static_cast<size_t>(ri)].push_back((*fo.baseline_qwk)[static_cast<size_t>(ri)]);
    std::array<MetricSummary, kNumRubrics> bs;
    for (int ri = 0; ri < kNumRubrics; ++ri)
      bs[static_cast<size_t>(ri)] = summarize(std::move(vals[static_cast<size_t>(ri)]));
    report.baseline = bs;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization (canonical: sorted keys, shortest round-trip floats).

namespace detail {

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::json summary_json(const MetricSummary& s) {
  nlohmann::json j;
  j["per_fold"] = s.per_fold;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  return j;
}

}  // namespace detail

inline nlohmann::json report_to_json(const CvReport& r) {
  nlohmann::json j;
  j["config_hash"] = detail::hex64(r.config_hash);
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["fold_ids"] = r.fold_ids;
  nlohmann::json atm = nlohmann::json::array();
  for (const CvAtmRow& row : r.atm) {
    nlohmann::json jr;
    jr["name"] = row.spec.name;
    jr["method"] = atm_method_name(row.spec.method);
    jr["downsample"] = row.spec.downsample;
    jr["oracle_step1"] = row.spec.oracle_step1;
    jr["f1"] = detail::summary_json(row.f1);
    if (row.step1_f1) jr["step1_f1"] = detail::summary_json(*row.step1_f1);
    nlohmann::json pt;
    for (const auto& [id, v] : row.per_transcript_f1) pt[id] = v;
    jr["per_transcript_f1"] = std::move(pt);
    atm.push_back(std::move(jr));
  }
  j["atm"] = std::move(atm);
  nlohmann::json iqa = nlohmann::json::array();
  for (const CvIqaCell& cell : r.iqa) {
    nlohmann::json jc;
    jc["source"] = cell.source;
    jc["estimator"] = cell.estimator;
    jc["merged"] = cell.merged;
    nlohmann::json q;
    for (int ri = 0; ri < kNumRubrics; ++ri)
      q[rubric_name(static_cast<IqaRubric>(ri))] =
          detail::summary_json(cell.qwk[static_cast<size_t>(ri)]);
    jc["qwk"] = std::move(q);
    iqa.push_back(std::move(jc));
  }
  j["iqa"] = std::move(iqa);
  if (r.baseline) {
    nlohmann::json b;
    for (int ri = 0; ri < kNumRubrics; ++ri)
      b[rubric_name(static_cast<IqaRubric>(ri))] =
          detail::summary_json((*r.baseline)[static_cast<size_t>(ri)]);
    j["baseline"] = std::move(b);
  }
  nlohmann::json fps = nlohmann::json::array();
  for (const auto& fp : r.fingerprints) {
    nlohmann::json jf;
    for (const auto& [k, v] : fp) jf[k] = detail::hex64(v);
    fps.push_back(std::move(jf));
  }
  j["fingerprints"] = std::move(fps);
  return j;
}

inline std::string report_to_csv(const CvReport& r) {
  std::string csv = "section,name,estimator,merged,metric,rubric,mean,stddev";
  for (int f = 0; f < r.k; ++f) csv += ",fold_" + std::to_string(f);
  csv += "\n";
  auto emit = [&](const std::string& section, const std::string& name,
                  const std::string& estimator, const std::string& merged,
                  const std::string& metric, const std::string& rubric,
                  const MetricSummary& s) {
    csv += section + "," + name + "," + estimator + "," + merged + "," + metric +
           "," + rubric + "," + format_double(s.mean) + "," +
           format_double(s.stddev);
    for (double v : s.per_fold) csv += "," + format_double(v);
    csv += "\n";
  };
  for (const CvAtmRow& row : r.atm) {
    emit("atm", row.spec.name, "", "", "f1_6way", "", row.f1);
    if (row.step1_f1)
      emit("atm", row.spec.name, "", "", "step1_f1", "", *row.step1_f1);
  }
  for (const CvIqaCell& cell : r.iqa)
    for (int ri = 0; ri < kNumRubrics; ++ri)
      emit("iqa", cell.source, cell.estimator, cell.merged ? "true" : "false",
           "qwk", rubric_name(static_cast<IqaRubric>(ri)),
           cell.qwk[static_cast<size_t>(ri)]);
  if (r.baseline)
    for (int ri = 0; ri < kNumRubrics; ++ri)
      emit("baseline", "e2e", "", "", "qwk",
           rubric_name(static_cast<IqaRubric>(ri)),
           (*r.baseline)[static_cast<size_t>(ri)]);
  return csv;
}

// ---------------------------------------------------------------------------
// Learning curve: per-fold training-set prefixes at each fraction, evaluated
// with the regression estimator (configured merge mode) and the baseline.

struct CurvePoint {
  double fraction = 1.0;
  std::array<double, kNumRubrics> hier{};
  std::array<double, kNumRubrics> seq{};
  std::array<double, kNumRubrics> baseline{};
};

struct CurveReport {
  int k = 5;
  uint64_t seed = 17;
  uint64_t config_hash = 0;
  std::vector<CurvePoint> points;
};

inline CurveReport learning_curve(const Corpus& corpus, const CvConfig& cfg,
                                  std::span<const double> fractions) {
  if (fractions.empty()) throw ConfigError("curve: no fractions given");
  for (double f : fractions)
    if (!(f > 0.0) || f > 1.0)
      throw ConfigError("curve: fractions must be in (0, 1]");
  CvConfig base = cfg;
  base.rows = {row_spec_from_name("hier_ds"), row_spec_from_name("seq_ds")};
  base.iqa_sources = {"hier_ds", "seq_ds"};
  base.baseline = true;
  base.validate();
  detail::require_full_gold(corpus);
  FoldSplit split = kfold_split(corpus, base.k, base.seed);

  const size_t nf = fractions.size();
  const size_t k = static_cast<size_t>(base.k);
  std::vector<FoldOutput> outputs(nf * k);
  detail::parallel_for(base.jobs, nf * k, [&](size_t i) {
    size_t fi = i / k;
    int fold = static_cast<int>(i % k);
    outputs[i] = run_fold(corpus, split, fold, base, fractions[fi]);
  });

  bool merged = base.merge != MergeMode::None;
  CurveReport report;
  report.k = base.k;
  report.seed = base.seed;
  report.config_hash = base.config_hash;
  for (size_t fi = 0; fi < nf; ++fi) {
    CurvePoint pt;
    pt.fraction = fractions[fi];
    std::array<std::vector<double>, kNumRubrics> h, s, b;
    for (size_t f = 0; f < k; ++f) {
      const FoldOutput& fo = outputs[fi * k + f];
      for (const FoldIqaOutput& cell : fo.iqa) {
        if (cell.estimator != "regression" || cell.merged != merged) continue;
        auto& dst = cell.source == "hier_ds" ? h : s;
        for (int ri = 0; ri < kNumRubrics; ++ri)
          dst[static_cast<size_t>(ri)].push_back(cell.qwk[static_cast<size_t>(ri)]);
      }
      for (int ri = 0; ri < kNumRubrics; ++ri)
        b[static_cast<size_t>(ri)].push_back(
            (*fo.baseline_qwk)[static_cast<size_t>(ri)]);
    }
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      pt.hier[static_cast<size_t>(ri)] = mean_of(h[static_cast<size_t>(ri)]);
      pt.seq[static_cast<size_t>(ri)] = mean_of(s[static_cast<size_t>(ri)]);
      pt.baseline[static_cast<size_t>(ri)] = mean_of(b[static_cast<size_t>(ri)]);
    }
    report.points.push_back(pt);
  }
  return report;
}

inline nlohmann::json curve_to_json(const CurveReport& r) {
  nlohmann::json j;
  j["config_hash"] = detail::hex64(r.config_hash);
  j["k"] = r.k;
  j["seed"] = r.seed;
  nlohmann::json pts = nlohmann::json::array();
  for (const CurvePoint& p : r.points) {
    nlohmann::json jp;
    jp["fraction"] = p.fraction;
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      const char* rn = rubric_name(static_cast<IqaRubric>(ri));
      jp["hierarchical"][rn] = p.hier[static_cast<size_t>(ri)];
      jp["seqlab"][rn] = p.seq[static_cast<size_t>(ri)];
      jp["baseline"][rn] = p.baseline[static_cast<size_t>(ri)];
    }
    pts.push_back(std::move(jp));
  }
  j["points"] = std::move(pts);
  return j;
}

inline std::string curve_to_csv(const CurveReport& r) {
  std::string csv = "fraction,rubric,hierarchical,seqlab,baseline\n";
  for (const CurvePoint& p : r.points)
    for (int ri = 0; ri < kNumRubrics; ++ri) {
      csv += format_double(p.fraction);
      csv += ",";
      csv += rubric_name(static_cast<IqaRubric>(ri));
      csv += ",";
      csv += format_double(p.hier[static_cast<size_t>(ri)]);
      csv += ",";
      csv += format_double(p.seq[static_cast<size_t>(ri)]);
      csv += ",";
      csv += format_double(p.baseline[static_cast<size_t>(ri)]);
      csv += "\n";
    }
  return csv;
}

}  // namespace discq
