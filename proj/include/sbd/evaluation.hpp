#pragma once

#include <algorithm>
#include <cstdio>
#include <future>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sbd/corpus.hpp"
#include "sbd/errors.hpp"
#include "sbd/metrics.hpp"
#include "sbd/model.hpp"
#include "sbd/training.hpp"

namespace sbd {

struct FoldReport {
  std::size_t fold = 0;
  BoundaryCounts counts;
  double alpha = 1.0;
};

/// Boundary-class precision/recall/F1 with the counts they derive from.
struct EvalReport {
  std::string corpus;
  std::string variant;
  std::string features;
  double alpha = 1.0;
  BoundaryCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<FoldReport> folds;

  static EvalReport from_counts(const BoundaryCounts& c) {
    EvalReport r;
    r.counts = c;
    r.precision = c.precision();
    r.recall = c.recall();
    r.f1 = c.f1();
    return r;
  }
};

inline EvalReport prf_boundary(std::span<const Label> gold, std::span<const Label> pred) {
  return EvalReport::from_counts(count_boundaries(gold, pred));
}

/// Scores the classifier that labels every word B.
inline EvalReport all_boundary_baseline(std::span<const Label> gold) {
  require(!gold.empty(), "all_boundary_baseline: empty input");
  const std::vector<Label> all_b(gold.size(), Label::B);
  EvalReport r = prf_boundary(gold, all_b);
  r.variant = "baseline";
  r.features = "-";
  return r;
}

inline EvalReport all_boundary_baseline(const Corpus& corpus) {
  std::vector<Label> gold;
  for (const auto& t : corpus.texts) gold.insert(gold.end(), t.labels.begin(), t.labels.end());
  EvalReport r = all_boundary_baseline(gold);
  r.corpus = corpus.name;
  return r;
}

struct EvalConfig {
  SegmenterConfig segmenter;
  std::size_t folds = 5;
  std::size_t jobs = 1;
  bool per_fold_alpha = false;
};

namespace eval_detail {

struct FoldOutcome {
  std::vector<ModelOutputs> outputs;
};

/// Runs `work(i)` for i in [0, n) with at most `jobs` in flight; results
/// are returned in index order.
template <typename F>
auto run_indexed(std::size_t n, std::size_t jobs, F work) -> std::vector<decltype(work(std::size_t{}))> {
  using R = decltype(work(std::size_t{}));
  std::vector<R> results;
  results.reserve(n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) results.push_back(work(i));
    return results;
  }
  for (std::size_t start = 0; start < n; start += jobs) {
    std::vector<std::future<R>> pending;
    for (std::size_t i = start; i < std::min(n, start + jobs); ++i) {
      pending.push_back(std::async(std::launch::async, work, i));
    }
    for (auto& f : pending) results.push_back(f.get());
  }
  return results;
}

}  // namespace eval_detail

inline void check_features_available(const Corpus& corpus, const FeatureSet& f) {
  if (f.prosody && !corpus.has_prosody())
    throw UnsupportedInput("feature set '" + to_string(f) + "' needs prosody but corpus '" + corpus.name +
                           "' has none");
}

/// k-fold cross validation. Each fold trains on the remaining folds and
/// predicts its own texts; counts are pooled over folds. Without a fixed α
/// the fusion weight is tuned on the pooled out-of-fold predictions (or per
/// fold when `per_fold_alpha` is set).
inline EvalReport cross_validated_eval(const Corpus& corpus, const EvalConfig& cfg) {
  check_features_available(corpus, cfg.segmenter.features);
  const std::uint64_t seed = cfg.segmenter.train.seed;
  const FoldPlan plan = kfold_split(corpus, cfg.folds, seed);
  const Rng master(seed);
  const std::span<const LabeledText> texts(corpus.texts);

  auto outcomes = eval_detail::run_indexed(cfg.folds, cfg.jobs, [&](std::size_t fold) {
    Rng rng = master.fork(100 + fold);
    const auto train = select<LabeledText>(texts, plan.train_indices(fold));
    const TrainedSegmenter seg = train_segmenter(train, cfg.segmenter, rng);
    eval_detail::FoldOutcome out;
    for (std::size_t i : plan.test_indices(fold)) out.outputs.push_back(model_outputs(seg, texts[i]));
    return out;
  });

  const FeatureSet& f = cfg.segmenter.features;
  const bool fusion = f.lexical() && f.prosody;
  auto settle_alpha = [&](std::span<const ModelOutputs> outputs) {
    if (!fusion) return f.prosody ? 0.0 : 1.0;
    if (cfg.segmenter.fixed_alpha) return *cfg.segmenter.fixed_alpha;
    return tune_alpha(outputs, cfg.segmenter.train.alpha_grid);
  };

  std::vector<ModelOutputs> pooled;
  for (const auto& o : outcomes) pooled.insert(pooled.end(), o.outputs.begin(), o.outputs.end());
  const double global_alpha = settle_alpha(pooled);

  BoundaryCounts total;
  std::vector<FoldReport> folds;
  for (std::size_t fold = 0; fold < outcomes.size(); ++fold) {
    const double a = cfg.per_fold_alpha ? settle_alpha(outcomes[fold].outputs) : global_alpha;
    const BoundaryCounts c = pooled_counts(outcomes[fold].outputs, a);
    folds.push_back({fold, c, a});
    total += c;
  }
  EvalReport report = EvalReport::from_counts(total);
  report.corpus = corpus.name;
  report.variant = std::string(to_string(cfg.segmenter.variant));
  report.features = to_string(f);
  report.alpha = global_alpha;
  report.folds = std::move(folds);
  return report;
}

/// Scores a trained segmenter on every text of `corpus`.
inline EvalReport evaluate(const TrainedSegmenter& seg, const Corpus& corpus) {
  BoundaryCounts c;
  for (const auto& t : corpus.texts) c += count_boundaries(t.labels, seg.predict(t).labels);
  EvalReport r = EvalReport::from_counts(c);
  r.corpus = corpus.name;
  r.alpha = seg.alpha;
  r.features = to_string(seg.features);
  const Network* net = seg.lexical ? &*seg.lexical : seg.prosodic ? &*seg.prosodic : nullptr;
  if (net) r.variant = std::string(to_string(net->variant));
  return r;
}

/// Trains on all of `train_corpus` and evaluates on `test_corpus`; test
/// words missing from the training vocabulary map to the OOV rows.
inline EvalReport robustness_eval(const Corpus& train_corpus, const Corpus& test_corpus, const EvalConfig& cfg) {
  check_features_available(train_corpus, cfg.segmenter.features);
  check_features_available(test_corpus, cfg.segmenter.features);
  Rng rng(cfg.segmenter.train.seed);
  const TrainedSegmenter seg = fit_segmenter(train_corpus.texts, cfg.segmenter, rng);
  EvalReport r = evaluate(seg, test_corpus);
  r.corpus = train_corpus.name + "->" + test_corpus.name;
  return r;
}

// ---------------------------------------------------------------------------
// Report formats

inline std::string format_fixed(double v, int decimals = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// corpus<TAB>variant<TAB>features<TAB>alpha<TAB>P<TAB>R<TAB>F1
inline std::string format_report_line(const EvalReport& r) {
  std::ostringstream ss;
  ss << r.corpus << '\t' << r.variant << '\t' << r.features << '\t' << format_fixed(r.alpha, 2) << '\t'
     << format_fixed(r.precision) << '\t' << format_fixed(r.recall) << '\t' << format_fixed(r.f1);
  return ss.str();
}

inline std::string format_report_table(const EvalReport& r) {
  std::ostringstream ss;
  ss << "corpus   " << r.corpus << "\nvariant  " << r.variant << "\nfeatures " << r.features << "\nalpha    "
     << format_fixed(r.alpha, 2) << "\n\n";
  ss << "fold  alpha    tp    fp    fn      P      R     F1\n";
  char line[128];
  for (const auto& f : r.folds) {
    std::snprintf(line, sizeof line, "%4zu  %5.2f %5zu %5zu %5zu %6.3f %6.3f %6.3f\n", f.fold + 1, f.alpha,
                  f.counts.tp, f.counts.fp, f.counts.fn, f.counts.precision(), f.counts.recall(), f.counts.f1());
    ss << line;
  }
  std::snprintf(line, sizeof line, " all  %5.2f %5zu %5zu %5zu %6.3f %6.3f %6.3f\n", r.alpha, r.counts.tp,
                r.counts.fp, r.counts.fn, r.precision, r.recall, r.f1);
  ss << line;
  return ss.str();
}

}  // namespace sbd
