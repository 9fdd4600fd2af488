#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sbd/corpus.hpp"
#include "sbd/errors.hpp"
#include "sbd/features.hpp"
#include "sbd/metrics.hpp"
#include "sbd/model.hpp"
#include "sbd/numerics.hpp"

namespace sbd {

inline std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 10; ++k) grid.push_back(k / 10.0);
  return grid;
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double elapsed_ms = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::size_t bucket_width = 50;
  std::uint64_t seed = 7;
  std::vector<double> alpha_grid = default_alpha_grid();
  std::function<void(const EpochLog&)> on_epoch;

  void validate() const {
    require(batch_size > 0 && bucket_width > 0, "TrainConfig: batch size and bucket width must be positive");
    require(!alpha_grid.empty(), "TrainConfig: empty alpha grid");
    for (double a : alpha_grid) require(a >= 0.0 && a <= 1.0, "TrainConfig: alpha grid must lie in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Class weights

/// cw_ℓ = |y| / (2·|y = ℓ|)
inline ClassWeights compute_class_weights(std::size_t n_nb, std::size_t n_b) {
  if (n_nb == 0 || n_b == 0)
    throw DataError("degenerate training set: both B and NB labels are required (B=" + std::to_string(n_b) +
                    ", NB=" + std::to_string(n_nb) + ")");
  const double total = static_cast<double>(n_nb + n_b);
  return {total / (2.0 * static_cast<double>(n_nb)), total / (2.0 * static_cast<double>(n_b))};
}

inline ClassWeights compute_class_weights(std::span<const Label> labels) {
  const auto n_b = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::B));
  return compute_class_weights(labels.size() - n_b, n_b);
}

inline ClassWeights compute_class_weights(std::span<const EncodedText> texts) {
  std::size_t n_b = 0, n = 0;
  for (const auto& t : texts) {
    n += t.size();
    n_b += static_cast<std::size_t>(std::count(t.labels.begin(), t.labels.end(), Label::B));
  }
  return compute_class_weights(n - n_b, n_b);
}

// ---------------------------------------------------------------------------
// Buckets and batches

struct Bucket {
  std::vector<std::size_t> members;  // indices into the text list
  std::size_t max_length = 0;
};

/// Groups sequences by length range [k·width + 1, (k+1)·width]; buckets come
/// out in increasing length order.
inline std::vector<Bucket> make_buckets(std::span<const std::size_t> lengths, std::size_t width) {
  require(width > 0, "make_buckets: width must be positive");
  std::map<std::size_t, Bucket> by_range;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::size_t key = lengths[i] == 0 ? 0 : (lengths[i] - 1) / width;
    auto& b = by_range[key];
    b.members.push_back(i);
    b.max_length = std::max(b.max_length, lengths[i]);
  }
  std::vector<Bucket> out;
  for (auto& [key, b] : by_range) out.push_back(std::move(b));
  return out;
}

/// Sequences padded to a common length; mask rows flag real positions.
struct Batch {
  std::vector<EncodedText> sequences;
  std::vector<std::vector<std::uint8_t>> masks;
};

inline EncodedText pad_sequence(const EncodedText& e, std::size_t length) {
  require(length >= e.size(), "pad_sequence: target shorter than sequence");
  EncodedText p = e;
  const std::size_t extra = length - e.size();
  p.labels.insert(p.labels.end(), extra, Label::NB);
  if (!p.word_ids.empty()) p.word_ids.insert(p.word_ids.end(), extra, 0);
  if (!p.tag_ids.empty()) p.tag_ids.insert(p.tag_ids.end(), extra, 0);
  if (!e.dense.empty()) {
    p.dense = Matrix(length, e.dense.cols());
    std::copy(e.dense.data(), e.dense.data() + e.dense.size(), p.dense.data());
  }
  return p;
}

inline Batch make_batch(std::span<const EncodedText* const> members, std::size_t pad_to = 0) {
  Batch b;
  std::size_t length = pad_to;
  for (const auto* e : members) length = std::max(length, e->size());
  for (const auto* e : members) {
    b.sequences.push_back(pad_sequence(*e, length));
    std::vector<std::uint8_t> mask(length, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(e->size()), 1);
    b.masks.push_back(std::move(mask));
  }
  return b;
}

/// Length of the active prefix; masks must be a run of ones then zeros.
inline std::size_t active_length(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  while (n < mask.size() && mask[n]) ++n;
  for (std::size_t i = n; i < mask.size(); ++i) require(mask[i] == 0, "batch mask must be a contiguous prefix");
  return n;
}

inline EncodedText active_prefix(const EncodedText& e, std::size_t n) {
  EncodedText p{e.id, e.group, {}, {}, {}, {e.labels.begin(), e.labels.begin() + static_cast<std::ptrdiff_t>(n)}};
  if (!e.word_ids.empty()) p.word_ids.assign(e.word_ids.begin(), e.word_ids.begin() + static_cast<std::ptrdiff_t>(n));
  if (!e.tag_ids.empty()) p.tag_ids.assign(e.tag_ids.begin(), e.tag_ids.begin() + static_cast<std::ptrdiff_t>(n));
  if (!e.dense.empty()) p.dense = head_rows(e.dense, n);
  return p;
}

struct BatchGradients {
  double loss = 0.0;        // mean over active positions
  double loss_sum = 0.0;
  std::size_t active = 0;
  ModelParameters grads;    // mean over active positions
};

/// Forward/backward over every sequence of the batch. Padded rows are cut
/// off before the network sees them, so they affect neither the loss nor
/// the gradients nor the dropout draws.
inline BatchGradients batch_gradients(const Network& net, const Batch& batch, ClassWeights cw, Mode mode, Rng& rng) {
  BatchGradients out{0.0, 0.0, 0, net.params.zeros_like()};
  ForwardCache cache;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    const std::size_t n = active_length(batch.masks[s]);
    if (n == 0) continue;
    const EncodedText seq = active_prefix(batch.sequences[s], n);
    const Matrix probs = network_forward(net, seq, mode, &rng, &cache);
    const LossResult lr = weighted_cross_entropy(seq.labels, probs, cw);
    network_backward(net, cache, lr.dlogits, out.grads);
    out.loss_sum += lr.loss;
    out.active += n;
  }
  if (out.active > 0) {
    const double scale = 1.0 / static_cast<double>(out.active);
    out.loss = out.loss_sum * scale;
    out.grads.for_each([scale](std::string_view, Matrix& m) {
      for (double& v : m.values()) v *= scale;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
  std::size_t k = 5;
  std::vector<std::size_t> fold_of;            // per text index
  std::map<std::string, std::size_t> assignments;  // text id → fold

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != fold) out.push_back(i);
    return out;
  }
};

/// Shuffled round-robin assignment of texts to k folds.
inline FoldPlan kfold_split(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  require(k >= 2, "kfold_split: need at least two folds");
  if (corpus.texts.size() < k)
    throw DataError("kfold_split: " + std::to_string(corpus.texts.size()) + " texts cannot fill " +
                    std::to_string(k) + " folds");
  std::vector<std::size_t> order(corpus.texts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(order.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    plan.fold_of[order[pos]] = pos % k;
    plan.assignments[corpus.texts[order[pos]].id] = pos % k;
  }
  return plan;
}

template <typename T>
std::vector<T> select(std::span<const T> items, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  Network network;
  std::vector<double> epoch_loss;
};

inline bool uses_lexical_input(const Network& net) { return net.layout.words || net.layout.tags; }

inline std::string parameter_norms(const ModelParameters& p) {
  std::ostringstream ss;
  p.for_each([&ss](std::string_view name, const Matrix& m) {
    double sq = 0.0;
    for (double v : m.values()) sq += v * v;
    ss << ' ' << name << '=' << std::sqrt(sq);
  });
  return ss.str();
}

/// Mini-batch RMSProp over bucketed batches. Class weights come from the
/// admitted training texts; AD-group texts are admitted only for networks
/// with lexical input.
inline TrainResult train_model(Network net, std::span<const EncodedText> texts, const TrainConfig& config, Rng& rng) {
  config.validate();
  std::vector<const EncodedText*> admitted;
  for (const auto& t : texts) {
    if (t.group == Group::AD && !uses_lexical_input(net)) continue;
    if (t.size() > 0) admitted.push_back(&t);
  }
  if (admitted.empty()) throw DataError("train_model: no training texts");
  std::size_t n_b = 0, n_total = 0;
  std::vector<std::size_t> lengths;
  for (const auto* t : admitted) {
    n_total += t->size();
    n_b += static_cast<std::size_t>(std::count(t->labels.begin(), t->labels.end(), Label::B));
    lengths.push_back(t->size());
  }
  const ClassWeights cw = compute_class_weights(n_total - n_b, n_b);
  const auto buckets = make_buckets(lengths, config.bucket_width);

  RmsPropState state{{net.hp.gamma, net.hp.eta, 1e-8}, {}};
  net.params.for_each([&state](std::string_view, const Matrix& m) { state.accum.push_back(zeros_like(m)); });

  TrainResult result{std::move(net), {}};
  Network& model = result.network;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> batches;
    for (const auto& bucket : buckets) {
      std::vector<std::size_t> members = bucket.members;
      rng.shuffle(std::span<std::size_t>(members));
      for (std::size_t i = 0; i < members.size(); i += config.batch_size) {
        const std::size_t end = std::min(members.size(), i + config.batch_size);
        batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                             members.begin() + static_cast<std::ptrdiff_t>(end));
      }
    }
    rng.shuffle(std::span<std::vector<std::size_t>>(batches));

    double loss_sum = 0.0;
    std::size_t active = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const EncodedText*> members;
      for (std::size_t i : batches[b]) members.push_back(admitted[i]);
      const Batch batch = make_batch(members);
      BatchGradients g = batch_gradients(model, batch, cw, Mode::train, rng);
      if (!std::isfinite(g.loss)) {
        throw NumericFailure("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                             "; parameter norms:" + parameter_norms(model.params));
      }
      std::size_t idx = 0;
      std::vector<Matrix*> grads;
      g.grads.for_each([&grads](std::string_view, Matrix& m) { grads.push_back(&m); });
      model.params.for_each([&](std::string_view, Matrix& p) {
        rmsprop_step(p, *grads[idx], state.accum[idx], state.config);
        ++idx;
      });
      loss_sum += g.loss_sum;
      active += g.active;
    }
    const double mean = active ? loss_sum / static_cast<double>(active) : 0.0;
    result.epoch_loss.push_back(mean);
    if (config.on_epoch) {
      const auto now = std::chrono::steady_clock::now();
      config.on_epoch({epoch, mean, std::chrono::duration<double, std::milli>(now - start).count()});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Segmenter training and fusion-weight tuning

struct SegmenterConfig {
  Variant variant = Variant::rcnn;
  FeatureSet features;
  Hyperparams lexical_hp = Hyperparams::lexical();
  Hyperparams prosodic_hp = Hyperparams::prosodic();
  TrainConfig train;
  std::optional<double> fixed_alpha;
  const EmbeddingTable* pretrained_words = nullptr;
};

/// Per-text model outputs before fusion.
struct ModelOutputs {
  std::optional<Matrix> lexical;
  std::optional<Matrix> prosodic;
  std::vector<Label> gold;
};

inline ModelOutputs model_outputs(const TrainedSegmenter& s, const LabeledText& text) {
  ModelOutputs out{std::nullopt, std::nullopt, text.labels};
  if (s.lexical) out.lexical = network_forward(*s.lexical, s.encode_lexical(text), Mode::inference);
  if (s.prosodic) out.prosodic = network_forward(*s.prosodic, encode_prosodic(text, s.prosody_stats), Mode::inference);
  return out;
}

/// Labels for `alpha`; a missing model forces the other one.
inline std::vector<Label> fused_labels(const ModelOutputs& o, double alpha) {
  if (!o.prosodic) return fuse(*o.lexical, nullptr, 1.0).labels;
  if (!o.lexical) return fuse(*o.prosodic, nullptr, 1.0).labels;
  return fuse(*o.lexical, &*o.prosodic, alpha).labels;
}

inline BoundaryCounts pooled_counts(std::span<const ModelOutputs> outputs, double alpha) {
  BoundaryCounts c;
  for (const auto& o : outputs) c += count_boundaries(o.gold, fused_labels(o, alpha));
  return c;
}

/// Grid α with the highest pooled boundary F1; ties go to the larger α.
inline double tune_alpha(std::span<const ModelOutputs> outputs, std::span<const double> grid) {
  if (grid.empty()) throw ContractViolation("tune_alpha: empty alpha grid");
  double best_alpha = grid[0];
  double best_f1 = -1.0;
  for (double a : grid) {
    const double f1 = pooled_counts(outputs, a).f1();
    if (f1 > best_f1 || (f1 == best_f1 && a > best_alpha)) {
      best_f1 = f1;
      best_alpha = a;
    }
  }
  return best_alpha;
}

/// Trains the networks the feature set calls for on `texts`. The fusion
/// weight is set to the fixed value when given, to 1 (0) for lexical-only
/// (prosody-only) features, and otherwise left at 1 for the caller to tune.
inline TrainedSegmenter train_segmenter(std::span<const LabeledText> texts, const SegmenterConfig& cfg, Rng& rng) {
  TrainedSegmenter seg;
  seg.features = cfg.features;
  const FeatureSet& f = cfg.features;
  if (f.prosody) {
    for (const auto& t : texts)
      if (!t.has_prosody())
        throw UnsupportedInput("feature set '" + to_string(f) + "' needs prosody but text '" + t.id + "' has none");
  }

  if (f.lexical()) {
    Rng lex_rng = rng.fork(1);
    Hyperparams hp = cfg.lexical_hp;
    if (f.embeddings && cfg.pretrained_words) hp.e_w = cfg.pretrained_words->dim();
    if (f.embeddings) {
      seg.word_vocab = cfg.pretrained_words ? cfg.pretrained_words->vocab : Vocabulary(collect_tokens(texts));
    }
    if (f.pos) seg.tag_vocab = Vocabulary(collect_tags(texts));
    const InputLayout layout{f.embeddings, f.pos, 0, seg.word_vocab.rows(), seg.tag_vocab.rows()};
    Network net = init_network(cfg.variant, hp, layout, lex_rng);
    if (f.embeddings && cfg.pretrained_words) net.params.word_emb = cfg.pretrained_words->vectors;
    std::vector<EncodedText> encoded;
    for (const auto& t : texts) encoded.push_back(seg.encode_lexical(t));
    seg.lexical = train_model(std::move(net), encoded, cfg.train, lex_rng).network;
  }

  if (f.prosody) {
    Rng pros_rng = rng.fork(2);
    std::vector<LabeledText> admitted;
    for (const auto& t : texts)
      if (t.group != Group::AD) admitted.push_back(t);
    seg.prosody_stats = fit_prosody_stats(admitted);
    const InputLayout layout{false, false, kProsodyDim, 0, 0};
    Network net = init_network(cfg.variant, cfg.prosodic_hp, layout, pros_rng);
    std::vector<EncodedText> encoded;
    for (const auto& t : admitted) encoded.push_back(encode_prosodic(t, seg.prosody_stats));
    seg.prosodic = train_model(std::move(net), encoded, cfg.train, pros_rng).network;
  }

  if (!seg.prosodic) {
    seg.alpha = 1.0;
  } else if (!seg.lexical) {
    seg.alpha = 0.0;
  } else {
    seg.alpha = cfg.fixed_alpha.value_or(1.0);
  }
  return seg;
}

/// Trains a segmenter and settles α. Without a fixed α (and with both
/// models present) α is tuned on a held-out fifth of `texts` using models
/// trained on the rest; the final models are then retrained on all texts.
inline TrainedSegmenter fit_segmenter(std::span<const LabeledText> texts, const SegmenterConfig& cfg, Rng& rng) {
  TrainedSegmenter seg = train_segmenter(texts, cfg, rng);
  if (!seg.lexical || !seg.prosodic || cfg.fixed_alpha) return seg;

  const std::size_t k = 5;
  if (texts.size() < k) return seg;
  Corpus view;
  view.texts.assign(texts.begin(), texts.end());
  const FoldPlan plan = kfold_split(view, k, rng.fork(3).next_u64());
  const auto train_idx = plan.train_indices(0);
  const auto held_idx = plan.test_indices(0);
  const auto train_part = select<LabeledText>(texts, train_idx);
  Rng tune_rng = rng.fork(4);
  const TrainedSegmenter probe = train_segmenter(train_part, cfg, tune_rng);
  std::vector<ModelOutputs> outputs;
  for (std::size_t i : held_idx) outputs.push_back(model_outputs(probe, texts[i]));
  seg.alpha = tune_alpha(outputs, cfg.train.alpha_grid);
  return seg;
}

}  // namespace sbd
