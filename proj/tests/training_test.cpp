#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "sbd/training.hpp"
#include "support/gradient_check.hpp"

namespace {

using namespace sbd;

// ---------------------------------------------------------------------------
// Class weights

TEST(ClassWeights, NinetyTen) {
  const ClassWeights cw = compute_class_weights(90, 10);
  EXPECT_NEAR(cw.b, 5.0, 1e-12);
  EXPECT_NEAR(cw.nb, 100.0 / 180.0, 1e-12);
  EXPECT_NEAR(cw.nb, 0.5556, 5e-5);
}

TEST(ClassWeights, Balanced) {
  const ClassWeights cw = compute_class_weights(50, 50);
  EXPECT_EQ(cw.b, 1.0);
  EXPECT_EQ(cw.nb, 1.0);
}

TEST(ClassWeights, NarrativeCorpusBoundaryWeight) {
  EXPECT_NEAR(compute_class_weights(23807 - 1843, 1843).b, 23807.0 / 3686.0, 1e-12);
  EXPECT_NEAR(compute_class_weights(23807 - 1843, 1843).b, 6.459, 5e-4);
}

TEST(ClassWeights, FromLabels) {
  std::vector<Label> y(10, Label::NB);
  y[3] = Label::B;
  const ClassWeights cw = compute_class_weights(y);
  EXPECT_NEAR(cw.b, 5.0, 1e-12);
}

TEST(ClassWeights, MissingClassIsDataError) {
  EXPECT_THROW(compute_class_weights(10, 0), DataError);
  EXPECT_THROW(compute_class_weights(0, 10), DataError);
}

// ---------------------------------------------------------------------------
// Buckets

TEST(Buckets, SplitByWidth) {
  const std::vector<std::size_t> lengths{12, 14, 80};
  const auto b = make_buckets(lengths, 50);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].members, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(b[1].members, (std::vector<std::size_t>{2}));
  EXPECT_EQ(b[0].max_length, 14u);
}

TEST(Buckets, WideBucketHoldsAll) {
  const std::vector<std::size_t> lengths{12, 14, 80};
  EXPECT_EQ(make_buckets(lengths, 80).size(), 1u);
}

TEST(Buckets, PartitionProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> lengths(1 + rng.below(40));
    for (auto& l : lengths) l = 1 + rng.below(300);
    const std::size_t width = 1 + rng.below(100);
    std::multiset<std::size_t> seen;
    for (const auto& b : make_buckets(lengths, width)) {
      for (std::size_t i : b.members) {
        seen.insert(i);
        EXPECT_EQ((lengths[i] - 1) / width, (lengths[b.members[0]] - 1) / width);
      }
    }
    ASSERT_EQ(seen.size(), lengths.size());
    for (std::size_t i = 0; i < lengths.size(); ++i) EXPECT_EQ(seen.count(i), 1u);
  }
}

// ---------------------------------------------------------------------------
// Folds

Corpus n_texts(std::size_t n) { return synth_generate({.n_texts = n, .sentences_per_text = 1, .seed = 2}); }

TEST(Folds, TwentyTextsFiveFolds) {
  const FoldPlan plan = kfold_split(n_texts(20), 5, 7);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(plan.test_indices(f).size(), 4u);
}

TEST(Folds, DisjointAndCovering) {
  for (std::size_t n : {5u, 11u, 23u}) {
    const Corpus c = n_texts(n);
    const FoldPlan plan = kfold_split(c, 5, 1);
    std::multiset<std::size_t> seen;
    for (std::size_t f = 0; f < 5; ++f) {
      const auto test = plan.test_indices(f);
      const auto train = plan.train_indices(f);
      EXPECT_EQ(test.size() + train.size(), n);
      seen.insert(test.begin(), test.end());
    }
    EXPECT_EQ(seen.size(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen.count(i), 1u);
    EXPECT_EQ(plan.assignments.size(), n);
  }
}

TEST(Folds, SameSeedSamePlan) {
  const Corpus c = n_texts(20);
  EXPECT_EQ(kfold_split(c, 5, 9).fold_of, kfold_split(c, 5, 9).fold_of);
  EXPECT_NE(kfold_split(c, 5, 9).fold_of, kfold_split(c, 5, 10).fold_of);
}

TEST(Folds, TooFewTexts) { EXPECT_THROW(kfold_split(n_texts(3), 5, 1), DataError); }

// ---------------------------------------------------------------------------
// Batches and masking

TEST(Batches, PaddingLeavesLossAndGradientsBitIdentical) {
  for (Variant v : {Variant::rcnn, Variant::cnn, Variant::rnn, Variant::mlp}) {
    const auto s = sbd::testing::tiny_setup(v, 7);
    EncodedText shorter = s.input;
    shorter.word_ids.resize(5);
    shorter.tag_ids.resize(5);
    shorter.labels.resize(5);
    const std::vector<const EncodedText*> members{&s.input, &shorter};
    const Batch tight = make_batch(members);
    const Batch padded = make_batch(members, 23);
    ASSERT_EQ(padded.sequences[0].size(), 23u);
    Rng r1(5), r2(5);
    const BatchGradients a = batch_gradients(s.net, tight, {0.8, 3.0}, Mode::train, r1);
    const BatchGradients b = batch_gradients(s.net, padded, {0.8, 3.0}, Mode::train, r2);
    EXPECT_EQ(std::memcmp(&a.loss, &b.loss, sizeof(double)), 0) << to_string(v);
    EXPECT_EQ(a.active, 14u);
    EXPECT_TRUE(a.grads == b.grads) << to_string(v);
  }
}

TEST(Batches, MaskedOnlyWordGetsNoGradient) {
  const auto s = sbd::testing::tiny_setup(Variant::rcnn, 7);
  EncodedText e = s.input;
  for (auto& w : e.word_ids) w = w % 6;
  e.word_ids.push_back(6);  // row 6 appears only in the padded tail
  e.tag_ids.push_back(0);
  e.labels.push_back(Label::B);
  Batch batch{{e}, {std::vector<std::uint8_t>(e.size(), 1)}};
  batch.masks[0].back() = 0;
  Rng r1(2);
  const BatchGradients g = batch_gradients(s.net, batch, {1.0, 1.0}, Mode::inference, r1);
  for (double v : g.grads.word_emb.row(6)) EXPECT_EQ(v, 0.0);

  Network moved = s.net;
  for (double& v : moved.params.word_emb.row(6)) v += 0.5;
  Rng r2(2);
  const BatchGradients h = batch_gradients(moved, batch, {1.0, 1.0}, Mode::inference, r2);
  EXPECT_EQ(g.loss, h.loss);
}

TEST(Batches, NonPrefixMaskRejected) {
  const std::vector<std::uint8_t> mask{1, 0, 1};
  EXPECT_THROW(active_length(mask), ContractViolation);
}

// ---------------------------------------------------------------------------
// Training loop

Hyperparams reduced() {
  Hyperparams hp = Hyperparams::lexical();
  hp.n_f = 16;
  hp.n_r = 16;
  return hp;
}

std::vector<EncodedText> encode_corpus(const Corpus& c, Vocabulary& words, Vocabulary& tags) {
  words = Vocabulary(collect_tokens(c.texts));
  tags = Vocabulary(collect_tags(c.texts));
  std::vector<EncodedText> out;
  for (const auto& t : c.texts) out.push_back(encode_lexical(t, &words, &tags));
  return out;
}

TEST(Train, LossDecreasesOverFirstFiveEpochs) {
  // Observed on the default synthetic corpus (seed 7) with the reduced model.
  const Corpus c = synth_generate({});
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  Rng rng(7);
  const Network net = init_network(Variant::rcnn, reduced(), {true, true, 0, words.rows(), tags.rows()}, rng);
  std::vector<EpochLog> log;
  TrainConfig cfg;
  cfg.on_epoch = [&log](const EpochLog& e) { log.push_back(e); };
  const TrainResult r = train_model(net, encoded, cfg, rng);
  ASSERT_EQ(r.epoch_loss.size(), 20u);
  ASSERT_EQ(log.size(), 20u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.epoch_loss[e], r.epoch_loss[e - 1]) << "epoch " << e + 1;
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  EXPECT_EQ(log[4].epoch, 5u);
  EXPECT_TRUE(r.network.params.all_finite());
}

TEST(Train, LearningRateGrid) {
  const Corpus c = synth_generate({.n_texts = 6, .sentences_per_text = 3});
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  for (double eta : {0.01, 0.003, 0.001}) {
    Hyperparams hp = reduced();
    hp.eta = eta;
    Rng rng(1);
    const Network net = init_network(Variant::rcnn, hp, {true, true, 0, words.rows(), tags.rows()}, rng);
    TrainConfig cfg;
    cfg.epochs = 2;
    const TrainResult r = train_model(net, encoded, cfg, rng);
    EXPECT_TRUE(std::isfinite(r.epoch_loss.back())) << eta;
  }
  EXPECT_EQ(Hyperparams{}.eta, 0.001);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const Corpus c = synth_generate({.n_texts = 4, .sentences_per_text = 2});
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  Rng rng(1);
  const Network net = init_network(Variant::rcnn, reduced(), {true, true, 0, words.rows(), tags.rows()}, rng);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train_model(net, encoded, cfg, rng).network.params == net.params);
}

TEST(Train, Deterministic) {
  const Corpus c = synth_generate({.n_texts = 6, .sentences_per_text = 3});
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  auto run = [&] {
    Rng rng(11);
    const Network net = init_network(Variant::rcnn, reduced(), {true, true, 0, words.rows(), tags.rows()}, rng);
    TrainConfig cfg;
    cfg.epochs = 3;
    return train_model(net, encoded, cfg, rng).network.params;
  };
  EXPECT_TRUE(run() == run());
}

TEST(Train, NonFiniteLossReportsEpochAndBatch) {
  const Corpus c = synth_generate({.n_texts = 4, .sentences_per_text = 2});
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  Rng rng(1);
  Network net = init_network(Variant::rcnn, reduced(), {true, true, 0, words.rows(), tags.rows()}, rng);
  net.params.out_b(0, 0) = std::nan("");
  try {
    train_model(net, encoded, TrainConfig{}, rng);
    FAIL();
  } catch (const NumericFailure& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
    EXPECT_NE(what.find("batch 1"), std::string::npos) << what;
    EXPECT_NE(what.find("out.W="), std::string::npos) << what;
  }
}

TEST(Train, DegenerateLabelsRejected) {
  Corpus c = synth_generate({.n_texts = 3, .sentences_per_text = 2});
  for (auto& t : c.texts) std::fill(t.labels.begin(), t.labels.end(), Label::NB);
  Vocabulary words, tags;
  const auto encoded = encode_corpus(c, words, tags);
  Rng rng(1);
  const Network net = init_network(Variant::mlp, reduced(), {true, true, 0, words.rows(), tags.rows()}, rng);
  EXPECT_THROW(train_model(net, encoded, TrainConfig{}, rng), DataError);
}

TEST(Train, ProsodicStatsSkipAdGroup) {
  Corpus c = synth_generate({.n_texts = 6, .sentences_per_text = 2});
  for (std::size_t i = 0; i < 3; ++i) {
    c.texts[i].group = Group::AD;
    for (auto& p : c.texts[i].prosody) p.fill(100.0);
  }
  SegmenterConfig cfg;
  cfg.features = {false, false, true};
  cfg.prosodic_hp.n_r = 4;
  cfg.train.epochs = 1;
  Rng rng(1);
  const TrainedSegmenter seg = train_segmenter(c.texts, cfg, rng);
  const std::vector<LabeledText> kept(c.texts.begin() + 3, c.texts.end());
  EXPECT_EQ(seg.prosody_stats, fit_prosody_stats(kept));
  EXPECT_EQ(seg.alpha, 0.0);
}

// ---------------------------------------------------------------------------
// Fusion weight tuning

std::vector<ModelOutputs> random_outputs(Rng& rng, bool constant_prosody) {
  std::vector<ModelOutputs> out;
  for (int n = 0; n < 6; ++n) {
    ModelOutputs o;
    Matrix lex(12, 2), pros(12, 2);
    for (std::size_t t = 0; t < 12; ++t) {
      const bool b = rng.bernoulli(0.3);
      o.gold.push_back(b ? Label::B : Label::NB);
      const double pl = std::clamp((b ? 0.65 : 0.35) + rng.normal(0.0, 0.25), 0.0, 1.0);
      const double pp = constant_prosody ? 0.5 : std::clamp((b ? 0.6 : 0.4) + rng.normal(0.0, 0.3), 0.0, 1.0);
      lex(t, 1) = pl;
      lex(t, 0) = 1 - pl;
      pros(t, 1) = pp;
      pros(t, 0) = 1 - pp;
    }
    o.lexical = lex;
    o.prosodic = pros;
    out.push_back(std::move(o));
  }
  return out;
}

TEST(TuneAlpha, UninformativeProsodyKeepsLexicalOnly) {
  Rng rng(4);
  const auto outputs = random_outputs(rng, true);
  const auto grid = default_alpha_grid();
  const double best = pooled_counts(outputs, 1.0).f1();
  for (double a : grid) EXPECT_LE(pooled_counts(outputs, a).f1(), best);
  EXPECT_EQ(tune_alpha(outputs, grid), 1.0);
}

TEST(TuneAlpha, SingletonGrid) {
  Rng rng(4);
  const std::vector<double> grid{0.6};
  EXPECT_EQ(tune_alpha(random_outputs(rng, false), grid), 0.6);
}

TEST(TuneAlpha, EmptyGridRejected) {
  Rng rng(4);
  EXPECT_THROW(tune_alpha(random_outputs(rng, false), std::vector<double>{}), ContractViolation);
}

TEST(TuneAlpha, SwappingModelsMirrorsTheMaximizers) {
  const auto grid = default_alpha_grid();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto outputs = random_outputs(rng, false);
    double best = -1;
    for (double a : grid) best = std::max(best, pooled_counts(outputs, a).f1());
    std::vector<double> maximizers;
    for (double a : grid)
      if (pooled_counts(outputs, a).f1() == best) maximizers.push_back(a);

    for (auto& o : outputs) std::swap(o.lexical, o.prosodic);
    const double swapped = tune_alpha(outputs, grid);
    const bool mirrored = std::any_of(maximizers.begin(), maximizers.end(),
                                      [&](double a) { return std::abs((1.0 - swapped) - a) < 1e-12; });
    EXPECT_TRUE(mirrored) << "seed " << seed << " swapped alpha " << swapped;
  }
}

}  // namespace
