#include <gtest/gtest.h>

#include <fstream>

#include "sbd/model.hpp"
#include "sbd/model_io.hpp"
#include "support/gradient_check.hpp"
#include "support/temp_dir.hpp"

namespace {

using namespace sbd;
using sbd::testing::check_gradients;
using sbd::testing::analytic_gradients;
using sbd::testing::tiny_setup;

const Variant kVariants[] = {Variant::rcnn, Variant::cnn, Variant::rnn, Variant::mlp};

// ---------------------------------------------------------------------------
// Gradients

class Gradients : public ::testing::TestWithParam<std::tuple<Variant, Mode>> {};

TEST_P(Gradients, MatchCentralDifferences) {
  const auto [variant, mode] = GetParam();
  const auto s = tiny_setup(variant, 7);
  const ClassWeights cw{0.7, 2.5};
  const auto grads = analytic_gradients(s.net, s.input, cw, mode, 1234);
  const auto r = check_gradients(s.net, s.input, cw, mode, 1234, grads);
  EXPECT_GT(r.checked, 50u);
  for (const auto& f : r.failures)
    ADD_FAILURE() << f.parameter << "[" << f.index << "] analytic " << f.analytic << " numeric " << f.numeric
                  << " rel " << f.rel_error;
  EXPECT_LE(r.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllVariants, Gradients,
                         ::testing::Combine(::testing::ValuesIn(kVariants),
                                            ::testing::Values(Mode::train, Mode::inference)),
                         [](const auto& info) {
                           return std::string(to_string(std::get<0>(info.param))) +
                                  (std::get<1>(info.param) == Mode::train ? "_train" : "_inference");
                         });

TEST(GradientsMisc, ZeroClassWeightsGiveZeroGradients) {
  const auto s = tiny_setup(Variant::rcnn, 3);
  const auto g = analytic_gradients(s.net, s.input, {0.0, 0.0}, Mode::train, 5);
  g.for_each([](std::string_view name, const Matrix& m) {
    for (double v : m.values()) EXPECT_EQ(v, 0.0) << name;
  });
}

TEST(GradientsMisc, BackwardBeforeForwardIsRejected) {
  const auto s = tiny_setup(Variant::rcnn, 3);
  ModelParameters g = s.net.params.zeros_like();
  EXPECT_THROW(network_backward(s.net, ForwardCache{}, Matrix(9, 2), g), ContractViolation);
}

// ---------------------------------------------------------------------------
// Forward shapes and properties

EncodedText random_input(std::size_t m, Rng& rng) {
  EncodedText e;
  for (std::size_t t = 0; t < m; ++t) {
    e.word_ids.push_back(rng.below(7));
    e.tag_ids.push_back(rng.below(4));
    e.labels.push_back(Label::NB);
  }
  return e;
}

TEST(Forward, OutputIsMByTwoForEveryVariant) {
  Rng rng(1);
  for (Variant v : kVariants) {
    const auto s = tiny_setup(v, 2);
    for (std::size_t m : {1u, 2u, 7u, 50u}) {
      const Matrix p = network_forward(s.net, random_input(m, rng), Mode::inference);
      EXPECT_EQ(p.rows(), m);
      EXPECT_EQ(p.cols(), 2u);
      for (std::size_t t = 0; t < m; ++t) EXPECT_NEAR(p(t, 0) + p(t, 1), 1.0, 1e-12);
    }
  }
}

TEST(Forward, ZeroParametersGiveHalfHalf) {
  Rng rng(1);
  for (Variant v : kVariants) {
    const auto s = tiny_setup(v, 2);
    const Network zero = zero_network(v, s.net.hp, s.net.layout);
    const Matrix p = network_forward(zero, random_input(6, rng), Mode::inference);
    for (double x : p.values()) EXPECT_EQ(x, 0.5);
  }
}

TEST(Forward, InferenceIsBitIdentical) {
  const auto s = tiny_setup(Variant::rcnn, 2);
  EXPECT_EQ(network_forward(s.net, s.input, Mode::inference), network_forward(s.net, s.input, Mode::inference));
}

TEST(Forward, TrainModeNeedsRandomSource) {
  const auto s = tiny_setup(Variant::rcnn, 2);
  EXPECT_THROW(network_forward(s.net, s.input, Mode::train), ContractViolation);
}

TEST(Forward, MlpIsLocalPerTimestep) {
  const auto s = tiny_setup(Variant::mlp, 4);
  Rng rng(9);
  const EncodedText in = random_input(8, rng);
  std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
  EncodedText permuted = in;
  for (std::size_t t = 0; t < 8; ++t) {
    permuted.word_ids[t] = in.word_ids[perm[t]];
    permuted.tag_ids[t] = in.tag_ids[perm[t]];
  }
  const Matrix a = network_forward(s.net, in, Mode::inference);
  const Matrix b = network_forward(s.net, permuted, Mode::inference);
  for (std::size_t t = 0; t < 8; ++t) {
    EXPECT_EQ(b(t, 0), a(perm[t], 0));
    EXPECT_EQ(b(t, 1), a(perm[t], 1));
  }
}

TEST(Forward, CnnReceptiveField) {
  const auto s = tiny_setup(Variant::cnn, 4);
  const std::size_t reach = s.net.hp.h_c + s.net.hp.h_m;
  // With odd widths, conv then pool sees ⌊h_c/2⌋ + ⌊h_m/2⌋ rows either side.
  const std::size_t tight = s.net.hp.h_c / 2 + s.net.hp.h_m / 2;
  ASSERT_LE(tight, reach);
  Rng rng(11);
  const EncodedText base = random_input(30, rng);
  const Matrix p = network_forward(s.net, base, Mode::inference);
  const std::size_t t = 15;
  for (std::size_t far = 0; far < 30; ++far) {
    const std::size_t dist = far > t ? far - t : t - far;
    if (dist <= tight) continue;
    EncodedText edited = base;
    edited.word_ids[far] = (edited.word_ids[far] + 1) % 7;
    edited.tag_ids[far] = (edited.tag_ids[far] + 1) % 4;
    const Matrix q = network_forward(s.net, edited, Mode::inference);
    EXPECT_EQ(q(t, 1), p(t, 1)) << "edit at distance " << dist;
  }
}

TEST(Forward, RnnSingleWordIsOneStepEachWay) {
  const auto s = tiny_setup(Variant::rnn, 6);
  Rng rng(3);
  const EncodedText in = random_input(1, rng);
  const Matrix x = embed(s.net, in);
  const auto& p = s.net.params;
  const Vector zero(s.net.hp.n_r, 0.0);
  const LstmStep f = lstm_cell_step(x.row(0), zero, zero, p.lstm_fwd);
  const LstmStep b = lstm_cell_step(x.row(0), zero, zero, p.lstm_bwd);
  Matrix y(1, s.net.hp.n_r);
  for (std::size_t u = 0; u < y.cols(); ++u) {
    y(0, u) = dot(p.lstm_fwd.proj.row(u), f.h) + p.lstm_fwd.proj_bias(0, u) + dot(p.lstm_bwd.proj.row(u), b.h) +
              p.lstm_bwd.proj_bias(0, u);
  }
  const Matrix expected = softmax_rows(dense_rows_forward(y, p.out_w, p.out_b, Activation::identity));
  const Matrix got = network_forward(s.net, in, Mode::inference);
  EXPECT_NEAR(got(0, 0), expected(0, 0), 1e-15);
  EXPECT_NEAR(got(0, 1), expected(0, 1), 1e-15);
}

TEST(Init, ParameterShapes) {
  const auto s = tiny_setup(Variant::rcnn, 1);
  const auto& p = s.net.params;
  EXPECT_EQ(p.word_emb.rows(), 7u);
  EXPECT_EQ(p.word_emb.cols(), 4u);
  EXPECT_EQ(p.tag_emb.cols(), 2u);
  EXPECT_EQ(p.conv_w.rows(), 4u);
  EXPECT_EQ(p.conv_w.cols(), 3u * 6u);
  EXPECT_EQ(p.lstm_fwd.input.rows(), 20u);
  EXPECT_EQ(p.lstm_fwd.input.cols(), 4u);
  EXPECT_EQ(p.out_w.rows(), 5u);
  EXPECT_EQ(p.out_w.cols(), 2u);
  EXPECT_TRUE(p.hidden_w.empty());
}

TEST(Init, SameSeedSameNetwork) {
  EXPECT_EQ(tiny_setup(Variant::rcnn, 8).net.params, tiny_setup(Variant::rcnn, 8).net.params);
}

TEST(Variants, ParseRoundTrip) {
  for (Variant v : kVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_FALSE(parse_variant("transformer"));
}

TEST(Features, ParseRoundTrip) {
  for (const char* s : {"all", "emb", "pos", "prosody", "emb+pos", "emb+prosody"}) {
    const auto f = parse_feature_set(s);
    ASSERT_TRUE(f) << s;
    EXPECT_EQ(to_string(*f), s);
  }
  EXPECT_FALSE(parse_feature_set("emb+pitch"));
  EXPECT_FALSE(parse_feature_set(""));
}

// ---------------------------------------------------------------------------
// Fusion

TEST(Fusion, ConvexCombinationExample) {
  const Matrix lex{{0.1, 0.9}};
  const Matrix pros{{0.6, 0.4}};
  const Fused f = fuse(lex, &pros, 0.6);
  EXPECT_NEAR(f.probs(0, 1), 0.7, 1e-15);
  EXPECT_EQ(f.labels[0], Label::B);
}

TEST(Fusion, EndpointsReproduceSingleModels) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix lex(5, 2), pros(5, 2);
    for (std::size_t t = 0; t < 5; ++t) {
      const double a = rng.uniform(), b = rng.uniform();
      lex(t, 1) = a;
      lex(t, 0) = 1 - a;
      pros(t, 1) = b;
      pros(t, 0) = 1 - b;
    }
    EXPECT_EQ(fuse(lex, &pros, 1.0).labels, argmax_labels(lex));
    EXPECT_EQ(fuse(lex, &pros, 0.0).labels, argmax_labels(pros));
    const Fused mid = fuse(lex, &pros, rng.uniform());
    for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(mid.probs(t, 0) + mid.probs(t, 1), 1.0, 1e-12);
  }
}

TEST(Fusion, TieGoesToNonBoundary) {
  EXPECT_EQ(argmax_labels(Matrix{{0.5, 0.5}})[0], Label::NB);
}

TEST(Fusion, Contracts) {
  const Matrix p{{0.5, 0.5}};
  EXPECT_THROW(fuse(p, nullptr, 0.5), ContractViolation);
  EXPECT_THROW(fuse(p, &p, 1.5), ContractViolation);
  const Matrix q{{0.5, 0.5}, {0.1, 0.9}};
  EXPECT_THROW(fuse(p, &q, 0.5), ContractViolation);
}

// ---------------------------------------------------------------------------
// Model files

TrainedSegmenter small_segmenter(std::uint64_t seed) {
  const Corpus c = synth_generate({.n_texts = 3, .sentences_per_text = 2, .seed = seed});
  TrainedSegmenter s;
  s.features = FeatureSet{true, true, true};
  s.word_vocab = Vocabulary(collect_tokens(c.texts));
  s.tag_vocab = Vocabulary(collect_tags(c.texts));
  Hyperparams hp;
  hp.e_w = 4;
  hp.e_t = 2;
  hp.n_f = 3;
  hp.n_r = 3;
  Rng rng(seed);
  s.lexical = init_network(Variant::rcnn, hp, {true, true, 0, s.word_vocab.rows(), s.tag_vocab.rows()}, rng);
  s.prosodic = init_network(Variant::rcnn, Hyperparams::prosodic(), {false, false, kProsodyDim, 0, 0}, rng);
  s.prosody_stats = fit_prosody_stats(c.texts);
  s.alpha = 0.6;
  return s;
}

bool bitwise_equal(const ModelParameters& a, const ModelParameters& b) {
  std::vector<const Matrix*> ma, mb;
  a.for_each([&](std::string_view, const Matrix& m) { ma.push_back(&m); });
  b.for_each([&](std::string_view, const Matrix& m) { mb.push_back(&m); });
  if (ma.size() != mb.size()) return false;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (!ma[i]->same_shape(*mb[i])) return false;
    if (std::memcmp(ma[i]->data(), mb[i]->data(), ma[i]->size() * sizeof(double)) != 0) return false;
  }
  return true;
}

TEST(ModelFile, RoundTripIsBitwise) {
  const TrainedSegmenter s = small_segmenter(4);
  const TrainedSegmenter back = deserialize_model(serialize_model(s));
  EXPECT_TRUE(bitwise_equal(back.lexical->params, s.lexical->params));
  EXPECT_TRUE(bitwise_equal(back.prosodic->params, s.prosodic->params));
  EXPECT_EQ(back.lexical->hp, s.lexical->hp);
  EXPECT_EQ(back.word_vocab, s.word_vocab);
  EXPECT_EQ(back.tag_vocab, s.tag_vocab);
  EXPECT_EQ(back.prosody_stats, s.prosody_stats);
  EXPECT_EQ(back.alpha, s.alpha);
  EXPECT_EQ(back.features, s.features);
  EXPECT_EQ(serialize_model(back), serialize_model(s));
}

TEST(ModelFile, PredictionsSurviveSaveLoad) {
  const TrainedSegmenter s = small_segmenter(5);
  sbd::testing::TempDir dir;
  save_model(s, dir / "m.dbnd");
  const TrainedSegmenter back = load_model(dir / "m.dbnd");
  for (const auto& t : synth_generate({.n_texts = 2, .seed = 9}).texts) {
    const Fused a = s.predict(t);
    const Fused b = back.predict(t);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(0, std::memcmp(a.probs.data(), b.probs.data(), a.probs.size() * sizeof(double)));
  }
}

TEST(ModelFile, TruncationIsChecksumError) {
  const auto bytes = serialize_model(small_segmenter(6));
  for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, std::size_t{12}}) {
    const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(deserialize_model(cut), ChecksumError) << keep;
  }
}

TEST(ModelFile, CorruptionIsChecksumError) {
  auto bytes = serialize_model(small_segmenter(6));
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(deserialize_model(bytes), ChecksumError);
}

TEST(ModelFile, NewerVersionRejected) {
  auto bytes = serialize_model(small_segmenter(6));
  bytes[4] = static_cast<unsigned char>(kModelVersion + 1);
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const ChecksumError&) {
    FAIL() << "version must be checked before the checksum";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("newer"), std::string::npos);
  }
}

TEST(ModelFile, BadMagicRejected) {
  auto bytes = serialize_model(small_segmenter(6));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_model(bytes), DataError);
}

TEST(ModelFile, SameSeedSameBytes) {
  EXPECT_EQ(serialize_model(small_segmenter(3)), serialize_model(small_segmenter(3)));
}

TEST(Segmenter, NeedsProsodyOnlyWhenFusing) {
  TrainedSegmenter s = small_segmenter(2);
  EXPECT_TRUE(s.needs_prosody());
  s.alpha = 1.0;
  EXPECT_FALSE(s.needs_prosody());
  LabeledText t = synth_generate({.n_texts = 1, .seed = 1}).texts[0];
  t.prosody.clear();
  EXPECT_NO_THROW(s.predict(t));
  s.alpha = 0.5;
  EXPECT_THROW(s.predict(t), UnsupportedInput);
}

}  // namespace
