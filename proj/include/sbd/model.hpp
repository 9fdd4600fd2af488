#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/corpus.hpp"
#include "sbd/errors.hpp"
#include "sbd/features.hpp"
#include "sbd/label.hpp"
#include "sbd/numerics.hpp"

namespace sbd {

enum class Variant { rcnn, mlp, cnn, rnn };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::rcnn: return "rcnn";
    case Variant::mlp: return "mlp";
    case Variant::cnn: return "cnn";
    case Variant::rnn: return "rnn";
  }
  return "rcnn";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "rcnn") return Variant::rcnn;
  if (s == "mlp") return Variant::mlp;
  if (s == "cnn") return Variant::cnn;
  if (s == "rnn") return Variant::rnn;
  return std::nullopt;
}

inline bool has_conv(Variant v) { return v == Variant::rcnn || v == Variant::cnn; }
inline bool has_recurrence(Variant v) { return v == Variant::rcnn || v == Variant::rnn; }

/// Initial forget-gate bias of every LSTM direction.
inline constexpr double kForgetGateBias = 1.0;

struct Hyperparams {
  std::size_t e_w = 50;
  std::size_t e_t = 10;
  std::size_t n_f = 100;
  std::size_t h_c = 7;
  std::size_t h_m = 3;
  std::size_t n_r = 100;
  std::size_t mlp_hidden = 100;
  double gamma = 0.9;
  double eta = 0.001;
  double dropout_rate = 0.5;
  std::size_t epochs = 20;

  static Hyperparams lexical() { return {}; }

  static Hyperparams prosodic() {
    Hyperparams hp;
    hp.n_f = 8;
    hp.h_c = 5;
    return hp;
  }

  void validate() const {
    require(e_w > 0 && e_t > 0 && n_f > 0 && h_c > 0 && h_m > 0 && n_r > 0 && mlp_hidden > 0,
            "Hyperparams: sizes must be positive");
    require(gamma > 0.0 && gamma < 1.0, "Hyperparams: gamma must be in (0, 1)");
    require(eta > 0.0, "Hyperparams: eta must be positive");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "Hyperparams: dropout rate must be in [0, 1)");
  }

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// Which input sources feed a network and the sizes of its lookup tables.
struct InputLayout {
  bool words = false;
  bool tags = false;
  std::size_t dense_dim = 0;
  std::size_t word_rows = 0;  // including the OOV row
  std::size_t tag_rows = 0;

  friend bool operator==(const InputLayout&, const InputLayout&) = default;
};

/// Every trainable matrix of one network. Unused members stay empty.
struct ModelParameters {
  Matrix word_emb;
  Matrix tag_emb;
  Matrix conv_w;    // n_f × h_c·d
  Matrix conv_b;    // 1 × n_f
  Matrix hidden_w;  // d × mlp_hidden (MLP only)
  Matrix hidden_b;
  LstmWeights lstm_fwd;
  LstmWeights lstm_bwd;
  Matrix out_w;  // k × 2
  Matrix out_b;  // 1 × 2

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  ModelParameters zeros_like() const {
    ModelParameters z = *this;
    z.for_each([](std::string_view, Matrix& m) { m.fill(0.0); });
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&n](std::string_view, const Matrix& m) { n += m.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&ok](std::string_view, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
  }

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    std::vector<const Matrix*> lhs, rhs;
    a.for_each([&](std::string_view, const Matrix& m) { lhs.push_back(&m); });
    b.for_each([&](std::string_view, const Matrix& m) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i)
      if (!(*lhs[i] == *rhs[i])) return false;
    return true;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& p, F& f) {
    auto emit = [&f](std::string_view name, auto& m) {
      if (!m.empty()) f(name, m);
    };
    emit("word_emb", p.word_emb);
    emit("tag_emb", p.tag_emb);
    emit("conv.W", p.conv_w);
    emit("conv.b", p.conv_b);
    emit("hidden.W", p.hidden_w);
    emit("hidden.b", p.hidden_b);
    emit("lstm_fwd.Wx", p.lstm_fwd.input);
    emit("lstm_fwd.Wh", p.lstm_fwd.hidden);
    emit("lstm_fwd.b", p.lstm_fwd.bias);
    emit("lstm_fwd.Wy", p.lstm_fwd.proj);
    emit("lstm_fwd.by", p.lstm_fwd.proj_bias);
    emit("lstm_bwd.Wx", p.lstm_bwd.input);
    emit("lstm_bwd.Wh", p.lstm_bwd.hidden);
    emit("lstm_bwd.b", p.lstm_bwd.bias);
    emit("lstm_bwd.Wy", p.lstm_bwd.proj);
    emit("lstm_bwd.by", p.lstm_bwd.proj_bias);
    emit("out.W", p.out_w);
    emit("out.b", p.out_b);
  }
};

/// Looks up a parameter matrix by the name `for_each` reports.
inline Matrix* find_parameter(ModelParameters& p, std::string_view name) {
  Matrix* found = nullptr;
  p.for_each([&](std::string_view n, Matrix& m) {
    if (n == name) found = &m;
  });
  return found;
}

struct Network {
  Variant variant = Variant::rcnn;
  Hyperparams hp;
  InputLayout layout;
  ModelParameters params;

  std::size_t input_dim() const {
    return (layout.words ? hp.e_w : 0) + (layout.tags ? hp.e_t : 0) + layout.dense_dim;
  }

  /// Input width of the output layer.
  std::size_t top_dim() const {
    switch (variant) {
      case Variant::rcnn:
      case Variant::rnn: return hp.n_r;
      case Variant::cnn: return hp.n_f;
      case Variant::mlp: return hp.mlp_hidden;
    }
    return hp.n_r;
  }
};

/// Network with all-zero parameters shaped for `variant` and `layout`.
inline Network zero_network(Variant variant, const Hyperparams& hp, const InputLayout& layout) {
  hp.validate();
  Network net{variant, hp, layout, {}};
  require(net.input_dim() > 0, "network input has no features");
  require(!layout.words || layout.word_rows > 0, "word table must have rows");
  require(!layout.tags || layout.tag_rows > 0, "tag table must have rows");
  auto& p = net.params;
  const std::size_t d = net.input_dim();
  if (layout.words) p.word_emb = Matrix(layout.word_rows, hp.e_w);
  if (layout.tags) p.tag_emb = Matrix(layout.tag_rows, hp.e_t);
  if (has_conv(variant)) {
    p.conv_w = Matrix(hp.n_f, hp.h_c * d);
    p.conv_b = Matrix(1, hp.n_f);
  }
  if (variant == Variant::mlp) {
    p.hidden_w = Matrix(d, hp.mlp_hidden);
    p.hidden_b = Matrix(1, hp.mlp_hidden);
  }
  if (has_recurrence(variant)) {
    const std::size_t in = variant == Variant::rcnn ? hp.n_f : d;
    p.lstm_fwd = LstmWeights::zeros(in, hp.n_r);
    p.lstm_bwd = LstmWeights::zeros(in, hp.n_r);
  }
  p.out_w = Matrix(net.top_dim(), kNumClasses);
  p.out_b = Matrix(1, kNumClasses);
  return net;
}

/// Glorot-initialized weights, zero biases (forget gates at kForgetGateBias).
inline Network init_network(Variant variant, const Hyperparams& hp, const InputLayout& layout, Rng& rng) {
  Network net = zero_network(variant, hp, layout);
  auto& p = net.params;
  const std::size_t d = net.input_dim();
  if (layout.words) p.word_emb = glorot_init(layout.word_rows, hp.e_w, rng);
  if (layout.tags) p.tag_emb = glorot_init(layout.tag_rows, hp.e_t, rng);
  if (has_conv(variant)) p.conv_w = glorot_init(hp.n_f, hp.h_c * d, rng);
  if (variant == Variant::mlp) p.hidden_w = glorot_init(d, hp.mlp_hidden, rng);
  if (has_recurrence(variant)) {
    const std::size_t in = variant == Variant::rcnn ? hp.n_f : d;
    p.lstm_fwd = LstmWeights::glorot(in, hp.n_r, kForgetGateBias, rng);
    p.lstm_bwd = LstmWeights::glorot(in, hp.n_r, kForgetGateBias, rng);
  }
  p.out_w = glorot_init(net.top_dim(), kNumClasses, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Encoded inputs

/// A text mapped to table rows and dense features for one network.
struct EncodedText {
  std::string id;
  Group group = Group::OTHER;
  std::vector<std::size_t> word_ids;
  std::vector<std::size_t> tag_ids;
  Matrix dense;  // m × dense_dim, or empty
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
};

inline EncodedText encode_lexical(const LabeledText& text, const Vocabulary* words, const Vocabulary* tags) {
  EncodedText e{text.id, text.group, {}, {}, {}, text.labels};
  for (std::size_t t = 0; t < text.size(); ++t) {
    if (words) e.word_ids.push_back(words->lookup(lowercase(text.tokens[t])));
    if (tags) e.tag_ids.push_back(tags->lookup(text.pos_tags[t]));
  }
  return e;
}

inline EncodedText encode_prosodic(const LabeledText& text, const ProsodyStats& stats) {
  return {text.id, text.group, {}, {}, build_prosodic_input(text, stats), text.labels};
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  bool valid = false;
  std::vector<std::size_t> word_ids;
  std::vector<std::size_t> tag_ids;
  Matrix x;
  Matrix conv_out;
  PoolResult pool;
  BiLstmCache lstm;
  Matrix hidden;   // MLP hidden layer or recurrent-layer output
  Matrix mask;     // dropout mask, empty when dropout is inactive
  Matrix top;      // input of the output layer
  Matrix probs;
};

/// Row t = [word row ‖ tag row ‖ dense row].
inline Matrix embed(const Network& net, const EncodedText& in) {
  const std::size_t m = in.size();
  require(m >= 1, "network input must have at least one row");
  const auto& layout = net.layout;
  require(!layout.words || in.word_ids.size() == m, "encoded text lacks word ids");
  require(!layout.tags || in.tag_ids.size() == m, "encoded text lacks tag ids");
  require(layout.dense_dim == 0 || (in.dense.rows() == m && in.dense.cols() == layout.dense_dim),
          "encoded text lacks dense features of width " + std::to_string(layout.dense_dim));
  Matrix x(m, net.input_dim());
  for (std::size_t t = 0; t < m; ++t) {
    auto row = x.row(t);
    auto out = row.begin();
    if (layout.words) {
      require(in.word_ids[t] < net.params.word_emb.rows(), "word id out of range");
      auto src = net.params.word_emb.row(in.word_ids[t]);
      out = std::copy(src.begin(), src.end(), out);
    }
    if (layout.tags) {
      require(in.tag_ids[t] < net.params.tag_emb.rows(), "tag id out of range");
      auto src = net.params.tag_emb.row(in.tag_ids[t]);
      out = std::copy(src.begin(), src.end(), out);
    }
    if (layout.dense_dim) {
      auto src = in.dense.row(t);
      std::copy(src.begin(), src.end(), out);
    }
  }
  return x;
}

/// Per-word class probabilities (m × 2). `rng` is required in train mode
/// when dropout is active.
///   rcnn: conv → pool → bilstm → dropout → dense+softmax
///   cnn:  conv → pool → dropout → dense+softmax
///   rnn:  bilstm → dropout → dense+softmax
///   mlp:  dense(sigmoid) → dense+softmax
inline Matrix network_forward(const Network& net, const EncodedText& in, Mode mode, Rng* rng = nullptr,
                              ForwardCache* cache = nullptr) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  const auto& p = net.params;
  const auto& hp = net.hp;
  c.x = embed(net, in);
  c.word_ids = in.word_ids;
  c.tag_ids = in.tag_ids;

  Matrix features = c.x;
  if (has_conv(net.variant)) {
    require(p.conv_w.cols() == hp.h_c * net.input_dim(), "parameters do not match the convolution shape");
    c.conv_out = conv1d_same_forward(c.x, p.conv_w, p.conv_b, hp.h_c, Activation::relu);
    c.pool = maxpool1d_same_with_argmax(c.conv_out, hp.h_m);
    features = c.pool.values;
  }
  if (has_recurrence(net.variant)) {
    require(!p.lstm_fwd.input.empty(), "parameters lack recurrent weights");
    features = bilstm_forward(features, p.lstm_fwd, p.lstm_bwd, &c.lstm);
    c.hidden = features;
  }
  if (net.variant == Variant::mlp) {
    require(!p.hidden_w.empty(), "parameters lack the MLP hidden layer");
    features = dense_rows_forward(c.x, p.hidden_w, p.hidden_b, Activation::sigmoid);
    c.hidden = features;
  } else if (mode == Mode::train && hp.dropout_rate > 0.0) {
    require(rng != nullptr, "train-mode dropout needs a random source");
    c.mask = dropout_mask(features.rows(), features.cols(), hp.dropout_rate, *rng);
    features = hadamard(features, c.mask);
  }
  require(features.cols() == p.out_w.rows(), "output layer does not match the variant");
  c.top = std::move(features);
  const Matrix logits = dense_rows_forward(c.top, p.out_w, p.out_b, Activation::identity);
  c.probs = softmax_rows(logits);
  c.valid = true;
  return c.probs;
}

/// Accumulates exact gradients of a loss whose gradient w.r.t. the logits is
/// `dlogits` into `grads` (shaped like the network's parameters).
inline void network_backward(const Network& net, const ForwardCache& c, const Matrix& dlogits,
                             ModelParameters& grads) {
  require(c.valid, "backward called before forward");
  require(dlogits.rows() == c.probs.rows() && dlogits.cols() == kNumClasses, "dlogits shape mismatch");
  const auto& p = net.params;
  const auto& hp = net.hp;

  // identity activation: the output argument is not read
  Matrix d = dense_rows_backward(c.top, c.top, dlogits, p.out_w, Activation::identity, grads.out_w, grads.out_b);
  Matrix dx;
  if (net.variant == Variant::mlp) {
    dx = dense_rows_backward(c.x, c.hidden, d, p.hidden_w, Activation::sigmoid, grads.hidden_w, grads.hidden_b);
  } else {
    if (!c.mask.empty()) d = hadamard(d, c.mask);
    if (has_recurrence(net.variant)) {
      d = bilstm_backward(c.lstm, p.lstm_fwd, p.lstm_bwd, d, grads.lstm_fwd, grads.lstm_bwd);
    }
    if (has_conv(net.variant)) {
      d = maxpool1d_same_backward(c.pool, d);
      d = conv1d_same_backward(c.x, c.conv_out, d, p.conv_w, hp.h_c, Activation::relu, grads.conv_w, grads.conv_b);
    }
    dx = std::move(d);
  }

  const auto& layout = net.layout;
  for (std::size_t t = 0; t < dx.rows(); ++t) {
    auto row = dx.row(t);
    std::size_t offset = 0;
    if (layout.words) {
      axpy(1.0, row.subspan(offset, hp.e_w), grads.word_emb.row(c.word_ids[t]));
      offset += hp.e_w;
    }
    if (layout.tags) axpy(1.0, row.subspan(offset, hp.e_t), grads.tag_emb.row(c.tag_ids[t]));
  }
}

// ---------------------------------------------------------------------------
// Fusion and prediction

/// B exactly when P(B) > P(NB); ties go to NB.
inline std::vector<Label> argmax_labels(const Matrix& probs) {
  std::vector<Label> labels(probs.rows());
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    labels[t] = probs(t, 1) > probs(t, 0) ? Label::B : Label::NB;
  }
  return labels;
}

struct Fused {
  Matrix probs;
  std::vector<Label> labels;
};

/// α·P_lexical + (1−α)·P_prosodic per word, then argmax.
inline Fused fuse(const Matrix& lexical, const Matrix* prosodic, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "fuse: alpha must be in [0, 1]");
  if (!prosodic) {
    require(alpha == 1.0, "fuse: alpha < 1 requires a prosodic model");
    return {lexical, argmax_labels(lexical)};
  }
  require(lexical.same_shape(*prosodic) && lexical.cols() == kNumClasses, "fuse: probability shapes differ");
  Matrix out(lexical.rows(), kNumClasses);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = alpha * lexical.values()[i] + (1.0 - alpha) * prosodic->values()[i];
  }
  auto labels = argmax_labels(out);
  return {std::move(out), std::move(labels)};
}

/// Which inputs a segmenter uses.
struct FeatureSet {
  bool embeddings = true;
  bool pos = true;
  bool prosody = true;

  bool lexical() const { return embeddings || pos; }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

inline std::string to_string(const FeatureSet& f) {
  if (f.embeddings && f.pos && f.prosody) return "all";
  std::string s;
  auto add = [&s](const char* part) {
    if (!s.empty()) s += '+';
    s += part;
  };
  if (f.embeddings) add("emb");
  if (f.pos) add("pos");
  if (f.prosody) add("prosody");
  return s;
}

/// "all" or a '+'-joined subset of emb, pos, prosody.
inline std::optional<FeatureSet> parse_feature_set(std::string_view s) {
  if (s == "all") return FeatureSet{true, true, true};
  FeatureSet f{false, false, false};
  for (auto part : detail::split(s, '+')) {
    if (part == "emb" || part == "embeddings") {
      f.embeddings = true;
    } else if (part == "pos") {
      f.pos = true;
    } else if (part == "prosody" || part == "pros") {
      f.prosody = true;
    } else {
      return std::nullopt;
    }
  }
  if (!f.embeddings && !f.pos && !f.prosody) return std::nullopt;
  return f;
}

/// Lexical and prosodic networks plus everything needed to encode raw texts.
struct TrainedSegmenter {
  FeatureSet features;
  std::optional<Network> lexical;
  std::optional<Network> prosodic;
  double alpha = 1.0;
  ProsodyStats prosody_stats = ProsodyStats::identity();
  Vocabulary word_vocab;
  Vocabulary tag_vocab;

  EncodedText encode_lexical(const LabeledText& text) const {
    return sbd::encode_lexical(text, features.embeddings ? &word_vocab : nullptr, features.pos ? &tag_vocab : nullptr);
  }

  /// Whether inference on `text` needs its prosodic features.
  bool needs_prosody() const { return prosodic.has_value() && alpha < 1.0; }

  Fused predict(const LabeledText& text) const {
    require(lexical || prosodic, "segmenter has no trained model");
    require(prosodic || alpha == 1.0, "alpha < 1 requires a prosodic model");
    require(lexical || alpha == 0.0, "alpha > 0 requires a lexical model");
    std::optional<Matrix> p_lex, p_pros;
    if (lexical && alpha > 0.0) p_lex = network_forward(*lexical, encode_lexical(text), Mode::inference);
    if (prosodic && alpha < 1.0) {
      p_pros = network_forward(*prosodic, encode_prosodic(text, prosody_stats), Mode::inference);
    }
    if (!p_lex) return fuse(*p_pros, nullptr, 1.0);
    return fuse(*p_lex, p_pros ? &*p_pros : nullptr, p_pros ? alpha : 1.0);
  }
};

}  // namespace sbd
