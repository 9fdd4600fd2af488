#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbd/corpus.hpp"
#include "sbd/errors.hpp"
#include "sbd/numerics.hpp"

namespace sbd {

/// Seed of the random vector shared by all out-of-vocabulary words.
inline constexpr std::uint64_t kOovSeed = 0x5EB0D0A7ULL;

/// token → row index; the row after the last entry is the OOV row.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) {
    for (auto& w : words) add(std::move(w));
  }

  /// Returns false when the word is already present.
  bool add(std::string word) {
    if (index_.contains(word)) return false;
    index_.emplace(word, words_.size());
    words_.push_back(std::move(word));
    return true;
  }

  std::size_t size() const { return words_.size(); }
  std::size_t oov_row() const { return words_.size(); }
  std::size_t rows() const { return words_.size() + 1; }

  std::size_t lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? oov_row() : it->second;
  }

  bool contains(const std::string& word) const { return index_.contains(word); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> words_;
};

/// Word or tag lookup table with a dedicated OOV row.
struct EmbeddingTable {
  Vocabulary vocab;
  Matrix vectors;  // (|V| + 1) × dim; the last row is the OOV vector
  bool trainable = true;

  std::size_t dim() const { return vectors.cols(); }
  std::size_t oov_row() const { return vocab.oov_row(); }
  std::size_t lookup(const std::string& token) const { return vocab.lookup(lowercase(token)); }
  std::span<const double> vector_for(const std::string& token) const { return vectors.row(lookup(token)); }
};

inline Vector oov_vector(std::size_t dim) {
  Rng rng(kOovSeed);
  const Matrix m = glorot_init(1, dim, rng);
  return Vector(m.values().begin(), m.values().end());
}

/// Reads `<vocab_size> <dim>` followed by `word v1 … v_dim` lines. Keys are
/// lowercased; the OOV row is appended.
inline EmbeddingTable load_embeddings(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(source + ": missing header line");
  const auto header = detail::split_ws(line);
  if (header.size() != 2) throw ParseError(source + ":1: header must be '<vocab_size> <dim>'");
  const auto count = static_cast<std::size_t>(detail::parse_real(header[0], source + ":1"));
  const auto dim = static_cast<std::size_t>(detail::parse_real(header[1], source + ":1"));
  if (dim == 0) throw ParseError(source + ":1: embedding dimension must be positive");

  EmbeddingTable table;
  std::vector<double> values;
  values.reserve((count + 1) * dim);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto parts = detail::split_ws(line);
    if (parts.size() != dim + 1)
      throw ParseError(where + ": expected " + std::to_string(dim) + " values, found " +
                       std::to_string(parts.size() - 1));
    if (!table.vocab.add(lowercase(parts[0]))) throw ParseError(where + ": duplicate word '" + std::string(parts[0]) + "'");
    for (std::size_t k = 1; k < parts.size(); ++k) values.push_back(detail::parse_real(parts[k], where));
  }
  if (table.vocab.size() != count)
    throw ParseError(source + ": header announces " + std::to_string(count) + " words, found " +
                     std::to_string(table.vocab.size()));
  const Vector oov = oov_vector(dim);
  values.insert(values.end(), oov.begin(), oov.end());
  table.vectors = Matrix(count + 1, dim);
  std::copy(values.begin(), values.end(), table.vectors.data());
  return table;
}

inline EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings '" + path.string() + "'");
  return load_embeddings(in, path.string());
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << table.vocab.size() << ' ' << table.dim() << '\n';
  for (std::size_t r = 0; r < table.vocab.size(); ++r) {
    out << table.vocab.words()[r];
    for (double v : table.vectors.row(r)) out << ' ' << detail::format_real(v);
    out << '\n';
  }
}

/// Fresh Glorot-initialized table over `words` (used for tags, and for words
/// when no pretrained vectors are supplied).
inline EmbeddingTable random_embeddings(const std::vector<std::string>& words, std::size_t dim, Rng& rng) {
  EmbeddingTable table;
  for (const auto& w : words) table.vocab.add(lowercase(w));
  table.vectors = glorot_init(table.vocab.rows(), dim, rng);
  return table;
}

/// Sorted distinct tokens (lowercased) and tags of a set of texts.
inline std::vector<std::string> collect_tokens(std::span<const LabeledText> texts) {
  std::set<std::string> seen;
  for (const auto& t : texts)
    for (const auto& tok : t.tokens) seen.insert(lowercase(tok));
  return {seen.begin(), seen.end()};
}

inline std::vector<std::string> collect_tags(std::span<const LabeledText> texts) {
  std::set<std::string> seen;
  for (const auto& t : texts)
    for (const auto& tag : t.pos_tags)
      if (tag != kUnknownTag) seen.insert(tag);
  return {seen.begin(), seen.end()};
}

/// Row t = [e_w(token_t) ‖ e_t(tag_t)].
inline Matrix build_lexical_input(const LabeledText& text, const EmbeddingTable& words, const EmbeddingTable& tags) {
  const std::size_t dw = words.dim();
  const std::size_t dt = tags.dim();
  Matrix x(text.size(), dw + dt);
  for (std::size_t t = 0; t < text.size(); ++t) {
    auto row = x.row(t);
    auto ew = words.vector_for(text.tokens[t]);
    auto et = tags.vectors.row(tags.vocab.lookup(text.pos_tags[t]));
    std::copy(ew.begin(), ew.end(), row.begin());
    std::copy(et.begin(), et.end(), row.begin() + static_cast<std::ptrdiff_t>(dw));
  }
  return x;
}

// ---------------------------------------------------------------------------
// Prosody

/// Per-dimension z-scoring statistics fit on a training split.
struct ProsodyStats {
  ProsodyVector mean{};
  ProsodyVector stddev{};  // a zero spread is stored as 1

  friend bool operator==(const ProsodyStats&, const ProsodyStats&) = default;

  static ProsodyStats identity() {
    ProsodyStats s;
    s.stddev.fill(1.0);
    return s;
  }
};

inline ProsodyStats fit_prosody_stats(std::span<const LabeledText> texts) {
  ProsodyVector sum{}, sq{};
  std::size_t n = 0;
  for (const auto& t : texts) {
    for (const auto& v : t.prosody) {
      for (std::size_t k = 0; k < kProsodyDim; ++k) sum[k] += v[k];
      ++n;
    }
  }
  if (n == 0) throw UnsupportedInput("fit_prosody_stats: no prosodic vectors in the training texts");
  ProsodyStats s;
  for (std::size_t k = 0; k < kProsodyDim; ++k) s.mean[k] = sum[k] / static_cast<double>(n);
  for (const auto& t : texts) {
    for (const auto& v : t.prosody) {
      for (std::size_t k = 0; k < kProsodyDim; ++k) sq[k] += (v[k] - s.mean[k]) * (v[k] - s.mean[k]);
    }
  }
  for (std::size_t k = 0; k < kProsodyDim; ++k) {
    const double sd = std::sqrt(sq[k] / static_cast<double>(n));
    s.stddev[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

inline Matrix build_prosodic_input(const LabeledText& text, const ProsodyStats& stats) {
  if (!text.has_prosody())
    throw UnsupportedInput("text '" + text.id + "' has no prosodic features; use a lexical-only model (alpha = 1)");
  Matrix x(text.size(), kProsodyDim);
  for (std::size_t t = 0; t < text.size(); ++t) {
    for (std::size_t k = 0; k < kProsodyDim; ++k) x(t, k) = (text.prosody[t][k] - stats.mean[k]) / stats.stddev[k];
  }
  return x;
}

/// F0, intensity and duration of one aligned vowel.
struct VowelMeasure {
  double f0 = 0.0;
  double intensity = 0.0;
  double duration = 0.0;
};

/// Assembles a word's 13-dim vector: (F0, intensity, duration) for the
/// first, last, penultimate and antepenultimate vowels, then the pause
/// duration after the word. Missing vowel slots repeat the last vowel; a
/// word without aligned vowels gets zeros in all twelve slots.
inline ProsodyVector word_prosody_vector(std::span<const VowelMeasure> vowels, double pause_seconds) {
  ProsodyVector v{};
  v[kPauseIndex] = pause_seconds;
  if (vowels.empty()) return v;
  const std::size_t n = vowels.size();
  const VowelMeasure& last = vowels[n - 1];
  const VowelMeasure slots[4] = {vowels[0], last, n >= 2 ? vowels[n - 2] : last, n >= 3 ? vowels[n - 3] : last};
  for (std::size_t s = 0; s < 4; ++s) {
    v[3 * s] = slots[s].f0;
    v[3 * s + 1] = slots[s].intensity;
    v[3 * s + 2] = slots[s].duration;
  }
  return v;
}

}  // namespace sbd
