#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/label.hpp"
#include "sbd/numerics/rng.hpp"

namespace sbd {

inline constexpr std::size_t kProsodyDim = 13;
using ProsodyVector = std::array<double, kProsodyDim>;

/// Index of the pause-duration feature inside a prosody vector.
inline constexpr std::size_t kPauseIndex = 12;

/// Tag assigned when a source carries no part-of-speech information.
inline constexpr std::string_view kUnknownTag = "_";

enum class Group { CTL, MCI, AD, OTHER };

inline std::string_view to_string(Group g) {
  switch (g) {
    case Group::CTL: return "CTL";
    case Group::MCI: return "MCI";
    case Group::AD: return "AD";
    case Group::OTHER: return "OTHER";
  }
  return "OTHER";
}

inline std::optional<Group> parse_group(std::string_view s) {
  if (s == "CTL") return Group::CTL;
  if (s == "MCI") return Group::MCI;
  if (s == "AD") return Group::AD;
  if (s == "OTHER") return Group::OTHER;
  return std::nullopt;
}

/// One transcript with parallel per-token annotations.
struct LabeledText {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;
  std::vector<ProsodyVector> prosody;  // empty when unavailable
  std::vector<Label> labels;
  Group group = Group::OTHER;

  std::size_t size() const { return tokens.size(); }
  bool has_prosody() const { return !prosody.empty(); }

  void validate() const {
    const std::string where = "text '" + id + "': ";
    if (tokens.empty()) throw DataError(where + "empty text");
    if (pos_tags.size() != tokens.size()) throw DataError(where + "pos tag count differs from token count");
    if (labels.size() != tokens.size()) throw DataError(where + "label count differs from token count");
    if (!prosody.empty() && prosody.size() != tokens.size())
      throw DataError(where + "prosody count differs from token count");
    for (const auto& tok : tokens) {
      if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos)
        throw DataError(where + "token contains whitespace or is empty");
    }
  }

  friend bool operator==(const LabeledText&, const LabeledText&) = default;
};

struct Corpus {
  std::string name;
  std::vector<LabeledText> texts;

  bool has_prosody() const { return !texts.empty() && texts.front().has_prosody(); }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& t : texts) n += t.size();
    return n;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& t : texts) {
      t.validate();
      if (!ids.insert(t.id).second) throw DataError("corpus '" + name + "': duplicate text id '" + t.id + "'");
      if (t.has_prosody() != has_prosody())
        throw DataError("corpus '" + name + "': prosody must be present for all texts or none (text '" + t.id + "')");
    }
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// Tokenization and labeling

/// Lowercases ASCII and the Latin-1 uppercase letters encoded as UTF-8.
inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = static_cast<unsigned char>(out[i]);
    if (c >= 'A' && c <= 'Z') {
      out[i] = static_cast<char>(c + 32);
    } else if (c == 0xC3 && i + 1 < out.size()) {
      const auto n = static_cast<unsigned char>(out[i + 1]);
      if (n >= 0x80 && n <= 0x9E && n != 0x97) out[i + 1] = static_cast<char>(n + 0x20);
      ++i;
    }
  }
  return out;
}

inline bool is_boundary_mark(char c) { return c == '.' || c == '!' || c == '?' || c == ':' || c == ';'; }

inline bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

/// Splits a whitespace-delimited stream into words and B/NB labels. Each of
/// . ! ? : ; marks the preceding word as B; other punctuation is dropped.
/// Punctuation attached to a word ("caiu.") is split off first. Tags are
/// filled with kUnknownTag.
inline LabeledText labels_from_punctuation(std::string_view raw, std::string id = {}) {
  LabeledText text;
  text.id = std::move(id);
  auto mark_previous = [&text] {
    if (!text.labels.empty()) text.labels.back() = Label::B;
  };
  std::size_t pos = 0;
  while (pos < raw.size()) {
    while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    std::size_t end = pos;
    while (end < raw.size() && !std::isspace(static_cast<unsigned char>(raw[end]))) ++end;
    if (end == pos) break;
    std::string_view tok = raw.substr(pos, end - pos);
    pos = end;

    std::size_t lead = 0;
    while (lead < tok.size() && is_punct(tok[lead])) ++lead;
    std::size_t trail = tok.size();
    while (trail > lead && is_punct(tok[trail - 1])) --trail;

    const std::string_view leading = tok.substr(0, lead);
    const std::string_view core = tok.substr(lead, trail - lead);
    const std::string_view trailing = tok.substr(trail);
    if (std::any_of(leading.begin(), leading.end(), is_boundary_mark)) mark_previous();
    if (core.empty()) continue;
    text.tokens.push_back(lowercase(core));
    text.pos_tags.emplace_back(kUnknownTag);
    text.labels.push_back(Label::NB);
    if (std::any_of(trailing.begin(), trailing.end(), is_boundary_mark)) mark_previous();
  }
  if (text.tokens.empty()) throw DataError("text '" + text.id + "' is empty after punctuation removal");
  return text;
}

// ---------------------------------------------------------------------------
// File formats

enum class CorpusFormat { automatic, tsv, tokens };

namespace detail {

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_real(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError(where + ": invalid number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    parts.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return parts;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) parts.push_back(s.substr(i, j - i));
    i = j;
  }
  return parts;
}

}  // namespace detail

/// Parses the tab-separated corpus format:
///   #id <text-id> group <CTL|MCI|AD|OTHER>
///   token<TAB>tag<TAB>p1 … p13 | -<TAB>B|NB
/// with blank lines between texts.
inline std::vector<LabeledText> parse_tsv(std::istream& in, const std::string& source) {
  std::vector<LabeledText> texts;
  std::optional<LabeledText> current;
  std::optional<bool> prosody_state;
  auto flush = [&] {
    if (current) {
      if (current->tokens.empty()) throw ParseError(source + ": text '" + current->id + "' has no tokens");
      texts.push_back(std::move(*current));
      current.reset();
      prosody_state.reset();
    }
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.rfind("#id", 0) == 0) {
      flush();
      const auto parts = detail::split_ws(line);
      if (parts.size() != 4 || parts[0] != "#id" || parts[2] != "group")
        throw ParseError(where + ": malformed header, expected '#id <id> group <group>'");
      const auto group = parse_group(parts[3]);
      if (!group) throw ParseError(where + ": unknown group '" + std::string(parts[3]) + "'");
      current = LabeledText{};
      current->id = std::string(parts[1]);
      current->group = *group;
      continue;
    }
    if (!current) throw ParseError(where + ": token line before any '#id' header");
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 4)
      throw ParseError(where + ": expected 4 tab-separated columns, found " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty()) throw ParseError(where + ": empty token or tag");

    const bool has_prosody = cols[2] != "-";
    if (prosody_state && *prosody_state != has_prosody)
      throw ParseError(where + ": prosody must be given for every token of a text or for none");
    prosody_state = has_prosody;
    if (has_prosody) {
      const auto values = detail::split_ws(cols[2]);
      if (values.size() != kProsodyDim)
        throw ParseError(where + ": expected 13 prosodic values, found " + std::to_string(values.size()));
      ProsodyVector v{};
      for (std::size_t k = 0; k < kProsodyDim; ++k) v[k] = detail::parse_real(values[k], where);
      current->prosody.push_back(v);
    }
    Label label;
    if (cols[3] == "B") {
      label = Label::B;
    } else if (cols[3] == "NB") {
      label = Label::NB;
    } else {
      throw ParseError(where + ": unknown label '" + std::string(cols[3]) + "'");
    }
    current->tokens.emplace_back(cols[0]);
    current->pos_tags.emplace_back(cols[1]);
    current->labels.push_back(label);
  }
  flush();
  return texts;
}

inline void write_tsv(std::ostream& out, const LabeledText& text) {
  out << "#id " << text.id << " group " << to_string(text.group) << '\n';
  for (std::size_t t = 0; t < text.size(); ++t) {
    out << text.tokens[t] << '\t' << text.pos_tags[t] << '\t';
    if (text.has_prosody()) {
      for (std::size_t k = 0; k < kProsodyDim; ++k) {
        if (k) out << ' ';
        out << detail::format_real(text.prosody[t][k]);
      }
    } else {
      out << '-';
    }
    out << '\t' << to_string(text.labels[t]) << '\n';
  }
}

inline void write_tsv(std::ostream& out, const Corpus& corpus) {
  for (std::size_t i = 0; i < corpus.texts.size(); ++i) {
    if (i) out << '\n';
    write_tsv(out, corpus.texts[i]);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CorpusFormat format_for(const std::filesystem::path& p) {
  return p.extension() == ".tsv" ? CorpusFormat::tsv : CorpusFormat::tokens;
}

/// Reads a corpus from a file or from every regular file of a directory
/// (sorted by name). `.tsv` files use the tab-separated format; anything
/// else is read as a tokens file holding one text.
inline Corpus read_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::automatic) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw DataError("corpus path '" + path.string() + "' does not exist");
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension();
      if (ext == ".tsv" || ext == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }

  Corpus corpus;
  corpus.name = (fs::is_directory(path) ? path.filename() : path.stem()).string();
  if (corpus.name.empty()) corpus.name = path.parent_path().filename().string();
  for (const auto& file : files) {
    const CorpusFormat fmt = format == CorpusFormat::automatic ? format_for(file) : format;
    if (fmt == CorpusFormat::tsv) {
      std::ifstream in(file);
      if (!in) throw DataError("cannot open '" + file.string() + "'");
      for (auto& t : parse_tsv(in, file.string())) corpus.texts.push_back(std::move(t));
    } else {
      corpus.texts.push_back(labels_from_punctuation(read_file(file), file.stem().string()));
    }
  }
  corpus.validate();
  return corpus;
}

/// Writes one `<id>.tsv` file per text into `dir`.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& text : corpus.texts) {
    std::ofstream out(dir / (text.id + ".tsv"), std::ios::binary);
    if (!out) throw DataError("cannot write into '" + dir.string() + "'");
    write_tsv(out, text);
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Revised Mac-Morpho tagset (25 tags).
inline const std::array<std::string_view, 25>& tagset() {
  static const std::array<std::string_view, 25> tags = {
      "ADJ",  "ADV",   "ADV-KS", "ADV-KS-REL", "ART",      "CUR",           "IN",
      "KC",   "KS",    "N",      "NPROP",      "NUM",      "PCP",           "PDEN",
      "PREP", "PREP+ADV", "PREP+ART", "PREP+PRON-KS", "PREP+PRON-KS-REL", "PROADJ", "PRO-KS",
      "PRO-KS-REL", "PROPESS", "PROSUB", "V"};
  return tags;
}

struct SynthSpec {
  std::size_t n_texts = 60;
  double mean_sentence_len = 13.0;
  std::size_t sentences_per_text = 10;
  std::string boundary_cue_token = "então";
  double cue_reliability = 0.95;
  /// Cue position counted back from the boundary word (0 = the boundary word).
  std::size_t cue_offset = 0;
  double prosody_cue_strength = 2.0;
  std::size_t vocab_size = 200;
  Group group = Group::CTL;
  std::string id_prefix = "synth";
  std::uint64_t seed = 7;
};

namespace detail {
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

/// Part-of-speech tag the generator assigns to a word (fixed per word).
inline std::string synth_tag_for(std::string_view word) {
  return std::string(tagset()[detail::fnv1a(word) % tagset().size()]);
}

inline std::string synth_word(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "w%04zu", index);
  return buf;
}

/// Generates texts of sentences whose lengths are 2 + Poisson(mean − 2).
/// The cue token replaces the word `cue_offset` positions before each
/// boundary with probability `cue_reliability`; the pause feature of
/// boundary words is shifted by `prosody_cue_strength`.
inline Corpus synth_generate(const SynthSpec& spec) {
  require(spec.mean_sentence_len >= 2.0, "synth_generate: mean_sentence_len must be >= 2");
  require(spec.cue_reliability >= 0.0 && spec.cue_reliability <= 1.0,
          "synth_generate: cue_reliability must be in [0, 1]");
  require(spec.vocab_size >= 1 && spec.sentences_per_text >= 1, "synth_generate: empty vocabulary or texts");
  Rng rng(spec.seed);
  const std::size_t min_len = std::max<std::size_t>(2, spec.cue_offset + 1);
  const std::string cue = lowercase(spec.boundary_cue_token);

  Corpus corpus;
  corpus.name = spec.id_prefix;
  char id[96];
  for (std::size_t n = 0; n < spec.n_texts; ++n) {
    LabeledText text;
    std::snprintf(id, sizeof id, "%s-%04zu", spec.id_prefix.c_str(), n);
    text.id = id;
    text.group = spec.group;
    for (std::size_t s = 0; s < spec.sentences_per_text; ++s) {
      const std::size_t len = std::max(min_len, 2 + rng.poisson(spec.mean_sentence_len - 2.0));
      const bool cued = rng.bernoulli(spec.cue_reliability);
      for (std::size_t k = 0; k < len; ++k) {
        const bool boundary = k + 1 == len;
        std::string word = (cued && k + 1 + spec.cue_offset == len) ? cue : synth_word(rng.below(spec.vocab_size));
        ProsodyVector p{};
        for (double& v : p) v = rng.normal();
        if (boundary) p[kPauseIndex] += spec.prosody_cue_strength;
        text.pos_tags.push_back(synth_tag_for(word));
        text.tokens.push_back(std::move(word));
        text.prosody.push_back(p);
        text.labels.push_back(boundary ? Label::B : Label::NB);
      }
    }
    corpus.texts.push_back(std::move(text));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Statistics

struct CorpusStats {
  std::size_t n_texts = 0;
  std::size_t n_sentences = 0;
  std::size_t n_words = 0;
  std::size_t n_boundaries = 0;
  double avg_sentences_per_text = 0.0;
  double avg_words_per_sentence = 0.0;
  double boundary_rate = 0.0;
};

/// Averages as total/total ratios.
inline CorpusStats stats_from_counts(std::size_t n_texts, std::size_t n_sentences, std::size_t n_words,
                                     std::size_t n_boundaries) {
  CorpusStats s{n_texts, n_sentences, n_words, n_boundaries, 0.0, 0.0, 0.0};
  if (n_texts) s.avg_sentences_per_text = static_cast<double>(n_sentences) / static_cast<double>(n_texts);
  if (n_sentences) s.avg_words_per_sentence = static_cast<double>(n_words) / static_cast<double>(n_sentences);
  if (n_words) s.boundary_rate = static_cast<double>(n_boundaries) / static_cast<double>(n_words);
  return s;
}

/// A sentence ends at every B; trailing words after the last B count as one
/// more (unterminated) sentence.
inline CorpusStats corpus_stats(const Corpus& corpus) {
  require(!corpus.texts.empty(), "corpus_stats: empty corpus");
  std::size_t sentences = 0, words = 0, boundaries = 0;
  for (const auto& t : corpus.texts) {
    words += t.size();
    const auto b = static_cast<std::size_t>(std::count(t.labels.begin(), t.labels.end(), Label::B));
    boundaries += b;
    sentences += b + (t.labels.back() == Label::NB ? 1 : 0);
  }
  return stats_from_counts(corpus.texts.size(), sentences, words, boundaries);
}

}  // namespace sbd
