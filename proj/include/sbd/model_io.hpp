#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/model.hpp"

namespace sbd {

// Container layout (all integers and reals little-endian):
//   "DBND" u32:version
//   u8:features(emb|pos<<1|prosody<<2) f64:alpha
//   u8:has_lexical [network] u8:has_prosodic [network]
//   vocab(words) vocab(tags) stats
//   u32:crc32 of every preceding byte
// network  = u8:variant hyperparams layout u32:n_params {str:name u64:rows u64:cols f64*}
// vocab    = u64:count {str}
// stats    = f64*13 mean, f64*13 stddev
// str      = u32:length bytes

inline constexpr char kModelMagic[4] = {'D', 'B', 'N', 'D'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace io_detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw DataError("model file: unexpected end of data");
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t size() { return static_cast<std::size_t>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_network(Writer& w, const Network& net) {
  w.u8(static_cast<std::uint8_t>(net.variant));
  const auto& hp = net.hp;
  for (std::size_t v : {hp.e_w, hp.e_t, hp.n_f, hp.h_c, hp.h_m, hp.n_r, hp.mlp_hidden, hp.epochs}) w.u64(v);
  w.f64(hp.gamma);
  w.f64(hp.eta);
  w.f64(hp.dropout_rate);
  const auto& l = net.layout;
  w.u8(static_cast<std::uint8_t>((l.words ? 1 : 0) | (l.tags ? 2 : 0)));
  w.u64(l.dense_dim);
  w.u64(l.word_rows);
  w.u64(l.tag_rows);
  std::uint32_t n = 0;
  net.params.for_each([&n](std::string_view, const Matrix&) { ++n; });
  w.u32(n);
  net.params.for_each([&w](std::string_view name, const Matrix& m) {
    w.str(name);
    w.u64(m.rows());
    w.u64(m.cols());
    for (double v : m.values()) w.f64(v);
  });
}

inline Network read_network(Reader& r) {
  const std::uint8_t variant = r.u8();
  if (variant > static_cast<std::uint8_t>(Variant::rnn)) throw DataError("model file: unknown variant");
  Hyperparams hp;
  for (std::size_t* v : {&hp.e_w, &hp.e_t, &hp.n_f, &hp.h_c, &hp.h_m, &hp.n_r, &hp.mlp_hidden, &hp.epochs}) *v = r.size();
  hp.gamma = r.f64();
  hp.eta = r.f64();
  hp.dropout_rate = r.f64();
  InputLayout layout;
  const std::uint8_t flags = r.u8();
  layout.words = flags & 1;
  layout.tags = flags & 2;
  layout.dense_dim = r.size();
  layout.word_rows = r.size();
  layout.tag_rows = r.size();
  Network net = zero_network(static_cast<Variant>(variant), hp, layout);
  const std::uint32_t n = r.u32();
  std::size_t expected = 0;
  net.params.for_each([&expected](std::string_view, const Matrix&) { ++expected; });
  if (n != expected) throw DataError("model file: parameter count does not match the architecture");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    Matrix* m = find_parameter(net.params, name);
    if (!m) throw DataError("model file: unexpected parameter '" + name + "'");
    const std::size_t rows = r.size();
    const std::size_t cols = r.size();
    if (rows != m->rows() || cols != m->cols())
      throw DataError("model file: parameter '" + name + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + shape_string(*m));
    for (double& v : m->values()) v = r.f64();
  }
  return net;
}

}  // namespace io_detail

inline std::vector<unsigned char> serialize_model(const TrainedSegmenter& s) {
  io_detail::Writer w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>((s.features.embeddings ? 1 : 0) | (s.features.pos ? 2 : 0) |
                                 (s.features.prosody ? 4 : 0)));
  w.f64(s.alpha);
  for (const auto* net : {&s.lexical, &s.prosodic}) {
    w.u8(net->has_value() ? 1 : 0);
    if (net->has_value()) io_detail::write_network(w, **net);
  }
  for (const auto* vocab : {&s.word_vocab, &s.tag_vocab}) {
    w.u64(vocab->size());
    for (const auto& word : vocab->words()) w.str(word);
  }
  for (double v : s.prosody_stats.mean) w.f64(v);
  for (double v : s.prosody_stats.stddev) w.f64(v);
  auto& buf = w.buffer();
  w.u32(io_detail::crc32_of(buf.data(), buf.size()));
  return std::move(buf);
}

inline TrainedSegmenter deserialize_model(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw DataError("not a model file (bad magic bytes)");
  io_detail::Reader header(bytes.data() + 4, 4);
  const std::uint32_t version = header.u32();
  if (version > kModelVersion)
    throw DataError("model file version " + std::to_string(version) + " is newer than supported version " +
                    std::to_string(kModelVersion));
  if (version == 0) throw DataError("model file: invalid version 0");
  if (bytes.size() < 12) throw ChecksumError("model file checksum mismatch (file truncated)");
  const std::size_t body = bytes.size() - 4;
  io_detail::Reader tail(bytes.data() + body, 4);
  if (tail.u32() != io_detail::crc32_of(bytes.data(), body))
    throw ChecksumError("model file checksum mismatch (file truncated or corrupt)");

  io_detail::Reader r(bytes.data() + 8, body - 8);
  TrainedSegmenter s;
  const std::uint8_t flags = r.u8();
  s.features = {(flags & 1) != 0, (flags & 2) != 0, (flags & 4) != 0};
  s.alpha = r.f64();
  if (r.u8()) s.lexical = io_detail::read_network(r);
  if (r.u8()) s.prosodic = io_detail::read_network(r);
  for (auto* vocab : {&s.word_vocab, &s.tag_vocab}) {
    const std::size_t n = r.size();
    for (std::size_t i = 0; i < n; ++i)
      if (!vocab->add(r.str())) throw DataError("model file: duplicate vocabulary entry");
  }
  for (double& v : s.prosody_stats.mean) v = r.f64();
  for (double& v : s.prosody_stats.stddev) v = r.f64();
  if (!r.done()) throw DataError("model file: trailing data before checksum");
  if (s.lexical && s.lexical->layout.words && s.lexical->layout.word_rows != s.word_vocab.rows())
    throw DataError("model file: word vocabulary does not match the embedding table");
  if (s.lexical && s.lexical->layout.tags && s.lexical->layout.tag_rows != s.tag_vocab.rows())
    throw DataError("model file: tag vocabulary does not match the embedding table");
  return s;
}

inline void save_model(const TrainedSegmenter& s, const std::filesystem::path& path) {
  const auto bytes = serialize_model(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model file '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing model file '" + path.string() + "'");
}

inline TrainedSegmenter load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace sbd
