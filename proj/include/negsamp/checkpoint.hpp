#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/dual_encoder.hpp"
#include "negsamp/error.hpp"

namespace negsamp {

static_assert(std::endian::native == std::endian::little,
              "binary containers are written in native little-endian order");

namespace binary {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void f64s(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw Error(ErrorKind::Input, "unexpected end of binary container");
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    const auto n = u64();
    if (n > (1ULL << 32)) throw Error(ErrorKind::Input, "string length out of range in container");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void f64s(double* p, std::size_t n) { raw(p, n * sizeof(double)); }

  /// Checks a 4-byte magic tag and returns the version that follows it.
  std::uint32_t header(const std::array<char, 4>& magic, std::uint32_t max_version) {
    std::array<char, 4> got{};
    raw(got.data(), 4);
    if (got != magic)
      throw Error(ErrorKind::Input, "not a " + std::string(magic.data(), 4) + " container");
    const auto version = u32();
    if (version == 0 || version > max_version)
      throw Error(ErrorKind::Input, "unsupported container version " + std::to_string(version));
    return version;
  }

 private:
  std::istream& in_;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace binary

// Checkpoint layout (little-endian):
//
//   char[4]  "NSDE"
//   u32      version (1)
//   u32      encoder kind (0 = gru, 1 = attention)
//   u8       tied encoders (1) or separate (0)
//   u64      embedding dim
//   u64      encoder output dim
//   u64      max sequence length
//   u64      vocabulary size V
//   V x str  tokens (u64 length + UTF-8 bytes)
//   V*dim    f64 embedding rows, row-major
//   dim      f64 OOV vector
//   u64      tensor count T
//   T x {str name, u64 rows, u64 cols, rows*cols f64 row-major}
inline constexpr std::array<char, 4> kCheckpointMagic{'N', 'S', 'D', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const DualEncoderModel& model) {
  binary::Writer w(out);
  w.raw(kCheckpointMagic.data(), 4);
  w.u32(kCheckpointVersion);
  w.u32(model.context_encoder().kind() == EncoderKind::Gru ? 0 : 1);
  w.u8(model.tied() ? 1 : 0);
  const auto& emb = model.embeddings();
  w.u64(emb.dim());
  w.u64(model.output_dim());
  w.u64(model.max_sequence_length());
  w.u64(emb.size());
  for (const auto& t : emb.tokens()) w.str(t);
  w.f64s(emb.matrix().data(), static_cast<std::size_t>(emb.matrix().size()));
  w.f64s(emb.oov_vector().data(), emb.dim());

  std::uint64_t count = 0;
  model.visit_tensors([&](const std::string&, const auto&) { ++count; });
  w.u64(count);
  model.visit_tensors([&](const std::string& name, const auto& t) {
    w.str(name);
    w.u64(static_cast<std::uint64_t>(t.rows()));
    w.u64(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) w.f64(t(i, j));
  });
  if (!out) throw Error(ErrorKind::Input, "failed to write checkpoint");
}

inline DualEncoderModel read_checkpoint(std::istream& in) {
  binary::Reader r(in);
  r.header(kCheckpointMagic, kCheckpointVersion);
  const auto kind_tag = r.u32();
  if (kind_tag > 1) throw Error(ErrorKind::Input, "unknown encoder kind in checkpoint");
  const auto kind = kind_tag == 0 ? EncoderKind::Gru : EncoderKind::Attention;
  const bool tied = r.u8() != 0;
  const auto dim = r.u64();
  const auto out_dim = r.u64();
  const auto max_len = r.u64();
  const auto vocab = r.u64();
  if (dim == 0 || out_dim == 0 || vocab == 0 || dim > (1u << 20) || out_dim > (1u << 20) ||
      vocab > (1ULL << 32))
    throw Error(ErrorKind::Input, "checkpoint dimensions out of range");
  std::vector<std::string> tokens(vocab);
  for (auto& t : tokens) t = r.str();
  RowMatrix rows(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(dim));
  r.f64s(rows.data(), static_cast<std::size_t>(rows.size()));
  Eigen::VectorXd oov(static_cast<Eigen::Index>(dim));
  r.f64s(oov.data(), dim);

  Encoder context = Encoder::zeros(kind, dim, out_dim);
  std::optional<Encoder> response;
  if (!tied) response = context.zeros_like();
  DualEncoderModel model(EmbeddingTable(std::move(tokens), std::move(rows), std::move(oov)),
                         std::move(context), std::move(response),
                         Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out_dim),
                                               static_cast<Eigen::Index>(out_dim)),
                         max_len);
  std::uint64_t expected = 0;
  model.visit_tensors([&](const std::string&, const auto&) { ++expected; });
  if (r.u64() != expected) throw Error(ErrorKind::Input, "checkpoint tensor count mismatch");
  model.visit_tensors([&](const std::string& name, auto& t) {
    const auto got = r.str();
    const auto rows_n = r.u64();
    const auto cols_n = r.u64();
    if (got != name || rows_n != static_cast<std::uint64_t>(t.rows()) ||
        cols_n != static_cast<std::uint64_t>(t.cols()))
      throw Error(ErrorKind::Input, "checkpoint tensor '" + got + "' does not match expected '" + name + "'");
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = r.f64();
  });
  check_finite(model);
  return model;
}

inline std::string checkpoint_bytes(const DualEncoderModel& model) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, model);
  return os.str();
}

/// FNV-1a of the serialized checkpoint; identifies the encoder behind an
/// index.
inline std::uint64_t model_fingerprint(const DualEncoderModel& model) {
  return binary::fnv1a(checkpoint_bytes(model));
}

inline void save_checkpoint(const std::string& path, const DualEncoderModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Input, "cannot open '" + path + "' for writing");
  write_checkpoint(out, model);
}

inline DualEncoderModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Input, "cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace negsamp
