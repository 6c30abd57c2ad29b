#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"

namespace negsamp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Token -> dense vector map. Unknown tokens resolve to the OOV vector, the
/// arithmetic mean of all in-vocabulary rows at construction time.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// `rows` must have one row per token; duplicate tokens are an error here
  /// (file loading resolves them before calling this).
  EmbeddingTable(std::vector<std::string> tokens, RowMatrix rows)
      : tokens_(std::move(tokens)), matrix_(std::move(rows)) {
    if (tokens_.empty()) throw Error(ErrorKind::Data, "embedding table needs at least one token");
    if (static_cast<std::size_t>(matrix_.rows()) != tokens_.size())
      throw Error(ErrorKind::Data, "embedding row count does not match vocabulary size");
    if (matrix_.cols() == 0) throw Error(ErrorKind::Data, "embedding dimension must be positive");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second)
        throw Error(ErrorKind::Data, "duplicate embedding token '" + tokens_[i] + "'");
    }
    oov_ = matrix_.colwise().mean().transpose();
  }

  /// Restores a table with a previously computed OOV vector (checkpoints).
  EmbeddingTable(std::vector<std::string> tokens, RowMatrix rows, Eigen::VectorXd oov)
      : EmbeddingTable(std::move(tokens), std::move(rows)) {
    if (oov.size() != matrix_.cols())
      throw Error(ErrorKind::Data, "OOV vector dimension does not match embedding dimension");
    oov_ = std::move(oov);
  }

  std::size_t dim() const { return static_cast<std::size_t>(matrix_.cols()); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<std::size_t> index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Row for `token`, or the OOV vector.
  Eigen::VectorXd lookup(std::string_view token) const {
    if (auto i = index_of(token)) return matrix_.row(static_cast<Eigen::Index>(*i)).transpose();
    return oov_;
  }

  const RowMatrix& matrix() const { return matrix_; }
  /// Mutable rows for fine-tuning. The OOV vector is fixed at construction.
  RowMatrix& matrix() { return matrix_; }
  const Eigen::VectorXd& oov_vector() const { return oov_; }

 private:
  std::vector<std::string> tokens_;
  RowMatrix matrix_;
  Eigen::VectorXd oov_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Standard text word-vector format: header "count dim", then one
/// "token v1 ... v_dim" line per word. Duplicate tokens keep the first
/// occurrence and append a warning.
inline EmbeddingTable load_embeddings(std::istream& in, std::size_t expected_dim,
                                      std::vector<std::string>* warnings = nullptr) {
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorKind::Input, "embedding file is empty");
  std::istringstream hs(header);
  long long count = -1, dim = -1;
  std::string extra;
  if (!(hs >> count >> dim) || (hs >> extra) || count <= 0 || dim <= 0)
    throw Error(ErrorKind::Input, "bad embedding header '" + header + "' (expected 'count dim')");
  if (static_cast<std::size_t>(dim) != expected_dim)
    throw Error(ErrorKind::Data, "embedding dimension " + std::to_string(dim) +
                                     " does not match expected " + std::to_string(expected_dim));

  std::vector<std::string> tokens;
  std::vector<double> values;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> row;
    double v = 0.0;
    while (ls >> v) row.push_back(v);
    if (!ls.eof())
      throw Error(ErrorKind::Input, "non-numeric value on embedding line " + std::to_string(lineno));
    if (row.size() != expected_dim)
      throw Error(ErrorKind::Data, "embedding line " + std::to_string(lineno) + " has " +
                                       std::to_string(row.size()) + " values, expected " +
                                       std::to_string(expected_dim));
    if (!seen.insert(token).second) {
      if (warnings) warnings->push_back("duplicate token '" + token + "' on line " +
                                        std::to_string(lineno) + " ignored");
      continue;
    }
    tokens.push_back(token);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (in.bad()) throw Error(ErrorKind::Input, "I/O failure while reading embeddings");
  if (tokens.empty()) throw Error(ErrorKind::Input, "embedding file has no vectors");
  RowMatrix m = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(tokens.size()),
                                      static_cast<Eigen::Index>(expected_dim));
  return EmbeddingTable(std::move(tokens), std::move(m));
}

/// Entries i.i.d. uniform in [-scale, scale]; row order follows `vocab`.
inline EmbeddingTable random_embeddings(const std::vector<std::string>& vocab, std::size_t dim,
                                        double scale, std::uint64_t seed) {
  if (vocab.empty()) throw Error(ErrorKind::Data, "random_embeddings: vocabulary is empty");
  Rng rng(seed);
  RowMatrix m(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-scale, scale);
  return EmbeddingTable(vocab, std::move(m));
}

}  // namespace negsamp
