#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "negsamp/checkpoint.hpp"
#include "negsamp/corpus.hpp"
#include "negsamp/dual_encoder.hpp"
#include "negsamp/error.hpp"

namespace negsamp {

inline constexpr double kDefaultResponseWeight = 0.4;

struct HistoryRow {
  std::int64_t pair_id = 0;
  Eigen::VectorXd vector;  // unit L2 norm
  std::string response_text;
};

struct RetrievalHit {
  std::int64_t pair_id = 0;
  std::string response_text;
  double score = 0.0;  // cosine
};

/// Embedding-based retrieval: each training pair is stored as the
/// normalized history vector context + c_r * response, and a query context
/// returns the responses attached to its nearest stored histories.
class HistoryIndex {
 public:
  HistoryIndex() = default;

  HistoryIndex(std::shared_ptr<const DualEncoderModel> model, double response_weight,
               std::vector<HistoryRow> rows)
      : model_(std::move(model)), c_r_(response_weight), rows_(std::move(rows)) {
    std::sort(rows_.begin(), rows_.end(),
              [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
    for (std::size_t i = 1; i < rows_.size(); ++i)
      if (rows_[i].pair_id == rows_[i - 1].pair_id)
        throw Error(ErrorKind::Data, "duplicate pair id " + std::to_string(rows_[i].pair_id) + " in index");
    if (model_) fingerprint_ = model_fingerprint(*model_);
  }

  double response_weight() const { return c_r_; }
  const std::vector<HistoryRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const DualEncoderModel& model() const {
    if (!model_) throw Error(ErrorKind::Data, "history index has no encoder attached");
    return *model_;
  }
  std::uint64_t model_fingerprint_value() const { return fingerprint_; }

  /// Attaches the encoder for a deserialized index, checking it is the one
  /// the index was built with.
  void attach(std::shared_ptr<const DualEncoderModel> model) {
    const auto fp = model_fingerprint(*model);
    if (fp != fingerprint_)
      throw Error(ErrorKind::Data, "checkpoint fingerprint " + binary::hex(fp) +
                                       " does not match index fingerprint " + binary::hex(fingerprint_));
    model_ = std::move(model);
  }

  /// normalize(encode_context(ctx) + c_r * encode_response(rsp)).
  Eigen::VectorXd history_vector(const std::vector<std::string>& context_tokens,
                                 const std::vector<std::string>& response_tokens) const {
    Eigen::VectorXd h = model().encode_context(context_tokens) +
                        c_r_ * model().encode_response(response_tokens);
    const double n = h.norm();
    if (!(n > 0.0)) throw Error(ErrorKind::Numeric, "history vector has zero norm");
    return h / n;
  }

  /// Largest dot product between a unit query and any stored row.
  double best_similarity(const Eigen::VectorXd& unit_query) const {
    if (rows_.empty()) throw Error(ErrorKind::Data, "history index is empty");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows_) best = std::max(best, r.vector.dot(unit_query));
    return best;
  }

  /// Top-k rows by cosine to an already-computed query vector; ties by
  /// ascending pair id.
  std::vector<RetrievalHit> nearest(const Eigen::VectorXd& query, std::size_t top_k) const {
    if (rows_.empty()) throw Error(ErrorKind::Data, "history index is empty");
    if (top_k == 0) throw Error(ErrorKind::Config, "top_k must be at least 1");
    const double n = query.norm();
    if (!(n > 0.0)) throw Error(ErrorKind::Numeric, "query vector has zero norm");
    const Eigen::VectorXd q = query / n;
    std::vector<double> scores(rows_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) scores[i] = rows_[i].vector.dot(q);
    std::vector<std::size_t> order(rows_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k = std::min(top_k, rows_.size());
    // Rows are sorted by pair id, so index order breaks ties.
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                      });
    std::vector<RetrievalHit> hits;
    hits.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
      hits.push_back({rows_[order[i]].pair_id, rows_[order[i]].response_text, scores[order[i]]});
    return hits;
  }

 private:
  std::shared_ptr<const DualEncoderModel> model_;
  double c_r_ = kDefaultResponseWeight;
  std::vector<HistoryRow> rows_;
  std::uint64_t fingerprint_ = 0;

  friend HistoryIndex read_history_index(std::istream& in);
};

inline HistoryIndex build_history_index(std::shared_ptr<const DualEncoderModel> model,
                                        const std::vector<ContextResponsePair>& pairs,
                                        double response_weight = kDefaultResponseWeight) {
  if (pairs.empty()) throw Error(ErrorKind::Data, "build_history_index: no pairs");
  std::vector<HistoryRow> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    Eigen::VectorXd h = model->encode_context(p.context_tokens) +
                        response_weight * model->encode_response(p.response_tokens);
    const double n = h.norm();
    if (!(n > 0.0))
      throw Error(ErrorKind::Numeric,
                  "history vector of pair " + std::to_string(p.pair_id) + " has zero norm");
    rows.push_back({p.pair_id, h / n, p.response_text});
  }
  return HistoryIndex(std::move(model), response_weight, std::move(rows));
}

/// Encodes the query context and returns the top_k stored pairs.
inline std::vector<RetrievalHit> query_nearest(const HistoryIndex& index,
                                               const std::vector<std::string>& context_tokens,
                                               std::size_t top_k) {
  if (index.size() == 0) throw Error(ErrorKind::Data, "history index is empty");
  return index.nearest(index.model().encode_context(context_tokens), top_k);
}

// Index layout (little-endian):
//   char[4] "NSHI", u32 version (1), f64 c_r, u64 model fingerprint,
//   str checkpoint path, u64 dim, u64 row count N,
//   N x {i64 pair_id, str response, dim f64}
inline constexpr std::array<char, 4> kIndexMagic{'N', 'S', 'H', 'I'};
inline constexpr std::uint32_t kIndexVersion = 1;

inline void write_history_index(std::ostream& out, const HistoryIndex& index,
                                const std::string& checkpoint_path) {
  binary::Writer w(out);
  w.raw(kIndexMagic.data(), 4);
  w.u32(kIndexVersion);
  w.f64(index.response_weight());
  w.u64(index.model_fingerprint_value());
  w.str(checkpoint_path);
  const std::size_t dim = index.rows().empty() ? 0 : static_cast<std::size_t>(index.rows()[0].vector.size());
  w.u64(dim);
  w.u64(index.size());
  for (const auto& r : index.rows()) {
    w.i64(r.pair_id);
    w.str(r.response_text);
    w.f64s(r.vector.data(), dim);
  }
  if (!out) throw Error(ErrorKind::Input, "failed to write index");
}

struct StoredIndex {
  HistoryIndex index;
  std::string checkpoint_path;
};

inline HistoryIndex read_history_index(std::istream& in) {
  binary::Reader r(in);
  r.header(kIndexMagic, kIndexVersion);
  HistoryIndex index;
  index.c_r_ = r.f64();
  index.fingerprint_ = r.u64();
  r.str();  // checkpoint path, see read_stored_index
  const auto dim = r.u64();
  const auto n = r.u64();
  if (dim > (1u << 20) || n > (1ULL << 32)) throw Error(ErrorKind::Input, "index dimensions out of range");
  index.rows_.resize(n);
  for (auto& row : index.rows_) {
    row.pair_id = r.i64();
    row.response_text = r.str();
    row.vector.resize(static_cast<Eigen::Index>(dim));
    r.f64s(row.vector.data(), dim);
  }
  return index;
}

inline StoredIndex load_history_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Input, "cannot open index '" + path + "'");
  // Read the checkpoint path separately so HistoryIndex stays path-free.
  binary::Reader r(in);
  r.header(kIndexMagic, kIndexVersion);
  r.f64();
  r.u64();
  std::string ckpt = r.str();
  in.seekg(0);
  return {read_history_index(in), std::move(ckpt)};
}

}  // namespace negsamp
