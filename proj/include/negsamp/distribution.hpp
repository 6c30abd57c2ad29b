#pragma once

#include <algorithm>
#include <cmath>
#include <charconv>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "negsamp/corpus.hpp"
#include "negsamp/embedding.hpp"
#include "negsamp/error.hpp"

namespace negsamp {

struct DistributionEntry {
  std::string response;  // canonical
  double prob = 0.0;
  std::uint64_t count = 0;  // raw corpus count, carried through transforms
};

/// Discrete distribution over distinct canonical responses. Entries are kept
/// in lexicographic response order; probabilities are strictly positive and
/// sum to one.
class ResponseDistribution {
 public:
  ResponseDistribution() = default;

  explicit ResponseDistribution(std::vector<DistributionEntry> entries)
      : entries_(std::move(entries)) {
    if (entries_.empty()) throw Error(ErrorKind::Data, "response distribution is empty");
    std::sort(entries_.begin(), entries_.end(),
              [](const auto& a, const auto& b) { return a.response < b.response; });
    double total = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (i > 0 && entries_[i - 1].response == e.response)
        throw Error(ErrorKind::Data, "duplicate response '" + e.response + "' in distribution");
      if (!(e.prob > 0.0) || !std::isfinite(e.prob))
        throw Error(ErrorKind::Data, "non-positive probability for response '" + e.response + "'");
      total += e.prob;
    }
    // Normalize once more so the stored probabilities sum to 1 up to rounding.
    cumulative_.reserve(entries_.size());
    double running = 0.0;
    for (auto& e : entries_) {
      e.prob /= total;
      running += e.prob;
      cumulative_.push_back(running);
    }
    cumulative_.back() = 1.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].response, i);
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<DistributionEntry>& entries() const { return entries_; }
  const DistributionEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<double>& cumulative() const { return cumulative_; }

  std::optional<std::size_t> index_of(const std::string& response) const {
    auto it = index_.find(response);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  double prob(const std::string& response) const {
    auto i = index_of(response);
    return i ? entries_[*i].prob : 0.0;
  }
  std::uint64_t count(const std::string& response) const {
    auto i = index_of(response);
    return i ? entries_[*i].count : 0;
  }
  std::uint64_t total_count() const {
    std::uint64_t n = 0;
    for (const auto& e : entries_) n += e.count;
    return n;
  }
  std::vector<double> probs() const {
    std::vector<double> p;
    p.reserve(entries_.size());
    for (const auto& e : entries_) p.push_back(e.prob);
    return p;
  }

 private:
  std::vector<DistributionEntry> entries_;
  std::vector<double> cumulative_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Empirical distribution: prob(r) = count(r) / total.
inline ResponseDistribution count_responses(const std::vector<ContextResponsePair>& pairs) {
  if (pairs.empty()) throw Error(ErrorKind::Data, "count_responses: no pairs");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& p : pairs) ++counts[p.response_text];
  std::vector<DistributionEntry> entries;
  entries.reserve(counts.size());
  // Raw counts as weights: the constructor's single division gives count / total.
  for (auto& [response, count] : counts)
    entries.push_back({response, static_cast<double>(count), count});
  return ResponseDistribution(std::move(entries));
}

// ---------------------------------------------------------------------------
// Transforms

struct Identity {};
struct Uniform {};
struct Power {
  double degree = 1.0;
};
struct KdeSmoothed {
  double bandwidth = 0.4;
};

inline constexpr double kDefaultKdeBandwidth = 0.4;

class TransformSpec {
 public:
  using Kind = std::variant<Identity, Uniform, Power, KdeSmoothed>;

  TransformSpec() = default;
  TransformSpec(Kind kind) : kind_(kind) { validate(); }  // NOLINT: implicit by intent

  static TransformSpec identity() { return {Identity{}}; }
  static TransformSpec uniform() { return {Uniform{}}; }
  static TransformSpec power(double degree) { return {Power{degree}}; }
  static TransformSpec kde(double bandwidth = kDefaultKdeBandwidth) {
    return {KdeSmoothed{bandwidth}};
  }

  /// Parses "identity", "uniform", "power:D" or "kde:H" ("kde" alone uses
  /// the default bandwidth).
  static TransformSpec parse(const std::string& text) {
    auto number = [&](std::string_view s) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size())
        throw Error(ErrorKind::Config, "bad number in transform '" + text + "'");
      return v;
    };
    if (text == "identity") return identity();
    if (text == "uniform") return uniform();
    if (text == "kde") return kde();
    if (text.rfind("power:", 0) == 0) return power(number(std::string_view(text).substr(6)));
    if (text.rfind("kde:", 0) == 0) return kde(number(std::string_view(text).substr(4)));
    throw Error(ErrorKind::Config,
                "unknown transform '" + text + "' (expected identity|uniform|power:D|kde:H)");
  }

  const Kind& kind() const { return kind_; }
  bool needs_embeddings() const { return std::holds_alternative<KdeSmoothed>(kind_); }

  std::string to_string() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Identity>) return "identity";
          else if constexpr (std::is_same_v<T, Uniform>) return "uniform";
          else if constexpr (std::is_same_v<T, Power>) return "power:" + format_number(k.degree);
          else return "kde:" + format_number(k.bandwidth);
        },
        kind_);
  }

  static std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }

 private:
  void validate() const {
    if (auto* p = std::get_if<Power>(&kind_); p && !std::isfinite(p->degree))
      throw Error(ErrorKind::Config, "power degree must be finite");
    if (auto* k = std::get_if<KdeSmoothed>(&kind_);
        k && !(k->bandwidth > 0.0 && std::isfinite(k->bandwidth)))
      throw Error(ErrorKind::Config, "KDE bandwidth must be positive and finite");
  }

  Kind kind_ = Identity{};
};

namespace detail {

inline ResponseDistribution with_probs(const ResponseDistribution& dist,
                                       const std::vector<double>& probs) {
  std::vector<DistributionEntry> entries = dist.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].prob = probs[i];
  return ResponseDistribution(std::move(entries));
}

/// Normalizes exp(logits) with max subtraction. Terms that underflow are
/// floored at the smallest normal double so the support is kept.
inline std::vector<double> softmax(std::vector<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& l : logits) sum += (l = std::exp(l - mx));
  for (auto& l : logits) l = std::max(l / sum, std::numeric_limits<double>::min());
  return logits;
}

}  // namespace detail

/// Unit-normalized mean of the word embeddings of a canonical response.
/// A zero mean vector is returned unnormalized.
inline Eigen::VectorXd response_vector(const EmbeddingTable& emb, const std::string& response) {
  const auto tokens = tokenize(response);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(emb.dim()));
  for (const auto& t : tokens) v += emb.lookup(t);
  if (!tokens.empty()) v /= static_cast<double>(tokens.size());
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

/// Applies a transform, keeping the response set and raw counts.
///
///   Identity       q = p
///   Uniform        q = 1 / |support|
///   Power(d)       q ∝ p^d, evaluated as exp(d ln p)
///   KdeSmoothed(h) q(r) ∝ Σ_s p(s) exp(-‖v(r) - v(s)‖² / (2h²)), v = response_vector
inline ResponseDistribution transform(const ResponseDistribution& dist, const TransformSpec& spec,
                                      const EmbeddingTable* embeddings = nullptr) {
  const std::size_t n = dist.size();
  return std::visit(
      [&](const auto& k) -> ResponseDistribution {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return dist;
        } else if constexpr (std::is_same_v<T, Uniform>) {
          return detail::with_probs(dist, std::vector<double>(n, 1.0 / static_cast<double>(n)));
        } else if constexpr (std::is_same_v<T, Power>) {
          std::vector<double> logits(n);
          for (std::size_t i = 0; i < n; ++i) logits[i] = k.degree * std::log(dist[i].prob);
          return detail::with_probs(dist, detail::softmax(std::move(logits)));
        } else {
          if (embeddings == nullptr)
            throw Error(ErrorKind::Config, "KDE smoothing requires an embedding table");
          std::vector<Eigen::VectorXd> vecs;
          vecs.reserve(n);
          for (const auto& e : dist.entries()) vecs.push_back(response_vector(*embeddings, e.response));
          const double inv_two_h2 = 1.0 / (2.0 * k.bandwidth * k.bandwidth);
          // Kernel terms can underflow for tiny bandwidths; the self term
          // (distance 0) keeps every density strictly positive.
          std::vector<double> q(n, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double d2 = (vecs[i] - vecs[j]).squaredNorm();
              q[i] += dist[j].prob * std::exp(-d2 * inv_two_h2);
            }
          }
          return detail::with_probs(dist, q);
        }
      },
      spec.kind());
}

struct RankRow {
  std::size_t rank = 0;
  std::string response;
  std::uint64_t count = 0;
  double prob = 0.0;
};

/// Entries by descending probability (ties: ascending response) with 1-based
/// ranks.
inline std::vector<RankRow> distribution_report(const ResponseDistribution& dist) {
  std::vector<RankRow> rows;
  rows.reserve(dist.size());
  for (const auto& e : dist.entries()) rows.push_back({0, e.response, e.count, e.prob});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.prob > b.prob; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i + 1;
  return rows;
}

/// `rank<TAB>count<TAB>prob<TAB>response` lines, shortest round-trip prob.
inline void write_report(std::ostream& out, const std::vector<RankRow>& rows) {
  for (const auto& r : rows)
    out << r.rank << '\t' << r.count << '\t' << TransformSpec::format_number(r.prob) << '\t'
        << r.response << '\n';
}

}  // namespace negsamp
