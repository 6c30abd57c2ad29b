#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "negsamp/corpus.hpp"
#include "negsamp/distribution.hpp"
#include "negsamp/dual_encoder.hpp"
#include "negsamp/error.hpp"
#include "negsamp/retrieval.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/sampling.hpp"

namespace negsamp {

/// Scores candidate responses (canonical strings) for one context. Higher is
/// better.
class CandidateScorer {
 public:
  virtual ~CandidateScorer() = default;
  virtual std::vector<double> score(const std::vector<std::string>& context_tokens,
                                    const std::vector<std::string>& candidates) const = 0;
};

/// Ranks candidates by the dual encoder's pairwise probability.
class DualEncoderScorer : public CandidateScorer {
 public:
  explicit DualEncoderScorer(const DualEncoderModel& model) : model_(model) {}

  std::vector<double> score(const std::vector<std::string>& context_tokens,
                            const std::vector<std::string>& candidates) const override {
    const Eigen::VectorXd c = model_.encode_context(context_tokens);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& cand : candidates)
      out.push_back(model_.score_encoded(c, model_.encode_response(tokenize(cand))));
    return out;
  }

 private:
  const DualEncoderModel& model_;
};

/// Ranks candidates for the embedding-based model: each candidate is placed
/// as a hypothetical history vector normalize(ctx + c_r * candidate) and
/// scored by its cosine to the nearest stored training history.
class HistoryIndexScorer : public CandidateScorer {
 public:
  explicit HistoryIndexScorer(const HistoryIndex& index) : index_(index) {}

  std::vector<double> score(const std::vector<std::string>& context_tokens,
                            const std::vector<std::string>& candidates) const override {
    const auto& model = index_.model();
    const Eigen::VectorXd c = model.encode_context(context_tokens);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& cand : candidates) {
      Eigen::VectorXd h = c + index_.response_weight() * model.encode_response(tokenize(cand));
      const double n = h.norm();
      out.push_back(n > 0.0 ? index_.best_similarity(h / n) : -std::numeric_limits<double>::infinity());
    }
    return out;
  }

 private:
  const HistoryIndex& index_;
};

inline constexpr std::size_t kDefaultAlternatives = 9;

struct EvalConfig {
  std::size_t m = kDefaultAlternatives;
  std::vector<std::size_t> ks{1, 3, 5};
  TransformSpec alternative_transform;
  std::uint64_t seed = 0;
  bool keep_ranks = false;

  void validate() const {
    if (m < 1) throw Error(ErrorKind::Config, "m must be at least 1");
    if (ks.empty()) throw Error(ErrorKind::Config, "ks must not be empty");
    for (auto k : ks)
      if (k < 1 || k > m + 1)
        throw Error(ErrorKind::Config, "k=" + std::to_string(k) + " outside [1, m+1]");
  }
};

struct EvalReport {
  std::vector<std::size_t> ks;
  std::vector<double> recalls;  // parallel to ks
  std::size_t test_pairs = 0;
  std::size_t m = 0;
  std::string alternative_transform;
  std::uint64_t seed = 0;
  std::vector<std::size_t> ranks;  // 1-based rank of the true response, if kept

  double recall_at(std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return recalls[i];
    throw Error(ErrorKind::Config, "recall@" + std::to_string(k) + " was not computed");
  }
};

/// 1-based pessimistic rank of candidate 0: every other candidate scoring
/// at least as high is ranked above it.
inline std::size_t pessimistic_rank(const std::vector<double>& scores) {
  std::size_t rank = 1;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (!(scores[i] < scores[0])) ++rank;
  return rank;
}

/// recall@k with m alternatives per test pair, drawn without replacement
/// from transform(train_dist) excluding the true response. Alternatives for
/// each pair come from a generator seeded by (cfg.seed, pair_id).
inline EvalReport evaluate(const CandidateScorer& scorer,
                           const std::vector<ContextResponsePair>& test_pairs,
                           const ResponseDistribution& train_dist, const EvalConfig& cfg,
                           const EmbeddingTable* kde_embeddings = nullptr) {
  cfg.validate();
  if (test_pairs.empty()) throw Error(ErrorKind::Data, "evaluate: no test pairs");
  const NegativeSampler sampler(transform(train_dist, cfg.alternative_transform, kde_embeddings));

  std::vector<std::size_t> hits(cfg.ks.size(), 0);
  EvalReport report;
  for (const auto& pair : test_pairs) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(pair.pair_id)));
    std::vector<std::string> candidates{pair.response_text};
    auto alts = sampler.draw_distinct(pair.response_text, cfg.m, rng);
    candidates.insert(candidates.end(), alts.begin(), alts.end());
    const auto scores = scorer.score(pair.context_tokens, candidates);
    if (scores.size() != candidates.size())
      throw Error(ErrorKind::Data, "scorer returned the wrong number of scores");
    const std::size_t rank = pessimistic_rank(scores);
    for (std::size_t i = 0; i < cfg.ks.size(); ++i)
      if (rank <= cfg.ks[i]) ++hits[i];
    if (cfg.keep_ranks) report.ranks.push_back(rank);
  }
  report.ks = cfg.ks;
  for (auto h : hits) report.recalls.push_back(static_cast<double>(h) / static_cast<double>(test_pairs.size()));
  report.test_pairs = test_pairs.size();
  report.m = cfg.m;
  report.alternative_transform = cfg.alternative_transform.to_string();
  report.seed = cfg.seed;
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) recall["recall@" + std::to_string(r.ks[i])] = r.recalls[i];
  nlohmann::json j{{"config", {{"m", r.m}, {"ks", r.ks}, {"alternative_transform", r.alternative_transform}, {"seed", r.seed}}},
                   {"test_pairs", r.test_pairs},
                   {"recall", recall}};
  if (!r.ranks.empty()) j["ranks"] = r.ranks;
  return j;
}

// ---------------------------------------------------------------------------
// Cross-distribution grid

struct NamedScorer {
  std::string label;  // training-negative distribution, e.g. "initial"
  const CandidateScorer* scorer = nullptr;
};

struct NamedTransform {
  std::string label;  // alternative distribution, e.g. "uniform"
  TransformSpec transform;
};

struct GridResult {
  std::vector<std::string> train_labels;
  std::vector<std::string> test_labels;
  std::vector<std::vector<EvalReport>> cells;  // [train][test]
};

/// Evaluates every (training-negative variant, alternative distribution)
/// cell with the same seed, so columns are comparable across rows.
inline GridResult cross_distribution_grid(const std::vector<NamedScorer>& models,
                                          const std::vector<NamedTransform>& alternatives,
                                          const std::vector<ContextResponsePair>& test_pairs,
                                          const ResponseDistribution& train_dist, EvalConfig cfg,
                                          const EmbeddingTable* kde_embeddings = nullptr) {
  if (models.empty()) throw Error(ErrorKind::Config, "grid needs at least one model");
  if (alternatives.empty()) throw Error(ErrorKind::Config, "grid needs at least one alternative distribution");
  GridResult grid;
  for (const auto& m : models) grid.train_labels.push_back(m.label);
  for (const auto& a : alternatives) grid.test_labels.push_back(a.label);
  for (const auto& m : models) {
    std::vector<EvalReport> row;
    for (const auto& a : alternatives) {
      cfg.alternative_transform = a.transform;
      row.push_back(evaluate(*m.scorer, test_pairs, train_dist, cfg, kde_embeddings));
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

/// Plain-text table grouped by test distribution, one row per training
/// variant, as in:
///
///   Test set (alternative responses)  Training set (negative samples)  Recall@1
///   initial                           initial                          0.5700
///                                     uniform                          0.4500
inline void write_grid_table(std::ostream& out, const GridResult& grid, std::size_t k = 1) {
  const std::string h1 = "Test set (alternative responses)";
  const std::string h2 = "Training set (negative samples)";
  std::size_t w1 = h1.size(), w2 = h2.size();
  for (const auto& l : grid.test_labels) w1 = std::max(w1, l.size());
  for (const auto& l : grid.train_labels) w2 = std::max(w2, l.size());
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  out << pad(h1, w1) << "  " << pad(h2, w2) << "  Recall@" << k << '\n';
  for (std::size_t t = 0; t < grid.test_labels.size(); ++t) {
    for (std::size_t r = 0; r < grid.train_labels.size(); ++r) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(4) << grid.cells[r][t].recall_at(k);
      out << pad(r == 0 ? grid.test_labels[t] : "", w1) << "  " << pad(grid.train_labels[r], w2) << "  "
          << v.str() << '\n';
    }
  }
}

inline nlohmann::json to_json(const GridResult& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t r = 0; r < g.train_labels.size(); ++r)
    for (std::size_t t = 0; t < g.test_labels.size(); ++t)
      cells.push_back({{"train", g.train_labels[r]}, {"test", g.test_labels[t]}, {"report", to_json(g.cells[r][t])}});
  return {{"train_variants", g.train_labels}, {"test_alternatives", g.test_labels}, {"cells", cells}};
}

}  // namespace negsamp
