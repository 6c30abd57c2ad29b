#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "negsamp/corpus.hpp"
#include "negsamp/distribution.hpp"
#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"

namespace negsamp {

/// Walker/Vose alias table: O(n) construction, O(1) per draw.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(const std::vector<double>& weights) {
    const std::size_t n = weights.size();
    if (n == 0) throw Error(ErrorKind::Data, "alias table needs at least one weight");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::Data, "alias table weight invalid");
      total += w;
    }
    if (!(total > 0.0)) throw Error(ErrorKind::Data, "alias table weights sum to zero");

    prob_.assign(n, 1.0);
    alias_.resize(n);
    for (std::size_t i = 0; i < n; ++i) alias_[i] = i;

    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers in either list are 1 up to rounding.
    for (auto i : small) prob_[i] = 1.0;
    for (auto i : large) prob_[i] = 1.0;
  }

  std::size_t size() const { return prob_.size(); }

  /// Exact distribution the table draws from (column mass plus alias mass).
  std::vector<double> implied_probabilities() const {
    const double n = static_cast<double>(prob_.size());
    std::vector<double> p(prob_.size(), 0.0);
    for (std::size_t i = 0; i < prob_.size(); ++i) {
      p[i] += prob_[i] / n;
      p[alias_[i]] += (1.0 - prob_[i]) / n;
    }
    return p;
  }

  std::size_t sample(Rng& rng) const {
    const auto column = static_cast<std::size_t>(rng.below(prob_.size()));
    return rng.uniform() < prob_[column] ? column : alias_[column];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

/// Draws responses from a fixed distribution, excluding a given true
/// response by rejection.
class NegativeSampler {
 public:
  explicit NegativeSampler(ResponseDistribution dist)
      : dist_(std::move(dist)), table_(dist_.probs()) {}

  const ResponseDistribution& distribution() const { return dist_; }

  std::size_t draw_index(Rng& rng) const { return table_.sample(rng); }

  /// `n` i.i.d. draws conditioned on response != true_response. Repeats are
  /// allowed.
  std::vector<std::string> draw(const std::string& true_response, std::size_t n, Rng& rng) const {
    const auto excluded = dist_.index_of(true_response);
    check_excludable(excluded);
    std::vector<std::string> out;
    out.reserve(n);
    while (out.size() < n) {
      const std::size_t i = table_.sample(rng);
      if (excluded && i == *excluded) continue;
      out.push_back(dist_[i].response);
    }
    return out;
  }

  /// `n` distinct responses, all different from true_response, drawn
  /// sequentially from the distribution renormalized over what is left.
  std::vector<std::string> draw_distinct(const std::string& true_response, std::size_t n,
                                         Rng& rng) const {
    const auto excluded = dist_.index_of(true_response);
    const std::size_t available = dist_.size() - (excluded ? 1 : 0);
    if (available < n)
      throw Error(ErrorKind::Data, "candidate pool has " + std::to_string(available) +
                                       " distinct alternatives, need " + std::to_string(n));
    std::vector<char> taken(dist_.size(), 0);
    if (excluded) taken[*excluded] = 1;
    std::vector<std::string> out;
    out.reserve(n);
    double taken_mass = excluded ? dist_[*excluded].prob : 0.0;
    while (out.size() < n) {
      std::size_t i = 0;
      if (taken_mass < 0.5) {
        do {
          i = table_.sample(rng);
        } while (taken[i]);
      } else {
        // Most of the mass is used up; a linear scan beats rejection here.
        double u = rng.uniform() * (1.0 - taken_mass);
        std::size_t last = 0;
        for (i = 0; i < dist_.size(); ++i) {
          if (taken[i]) continue;
          last = i;
          if (u < dist_[i].prob) break;
          u -= dist_[i].prob;
        }
        if (i == dist_.size()) i = last;
      }
      taken[i] = 1;
      taken_mass += dist_[i].prob;
      out.push_back(dist_[i].response);
    }
    return out;
  }

 private:
  void check_excludable(const std::optional<std::size_t>& excluded) const {
    if (excluded && dist_.size() == 1)
      throw Error(ErrorKind::Data,
                  "cannot draw negatives: the distribution only contains the true response");
  }

  ResponseDistribution dist_;
  AliasTable table_;
};

inline std::vector<std::string> draw_negatives(const ResponseDistribution& dist,
                                               const std::string& true_response, std::size_t n,
                                               Rng& rng) {
  if (dist.size() < 2 && dist.index_of(true_response))
    throw Error(ErrorKind::Data,
                "cannot draw negatives: the distribution only contains the true response");
  return NegativeSampler(dist).draw(true_response, n, rng);
}

// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultNegativesPerPositive = 5;

struct SamplingStrategy {
  TransformSpec transform;
  std::size_t neg_per_pos = kDefaultNegativesPerPositive;
  bool filter_by_inverse_count = false;
  // Rebuild negatives at every training epoch instead of once per set.
  bool resample_each_epoch = false;

  void validate() const {
    if (neg_per_pos < 1) throw Error(ErrorKind::Config, "neg_per_pos must be at least 1");
  }
};

struct TrainingExample {
  std::vector<std::string> context_tokens;
  std::vector<std::string> response_tokens;
  int label = 0;  // 1 positive, 0 negative
  std::int64_t source_pair_id = 0;
};

/// Positive pairs plus `neg_per_pos` negatives each, drawn from
/// transform(dist). With the inverse-count filter a pair survives with
/// probability 1 / count(response), using raw counts from `dist`.
///
/// Each pair draws from its own generator derived from (seed, pair_id), so the
/// output does not depend on how pairs are partitioned across workers.
/// Output is ordered by input pair order: positive first, then negatives.
inline std::vector<TrainingExample> build_training_set(const std::vector<ContextResponsePair>& pairs,
                                                       const ResponseDistribution& dist,
                                                       const SamplingStrategy& strategy,
                                                       std::uint64_t seed,
                                                       const EmbeddingTable* embeddings = nullptr) {
  strategy.validate();
  const NegativeSampler sampler(transform(dist, strategy.transform, embeddings));
  std::vector<TrainingExample> out;
  out.reserve(pairs.size() * (1 + strategy.neg_per_pos));
  for (const auto& pair : pairs) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(pair.pair_id)));
    if (strategy.filter_by_inverse_count) {
      const std::uint64_t n = dist.count(pair.response_text);
      if (n == 0)
        throw Error(ErrorKind::Data, "response of pair " + std::to_string(pair.pair_id) +
                                         " has no count in the distribution");
      if (!rng.bernoulli(1.0 / static_cast<double>(n))) continue;
    }
    out.push_back({pair.context_tokens, pair.response_tokens, 1, pair.pair_id});
    for (auto& neg : sampler.draw(pair.response_text, strategy.neg_per_pos, rng))
      out.push_back({pair.context_tokens, tokenize(neg), 0, pair.pair_id});
  }
  return out;
}

inline nlohmann::json to_json(const TrainingExample& ex) {
  return {{"context", ex.context_tokens},
          {"response", ex.response_tokens},
          {"label", ex.label},
          {"pair_id", ex.source_pair_id}};
}

inline void write_training_set(std::ostream& out, const std::vector<TrainingExample>& set) {
  for (const auto& ex : set) out << to_json(ex).dump() << '\n';
}

inline std::vector<TrainingExample> read_training_set(std::istream& in) {
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TrainingExample ex;
      ex.context_tokens = j.at("context").get<std::vector<std::string>>();
      ex.response_tokens = j.at("response").get<std::vector<std::string>>();
      ex.label = j.at("label").get<int>();
      ex.source_pair_id = j.at("pair_id").get<std::int64_t>();
      if (ex.label != 0 && ex.label != 1) throw Error(ErrorKind::Data, "label must be 0 or 1");
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Input,
                  "training set line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace negsamp
