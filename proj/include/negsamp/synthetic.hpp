#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "negsamp/corpus.hpp"
#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/sampling.hpp"

namespace negsamp {

// Stand-in support-chat corpora for experiments and tests. Words are
// "c<i>" (context vocabulary) and "r<i>" (response vocabulary), so the two
// never collide.

struct SyntheticSpec {
  std::size_t vocab_size = 400;           // total words, split evenly between contexts and responses
  std::size_t distinct_responses = 200;
  double zipf_exponent = 1.0;
  std::size_t dialogues = 2000;
  std::uint64_t seed = 0;
  std::size_t exchanges_per_dialogue = 2;  // user/operator turn pairs
  std::size_t topics = 40;                 // responses share topics round-robin
  double informative_probability = 0.8;    // chance a question names its topic

  void validate() const {
    if (vocab_size < 4) throw Error(ErrorKind::Config, "vocab_size must be at least 4");
    if (distinct_responses < 2) throw Error(ErrorKind::Config, "need at least 2 distinct responses");
    if (dialogues == 0 || exchanges_per_dialogue == 0)
      throw Error(ErrorKind::Config, "dialogue and exchange counts must be positive");
    if (topics == 0 || topics > distinct_responses)
      throw Error(ErrorKind::Config, "topics must be in [1, distinct_responses]");
    if (!(zipf_exponent >= 0.0)) throw Error(ErrorKind::Config, "zipf exponent must be non-negative");
    if (!(informative_probability >= 0.0 && informative_probability <= 1.0))
      throw Error(ErrorKind::Config, "informative_probability must be in [0, 1]");
    const std::size_t rwords = vocab_size - vocab_size / 2;
    // Three-word responses from rwords words must be able to cover all responses.
    if (rwords < 3 || static_cast<double>(rwords) * rwords * rwords < 2.0 * static_cast<double>(distinct_responses))
      throw Error(ErrorKind::Config, "response vocabulary too small for the number of responses");
  }
};

/// Response r has popularity ∝ 1 / rank^s and belongs to topic r mod T.
/// Each user question names its topic (two topic words plus filler) with
/// probability `informative_probability`, otherwise it is filler only, so the
/// context narrows the answer down to a topic rather than a single response.
inline std::vector<Dialogue> make_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t cwords = spec.vocab_size / 2;
  const std::size_t rwords = spec.vocab_size - cwords;
  auto cword = [](std::size_t i) { return "c" + std::to_string(i); };
  auto rword = [](std::size_t i) { return "r" + std::to_string(i); };

  // Topic words take the first 2T context words (wrapping if the vocabulary
  // is small); the remaining context words are filler.
  const std::size_t topic_words = std::min(cwords, 2 * spec.topics);
  const std::size_t filler_begin = topic_words < cwords ? topic_words : 0;
  auto filler = [&] { return cword(filler_begin + rng.below(cwords - filler_begin)); };

  std::vector<std::string> responses;
  std::set<std::string> seen;
  while (responses.size() < spec.distinct_responses) {
    const std::size_t len = 2 + rng.below(2);
    std::string text;
    for (std::size_t k = 0; k < len; ++k) text += (k ? " " : "") + rword(rng.below(rwords));
    if (seen.insert(text).second) responses.push_back(text);
  }

  std::vector<double> weights(spec.distinct_responses);
  for (std::size_t r = 0; r < weights.size(); ++r)
    weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
  const AliasTable popularity(weights);

  std::vector<Dialogue> out;
  out.reserve(spec.dialogues);
  for (std::size_t d = 0; d < spec.dialogues; ++d) {
    Dialogue dlg;
    dlg.id = "syn" + std::to_string(d);
    for (std::size_t e = 0; e < spec.exchanges_per_dialogue; ++e) {
      const std::size_t r = popularity.sample(rng);
      const std::size_t topic = r % spec.topics;
      std::string question;
      if (rng.bernoulli(spec.informative_probability)) {
        question = cword((2 * topic) % cwords) + " " + cword((2 * topic + 1) % cwords) + " " + filler();
      } else {
        question = filler() + " " + filler();
      }
      dlg.turns.push_back({Speaker::User, question});
      dlg.turns.push_back({Speaker::Operator, responses[r]});
    }
    out.push_back(std::move(dlg));
  }
  return out;
}

/// `n` single-exchange dialogues where question i ("c<2i> c<2i+1>") has the
/// unique answer "r<2i> r<2i+1>". Requires vocab_size >= 4n.
inline std::vector<Dialogue> make_separable_corpus(std::size_t n, std::size_t vocab_size) {
  if (n == 0 || vocab_size < 4 * n)
    throw Error(ErrorKind::Config, "separable corpus needs vocab_size >= 4 * n");
  std::vector<Dialogue> out;
  for (std::size_t i = 0; i < n; ++i) {
    Dialogue d;
    d.id = "sep" + std::to_string(i);
    d.turns.push_back({Speaker::User, "c" + std::to_string(2 * i) + " c" + std::to_string(2 * i + 1)});
    d.turns.push_back({Speaker::Operator, "r" + std::to_string(2 * i) + " r" + std::to_string(2 * i + 1)});
    out.push_back(std::move(d));
  }
  return out;
}

/// Vocabulary of a corpus generated above: c0..c<V/2-1>, r0..r<V-V/2-1>, plus
/// the turn separator.
inline std::vector<std::string> synthetic_vocabulary(std::size_t vocab_size) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < vocab_size / 2; ++i) v.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < vocab_size - vocab_size / 2; ++i) v.push_back("r" + std::to_string(i));
  v.emplace_back(kEndOfUtterance);
  return v;
}

/// Sorted distinct tokens over contexts and responses.
inline std::vector<std::string> build_vocabulary(const std::vector<ContextResponsePair>& pairs) {
  std::set<std::string> s;
  for (const auto& p : pairs) {
    s.insert(p.context_tokens.begin(), p.context_tokens.end());
    s.insert(p.response_tokens.begin(), p.response_tokens.end());
  }
  return {s.begin(), s.end()};
}

}  // namespace negsamp
