#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/tokenize.hpp"

namespace negsamp {

/// Turn separator inserted between utterances of a context. It is a single
/// word token under `tokenize`, so re-tokenizing a joined context is stable.
inline constexpr const char* kEndOfUtterance = "__eou__";
inline constexpr std::size_t kDefaultMaxContextTurns = 10;

enum class Speaker { User, Operator };

inline const char* to_string(Speaker s) { return s == Speaker::User ? "user" : "operator"; }

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

struct ContextResponsePair {
  std::int64_t pair_id = 0;
  std::vector<std::string> context_tokens;
  std::string response_text;  // canonical
  std::vector<std::string> response_tokens;
  std::string dialogue_id;
  std::size_t turn_index = 0;  // index of the response turn in the dialogue
};

struct IngestIssue {
  std::size_t line = 0;  // 1-based line in the input stream
  std::string dialogue_id;
  std::string message;
};

struct ParseResult {
  std::vector<Dialogue> dialogues;
  std::vector<IngestIssue> issues;
};

namespace detail {

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Returns an empty string when the dialogue is valid, otherwise the reason.
inline std::string check_dialogue(const Dialogue& d) {
  if (d.turns.size() < 2) return "fewer than 2 turns";
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (tokenize(d.turns[i].text).empty())
      return "turn " + std::to_string(i) + " has empty text";
    const Speaker expected = (i % 2 == 0) ? Speaker::User : Speaker::Operator;
    if (d.turns[i].speaker != expected)
      return "turn " + std::to_string(i) + " breaks user/operator alternation";
  }
  return {};
}

}  // namespace detail

/// Reads one JSON record per line: {"id": "...", "turns": [{"speaker":
/// "user"|"operator", "text": "..."}]}. Blank lines are ignored. Malformed
/// records and invariant violations are reported in `issues` and skipped.
inline ParseResult parse_dialogues(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    auto report = [&](std::string id, std::string msg) {
      result.issues.push_back({lineno, std::move(id), std::move(msg)});
    };
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      report("", std::string("malformed record: ") + e.what());
      continue;
    }
    if (!rec.is_object()) {
      report("", "record is not an object");
      continue;
    }
    if (!rec.contains("id") || !rec["id"].is_string()) {
      report("", "missing required field 'id'");
      continue;
    }
    Dialogue d;
    d.id = rec["id"].get<std::string>();
    if (!rec.contains("turns") || !rec["turns"].is_array()) {
      report(d.id, "missing required field 'turns'");
      continue;
    }
    std::string problem;
    for (const auto& t : rec["turns"]) {
      if (!t.is_object() || !t.contains("speaker") || !t["speaker"].is_string() ||
          !t.contains("text") || !t["text"].is_string()) {
        problem = "turn missing required field 'speaker' or 'text'";
        break;
      }
      const auto tag = t["speaker"].get<std::string>();
      Turn turn;
      if (tag == "user") {
        turn.speaker = Speaker::User;
      } else if (tag == "operator") {
        turn.speaker = Speaker::Operator;
      } else {
        problem = "unknown speaker tag '" + tag + "'";
        break;
      }
      turn.text = t["text"].get<std::string>();
      d.turns.push_back(std::move(turn));
    }
    if (problem.empty()) problem = detail::check_dialogue(d);
    if (!problem.empty()) {
      report(d.id, problem);
      continue;
    }
    result.dialogues.push_back(std::move(d));
  }
  if (in.bad()) throw Error(ErrorKind::Input, "I/O failure while reading dialogues");
  return result;
}

inline nlohmann::json to_json(const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns) turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  return {{"id", d.id}, {"turns", std::move(turns)}};
}

inline void write_dialogues(std::ostream& out, const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues) out << to_json(d).dump() << '\n';
}

/// One pair per operator turn. The context is the last `max_context_turns`
/// turns before the response, tokenized and joined by `kEndOfUtterance`.
inline std::vector<ContextResponsePair> extract_pairs(const Dialogue& d,
                                                      std::size_t max_context_turns =
                                                          kDefaultMaxContextTurns,
                                                      std::int64_t first_pair_id = 0) {
  if (max_context_turns == 0)
    throw Error(ErrorKind::Config, "max_context_turns must be positive");
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(d.turns.size());
  for (const auto& t : d.turns) tokenized.push_back(tokenize(t.text));

  std::vector<ContextResponsePair> pairs;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (d.turns[i].speaker != Speaker::Operator) continue;
    ContextResponsePair p;
    p.pair_id = first_pair_id + static_cast<std::int64_t>(pairs.size());
    p.dialogue_id = d.id;
    p.turn_index = i;
    const std::size_t begin = i > max_context_turns ? i - max_context_turns : 0;
    for (std::size_t j = begin; j < i; ++j) {
      if (j > begin) p.context_tokens.emplace_back(kEndOfUtterance);
      p.context_tokens.insert(p.context_tokens.end(), tokenized[j].begin(), tokenized[j].end());
    }
    p.response_tokens = tokenized[i];
    p.response_text = join_tokens(p.response_tokens);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Pairs for a whole corpus with pair ids numbered consecutively from 0 in
/// dialogue order.
inline std::vector<ContextResponsePair> extract_all_pairs(
    const std::vector<Dialogue>& dialogues,
    std::size_t max_context_turns = kDefaultMaxContextTurns) {
  std::vector<ContextResponsePair> all;
  for (const auto& d : dialogues) {
    auto pairs = extract_pairs(d, max_context_turns, static_cast<std::int64_t>(all.size()));
    std::move(pairs.begin(), pairs.end(), std::back_inserter(all));
  }
  return all;
}

/// Split proportions as integer parts; fraction i is parts[i] / sum(parts),
/// so the three fractions always sum to exactly 1.
struct SplitSpec {
  std::uint64_t train = 80;
  std::uint64_t dev = 10;
  std::uint64_t test = 10;
  std::uint64_t seed = 0;

  std::uint64_t total() const { return train + dev + test; }
  void validate() const {
    if (train == 0 || dev == 0 || test == 0)
      throw Error(ErrorKind::Config, "split fractions must all be positive");
  }
};

struct CorpusSplit {
  std::vector<Dialogue> train, dev, test;
};

/// Deterministic shuffle, then |train| = floor(n * train_fraction),
/// |dev| = floor(n * dev_fraction), remainder to test.
inline CorpusSplit split_corpus(const std::vector<Dialogue>& dialogues, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = dialogues.size();
  if (n < 3)
    throw Error(ErrorKind::Data, "need at least 3 dialogues to split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);

  const auto floor_frac = [&](std::uint64_t part) {
    return static_cast<std::size_t>(static_cast<unsigned __int128>(n) * part / spec.total());
  };
  const std::size_t n_train = floor_frac(spec.train);
  const std::size_t n_dev = floor_frac(spec.dev);

  CorpusSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& bucket = i < n_train ? out.train : (i < n_train + n_dev ? out.dev : out.test);
    bucket.push_back(dialogues[order[i]]);
  }
  return out;
}

/// Split manifest: one dialogue id per line.
inline void write_id_list(std::ostream& out, const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues) out << d.id << '\n';
}

}  // namespace negsamp
