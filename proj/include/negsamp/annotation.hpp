#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/distribution.hpp"
#include "negsamp/dual_encoder.hpp"
#include "negsamp/error.hpp"
#include "negsamp/retrieval.hpp"
#include "negsamp/rng.hpp"

namespace negsamp {

inline constexpr std::size_t kResponsesPerQuestion = 3;
inline constexpr int kMaxMark = 3;

/// Picks the n best responses for a question context.
class ResponseSelector {
 public:
  virtual ~ResponseSelector() = default;
  virtual std::vector<std::string> select(const std::vector<std::string>& context_tokens,
                                          std::size_t n) const = 0;
};

/// Scores every distinct training response with the dual encoder; ties are
/// broken by response text.
class DualEncoderSelector : public ResponseSelector {
 public:
  DualEncoderSelector(const DualEncoderModel& model, const ResponseDistribution& responses)
      : model_(model) {
    for (const auto& e : responses.entries()) {
      responses_.push_back(e.response);
      encoded_.push_back(model.encode_response(tokenize(e.response)));
    }
  }

  std::vector<std::string> select(const std::vector<std::string>& context_tokens,
                                  std::size_t n) const override {
    const Eigen::VectorXd c = model_.encode_context(context_tokens);
    std::vector<double> s(responses_.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = model_.score_encoded(c, encoded_[i]);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](auto a, auto b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(responses_[order[i]]);
    return out;
  }

 private:
  const DualEncoderModel& model_;
  std::vector<std::string> responses_;
  std::vector<Eigen::VectorXd> encoded_;
};

/// Responses attached to the nearest stored contexts, skipping repeats.
class HistoryIndexSelector : public ResponseSelector {
 public:
  explicit HistoryIndexSelector(const HistoryIndex& index) : index_(index) {}

  std::vector<std::string> select(const std::vector<std::string>& context_tokens,
                                  std::size_t n) const override {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& hit : query_nearest(index_, context_tokens, index_.size())) {
      if (seen.insert(hit.response_text).second) out.push_back(hit.response_text);
      if (out.size() == n) break;
    }
    return out;
  }

 private:
  const HistoryIndex& index_;
};

struct Question {
  std::string id;
  std::vector<std::string> context_tokens;
};

struct NamedSelector {
  std::string model;
  const ResponseSelector* selector = nullptr;
};

struct AnnotationRow {
  std::string question_id;
  std::size_t rank = 0;  // 1-based within the model's selection
  std::string response;
  std::string model;
};

/// Every model's top-n responses per question, shuffled across models and
/// questions so assessors cannot tell which model produced a row.
inline std::vector<AnnotationRow> export_annotation(const std::vector<NamedSelector>& models,
                                                    const std::vector<Question>& questions,
                                                    std::size_t n_responses, std::uint64_t seed) {
  if (questions.empty()) throw Error(ErrorKind::Data, "export_annotation: no questions");
  if (models.empty()) throw Error(ErrorKind::Config, "export_annotation: no models");
  if (n_responses == 0) throw Error(ErrorKind::Config, "n_responses must be positive");
  std::vector<AnnotationRow> rows;
  for (const auto& m : models) {
    for (const auto& q : questions) {
      const auto picked = m.selector->select(q.context_tokens, n_responses);
      if (picked.size() != n_responses)
        throw Error(ErrorKind::Data, "model '" + m.model + "' produced " + std::to_string(picked.size()) +
                                         " responses for question '" + q.id + "', need " +
                                         std::to_string(n_responses));
      for (std::size_t i = 0; i < picked.size(); ++i) rows.push_back({q.id, i + 1, picked[i], m.model});
    }
  }
  Rng rng(seed);
  rng.shuffle(rows);
  return rows;
}

/// Assessor sheet: header plus `question_id<TAB>rank<TAB>response<TAB>mark`
/// rows with the mark column left blank.
inline void write_annotation_sheet(std::ostream& out, const std::vector<AnnotationRow>& rows) {
  out << "question_id\trank\tresponse\tmark\n";
  for (const auto& r : rows) out << r.question_id << '\t' << r.rank << '\t' << r.response << "\t\n";
}

/// Key kept away from assessors: `row<TAB>model<TAB>question_id<TAB>rank`,
/// row numbers matching the sheet's data rows (1-based).
inline void write_annotation_key(std::ostream& out, const std::vector<AnnotationRow>& rows) {
  out << "row\tmodel\tquestion_id\trank\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    out << (i + 1) << '\t' << rows[i].model << '\t' << rows[i].question_id << '\t' << rows[i].rank << '\n';
}

struct AnnotationRecord {
  std::string question_id;
  std::vector<std::string> responses;
  std::vector<int> marks;  // 0 incorrect .. 3 reference answer
};

struct HumanScores {
  double correct = 0.0;  // CR: some response marked above 1
  double unsure = 0.0;   // UR: some response marked above 0
};

/// CR and UR over annotated questions.
inline HumanScores score_human_marks(const std::vector<AnnotationRecord>& records,
                                     std::size_t responses_per_question = kResponsesPerQuestion) {
  if (records.empty()) throw Error(ErrorKind::Data, "score_human_marks: no records");
  std::size_t cr = 0, ur = 0;
  for (const auto& r : records) {
    if (r.marks.size() != responses_per_question)
      throw Error(ErrorKind::Data, "question '" + r.question_id + "' has " + std::to_string(r.marks.size()) +
                                       " marks, expected " + std::to_string(responses_per_question));
    for (int m : r.marks)
      if (m < 0 || m > kMaxMark)
        throw Error(ErrorKind::Data, "mark " + std::to_string(m) + " out of range for question '" +
                                         r.question_id + "'");
    const int best = *std::max_element(r.marks.begin(), r.marks.end());
    cr += best > 1;
    ur += best > 0;
  }
  const auto n = static_cast<double>(records.size());
  return {static_cast<double>(cr) / n, static_cast<double>(ur) / n};
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

}  // namespace detail

/// Joins a marked sheet with its key; returns records grouped per model in
/// (question_id, rank) order.
inline std::map<std::string, std::vector<AnnotationRecord>> read_marked_annotation(std::istream& sheet,
                                                                                   std::istream& key) {
  std::string line;
  std::vector<std::vector<std::string>> sheet_rows, key_rows;
  if (!std::getline(sheet, line)) throw Error(ErrorKind::Input, "annotation sheet is empty");
  while (std::getline(sheet, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 4) throw Error(ErrorKind::Input, "annotation row has " + std::to_string(f.size()) + " columns");
    sheet_rows.push_back(std::move(f));
  }
  if (!std::getline(key, line)) throw Error(ErrorKind::Input, "annotation key is empty");
  while (std::getline(key, line)) {
    if (line.empty()) continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 4) throw Error(ErrorKind::Input, "annotation key row malformed");
    key_rows.push_back(std::move(f));
  }
  if (sheet_rows.size() != key_rows.size())
    throw Error(ErrorKind::Data, "annotation sheet and key have different row counts");

  std::map<std::string, std::map<std::string, std::map<std::size_t, std::pair<std::string, int>>>> grouped;
  for (std::size_t i = 0; i < sheet_rows.size(); ++i) {
    const auto& s = sheet_rows[i];
    const auto& k = key_rows[i];
    if (s[0] != k[2] || s[1] != k[3])
      throw Error(ErrorKind::Data, "annotation row " + std::to_string(i + 1) + " does not match its key");
    if (s[3].empty()) throw Error(ErrorKind::Data, "annotation row " + std::to_string(i + 1) + " has no mark");
    int mark = 0;
    try {
      std::size_t used = 0;
      mark = std::stoi(s[3], &used);
      if (used != s[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::Data, "annotation row " + std::to_string(i + 1) + " has a non-integer mark");
    }
    grouped[k[1]][s[0]][std::stoul(s[1])] = {s[2], mark};
  }
  std::map<std::string, std::vector<AnnotationRecord>> out;
  for (auto& [model, questions] : grouped) {
    for (auto& [qid, ranked] : questions) {
      AnnotationRecord rec{qid, {}, {}};
      for (auto& [rank, rm] : ranked) {
        rec.responses.push_back(rm.first);
        rec.marks.push_back(rm.second);
      }
      out[model].push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace negsamp
