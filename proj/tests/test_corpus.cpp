#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/corpus.hpp"
#include "negsamp/synthetic.hpp"

using namespace negsamp;

namespace {

Dialogue make_dialogue(const std::string& id, const std::vector<std::string>& texts) {
  Dialogue d;
  d.id = id;
  for (std::size_t i = 0; i < texts.size(); ++i)
    d.turns.push_back({i % 2 == 0 ? Speaker::User : Speaker::Operator, texts[i]});
  return d;
}

std::vector<Dialogue> numbered(std::size_t n) {
  std::vector<Dialogue> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_dialogue("d" + std::to_string(i), {"q", "a"}));
  return out;
}

ParseResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dialogues(in);
}

}  // namespace

TEST(ParseDialogues, MinimalRecord) {
  auto r = parse(R"({"id":"d1","turns":[{"speaker":"user","text":"hi"},{"speaker":"operator","text":"hello"}]})");
  ASSERT_EQ(r.dialogues.size(), 1u);
  EXPECT_TRUE(r.issues.empty());
  EXPECT_EQ(r.dialogues[0].id, "d1");
  ASSERT_EQ(r.dialogues[0].turns.size(), 2u);
  EXPECT_EQ(r.dialogues[0].turns[1].speaker, Speaker::Operator);
  EXPECT_EQ(r.dialogues[0].turns[1].text, "hello");
}

TEST(ParseDialogues, EmptyStream) {
  auto r = parse("");
  EXPECT_TRUE(r.dialogues.empty());
  EXPECT_TRUE(r.issues.empty());
}

TEST(ParseDialogues, NoTurnsIsReported) {
  auto r = parse(R"({"id":"d1","turns":[]})");
  EXPECT_TRUE(r.dialogues.empty());
  ASSERT_EQ(r.issues.size(), 1u);
  EXPECT_EQ(r.issues[0].message, "fewer than 2 turns");
  EXPECT_EQ(r.issues[0].dialogue_id, "d1");
  EXPECT_EQ(r.issues[0].line, 1u);
}

TEST(ParseDialogues, BadRecordsAreCollectedNotDropped) {
  const std::string text =
      "not json\n"
      "\n"
      R"({"turns":[]})" "\n"
      R"({"id":"a"})" "\n"
      R"({"id":"b","turns":[{"speaker":"bot","text":"x"},{"speaker":"operator","text":"y"}]})" "\n"
      R"({"id":"c","turns":[{"speaker":"operator","text":"x"},{"speaker":"user","text":"y"}]})" "\n"
      R"({"id":"d","turns":[{"speaker":"user","text":"  "},{"speaker":"operator","text":"y"}]})" "\n"
      R"({"id":"ok","turns":[{"speaker":"user","text":"q"},{"speaker":"operator","text":"a"}]})" "\n";
  auto r = parse(text);
  ASSERT_EQ(r.dialogues.size(), 1u);
  EXPECT_EQ(r.dialogues[0].id, "ok");
  ASSERT_EQ(r.issues.size(), 6u);
  EXPECT_EQ(r.issues[0].line, 1u);
  EXPECT_NE(r.issues[0].message.find("malformed"), std::string::npos);
  EXPECT_EQ(r.issues[1].line, 3u);
  EXPECT_NE(r.issues[1].message.find("'id'"), std::string::npos);
  EXPECT_NE(r.issues[2].message.find("'turns'"), std::string::npos);
  EXPECT_NE(r.issues[3].message.find("unknown speaker"), std::string::npos);
  EXPECT_NE(r.issues[4].message.find("alternation"), std::string::npos);
  EXPECT_NE(r.issues[5].message.find("empty text"), std::string::npos);
}

TEST(ParseDialogues, RoundTripsThroughWriter) {
  std::vector<Dialogue> in{make_dialogue("x", {"Hi \"there\"", "Привет", "q2", "a2"}), make_dialogue("y", {"q", "a"})};
  std::ostringstream out;
  write_dialogues(out, in);
  auto r = parse(out.str());
  ASSERT_EQ(r.dialogues.size(), 2u);
  EXPECT_EQ(r.dialogues[0].turns[0].text, "Hi \"there\"");
  EXPECT_EQ(r.dialogues[0].turns[1].text, "Привет");
  EXPECT_EQ(r.dialogues[1].id, "y");
}

TEST(ParseDialogues, ShippedSampleIsClean) {
  std::ifstream in(std::string(NEGSAMP_DATA_DIR) + "/sample_dialogues.jsonl");
  ASSERT_TRUE(in);
  auto r = parse_dialogues(in);
  EXPECT_EQ(r.dialogues.size(), 3u);
  EXPECT_TRUE(r.issues.empty());
}

TEST(ExtractPairs, ContextIsAllPrecedingTurns) {
  auto d = make_dialogue("d", {"Q1", "A1", "Q2", "A2"});
  auto pairs = extract_pairs(d, 100);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].context_tokens, (std::vector<std::string>{"q1"}));
  EXPECT_EQ(pairs[0].response_text, "a1");
  EXPECT_EQ(pairs[1].context_tokens, (std::vector<std::string>{"q1", kEndOfUtterance, "a1", kEndOfUtterance, "q2"}));
  EXPECT_EQ(pairs[1].response_text, "a2");
  EXPECT_EQ(pairs[1].turn_index, 3u);
  EXPECT_EQ(pairs[0].pair_id, 0);
  EXPECT_EQ(pairs[1].pair_id, 1);
}

TEST(ExtractPairs, SingleExchange) {
  EXPECT_EQ(extract_pairs(make_dialogue("d", {"Q1", "A1"}), 100).size(), 1u);
}

TEST(ExtractPairs, TruncatesToMostRecentTurns) {
  auto pairs = extract_pairs(make_dialogue("d", {"Q1", "A1", "Q2 more", "A2"}), 1);
  EXPECT_EQ(pairs[1].context_tokens, (std::vector<std::string>{"q2", "more"}));
  pairs = extract_pairs(make_dialogue("d", {"Q1", "A1", "Q2", "A2"}), 2);
  EXPECT_EQ(pairs[1].context_tokens, (std::vector<std::string>{"a1", kEndOfUtterance, "q2"}));
}

TEST(ExtractPairs, ResponseIsCanonical) {
  auto pairs = extract_pairs(make_dialogue("d", {"q", "Glad  to help!"}));
  EXPECT_EQ(pairs[0].response_text, "glad to help !");
  EXPECT_EQ(pairs[0].response_tokens, (std::vector<std::string>{"glad", "to", "help", "!"}));
}

TEST(ExtractPairs, ZeroContextTurnsRejected) {
  EXPECT_THROW(extract_pairs(make_dialogue("d", {"q", "a"}), 0), Error);
}

TEST(ExtractPairs, OnePairPerOperatorTurn) {
  SyntheticSpec spec;
  spec.dialogues = 50;
  spec.exchanges_per_dialogue = 3;
  const auto corpus = make_synthetic_corpus(spec);
  const auto all = extract_all_pairs(corpus);
  EXPECT_EQ(all.size(), 150u);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].pair_id, static_cast<std::int64_t>(i));
}

TEST(SplitCorpus, TenDialogues) {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    SplitSpec spec;
    spec.seed = seed;
    auto s = split_corpus(numbered(10), spec);
    EXPECT_EQ(s.train.size(), 8u);
    EXPECT_EQ(s.dev.size(), 1u);
    EXPECT_EQ(s.test.size(), 1u);
  }
}

TEST(SplitCorpus, TwentyFiveThousandDialogues) {
  SplitSpec spec;
  auto s = split_corpus(numbered(25000), spec);
  EXPECT_EQ(s.train.size(), 20000u);
  EXPECT_EQ(s.dev.size(), 2500u);
  EXPECT_EQ(s.test.size(), 2500u);
}

TEST(SplitCorpus, DeterministicUnderSeed) {
  SplitSpec spec;
  spec.seed = 5;
  auto a = split_corpus(numbered(100), spec);
  auto b = split_corpus(numbered(100), spec);
  auto ids = [](const std::vector<Dialogue>& v) {
    std::vector<std::string> out;
    for (const auto& d : v) out.push_back(d.id);
    return out;
  };
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.test), ids(b.test));
  spec.seed = 6;
  auto c = split_corpus(numbered(100), spec);
  EXPECT_NE(ids(a.train), ids(c.train));
}

TEST(SplitCorpus, PartitionsInput) {
  SplitSpec spec;
  spec.seed = 11;
  for (std::size_t n : {3u, 7u, 41u, 250u}) {
    auto s = split_corpus(numbered(n), spec);
    std::multiset<std::string> seen;
    for (const auto* part : {&s.train, &s.dev, &s.test})
      for (const auto& d : *part) seen.insert(d.id);
    EXPECT_EQ(seen.size(), n);
    EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), n);
    EXPECT_EQ(s.train.size(), n * 8 / 10);
    EXPECT_EQ(s.dev.size(), n / 10);
  }
}

TEST(SplitCorpus, TooFewDialogues) {
  EXPECT_THROW(split_corpus(numbered(2), SplitSpec{}), Error);
}

TEST(SplitCorpus, IdListOnePerLine) {
  std::ostringstream out;
  write_id_list(out, numbered(3));
  EXPECT_EQ(out.str(), "d0\nd1\nd2\n");
}

TEST(Synthetic, DeterministicAndSkewed) {
  SyntheticSpec spec;
  spec.dialogues = 3000;
  spec.seed = 3;
  const auto a = make_synthetic_corpus(spec);
  const auto b = make_synthetic_corpus(spec);
  std::ostringstream sa, sb;
  write_dialogues(sa, a);
  write_dialogues(sb, b);
  EXPECT_EQ(sa.str(), sb.str());

  // Top response frequency should be close to 1 / H(200) under exponent 1.
  std::map<std::string, int> counts;
  const auto pairs = extract_all_pairs(a);
  for (const auto& p : pairs) ++counts[p.response_text];
  int top = 0;
  for (const auto& [r, c] : counts) top = std::max(top, c);
  double harmonic = 0;
  for (int k = 1; k <= 200; ++k) harmonic += 1.0 / k;
  EXPECT_NEAR(static_cast<double>(top) / pairs.size(), 1.0 / harmonic, 0.02);
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticSpec spec;
  spec.topics = 0;
  EXPECT_THROW(make_synthetic_corpus(spec), Error);
  spec = SyntheticSpec{};
  spec.vocab_size = 6;
  EXPECT_THROW(make_synthetic_corpus(spec), Error);
  EXPECT_THROW(make_separable_corpus(50, 100), Error);
}

TEST(Synthetic, SeparableCorpusHasUniqueAnswers) {
  const auto pairs = extract_all_pairs(make_separable_corpus(50, 200));
  ASSERT_EQ(pairs.size(), 50u);
  std::set<std::string> ctx, rsp;
  for (const auto& p : pairs) {
    ctx.insert(join_tokens(p.context_tokens));
    rsp.insert(p.response_text);
  }
  EXPECT_EQ(ctx.size(), 50u);
  EXPECT_EQ(rsp.size(), 50u);
}
