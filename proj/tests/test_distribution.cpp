#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/corpus.hpp"
#include "negsamp/distribution.hpp"
#include "negsamp/embedding.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/synthetic.hpp"

using namespace negsamp;

namespace {

ResponseDistribution make_dist(const std::vector<double>& probs) {
  std::vector<DistributionEntry> e;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "r%03zu", i);
    e.push_back({name, probs[i], i + 1});
  }
  return ResponseDistribution(std::move(e));
}

ResponseDistribution random_dist(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& x : w) x = std::exp(3.0 * rng.normal());
  return make_dist(w);
}

std::vector<ContextResponsePair> pairs_with(const std::vector<std::string>& responses) {
  std::vector<ContextResponsePair> out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    ContextResponsePair p;
    p.pair_id = static_cast<std::int64_t>(i);
    p.response_text = responses[i];
    p.response_tokens = tokenize(responses[i]);
    out.push_back(p);
  }
  return out;
}

double sum(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TEST(CountResponses, Basic) {
  auto d = count_responses(pairs_with({"a", "a", "b"}));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_DOUBLE_EQ(d.prob("a"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d.prob("b"), 1.0 / 3.0);
  EXPECT_EQ(d.count("a"), 2u);
  EXPECT_EQ(d.count("b"), 1u);
  EXPECT_EQ(d.total_count(), 3u);
}

TEST(CountResponses, SingleResponse) {
  auto d = count_responses(pairs_with({"x", "x", "x"}));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].prob, 1.0);
}

TEST(CountResponses, EmptyInput) {
  EXPECT_THROW(count_responses({}), Error);
}

TEST(CountResponses, MatchesIndependentRecount) {
  SyntheticSpec spec;
  spec.dialogues = 500;
  spec.seed = 17;
  const auto pairs = extract_all_pairs(make_synthetic_corpus(spec));
  ASSERT_EQ(pairs.size(), 1000u);
  std::map<std::string, int> recount;
  for (const auto& p : pairs) ++recount[p.response_text];
  const auto d = count_responses(pairs);
  ASSERT_EQ(d.size(), recount.size());
  for (const auto& [r, c] : recount) {
    EXPECT_EQ(d.count(r), static_cast<std::uint64_t>(c));
    EXPECT_EQ(d.prob(r), c / 1000.0) << r;
  }
}

TEST(Transform, PowerZeroIsUniform) {
  auto q = transform(make_dist({0.5, 0.25, 0.25}), TransformSpec::power(0.0)).probs();
  for (double x : q) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Transform, PowerOneIsIdentity) {
  auto q = transform(make_dist({0.5, 0.25, 0.25}), TransformSpec::power(1.0)).probs();
  EXPECT_NEAR(q[0], 0.5, 1e-15);
  EXPECT_NEAR(q[1], 0.25, 1e-15);
  EXPECT_NEAR(q[2], 0.25, 1e-15);
}

TEST(Transform, PowerMatchesHighPrecisionOracle) {
  // 50-digit evaluation of p^d / sum p^d.
  const auto d = make_dist({0.5, 0.25, 0.25});
  auto q = transform(d, TransformSpec::power(-0.25)).probs();
  EXPECT_NEAR(q[0], 0.29599685885717724602, 1e-12);
  EXPECT_NEAR(q[1], 0.35200157057141137699, 1e-12);
  EXPECT_NEAR(q[2], 0.35200157057141137699, 1e-12);
  q = transform(d, TransformSpec::power(-0.125)).probs();
  EXPECT_NEAR(q[0], 0.31436502302452576863, 1e-12);
  EXPECT_NEAR(q[1], 0.34281748848773711568, 1e-12);
}

TEST(Transform, PowerLimitsOnRandomDistributions) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto d = random_dist(rng, 2 + rng.below(60));
    const auto u = transform(d, TransformSpec::power(0.0)).probs();
    const auto id = transform(d, TransformSpec::power(1.0)).probs();
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_NEAR(u[i], 1.0 / static_cast<double>(d.size()), 1e-12);
      EXPECT_NEAR(id[i], d[i].prob, 1e-12);
    }
  }
}

TEST(Transform, OutputsSumToOneAndKeepSupport) {
  Rng rng(2);
  const auto emb = random_embeddings({"r000", "r001", "r002", "r003", "r004", "r005", "r006", "r007"}, 6, 1.0, 3);
  for (int t = 0; t < 50; ++t) {
    const auto d = random_dist(rng, 8);
    for (const auto& spec : {TransformSpec::identity(), TransformSpec::uniform(), TransformSpec::power(-0.125),
                             TransformSpec::power(-0.25), TransformSpec::power(2.5), TransformSpec::kde(0.4)}) {
      const auto q = transform(d, spec, &emb);
      EXPECT_NEAR(sum(q.probs()), 1.0, 1e-9);
      ASSERT_EQ(q.size(), d.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(q[i].response, d[i].response);
        EXPECT_EQ(q[i].count, d[i].count);
        EXPECT_GT(q[i].prob, 0.0);
      }
    }
  }
}

TEST(Transform, NegativePowerReversesOrder) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto d = random_dist(rng, 2 + rng.below(20));
    const double deg = -rng.uniform(0.01, 2.0);
    const auto q = transform(d, TransformSpec::power(deg)).probs();
    for (std::size_t a = 0; a < d.size(); ++a)
      for (std::size_t b = 0; b < d.size(); ++b)
        if (d[a].prob > d[b].prob) {
          EXPECT_LT(q[a], q[b]);
        }
  }
}

TEST(Transform, PowerIsCompositional) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto d = random_dist(rng, 2 + rng.below(30));
    const double d1 = rng.uniform(-2, 2), d2 = rng.uniform(-2, 2);
    const auto twice = transform(transform(d, TransformSpec::power(d1)), TransformSpec::power(d2)).probs();
    const auto once = transform(d, TransformSpec::power(d1 * d2)).probs();
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(twice[i], once[i], 1e-9);
  }
}

TEST(Transform, StronglyNegativePowerStaysFinite) {
  const auto q = transform(make_dist({1.0, 1e-300}), TransformSpec::power(-5.0)).probs();
  EXPECT_TRUE(std::isfinite(q[0]) && std::isfinite(q[1]));
  EXPECT_NEAR(q[1], 1.0, 1e-12);
}

TEST(Transform, UniformIgnoresInputProbs) {
  Rng rng(5);
  const auto a = transform(random_dist(rng, 7), TransformSpec::uniform()).probs();
  const auto b = transform(random_dist(rng, 7), TransformSpec::uniform()).probs();
  EXPECT_EQ(a, b);
}

TEST(Transform, KdeNeedsEmbeddings) {
  EXPECT_THROW(transform(make_dist({0.5, 0.5}), TransformSpec::kde(0.4)), Error);
}

TEST(Transform, KdeIdenticalVectorsGetEqualMass) {
  // "a" and "b" share a vector; "c" differs.
  RowMatrix rows(3, 2);
  rows << 1, 0, 1, 0, 0, 1;
  EmbeddingTable emb({"a", "b", "c"}, rows);
  std::vector<DistributionEntry> e{{"a", 0.7, 7}, {"b", 0.1, 1}, {"c", 0.2, 2}};
  const auto q = transform(ResponseDistribution(e), TransformSpec::kde(0.4), &emb);
  EXPECT_NEAR(q.prob("a"), q.prob("b"), 1e-15);
}

TEST(Transform, KdeBandwidthLimits) {
  Rng rng(6);
  std::vector<std::string> vocab;
  for (int i = 0; i < 40; ++i) vocab.push_back("w" + std::to_string(i));
  const auto emb = random_embeddings(vocab, 8, 1.0, 7);
  std::vector<DistributionEntry> e;
  for (int i = 0; i < 20; ++i)
    e.push_back({"w" + std::to_string(2 * i) + " w" + std::to_string(2 * i + 1), std::exp(rng.normal()), 1});
  const ResponseDistribution d(e);
  const auto wide = transform(d, TransformSpec::kde(1e3), &emb).probs();
  const auto narrow = transform(d, TransformSpec::kde(1e-6), &emb).probs();
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(wide[i], 1.0 / 20.0, 1e-3);
    EXPECT_NEAR(narrow[i], d[i].prob, 1e-3);
  }
}

TEST(TransformSpec, ParseAndPrint) {
  EXPECT_EQ(TransformSpec::parse("identity").to_string(), "identity");
  EXPECT_EQ(TransformSpec::parse("uniform").to_string(), "uniform");
  EXPECT_EQ(TransformSpec::parse("power:-0.125").to_string(), "power:-0.125");
  EXPECT_EQ(TransformSpec::parse("kde").to_string(), "kde:0.4");
  EXPECT_EQ(TransformSpec::parse("kde:1.5").to_string(), "kde:1.5");
  EXPECT_THROW(TransformSpec::parse("power:"), Error);
  EXPECT_THROW(TransformSpec::parse("power:x"), Error);
  EXPECT_THROW(TransformSpec::parse("kde:0"), Error);
  EXPECT_THROW(TransformSpec::parse("gaussian"), Error);
}

TEST(Report, RanksByDescendingProb) {
  auto d = count_responses(pairs_with({"b", "a", "a"}));
  auto rows = distribution_report(d);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rank, 1u);
  EXPECT_EQ(rows[0].response, "a");
  EXPECT_DOUBLE_EQ(rows[0].prob, 2.0 / 3.0);
  EXPECT_EQ(rows[1].response, "b");
  std::ostringstream out;
  write_report(out, rows);
  EXPECT_EQ(out.str(), "1\t2\t0.6666666666666666\ta\n2\t1\t0.3333333333333333\tb\n");
}

TEST(Report, UniformRowsEqual) {
  auto rows = distribution_report(transform(make_dist({1, 2, 3, 4, 5}), TransformSpec::uniform()));
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.prob, 0.2);
}

TEST(Report, ZipfSlopeNearMinusOne) {
  SyntheticSpec spec;
  spec.vocab_size = 400;
  spec.distinct_responses = 1000;
  spec.dialogues = 100000;
  spec.exchanges_per_dialogue = 1;
  spec.seed = 8;
  const auto rows = distribution_report(count_responses(extract_all_pairs(make_synthetic_corpus(spec))));
  // Least-squares fit of log prob on log rank over the well-sampled head.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const std::size_t n = 100;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(static_cast<double>(rows[i].rank)), y = std::log(rows[i].prob);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, -1.0, 0.1);
}
