#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "negsamp/retrieval.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/synthetic.hpp"

using namespace negsamp;

namespace {

// Zero attention parameters make a one-token encoding equal to its embedding.
std::shared_ptr<const DualEncoderModel> planar_model() {
  RowMatrix rows(4, 2);
  rows << 1, 0,
          0, 1,
          0, 0,
          3, 4;
  EmbeddingTable emb({"a", "b", "z", "w"}, rows);
  return std::make_shared<DualEncoderModel>(emb, Encoder::zeros(EncoderKind::Attention, 2, 2), std::nullopt,
                                            Eigen::MatrixXd::Identity(2, 2));
}

ContextResponsePair pair(std::int64_t id, const std::string& ctx, const std::string& rsp) {
  ContextResponsePair p;
  p.pair_id = id;
  p.context_tokens = {ctx};
  p.response_tokens = {rsp};
  p.response_text = rsp;
  return p;
}

std::shared_ptr<const DualEncoderModel> gru_model(const std::vector<std::string>& vocab, std::uint64_t seed) {
  ModelConfig mc;
  mc.hidden = 8;
  mc.seed = seed;
  return std::make_shared<DualEncoderModel>(
      DualEncoderModel::initialize(random_embeddings(vocab, 8, 0.5, seed), mc));
}

HistoryIndex random_index(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<HistoryRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.uniform(-1, 1);
    // Coarse coordinates produce exact ties between distinct rows.
    if (i % 5 == 0) v = v.unaryExpr([](double x) { return std::round(x); });
    if (v.norm() == 0) v(0) = 1;
    rows.push_back({static_cast<std::int64_t>(n - i), v.normalized(), "r" + std::to_string(i)});
  }
  return HistoryIndex(nullptr, kDefaultResponseWeight, std::move(rows));
}

}  // namespace

TEST(HistoryIndex, DefaultResponseWeight) {
  EXPECT_EQ(kDefaultResponseWeight, 0.4);
  EXPECT_EQ(HistoryIndex().response_weight(), 0.4);
}

TEST(HistoryIndex, StoresWeightedSumNormalized) {
  const auto idx = build_history_index(planar_model(), {pair(7, "a", "b")});
  ASSERT_EQ(idx.size(), 1u);
  const Eigen::Vector2d expected = Eigen::Vector2d(1.0, 0.4) / std::sqrt(1.16);
  EXPECT_NEAR((idx.rows()[0].vector - expected).norm(), 0.0, 1e-15);
  EXPECT_EQ(idx.rows()[0].pair_id, 7);
  EXPECT_EQ(idx.rows()[0].response_text, "b");
}

TEST(HistoryIndex, ZeroResponseWeightStoresUnitContext) {
  const auto idx = build_history_index(planar_model(), {pair(1, "w", "b"), pair(2, "a", "w")}, 0.0);
  EXPECT_NEAR((idx.rows()[0].vector - Eigen::Vector2d(0.6, 0.8)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((idx.rows()[1].vector - Eigen::Vector2d(1, 0)).norm(), 0.0, 1e-15);
}

TEST(HistoryIndex, ZeroNormNamesThePair) {
  try {
    build_history_index(planar_model(), {pair(1, "a", "b"), pair(42, "z", "z")});
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(HistoryIndex, DuplicateIdsRejected) {
  EXPECT_THROW(build_history_index(planar_model(), {pair(3, "a", "b"), pair(3, "b", "a")}), Error);
}

TEST(HistoryIndex, EmptyInputsRejected) {
  EXPECT_THROW(build_history_index(planar_model(), {}), Error);
  EXPECT_THROW(HistoryIndex().nearest(Eigen::Vector2d(1, 0), 1), Error);
  const auto idx = build_history_index(planar_model(), {pair(1, "a", "b")});
  EXPECT_THROW(idx.nearest(Eigen::Vector2d(0, 0), 1), Error);
  EXPECT_THROW(idx.nearest(Eigen::Vector2d(1, 0), 0), Error);
}

TEST(HistoryIndex, OrthogonalRows) {
  const auto idx = build_history_index(planar_model(), {pair(1, "a", "a"), pair(2, "b", "b")});
  auto hits = query_nearest(idx, {"a"}, 2);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].pair_id, 1);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
  EXPECT_NEAR(hits[1].score, 0.0, 1e-12);
  hits = query_nearest(idx, {"b"}, 1);
  EXPECT_EQ(hits[0].pair_id, 2);
  EXPECT_EQ(hits[0].response_text, "b");
}

TEST(HistoryIndex, SelfQueryHasUnitCosine) {
  const auto pairs = extract_all_pairs(make_separable_corpus(30, 120));
  const auto model = gru_model(synthetic_vocabulary(120), 5);
  const auto idx = build_history_index(model, pairs);
  for (const auto& p : pairs) {
    const auto h = idx.history_vector(p.context_tokens, p.response_tokens);
    EXPECT_NEAR(idx.best_similarity(h), 1.0, 1e-9);
    const auto hits = idx.nearest(h, 1);
    EXPECT_NEAR(hits[0].score, 1.0, 1e-9);
  }
  for (const auto& r : idx.rows()) EXPECT_NEAR(r.vector.norm(), 1.0, 1e-9);
}

TEST(HistoryIndex, MatchesBruteForceIncludingTies) {
  const auto idx = random_index(500, 3, 8);
  Rng rng(9);
  for (int q = 0; q < 50; ++q) {
    Eigen::VectorXd query(3);
    for (Eigen::Index j = 0; j < 3; ++j) query(j) = rng.uniform(-1, 1);
    if (q % 2 == 0) query = query.unaryExpr([](double x) { return std::round(x); });
    if (query.norm() == 0) query(2) = 1;
    // Independent ranking: full sort by (score desc, pair id asc).
    const Eigen::VectorXd u = query / query.norm();
    std::vector<std::pair<double, std::int64_t>> all;
    for (const auto& r : idx.rows()) all.push_back({-r.vector.dot(u), r.pair_id});
    std::sort(all.begin(), all.end());
    const auto hits = idx.nearest(query, 10);
    ASSERT_EQ(hits.size(), 10u);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      EXPECT_EQ(hits[i].pair_id, all[i].second);
      EXPECT_EQ(hits[i].score, -all[i].first);
    }
  }
}

TEST(HistoryIndex, QueryScaleDoesNotChangeRanking) {
  const auto idx = random_index(200, 4, 3);
  Rng rng(4);
  for (int q = 0; q < 20; ++q) {
    Eigen::VectorXd query(4);
    for (Eigen::Index j = 0; j < 4; ++j) query(j) = rng.uniform(-1, 1);
    const auto a = idx.nearest(query, 15);
    const auto b = idx.nearest(7.3 * query, 15);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].pair_id, b[i].pair_id);
  }
}

TEST(HistoryIndex, TopKCoveringIndexIsPermutation) {
  const auto idx = random_index(60, 3, 12);
  const auto hits = idx.nearest(Eigen::Vector3d(1, 2, 3), 1000);
  ASSERT_EQ(hits.size(), 60u);
  std::set<std::int64_t> ids;
  for (const auto& h : hits) ids.insert(h.pair_id);
  EXPECT_EQ(ids.size(), 60u);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_GE(hits[i - 1].score, hits[i].score);
}

TEST(HistoryIndex, FileRoundTripAndFingerprint) {
  const auto pairs = extract_all_pairs(make_separable_corpus(10, 40));
  const auto vocab = synthetic_vocabulary(40);
  const auto model = gru_model(vocab, 5);
  const auto idx = build_history_index(model, pairs, 0.25);
  std::ostringstream out;
  write_history_index(out, idx, "some/model.ckpt");
  const std::string bytes = out.str();
  EXPECT_EQ(bytes.substr(0, 4), "NSHI");

  std::istringstream in(bytes);
  auto back = read_history_index(in);
  EXPECT_EQ(back.response_weight(), 0.25);
  ASSERT_EQ(back.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(back.rows()[i].pair_id, idx.rows()[i].pair_id);
    EXPECT_EQ(back.rows()[i].vector, idx.rows()[i].vector);
    EXPECT_EQ(back.rows()[i].response_text, idx.rows()[i].response_text);
  }
  EXPECT_THROW(back.attach(gru_model(vocab, 6)), Error);
  back.attach(model);
  const auto a = query_nearest(idx, pairs[3].context_tokens, 5);
  const auto b = query_nearest(back, pairs[3].context_tokens, 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pair_id, b[i].pair_id);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  std::ostringstream again;
  write_history_index(again, back, "some/model.ckpt");
  EXPECT_EQ(again.str(), bytes);

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_history_index(truncated), Error);
}
