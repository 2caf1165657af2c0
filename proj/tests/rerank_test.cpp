#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "fairrank/rerank.hpp"
#include "gtest/gtest.h"
#include "oracles.hpp"

namespace fairrank {
namespace {

constexpr int kDim = 4;

std::vector<Item> MakeItems(const std::vector<double>& utilities, Rng& rng) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < utilities.size(); ++i) {
    Item it;
    it.id = i;
    it.utility = utilities[i];
    it.features.resize(kDim);
    for (auto& f : it.features) f = rng.Normal();
    items.push_back(std::move(it));
  }
  return items;
}

std::vector<Item> RandomItems(int n, Rng& rng) {
  std::vector<double> u(static_cast<std::size_t>(n));
  for (auto& x : u) x = rng.Uniform();
  return MakeItems(u, rng);
}

bool IsPermutationOf(const RankedList& list, std::span<const Item> items) {
  std::multiset<ItemId> a, b;
  for (const auto& e : list.entries) a.insert(e.id);
  for (const auto& it : items) b.insert(it.id);
  return a == b;
}

TEST(RankByUtilityTest, SortsDescending) {
  std::vector<Item> items(3);
  const double u[3] = {0.2, 0.9, 0.5};
  for (int i = 0; i < 3; ++i) items[static_cast<std::size_t>(i)] = {static_cast<ItemId>(i + 1), {}, {}, u[i]};
  EXPECT_EQ(RankByUtility(items).ids(), (std::vector<ItemId>{2, 3, 1}));
}

TEST(RankByUtilityTest, TiesByAscendingId) {
  std::vector<Item> items;
  for (ItemId id : {5, 3, 9, 1}) items.push_back({id, {}, {}, 0.5});
  EXPECT_EQ(RankByUtility(items).ids(), (std::vector<ItemId>{1, 3, 5, 9}));
}

TEST(RankByUtilityTest, RandomListMatchesReferenceSort) {
  Rng rng(11);
  auto items = RandomItems(1000, rng);
  for (std::size_t i = 0; i < items.size(); i += 7) items[i].utility = 0.5;  // force ties
  const auto ranked = RankByUtility(items);
  ASSERT_TRUE(IsPermutationOf(ranked, items));
  std::vector<std::pair<double, ItemId>> ref;
  for (const auto& it : items) ref.emplace_back(-it.utility, it.id);
  std::sort(ref.begin(), ref.end());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(ranked.entries[i].id, ref[i].second);
}

TEST(RankByUtilityTest, Errors) {
  EXPECT_THROW(RankByUtility(std::vector<Item>{}), DomainError);
  std::vector<Item> dup = {{1, {}, {}, 0.1}, {1, {}, {}, 0.2}};
  EXPECT_THROW(RankByUtility(dup), DomainError);
}

TEST(FmmrTest, LambdaOneIsUtilitySort) {
  Rng rng(3);
  const EmbeddingModel emb('A', kDim);
  for (int trial = 0; trial < 20; ++trial) {
    const auto items = RandomItems(30, rng);
    const auto base = RankByUtility(items);
    const auto out = FmmrRerank(base, items, emb, {1.0, 30});
    EXPECT_EQ(out.ids(), base.ids());
  }
}

TEST(FmmrTest, IdenticalEmbeddingsGiveUtilitySort) {
  Rng rng(4);
  const EmbeddingModel emb('B', kDim);
  for (double lambda : {1e-6, 0.14, 0.5, 0.9, 1.0}) {
    auto items = RandomItems(25, rng);
    for (auto& it : items) it.features = {1.0, -0.5, 2.0, 0.25};
    const auto base = RankByUtility(items);
    EXPECT_EQ(FmmrRerank(base, items, emb, {lambda, 25}).ids(), base.ids()) << lambda;
  }
}

TEST(FmmrTest, IdenticalEmbeddingsAtLambdaZeroFallBackToIdOrder) {
  // Every score ties at lambda 0, so after the seed the tie rule orders by id.
  Rng rng(4);
  const EmbeddingModel emb('B', kDim);
  auto items = RandomItems(25, rng);
  for (auto& it : items) it.features = {1.0, -0.5, 2.0, 0.25};
  const auto base = RankByUtility(items);
  const auto ids = FmmrRerank(base, items, emb, {0.0, 25}).ids();
  ASSERT_EQ(ids.front(), base.ids().front());
  EXPECT_TRUE(std::is_sorted(ids.begin() + 1, ids.end()));
}

TEST(FmmrTest, ThreeItemHandInstance) {
  // Item 0 has the top utility. Item 1 has higher utility than item 2 but
  // points the same way as item 0, so at lambda 0.5 item 2 goes second.
  std::vector<Item> items = {{0, {1.0, 0.0, 0.0, 0.0}, {}, 0.9},
                             {1, {1.0, 0.0, 0.0, 0.0}, {}, 0.8},
                             {2, {0.0, 1.0, 0.0, 0.0}, {}, 0.5}};
  const EmbeddingModel emb('A', kDim);
  std::vector<std::vector<double>> e;
  for (const auto& it : items) e.push_back(emb.Embed(it.features));
  const auto expected = oracle::GreedyMmr({0.9, 0.8, 0.5}, e, 0.5);
  const auto out = FmmrRerank(RankByUtility(items), items, emb, {0.5, 3});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.entries[i].id, static_cast<ItemId>(expected[i]));
  EXPECT_EQ(out.ids(), (std::vector<ItemId>{0, 2, 1}));
}

TEST(FmmrTest, MatchesGreedyOracleOnSmallInstances) {
  Rng rng(5);
  const EmbeddingModel emb('C', kDim);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 3 + static_cast<int>(rng.Below(5));
    const auto items = RandomItems(n, rng);
    const double lambda = rng.Uniform();
    std::vector<double> u;
    std::vector<std::vector<double>> e;
    for (const auto& it : items) {
      u.push_back(it.utility);
      e.push_back(emb.Embed(it.features));
    }
    const auto expected = oracle::GreedyMmr(u, e, lambda);
    const auto out = FmmrRerank(RankByUtility(items), items, emb, {lambda, n});
    for (int i = 0; i < n; ++i) {
      ASSERT_EQ(out.entries[static_cast<std::size_t>(i)].id, static_cast<ItemId>(expected[static_cast<std::size_t>(i)]))
          << "trial " << trial;
    }
  }
}

TEST(FmmrTest, SeedIsMaximumUtility) {
  Rng rng(6);
  const EmbeddingModel emb('A', kDim);
  for (int trial = 0; trial < 100; ++trial) {
    const auto items = RandomItems(20, rng);
    const auto out = FmmrRerank(RankByUtility(items), items, emb, {rng.Uniform(), 10});
    double best = 0.0;
    for (const auto& it : items) best = std::max(best, it.utility);
    EXPECT_EQ(out.entries[0].utility, best);
  }
}

TEST(FmmrTest, PrefixThenUtilityOrder) {
  Rng rng(7);
  const EmbeddingModel emb('A', kDim);
  const auto items = RandomItems(40, rng);
  const auto out = FmmrRerank(RankByUtility(items), items, emb, {0.14, 10});
  ASSERT_TRUE(IsPermutationOf(out, items));
  for (std::size_t i = 11; i < out.size(); ++i) EXPECT_GE(out.entries[i - 1].utility, out.entries[i].utility);
}

TEST(FmmrTest, ScaleInvariantAtExtremeLambda) {
  Rng rng(8);
  const EmbeddingModel emb('B', kDim);
  for (double lambda : {0.0, 1.0}) {
    const auto items = RandomItems(30, rng);
    auto scaled = items;
    for (auto& it : scaled) it.utility *= 3.5;
    const auto a = FmmrRerank(RankByUtility(items), items, emb, {lambda, 15});
    const auto b = FmmrRerank(RankByUtility(scaled), scaled, emb, {lambda, 15});
    EXPECT_EQ(a.ids(), b.ids());
  }
}

TEST(FmmrTest, CentroidVariantIsPermutationWithSameSeed) {
  Rng rng(9);
  const EmbeddingModel emb('A', kDim);
  const auto items = RandomItems(30, rng);
  const auto base = RankByUtility(items);
  const auto out = FmmrRerank(base, items, emb, {0.14, 12, FmmrDiversity::kCentroidSimilarity});
  EXPECT_TRUE(IsPermutationOf(out, items));
  EXPECT_EQ(out.entries[0].id, base.entries[0].id);
}

TEST(FmmrTest, ZeroNormEmbeddingIsDiagnosed) {
  std::vector<Item> items = {{0, {0, 0, 0, 0}, {}, 0.9}, {1, {1, 2, 3, 4}, {}, 0.5}, {2, {-1, 0, 2, 1}, {}, 0.4}};
  const auto out = FmmrRerank(RankByUtility(items), items, EmbeddingModel('A', kDim), {0.5, 3});
  ASSERT_FALSE(out.diagnostics.empty());
  EXPECT_EQ(out.diagnostics[0], "zero_norm_embedding:0");
}

TEST(FmmrTest, Errors) {
  Rng rng(1);
  const auto items = RandomItems(5, rng);
  const EmbeddingModel emb('A', kDim);
  const auto base = RankByUtility(items);
  EXPECT_THROW(FmmrRerank(base, items, emb, {0.5, 6}), DomainError);
  EXPECT_THROW(FmmrRerank(base, items, emb, {0.5, 0}), ConfigError);
  EXPECT_THROW(FmmrRerank(base, items, emb, {1.5, 3}), ConfigError);
  EXPECT_THROW(EmbeddingModel('D', kDim), ConfigError);
}

TEST(FmmrTest, Deterministic) {
  Rng rng(10);
  const auto items = RandomItems(50, rng);
  const EmbeddingModel emb('C', kDim);
  const auto a = FmmrRerank(RankByUtility(items), items, emb, {0.14, 20});
  const auto b = FmmrRerank(RankByUtility(items), items, emb, {0.14, 20});
  EXPECT_EQ(a.entries, b.entries);
}

// Twelve people: ids 0-7 light with the highest utilities, 8-11 dark.
struct Figure3 {
  std::vector<Item> items;
  LabelMap truth;
  Figure3() {
    for (int i = 0; i < 12; ++i) {
      items.push_back({static_cast<ItemId>(i), {}, GroupId{i < 8 ? 0 : 1}, 0.95 - 0.05 * i});
      truth[static_cast<ItemId>(i)] = GroupId{i < 8 ? 0 : 1};
    }
  }
};

int CountLabel(const RankedList& list, const LabelMap& labels, GroupId g, std::size_t k) {
  int n = 0;
  for (std::size_t i = 0; i < k; ++i) n += labels.at(list.entries[i].id) == g ? 1 : 0;
  return n;
}

TEST(DetConstSortTest, Figure3TruthfulLabels) {
  const Figure3 f;
  const auto base = RankByUtility(f.items);
  EXPECT_EQ(CountLabel(base, f.truth, GroupId{1}, 6), 0);
  const auto out = DetConstSort(base, f.truth, 2, 6);
  EXPECT_EQ(CountLabel(out, f.truth, GroupId{1}, 6), 2);
}

TEST(DetConstSortTest, Figure3HalfDarkRelabeled) {
  const Figure3 f;
  LabelMap noisy = f.truth;
  noisy[8] = GroupId{0};
  noisy[9] = GroupId{0};
  const auto out = DetConstSort(RankByUtility(f.items), noisy, 2, 6);
  EXPECT_EQ(CountLabel(out, noisy, GroupId{1}, 6), 1);
}

TEST(DetConstSortTest, SingleGroupEqualsBaseline) {
  Rng rng(12);
  const auto items = RandomItems(40, rng);
  LabelMap labels;
  for (const auto& it : items) labels[it.id] = GroupId{0};
  const auto base = RankByUtility(items);
  EXPECT_EQ(DetConstSort(base, labels, 1, 40).ids(), base.ids());
}

TEST(DetConstSortTest, FloorsHoldOnRandomInstances) {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.Below(60));
    const int groups = 1 + static_cast<int>(rng.Below(4));
    const auto items = RandomItems(n, rng);
    LabelMap labels;
    std::vector<double> shares(static_cast<std::size_t>(groups));
    for (auto& s : shares) s = rng.Uniform() + 0.05;
    const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
    for (const auto& it : items) {
      double r = rng.Uniform() * total;
      int g = 0;
      while (g + 1 < groups && r >= shares[static_cast<std::size_t>(g)]) r -= shares[static_cast<std::size_t>(g++)];
      labels[it.id] = GroupId{g};
    }
    const int k_out = 1 + static_cast<int>(rng.Below(static_cast<std::uint64_t>(n)));
    const auto out = DetConstSort(RankByUtility(items), labels, groups, k_out);
    ASSERT_TRUE(IsPermutationOf(out, items));
    std::vector<int> ranked_labels;
    for (const auto& e : out.entries) ranked_labels.push_back(labels.at(e.id).value);
    ASSERT_TRUE(oracle::PrefixFloorsHold(ranked_labels, groups, k_out)) << "trial " << trial;
    for (std::size_t i = static_cast<std::size_t>(k_out) + 1; i < out.size(); ++i) {
      ASSERT_GE(out.entries[i - 1].utility, out.entries[i].utility);
    }
  }
}

TEST(DetConstSortTest, ScaleInvariant) {
  Rng rng(14);
  auto items = RandomItems(50, rng);
  LabelMap labels;
  for (const auto& it : items) labels[it.id] = GroupId{static_cast<int>(rng.Below(3))};
  auto scaled = items;
  for (auto& it : scaled) it.utility *= 0.25;
  EXPECT_EQ(DetConstSort(RankByUtility(items), labels, 3, 30).ids(),
            DetConstSort(RankByUtility(scaled), labels, 3, 30).ids());
}

TEST(DetConstSortTest, Errors) {
  const Figure3 f;
  const auto base = RankByUtility(f.items);
  LabelMap missing = f.truth;
  missing.erase(3);
  EXPECT_THROW(DetConstSort(base, missing, 2, 6), DomainError);
  EXPECT_THROW(DetConstSort(base, f.truth, 2, 13), DomainError);
  EXPECT_THROW(DetConstSort(base, f.truth, 2, 0), ConfigError);
}

TEST(DetConstSortTest, Deterministic) {
  Rng rng(15);
  const auto items = RandomItems(60, rng);
  LabelMap labels;
  for (const auto& it : items) labels[it.id] = GroupId{static_cast<int>(rng.Below(4))};
  EXPECT_EQ(DetConstSort(RankByUtility(items), labels, 4, 50).entries,
            DetConstSort(RankByUtility(items), labels, 4, 50).entries);
}

TEST(JsonLinesTest, WritesOneObjectPerLine) {
  const Corpus c = GenerateCorpus(BundledProfile("pizza"), 1);
  const auto list = RankByUtility(c.items);
  LabelMap inferred;
  for (const auto& it : c.items) inferred[it.id] = GroupId{0};
  std::ostringstream os;
  WriteJsonLines(os, list, c, inferred);
  std::istringstream in(os.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("position").get<int>(), n + 1);
    EXPECT_EQ(j.at("item_id").get<ItemId>(), list.entries[static_cast<std::size_t>(n)].id);
    EXPECT_EQ(j.at("group_inferred").get<std::string>(), "light_man");
    ++n;
  }
  EXPECT_EQ(n, 75);
}

}  // namespace
}  // namespace fairrank
