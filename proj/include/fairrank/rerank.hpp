#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fairrank/common.hpp"
#include "fairrank/corpus.hpp"

namespace fairrank {

enum class RankOrigin { kBaseline, kFmmr, kDetConstSort };
std::string ToString(RankOrigin origin);

struct RankedEntry {
  ItemId id = 0;
  double utility = 0.0;
  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

// Ordered result list; position i (0-based) is rank i + 1.
struct RankedList {
  std::vector<RankedEntry> entries;
  RankOrigin origin = RankOrigin::kBaseline;
  std::vector<std::string> diagnostics;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<ItemId> ids() const;
  Vector utilities() const;
};

using LabelMap = std::map<ItemId, GroupId>;

// Frozen random projection R^d -> R^e followed by ReLU. Variants A, B and C
// differ only in their (fixed) weight seed.
class EmbeddingModel {
 public:
  EmbeddingModel(char variant, int input_dim, int embed_dim = 16);

  char variant() const { return variant_; }
  int input_dim() const { return input_dim_; }
  int embed_dim() const { return embed_dim_; }
  Vector Embed(std::span<const double> x) const;

 private:
  char variant_;
  int input_dim_;
  int embed_dim_;
  Vector weights_;  // embed_dim x input_dim, row-major
};

double CosineSimilarity(std::span<const double> a, std::span<const double> b);

enum class FmmrDiversity {
  kMaxItemSimilarity,  // MMR: max cosine against any selected item
  kCentroidSimilarity  // cosine against the centroid of selected embeddings
};

struct FmmrParams {
  double lambda = 0.14;
  int k_out = 1;
  FmmrDiversity diversity = FmmrDiversity::kMaxItemSimilarity;
};

// Descending utility, ties by ascending id.
RankedList RankByUtility(std::span<const Item> items);
RankedList RankByUtility(const RankedList& list);

// Greedy fair MMR re-ranking. Selects k_out items by maximizing
//   lambda * u(c) - (1 - lambda) * sim(c, selected)
// starting from the top-utility item, then appends the rest by utility.
// Zero-norm embeddings get similarity 0 and a diagnostic on the result.
RankedList FmmrRerank(const RankedList& list, std::span<const Item> items, const EmbeddingModel& embedding,
                      const FmmrParams& params);

// Deterministic constrained sorting: for every prefix k <= k_out each group
// appears at least floor(p_g * k) times, where p_g is the group's share of
// the whole input list under `labels`. Items beyond k_out follow in utility
// order.
RankedList DetConstSort(const RankedList& list, const LabelMap& labels, int num_groups, int k_out);

// One JSON object per line: position, item_id, utility, group_true and, when
// labels are given, group_inferred.
void WriteJsonLines(std::ostream& os, const RankedList& list, const Corpus& corpus,
                    const std::optional<LabelMap>& inferred = std::nullopt);

}  // namespace fairrank
