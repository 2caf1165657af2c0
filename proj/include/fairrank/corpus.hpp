#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fairrank/common.hpp"
#include "json.hpp"

namespace fairrank {

struct UtilityParams {
  double mean = 0.5;
  double stddev = 0.1;
};

struct FeatureParams {
  Vector centroid;
  double spread = 1.0;  // isotropic standard deviation
};

// Recipe for one query's retrieved population. All per-group vectors are
// indexed by GroupId::value of `groups`.
struct QueryProfile {
  std::string name;
  GroupSchema groups;
  Vector group_weights;  // nonnegative, normalized on use
  std::vector<UtilityParams> utility;
  std::vector<FeatureParams> features;
  int list_size = 0;
  // Probability that an item's features are drawn from another group's
  // cluster (uniformly chosen). Keeps the groups imperfectly recoverable.
  double atypical_rate = 0.0;

  int feature_dim() const;
  Vector NormalizedWeights() const;
  void Validate() const;  // throws ConfigError
};

struct Item {
  ItemId id = 0;
  Vector features;
  GroupId group;
  double utility = 0.0;
};

struct Corpus {
  std::vector<Item> items;
  QueryProfile profile;
  std::uint64_t seed = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  const GroupSchema& groups() const { return profile.groups; }
  // Linear scan; corpora are small.
  const Item& item(ItemId id) const;
};

inline constexpr int kDefaultFeatureDim = 32;
inline constexpr int kCorpusFormatVersion = 1;
inline constexpr double kDefaultAtypicalRate = 0.06;

// Group-conditional cluster centroids. For the default four-group schema the
// centroid is a sum of a skin-tone axis and a gender axis (random sign
// patterns drawn from a fixed geometry seed); other schemas get one random
// sign pattern per group. `separation` scales the per-dimension offset.
std::vector<FeatureParams> DefaultFeatureParams(const GroupSchema& groups, int dim = kDefaultFeatureDim,
                                                double separation = 0.6, double spread = 1.0);

// Population weights proportional to the annotated single-person subset
// (5216 light men, 2536 light women, 714 dark men, 226 dark women).
Vector DefaultGroupWeights();

// Bundled profiles: "tennis" (131), "pizza" (75), "table" (124), and
// "population" (2000 items, used to train classifiers and generators).
// Utility means are qualitative mimics, not measured values. All bundled
// profiles use atypical_rate = kDefaultAtypicalRate.
QueryProfile BundledProfile(const std::string& name);
std::vector<std::string> BundledProfileNames();

Corpus GenerateCorpus(const QueryProfile& profile, std::uint64_t seed);

// Random disjoint partition: first part has floor(ratio * n) items.
std::pair<Corpus, Corpus> SplitTrainEval(const Corpus& corpus, double ratio, std::uint64_t seed);

// Fraction of items per group (indexed by GroupId::value).
Vector GroupProportions(const Corpus& corpus);
Vector GroupProportions(const std::vector<GroupId>& labels, int num_groups);

nlohmann::json ProfileToJson(const QueryProfile& profile);
// Accepts either explicit "features" per group or a "feature_dim" (plus
// optional "separation"/"spread") to use the default geometry.
QueryProfile ProfileFromJson(const nlohmann::json& j);
nlohmann::json CorpusToJson(const Corpus& corpus);
Corpus CorpusFromJson(const nlohmann::json& j);

}  // namespace fairrank
