#include "fairrank/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairrank {

namespace {

constexpr std::uint64_t kGeometrySeed = 0x6765'6f6d'6574'7279ULL;
constexpr int kTruncationAttempts = 1000;

Vector RandomSigns(Rng& rng, int dim) {
  Vector v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.Bernoulli(0.5) ? 1.0 : -1.0;
  return v;
}

double TruncatedNormal01(Rng& rng, const UtilityParams& p) {
  double draw = p.mean;
  for (int attempt = 0; attempt < kTruncationAttempts; ++attempt) {
    draw = rng.Normal(p.mean, p.stddev);
    if (draw >= 0.0 && draw <= 1.0) return draw;
  }
  return std::clamp(draw, 0.0, 1.0);
}

GroupId DrawGroup(Rng& rng, const Vector& cumulative) {
  const double u = rng.Uniform();
  for (std::size_t g = 0; g < cumulative.size(); ++g) {
    if (u < cumulative[g]) return GroupId{static_cast<int>(g)};
  }
  // u is below the final cumulative value (1) unless rounding left a gap;
  // fall back to the last group with positive weight.
  for (std::size_t g = cumulative.size(); g-- > 0;) {
    if (g == 0 || cumulative[g] > cumulative[g - 1]) return GroupId{static_cast<int>(g)};
  }
  return GroupId{0};
}

}  // namespace

int QueryProfile::feature_dim() const {
  return features.empty() ? 0 : static_cast<int>(features.front().centroid.size());
}

Vector QueryProfile::NormalizedWeights() const {
  const double total = std::accumulate(group_weights.begin(), group_weights.end(), 0.0);
  Vector w(group_weights.size());
  for (std::size_t g = 0; g < w.size(); ++g) w[g] = group_weights[g] / total;
  return w;
}

void QueryProfile::Validate() const {
  const auto g = static_cast<std::size_t>(groups.size());
  if (g == 0) throw ConfigError("profile '" + name + "': empty group schema");
  if (group_weights.size() != g || utility.size() != g || features.size() != g) {
    throw ConfigError("profile '" + name + "': per-group parameter count does not match group schema");
  }
  double total = 0.0;
  for (double w : group_weights) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("profile '" + name + "': negative or non-finite group weight");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("profile '" + name + "': group weights sum to zero");
  for (const auto& u : utility) {
    if (!(u.stddev > 0.0) || !std::isfinite(u.mean)) {
      throw ConfigError("profile '" + name + "': utility stddev must be positive");
    }
  }
  const int dim = feature_dim();
  if (dim <= 0) throw ConfigError("profile '" + name + "': feature dimension must be positive");
  for (const auto& f : features) {
    if (static_cast<int>(f.centroid.size()) != dim) {
      throw ConfigError("profile '" + name + "': centroids have inconsistent dimensions");
    }
    if (!(f.spread > 0.0)) throw ConfigError("profile '" + name + "': feature spread must be positive");
    for (double c : f.centroid) {
      if (!std::isfinite(c)) throw ConfigError("profile '" + name + "': non-finite centroid");
    }
  }
  if (!(atypical_rate >= 0.0 && atypical_rate <= 1.0)) {
    throw ConfigError("profile '" + name + "': atypical_rate must lie in [0, 1]");
  }
  if (list_size <= 0) throw ConfigError("profile '" + name + "': list_size must be positive");
  if (list_size < groups.size()) throw ConfigError("profile '" + name + "': list_size smaller than group count");
}

const Item& Corpus::item(ItemId id) const {
  for (const auto& it : items) {
    if (it.id == id) return it;
  }
  throw DomainError("item id " + std::to_string(id) + " not in corpus");
}

std::vector<FeatureParams> DefaultFeatureParams(const GroupSchema& groups, int dim, double separation,
                                                double spread) {
  if (dim <= 0) throw ConfigError("feature dimension must be positive");
  Rng rng(kGeometrySeed);
  std::vector<FeatureParams> out;
  if (groups == GroupSchema::Default()) {
    const Vector skin_axis = RandomSigns(rng, dim);
    const Vector gender_axis = RandomSigns(rng, dim);
    // (skin, gender) signs for light_man, light_woman, dark_man, dark_woman.
    constexpr double kSigns[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    for (const auto& s : kSigns) {
      FeatureParams fp{Vector(static_cast<std::size_t>(dim)), spread};
      for (int j = 0; j < dim; ++j) {
        fp.centroid[j] = separation * (s[0] * skin_axis[j] + s[1] * gender_axis[j]);
      }
      out.push_back(std::move(fp));
    }
    return out;
  }
  for (int g = 0; g < groups.size(); ++g) {
    Vector c = RandomSigns(rng, dim);
    for (auto& x : c) x *= separation;
    out.push_back({std::move(c), spread});
  }
  return out;
}

Vector DefaultGroupWeights() { return {5216.0, 2536.0, 714.0, 226.0}; }

std::vector<std::string> BundledProfileNames() { return {"tennis", "pizza", "table", "population"}; }

QueryProfile BundledProfile(const std::string& name) {
  QueryProfile p;
  p.name = name;
  p.groups = GroupSchema::Default();
  p.group_weights = DefaultGroupWeights();
  p.features = DefaultFeatureParams(p.groups);
  p.atypical_rate = kDefaultAtypicalRate;
  // Order: light_man, light_woman, dark_man, dark_woman.
  if (name == "tennis") {
    p.list_size = 131;
    p.utility = {{0.78, 0.05}, {0.66, 0.05}, {0.60, 0.05}, {0.52, 0.05}};
  } else if (name == "pizza") {
    // Minority groups carry the higher mean utility for this query.
    p.list_size = 75;
    p.utility = {{0.64, 0.05}, {0.62, 0.05}, {0.70, 0.05}, {0.68, 0.05}};
  } else if (name == "table") {
    p.list_size = 124;
    p.utility = {{0.72, 0.05}, {0.66, 0.05}, {0.62, 0.05}, {0.58, 0.05}};
  } else if (name == "population") {
    p.list_size = 2000;
    p.utility = {{0.70, 0.05}, {0.64, 0.05}, {0.60, 0.05}, {0.56, 0.05}};
  } else {
    throw ConfigError("unknown bundled profile '" + name + "'");
  }
  return p;
}

Corpus GenerateCorpus(const QueryProfile& profile, std::uint64_t seed) {
  profile.Validate();
  const Vector weights = profile.NormalizedWeights();
  Vector cumulative(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cumulative.begin());

  Rng rng(DeriveSeed(seed, "corpus", {HashString(profile.name)}));
  Corpus corpus;
  corpus.profile = profile;
  corpus.seed = seed;
  corpus.items.reserve(static_cast<std::size_t>(profile.list_size));
  const int dim = profile.feature_dim();
  const auto G = static_cast<std::size_t>(profile.groups.size());
  for (int i = 0; i < profile.list_size; ++i) {
    Item item;
    item.id = static_cast<ItemId>(i);
    item.group = DrawGroup(rng, cumulative);
    const auto g = static_cast<std::size_t>(item.group.value);
    item.utility = TruncatedNormal01(rng, profile.utility[g]);
    auto appearance = g;
    if (profile.atypical_rate > 0.0 && G > 1 && rng.Uniform() < profile.atypical_rate) {
      const auto other = static_cast<std::size_t>(rng.Below(G - 1));
      appearance = other < g ? other : other + 1;
    }
    const auto& fp = profile.features[appearance];
    item.features.resize(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) item.features[j] = rng.Normal(fp.centroid[j], fp.spread);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

std::pair<Corpus, Corpus> SplitTrainEval(const Corpus& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(corpus.items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(DeriveSeed(seed, "split"));
  rng.Shuffle(order);
  const auto first_size = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(order.size())));
  // Keep each half in the original item order so downstream output does not
  // depend on the shuffle beyond membership.
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_size));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(first_size), order.end());

  Corpus a, b;
  a.profile = b.profile = corpus.profile;
  a.seed = b.seed = corpus.seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < first_size ? a : b).items.push_back(corpus.items[order[i]]);
  }
  return {std::move(a), std::move(b)};
}

Vector GroupProportions(const std::vector<GroupId>& labels, int num_groups) {
  if (labels.empty()) throw DomainError("group proportions of an empty population are undefined");
  Vector counts(static_cast<std::size_t>(num_groups), 0.0);
  for (auto g : labels) {
    if (g.value < 0 || g.value >= num_groups) throw DomainError("label outside group schema");
    counts[static_cast<std::size_t>(g.value)] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(labels.size());
  return counts;
}

Vector GroupProportions(const Corpus& corpus) {
  std::vector<GroupId> labels;
  labels.reserve(corpus.items.size());
  for (const auto& it : corpus.items) labels.push_back(it.group);
  return GroupProportions(labels, corpus.groups().size());
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json ProfileToJson(const QueryProfile& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["groups"] = p.groups.names();
  j["list_size"] = p.list_size;
  j["atypical_rate"] = p.atypical_rate;
  for (int g = 0; g < p.groups.size(); ++g) {
    const auto& name = p.groups.name(GroupId{g});
    const auto i = static_cast<std::size_t>(g);
    j["group_weights"][name] = p.group_weights[i];
    j["utility"][name] = {{"mean", p.utility[i].mean}, {"stddev", p.utility[i].stddev}};
    j["features"][name] = {{"centroid", p.features[i].centroid}, {"spread", p.features[i].spread}};
  }
  return j;
}

QueryProfile ProfileFromJson(const nlohmann::json& j) {
  try {
    QueryProfile p;
    p.name = j.at("name").get<std::string>();
    p.groups = j.contains("groups") ? GroupSchema(j.at("groups").get<std::vector<std::string>>())
                                    : GroupSchema::Default();
    p.list_size = j.at("list_size").get<int>();
    p.atypical_rate = j.value("atypical_rate", 0.0);
    const auto G = static_cast<std::size_t>(p.groups.size());
    p.group_weights.assign(G, 0.0);
    p.utility.assign(G, {});
    for (const auto& [name, w] : j.at("group_weights").items()) {
      p.group_weights[static_cast<std::size_t>(p.groups.find(name).value)] = w.get<double>();
    }
    for (int g = 0; g < p.groups.size(); ++g) {
      const auto& u = j.at("utility").at(p.groups.name(GroupId{g}));
      p.utility[static_cast<std::size_t>(g)] = {u.at("mean").get<double>(), u.at("stddev").get<double>()};
    }
    if (j.contains("features")) {
      p.features.resize(G);
      for (int g = 0; g < p.groups.size(); ++g) {
        const auto& f = j.at("features").at(p.groups.name(GroupId{g}));
        p.features[static_cast<std::size_t>(g)] = {f.at("centroid").get<Vector>(), f.value("spread", 1.0)};
      }
    } else {
      p.features = DefaultFeatureParams(p.groups, j.value("feature_dim", kDefaultFeatureDim),
                                        j.value("separation", 0.6), j.value("spread", 1.0));
    }
    p.Validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed query profile: ") + e.what());
  }
}

nlohmann::json CorpusToJson(const Corpus& c) {
  nlohmann::json j;
  j["format_version"] = kCorpusFormatVersion;
  j["seed"] = c.seed;
  j["profile"] = ProfileToJson(c.profile);
  auto& items = j["items"] = nlohmann::json::array();
  for (const auto& it : c.items) {
    items.push_back({{"id", it.id},
                     {"group", c.groups().name(it.group)},
                     {"utility", it.utility},
                     {"features", it.features}});
  }
  return j;
}

Corpus CorpusFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCorpusFormatVersion) {
      throw ConfigError("unsupported corpus format_version");
    }
    Corpus c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.profile = ProfileFromJson(j.at("profile"));
    for (const auto& ji : j.at("items")) {
      Item it;
      it.id = ji.at("id").get<ItemId>();
      it.group = c.groups().find(ji.at("group").get<std::string>());
      it.utility = ji.at("utility").get<double>();
      it.features = ji.at("features").get<Vector>();
      c.items.push_back(std::move(it));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed corpus file: ") + e.what());
  }
}

}  // namespace fairrank
