#include "fairrank/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace fairrank {

namespace {

constexpr std::uint64_t kEmbeddingSeed = 0x656d'6265'6464'696eULL;

bool UtilityBefore(const RankedEntry& a, const RankedEntry& b) {
  if (a.utility != b.utility) return a.utility > b.utility;
  return a.id < b.id;
}

void CheckUniqueIds(const RankedList& list) {
  std::vector<ItemId> ids = list.ids();
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw DomainError("ranked list contains duplicate item ids");
  }
}

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::string ToString(RankOrigin origin) {
  switch (origin) {
    case RankOrigin::kBaseline: return "baseline";
    case RankOrigin::kFmmr: return "fmmr";
    case RankOrigin::kDetConstSort: return "detconstsort";
  }
  return "unknown";
}

std::vector<ItemId> RankedList::ids() const {
  std::vector<ItemId> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

Vector RankedList::utilities() const {
  Vector out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.utility);
  return out;
}

EmbeddingModel::EmbeddingModel(char variant, int input_dim, int embed_dim)
    : variant_(variant), input_dim_(input_dim), embed_dim_(embed_dim) {
  if (variant != 'A' && variant != 'B' && variant != 'C') {
    throw ConfigError(std::string("unknown embedding variant '") + variant + "'");
  }
  if (input_dim <= 0 || embed_dim <= 0) throw ConfigError("embedding dimensions must be positive");
  Rng rng(DeriveSeed(kEmbeddingSeed, {static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(input_dim),
                                      static_cast<std::uint64_t>(embed_dim)}));
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  weights_.resize(static_cast<std::size_t>(input_dim) * static_cast<std::size_t>(embed_dim));
  for (auto& w : weights_) w = scale * rng.Normal();
}

Vector EmbeddingModel::Embed(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_dim_) throw DomainError("embedding input has wrong dimension");
  Vector out(static_cast<std::size_t>(embed_dim_), 0.0);
  for (int r = 0; r < embed_dim_; ++r) {
    const double* row = weights_.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(input_dim_);
    double s = 0.0;
    for (int c = 0; c < input_dim_; ++c) s += row[c] * x[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = s > 0.0 ? s : 0.0;
  }
  return out;
}

double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("cosine similarity of vectors with different sizes");
  const double na = Norm(a);
  const double nb = Norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

RankedList RankByUtility(std::span<const Item> items) {
  if (items.empty()) throw DomainError("cannot rank an empty item set");
  RankedList out;
  out.origin = RankOrigin::kBaseline;
  out.entries.reserve(items.size());
  for (const auto& it : items) out.entries.push_back({it.id, it.utility});
  CheckUniqueIds(out);
  std::sort(out.entries.begin(), out.entries.end(), UtilityBefore);
  return out;
}

RankedList RankByUtility(const RankedList& list) {
  if (list.empty()) throw DomainError("cannot rank an empty list");
  RankedList out = list;
  out.origin = RankOrigin::kBaseline;
  out.diagnostics.clear();
  std::sort(out.entries.begin(), out.entries.end(), UtilityBefore);
  return out;
}

RankedList FmmrRerank(const RankedList& list, std::span<const Item> items, const EmbeddingModel& embedding,
                      const FmmrParams& params) {
  if (list.empty()) throw DomainError("FMMR on an empty list");
  if (!(params.lambda >= 0.0 && params.lambda <= 1.0)) throw ConfigError("FMMR lambda must lie in [0, 1]");
  if (params.k_out <= 0) throw ConfigError("FMMR k_out must be positive");
  if (static_cast<std::size_t>(params.k_out) > list.size()) throw DomainError("FMMR k_out exceeds list length");
  CheckUniqueIds(list);

  std::unordered_map<ItemId, std::size_t> index;
  for (std::size_t i = 0; i < items.size(); ++i) index.emplace(items[i].id, i);

  // Candidates in utility order; position 0 is the seed.
  RankedList sorted = RankByUtility(list);
  const std::size_t n = sorted.size();
  std::vector<Vector> emb(n);
  Vector norms(n);
  RankedList out;
  out.origin = RankOrigin::kFmmr;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = index.find(sorted.entries[i].id);
    if (it == index.end()) throw DomainError("FMMR: list item missing from item collection");
    emb[i] = embedding.Embed(items[it->second].features);
    norms[i] = Norm(emb[i]);
    if (norms[i] == 0.0) {
      out.diagnostics.push_back("zero_norm_embedding:" + std::to_string(sorted.entries[i].id));
    }
  }

  auto cosine = [&](const Vector& a, double na, const Vector& b, double nb) {
    if (na == 0.0 || nb == 0.0) return 0.0;
    double dot = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
    return dot / (na * nb);
  };

  const double lambda = params.lambda;
  std::vector<bool> taken(n, false);
  // Running redundancy per candidate: max similarity, or similarity to the
  // centroid (recomputed after every selection).
  Vector redundancy(n, -std::numeric_limits<double>::infinity());
  Vector centroid(static_cast<std::size_t>(embedding.embed_dim()), 0.0);
  std::size_t selected_count = 0;

  auto select = [&](std::size_t s) {
    taken[s] = true;
    out.entries.push_back(sorted.entries[s]);
    ++selected_count;
    if (params.diversity == FmmrDiversity::kMaxItemSimilarity) {
      for (std::size_t c = 0; c < n; ++c) {
        if (!taken[c]) redundancy[c] = std::max(redundancy[c], cosine(emb[c], norms[c], emb[s], norms[s]));
      }
    } else {
      for (std::size_t j = 0; j < centroid.size(); ++j) {
        centroid[j] += (emb[s][j] - centroid[j]) / static_cast<double>(selected_count);
      }
      const double nc = Norm(centroid);
      for (std::size_t c = 0; c < n; ++c) {
        if (!taken[c]) redundancy[c] = cosine(emb[c], norms[c], centroid, nc);
      }
    }
  };

  select(0);
  while (out.entries.size() < static_cast<std::size_t>(params.k_out)) {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (taken[c]) continue;
      const double score = lambda * sorted.entries[c].utility - (1.0 - lambda) * redundancy[c];
      if (best == n || score > best_score ||
          (score == best_score && sorted.entries[c].id < sorted.entries[best].id)) {
        best = c;
        best_score = score;
      }
    }
    select(best);
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (!taken[c]) out.entries.push_back(sorted.entries[c]);
  }
  return out;
}

RankedList DetConstSort(const RankedList& list, const LabelMap& labels, int num_groups, int k_out) {
  if (list.empty()) throw DomainError("DetConstSort on an empty list");
  if (num_groups <= 0) throw ConfigError("DetConstSort needs at least one group");
  if (k_out <= 0) throw ConfigError("DetConstSort k_out must be positive");
  if (static_cast<std::size_t>(k_out) > list.size()) throw DomainError("DetConstSort k_out exceeds list length");
  CheckUniqueIds(list);

  const RankedList sorted = RankByUtility(list);
  const auto G = static_cast<std::size_t>(num_groups);
  std::vector<std::vector<RankedEntry>> queues(G);
  for (const auto& e : sorted.entries) {
    auto it = labels.find(e.id);
    if (it == labels.end()) throw DomainError("DetConstSort: no label for item " + std::to_string(e.id));
    if (it->second.value < 0 || it->second.value >= num_groups) {
      throw DomainError("DetConstSort: label outside group range");
    }
    queues[static_cast<std::size_t>(it->second.value)].push_back(e);
  }
  const auto n = static_cast<long long>(sorted.size());
  std::vector<long long> group_size(G);
  for (std::size_t g = 0; g < G; ++g) group_size[g] = static_cast<long long>(queues[g].size());

  struct Slot {
    RankedEntry entry;
    long long max_rank;  // 1-based; the slot may never sit below this rank
  };
  std::vector<Slot> placed;
  std::vector<std::size_t> next(G, 0);
  std::vector<long long> min_counts(G, 0);

  long long k = 0;
  while (placed.size() < static_cast<std::size_t>(k_out)) {
    ++k;
    if (k > n) throw InternalError("DetConstSort: constraints could not be satisfied");
    // floor(k * p_g) with p_g = |g| / n, in exact integer arithmetic.
    std::vector<std::size_t> changed;
    std::vector<long long> floors(G);
    for (std::size_t g = 0; g < G; ++g) {
      floors[g] = (k * group_size[g]) / n;
      if (floors[g] > min_counts[g]) changed.push_back(g);
    }
    std::sort(changed.begin(), changed.end(), [&](std::size_t a, std::size_t b) {
      return UtilityBefore(queues[a][next[a]], queues[b][next[b]]);
    });
    for (std::size_t g : changed) {
      if (next[g] >= queues[g].size()) throw InternalError("DetConstSort: group exhausted");
      placed.push_back({queues[g][next[g]++], k});
      // Bubble the new item up while it beats the item above and that item
      // may legally move one rank down.
      std::size_t pos = placed.size() - 1;
      while (pos > 0 && placed[pos - 1].max_rank >= static_cast<long long>(pos) + 1 &&
             placed[pos - 1].entry.utility < placed[pos].entry.utility) {
        std::swap(placed[pos - 1], placed[pos]);
        --pos;
      }
    }
    min_counts = floors;
  }

  RankedList out;
  out.origin = RankOrigin::kDetConstSort;
  std::map<ItemId, bool> used;
  for (std::size_t i = 0; i < static_cast<std::size_t>(k_out); ++i) {
    out.entries.push_back(placed[i].entry);
    used[placed[i].entry.id] = true;
  }
  for (const auto& e : sorted.entries) {
    if (!used.count(e.id)) out.entries.push_back(e);
  }
  return out;
}

void WriteJsonLines(std::ostream& os, const RankedList& list, const Corpus& corpus,
                    const std::optional<LabelMap>& inferred) {
  std::unordered_map<ItemId, GroupId> truth;
  for (const auto& it : corpus.items) truth.emplace(it.id, it.group);
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& e = list.entries[i];
    nlohmann::json j;
    j["position"] = i + 1;
    j["item_id"] = e.id;
    j["utility"] = e.utility;
    auto t = truth.find(e.id);
    if (t == truth.end()) throw DomainError("ranked item missing from corpus");
    j["group_true"] = corpus.groups().name(t->second);
    if (inferred) {
      auto g = inferred->find(e.id);
      if (g != inferred->end()) j["group_inferred"] = corpus.groups().name(g->second);
    }
    os << j.dump() << '\n';
  }
}

}  // namespace fairrank
