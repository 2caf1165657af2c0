#include "fairrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fairrank {

double SkewAtK(std::span<const GroupId> ranked_groups, std::span<const double> population, GroupId group, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > ranked_groups.size()) throw DomainError("Skew@k: k out of range");
  const auto g = static_cast<std::size_t>(group.value);
  if (g >= population.size()) throw DomainError("Skew@k: group outside population vector");
  const auto in_prefix = std::count(ranked_groups.begin(), ranked_groups.begin() + k, group);
  if (population[g] <= 0.0) {
    throw UndefinedMetricError("Skew@k undefined: group has zero population share" +
                               std::string(in_prefix > 0 ? " but appears in the prefix" : ""));
  }
  return (static_cast<double>(in_prefix) / static_cast<double>(k)) / population[g];
}

double AttentionAtRank(double p, int k) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("attention parameter p must lie in (0, 1)");
  if (k < 1) throw DomainError("attention rank must be >= 1");
  return 100.0 * std::pow(1.0 - p, k - 1) * p;
}

GroupAttention AvgAttention(std::span<const GroupId> ranked_groups, GroupId group, double p) {
  double total = 0.0;
  int members = 0;
  for (std::size_t i = 0; i < ranked_groups.size(); ++i) {
    if (ranked_groups[i] == group) {
      total += AttentionAtRank(p, static_cast<int>(i) + 1);
      ++members;
    }
  }
  if (members == 0) return {0.0, true};
  return {total / members, false};
}

double Ndcg(std::span<const double> utilities) {
  if (utilities.empty()) throw DomainError("NDCG of an empty list");
  double dcg = 0.0;
  double z = 0.0;
  for (std::size_t i = 0; i < utilities.size(); ++i) {
    const double discount = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    dcg += utilities[i] * discount;
    z += discount;
  }
  return dcg / z;
}

double Ndcg(const RankedList& list) {
  const Vector u = list.utilities();
  return Ndcg(u);
}

MetricReport ComputeReport(std::span<const GroupId> ranked_groups, std::span<const double> ranked_utilities,
                           std::span<const double> population, int k, double p) {
  if (ranked_groups.size() != ranked_utilities.size()) throw DomainError("report: label/utility length mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > ranked_groups.size()) throw DomainError("report: k out of range");
  MetricReport r;
  r.k = k;
  r.p_attention = p;
  const auto G = population.size();
  r.skew_at_k.resize(G);
  r.avg_attention.resize(G);
  r.attention_absent.resize(G);
  const auto prefix = ranked_groups.first(static_cast<std::size_t>(k));
  for (std::size_t g = 0; g < G; ++g) {
    const GroupId id{static_cast<int>(g)};
    if (population[g] > 0.0) r.skew_at_k[g] = SkewAtK(ranked_groups, population, id, k);
    const auto att = AvgAttention(prefix, id, p);
    r.avg_attention[g] = att.value;
    r.attention_absent[g] = att.absent;
  }
  r.ndcg = Ndcg(ranked_utilities.first(static_cast<std::size_t>(k)));
  return r;
}

double PercentChange(double oracle, double attacked) { return 100.0 * (attacked - oracle) / oracle; }

EffectivenessResult AttackEffectiveness(const EffectivenessInput& input, MetricSelector metric) {
  const auto& o = input.oracle;
  const auto& a = input.attacked;
  if (o.k != a.k || o.p_attention != a.p_attention) throw DomainError("eta: reports computed at different k or p");

  auto value = [&](const MetricReport& r, std::size_t g) -> std::optional<double> {
    if (metric == MetricSelector::kSkew) return r.skew_at_k.at(g);
    return r.avg_attention.at(g);
  };
  const std::size_t G = metric == MetricSelector::kSkew ? o.skew_at_k.size() : o.avg_attention.size();
  const auto target = static_cast<std::size_t>(input.advantaged_group.value);
  if (target >= G) throw DomainError("eta: advantaged group outside report");

  const auto o_target = value(o, target);
  const auto a_target = value(a, target);
  if (!o_target || *o_target == 0.0 || !a_target) {
    throw UndefinedMetricError("eta undefined: oracle value of the advantaged group is zero");
  }

  EffectivenessResult result;
  double min_change = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < G; ++g) {
    if (g == target) continue;
    const auto og = value(o, g);
    const auto ag = value(a, g);
    if (!og || *og == 0.0 || !ag) {
      result.excluded.push_back(GroupId{static_cast<int>(g)});
      continue;
    }
    min_change = std::min(min_change, PercentChange(*og, *ag));
  }
  if (!std::isfinite(min_change)) {
    throw UndefinedMetricError("eta undefined: no other group has a nonzero oracle value");
  }
  result.eta = PercentChange(*o_target, *a_target) - min_change;
  return result;
}

}  // namespace fairrank
