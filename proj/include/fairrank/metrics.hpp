#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairrank/common.hpp"
#include "fairrank/rerank.hpp"

namespace fairrank {

inline constexpr double kDefaultAttentionP = 0.36;

// Share of the top-k prefix belonging to `group`, divided by the group's
// share of the population. `ranked_groups` lists group labels in rank order.
double SkewAtK(std::span<const GroupId> ranked_groups, std::span<const double> population, GroupId group, int k);

// Geometric attention model: 100 * (1 - p)^(k - 1) * p.
double AttentionAtRank(double p, int k);

struct GroupAttention {
  double value = 0.0;
  bool absent = false;  // group does not occur in the list; value is 0
};

// Mean attention received by the members of `group` across the whole list.
GroupAttention AvgAttention(std::span<const GroupId> ranked_groups, GroupId group, double p);

// Discounted utility normalized by the discount mass of the list length, so
// the value is 1 only when every utility is 1.
double Ndcg(std::span<const double> utilities);
double Ndcg(const RankedList& list);

struct MetricReport {
  std::vector<std::optional<double>> skew_at_k;  // nullopt: undefined (zero population share)
  Vector avg_attention;
  std::vector<bool> attention_absent;
  double ndcg = 0.0;
  int k = 0;
  double p_attention = kDefaultAttentionP;
};

// Skew@k against `population`, attention and NDCG over the top-k prefix.
MetricReport ComputeReport(std::span<const GroupId> ranked_groups, std::span<const double> ranked_utilities,
                           std::span<const double> population, int k, double p = kDefaultAttentionP);

enum class MetricSelector { kSkew, kAttention };

struct EffectivenessInput {
  MetricReport oracle;
  MetricReport attacked;
  GroupId advantaged_group;
};

struct EffectivenessResult {
  double eta = 0.0;
  std::vector<GroupId> excluded;  // other groups skipped because their oracle value is 0 or undefined
};

double PercentChange(double oracle, double attacked);

// Percent change of the advantaged group minus the smallest percent change
// among the other groups, both relative to the oracle report.
EffectivenessResult AttackEffectiveness(const EffectivenessInput& input, MetricSelector metric);

}  // namespace fairrank
