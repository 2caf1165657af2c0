#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairrank/common.hpp"
#include "fairrank/corpus.hpp"
#include "fairrank/inference.hpp"
#include "json.hpp"

namespace fairrank {

// Which groups the adversary perturbs and where it wants them to land.
//   targeted-pair:      sources -> target, other groups preserved
//   all-to-target:      every group -> target
//   source-untargeted:  sources pushed away from their true label
struct AttackObjective {
  enum class Kind { kTargetedPair, kAllToTarget, kSourceUntargeted };

  Kind kind = Kind::kTargetedPair;
  std::vector<GroupId> sources;  // ignored for all-to-target
  std::optional<GroupId> target;

  static AttackObjective Pair(GroupId source, GroupId target);
  static AttackObjective AllTo(GroupId target);
  static AttackObjective Untargeted(GroupId source);

  bool IsSource(GroupId g) const;
  // Loss direction for an item of true group `truth` that is a source.
  TargetSpec SourceTarget(GroupId truth) const;
  void Validate(int num_groups) const;  // throws ConfigError

  // "dark_man->light_man", "any->light_man", "light_man->any"
  std::string Name(const GroupSchema& groups) const;
  static AttackObjective Parse(const std::string& text, const GroupSchema& groups);
};

struct GeneratorTrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double retain_weight = 1.0;  // beta on the non-source preservation loss
  int hidden_width = 32;
  std::uint64_t seed = 1;

  void Validate() const;
};

// Residual generator g(x) = x + eps * tanh(h(x)), h a one-hidden-layer tanh
// network. The tanh squashing keeps ||g(x) - x||_inf <= eps for every input.
class PerturbationGenerator {
 public:
  PerturbationGenerator() = default;
  PerturbationGenerator(std::vector<DenseLayer> layers, double epsilon, AttackObjective objective,
                        std::string target_classifier_name);

  // h = 0 at initialization, so the untrained generator is the identity.
  static PerturbationGenerator Initialize(int dim, int hidden_width, double epsilon, AttackObjective objective,
                                          std::string target_classifier_name, std::uint64_t seed);

  Vector Apply(std::span<const double> x) const;

  double epsilon() const { return epsilon_; }
  const AttackObjective& objective() const { return objective_; }
  const std::string& target_classifier_name() const { return target_classifier_name_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  int dim() const { return layers_.front().in; }

  // Forward x -> g(x) and backprop of dL/dg(x) into parameter gradients.
  struct Trace {
    Vector hidden;
    Vector squashed;  // tanh(h(x))
    Vector output;
  };
  Trace Run(std::span<const double> x) const;
  void AccumulateParamGrad(std::span<const double> x, const Trace& trace, std::span<const double> d_output,
                           std::vector<DenseLayer>& grads) const;

 private:
  std::vector<DenseLayer> layers_;
  double epsilon_ = 0.0;
  AttackObjective objective_;
  std::string target_classifier_name_;
};

struct GeneratorTrainRecord {
  Vector epoch_loss;
  std::size_t source_count = 0;
  std::size_t retain_count = 0;
};

struct TrainedGenerator {
  PerturbationGenerator generator;
  GeneratorTrainRecord record;
};

// Minimizes mean source loss + beta * mean retain loss through the frozen
// classifier. Each step draws one batch of source items and one of
// non-source items.
TrainedGenerator TrainCgap(const Classifier& clf, const Corpus& train, const AttackObjective& objective,
                           double epsilon, const GeneratorTrainConfig& cfg);

// Per-item projected signed-gradient descent inside the L_inf ball.
Vector PgdPerturb(const Classifier& clf, std::span<const double> x, const TargetSpec& target, double epsilon,
                  int steps, double step_size);

struct AttackApplication {
  double pr = 0.0;
  std::uint64_t seed = 0;
  std::set<ItemId> perturbed_ids;
};

enum class SelectionMode {
  kBernoulli,   // each item independently with probability pr
  kExactCount   // exactly floor(pr * n) items
};

// Draw for item `id`: counter-based, so selection is independent of item
// order and of how the work is split.
double SelectionDraw(std::uint64_t seed, ItemId id);

std::pair<Corpus, AttackApplication> ApplyAttack(const Corpus& corpus, const PerturbationGenerator& gen, double pr,
                                                 std::uint64_t seed, SelectionMode mode = SelectionMode::kBernoulli);

struct MisclassificationStats {
  std::optional<double> targeted_success;  // sources predicted as target (or as anything wrong, if untargeted)
  std::optional<double> source_accuracy;
  std::optional<double> other_accuracy;
  std::size_t source_count = 0;
  std::size_t other_count = 0;
};

MisclassificationStats MisclassificationRate(const Classifier& clf, const Corpus& corpus,
                                             const AttackObjective& objective);

inline constexpr int kGeneratorFormatVersion = 1;
nlohmann::json GeneratorToJson(const PerturbationGenerator& gen, const GroupSchema& groups);
PerturbationGenerator GeneratorFromJson(const nlohmann::json& j, const GroupSchema& groups);

}  // namespace fairrank
