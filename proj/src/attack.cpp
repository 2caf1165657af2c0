#include "fairrank/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairrank {

AttackObjective AttackObjective::Pair(GroupId source, GroupId target) {
  return {Kind::kTargetedPair, {source}, target};
}

AttackObjective AttackObjective::AllTo(GroupId target) { return {Kind::kAllToTarget, {}, target}; }

AttackObjective AttackObjective::Untargeted(GroupId source) {
  return {Kind::kSourceUntargeted, {source}, std::nullopt};
}

bool AttackObjective::IsSource(GroupId g) const {
  if (kind == Kind::kAllToTarget) return true;
  return std::find(sources.begin(), sources.end(), g) != sources.end();
}

TargetSpec AttackObjective::SourceTarget(GroupId truth) const {
  if (kind == Kind::kSourceUntargeted) return TargetSpec::AwayFrom(truth);
  return TargetSpec::Toward(*target);
}

void AttackObjective::Validate(int num_groups) const {
  auto in_range = [&](GroupId g) { return g.value >= 0 && g.value < num_groups; };
  switch (kind) {
    case Kind::kTargetedPair:
      if (sources.empty() || !target) throw ConfigError("targeted-pair objective needs sources and a target");
      if (IsSource(*target)) throw ConfigError("targeted-pair objective: target is also a source");
      break;
    case Kind::kAllToTarget:
      if (!target) throw ConfigError("all-to-target objective needs a target");
      break;
    case Kind::kSourceUntargeted:
      if (sources.empty()) throw ConfigError("source-untargeted objective needs sources");
      if (target) throw ConfigError("source-untargeted objective must not name a target");
      break;
  }
  for (auto g : sources) {
    if (!in_range(g)) throw ConfigError("objective source outside group schema");
  }
  if (target && !in_range(*target)) throw ConfigError("objective target outside group schema");
}

std::string AttackObjective::Name(const GroupSchema& groups) const {
  std::string lhs;
  if (kind == Kind::kAllToTarget) {
    lhs = "any";
  } else {
    for (std::size_t i = 0; i < sources.size(); ++i) lhs += (i ? "+" : "") + groups.name(sources[i]);
  }
  return lhs + "->" + (target ? groups.name(*target) : std::string("any"));
}

AttackObjective AttackObjective::Parse(const std::string& text, const GroupSchema& groups) {
  const auto arrow = text.find("->");
  if (arrow == std::string::npos) throw ConfigError("objective '" + text + "' is not of the form source->target");
  const std::string lhs = text.substr(0, arrow);
  const std::string rhs = text.substr(arrow + 2);
  AttackObjective obj;
  if (lhs == "any" && rhs == "any") throw ConfigError("objective any->any is not supported");
  if (lhs == "any") {
    obj = AllTo(groups.find(rhs));
  } else {
    std::vector<GroupId> sources;
    std::size_t start = 0;
    while (start <= lhs.size()) {
      const auto plus = lhs.find('+', start);
      sources.push_back(groups.find(lhs.substr(start, plus == std::string::npos ? std::string::npos : plus - start)));
      if (plus == std::string::npos) break;
      start = plus + 1;
    }
    if (rhs == "any") {
      obj = {Kind::kSourceUntargeted, sources, std::nullopt};
    } else {
      obj = {Kind::kTargetedPair, sources, groups.find(rhs)};
    }
  }
  obj.Validate(groups.size());
  return obj;
}

void GeneratorTrainConfig::Validate() const {
  if (epochs < 0) throw ConfigError("generator epochs must be nonnegative");
  if (batch_size <= 0) throw ConfigError("generator batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("generator learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("generator momentum must lie in [0, 1)");
  if (!(retain_weight >= 0.0)) throw ConfigError("retain_weight must be nonnegative");
  if (hidden_width <= 0) throw ConfigError("generator hidden_width must be positive");
}

PerturbationGenerator::PerturbationGenerator(std::vector<DenseLayer> layers, double epsilon,
                                             AttackObjective objective, std::string target_classifier_name)
    : layers_(std::move(layers)),
      epsilon_(epsilon),
      objective_(std::move(objective)),
      target_classifier_name_(std::move(target_classifier_name)) {
  if (!(epsilon_ >= 0.0) || !std::isfinite(epsilon_)) throw ConfigError("epsilon must be finite and nonnegative");
  if (layers_.size() != 2 || layers_[0].out != layers_[1].in || layers_[1].out != layers_[0].in) {
    throw ConfigError("generator must be a d -> h -> d network");
  }
}

PerturbationGenerator PerturbationGenerator::Initialize(int dim, int hidden_width, double epsilon,
                                                        AttackObjective objective,
                                                        std::string target_classifier_name, std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, "generator-init"));
  std::vector<DenseLayer> layers;
  layers.push_back(MakeDenseLayer(dim, hidden_width, rng));
  DenseLayer out = MakeDenseLayer(hidden_width, dim, rng);
  std::fill(out.weights.begin(), out.weights.end(), 0.0);
  layers.push_back(std::move(out));
  return PerturbationGenerator(std::move(layers), epsilon, std::move(objective), std::move(target_classifier_name));
}

PerturbationGenerator::Trace PerturbationGenerator::Run(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim()) throw DomainError("generator input has wrong dimension");
  Trace t;
  t.hidden.resize(static_cast<std::size_t>(layers_[0].out));
  layers_[0].Apply(x, t.hidden);
  for (auto& v : t.hidden) v = std::tanh(v);
  t.squashed.resize(x.size());
  layers_[1].Apply(t.hidden, t.squashed);
  t.output.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    t.squashed[j] = std::tanh(t.squashed[j]);
    t.output[j] = x[j] + epsilon_ * t.squashed[j];
  }
  return t;
}

Vector PerturbationGenerator::Apply(std::span<const double> x) const { return Run(x).output; }

void PerturbationGenerator::AccumulateParamGrad(std::span<const double> x, const Trace& trace,
                                                std::span<const double> d_output,
                                                std::vector<DenseLayer>& grads) const {
  Vector d_pre(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double s = trace.squashed[j];
    d_pre[j] = d_output[j] * epsilon_ * (1.0 - s * s);
  }
  layers_[1].AccumulateParamGrad(trace.hidden, d_pre, grads[1]);
  Vector d_hidden(trace.hidden.size(), 0.0);
  layers_[1].BackpropInput(d_pre, d_hidden);
  for (std::size_t j = 0; j < d_hidden.size(); ++j) {
    const double h = trace.hidden[j];
    d_hidden[j] *= 1.0 - h * h;
  }
  layers_[0].AccumulateParamGrad(x, d_hidden, grads[0]);
}

TrainedGenerator TrainCgap(const Classifier& clf, const Corpus& train, const AttackObjective& objective,
                           double epsilon, const GeneratorTrainConfig& cfg) {
  cfg.Validate();
  objective.Validate(train.groups().size());
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and nonnegative");
  if (train.empty()) throw ConfigError("generator training corpus is empty");
  const int dim = static_cast<int>(train.items.front().features.size());
  if (dim != clf.input_dim()) throw ConfigError("classifier and corpus feature dimensions differ");
  if (clf.num_groups() != train.groups().size()) throw ConfigError("classifier and corpus group counts differ");

  std::vector<std::size_t> source, retain;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (objective.IsSource(train.items[i].group) ? source : retain).push_back(i);
  }
  if (source.empty()) throw ConfigError("generator training data contains no source-group items");

  PerturbationGenerator gen = PerturbationGenerator::Initialize(dim, cfg.hidden_width, epsilon, objective,
                                                                clf.variant_name(), cfg.seed);
  TrainedGenerator result{gen, {}};
  result.record.source_count = source.size();
  result.record.retain_count = retain.size();
  const bool use_retain = !retain.empty() && cfg.retain_weight > 0.0;

  auto& layers = result.generator.mutable_layers();
  std::vector<DenseLayer> velocity;
  for (const auto& l : layers) velocity.push_back(l.ZerosLike());

  Rng rng(DeriveSeed(cfg.seed, "generator-batches"));
  rng.Shuffle(source);
  rng.Shuffle(retain);
  std::size_t source_pos = 0, retain_pos = 0;
  auto next = [&](std::vector<std::size_t>& pool, std::size_t& pos) {
    if (pos == pool.size()) {
      rng.Shuffle(pool);
      pos = 0;
    }
    return pool[pos++];
  };

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t longest = std::max(source.size(), use_retain ? retain.size() : std::size_t{0});
  const std::size_t steps_per_epoch = (longest + batch - 1) / batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<DenseLayer> grads;
      for (const auto& l : layers) grads.push_back(l.ZerosLike());
      double step_loss = 0.0;

      auto accumulate = [&](const Item& it, const TargetSpec& spec, double weight) {
        const auto trace = result.generator.Run(it.features);
        auto lg = clf.LossAndGradInput(trace.output, spec);
        for (auto& g : lg.grad) g *= weight;
        result.generator.AccumulateParamGrad(it.features, trace, lg.grad, grads);
        step_loss += weight * lg.loss;
      };
      const double source_weight = 1.0 / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const Item& it = train.items[next(source, source_pos)];
        accumulate(it, objective.SourceTarget(it.group), source_weight);
      }
      if (use_retain) {
        const double retain_weight = cfg.retain_weight / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          const Item& it = train.items[next(retain, retain_pos)];
          accumulate(it, TargetSpec::Toward(it.group), retain_weight);
        }
      }
      for (std::size_t li = 0; li < layers.size(); ++li) {
        auto update = [&](Vector& w, Vector& v, const Vector& g) {
          for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = cfg.momentum * v[j] - cfg.learning_rate * g[j];
            w[j] += v[j];
          }
        };
        update(layers[li].weights, velocity[li].weights, grads[li].weights);
        update(layers[li].bias, velocity[li].bias, grads[li].bias);
      }
      epoch_loss += step_loss;
    }
    result.record.epoch_loss.push_back(steps_per_epoch ? epoch_loss / static_cast<double>(steps_per_epoch) : 0.0);
  }
  return result;
}

Vector PgdPerturb(const Classifier& clf, std::span<const double> x, const TargetSpec& target, double epsilon,
                  int steps, double step_size) {
  if (steps < 1) throw DomainError("PGD needs at least one step");
  if (!(epsilon >= 0.0) || !(step_size >= 0.0)) throw DomainError("PGD epsilon and step size must be nonnegative");
  Vector cur(x.begin(), x.end());
  for (int s = 0; s < steps; ++s) {
    const auto lg = clf.LossAndGradInput(cur, target);
    for (std::size_t j = 0; j < cur.size(); ++j) {
      const double g = lg.grad[j];
      const double dir = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      cur[j] = std::clamp(cur[j] - step_size * dir, x[j] - epsilon, x[j] + epsilon);
    }
  }
  return cur;
}

double SelectionDraw(std::uint64_t seed, ItemId id) {
  return UnitFromBits(DeriveSeed(seed, "attack-selection", {id}));
}

std::pair<Corpus, AttackApplication> ApplyAttack(const Corpus& corpus, const PerturbationGenerator& gen, double pr,
                                                 std::uint64_t seed, SelectionMode mode) {
  if (!(pr >= 0.0 && pr <= 1.0)) throw DomainError("attack probability must lie in [0, 1]");
  AttackApplication app{pr, seed, {}};
  if (mode == SelectionMode::kBernoulli) {
    for (const auto& it : corpus.items) {
      if (SelectionDraw(seed, it.id) < pr) app.perturbed_ids.insert(it.id);
    }
  } else {
    std::vector<std::pair<double, ItemId>> keyed;
    for (const auto& it : corpus.items) keyed.emplace_back(SelectionDraw(seed, it.id), it.id);
    std::sort(keyed.begin(), keyed.end());
    const auto count = static_cast<std::size_t>(std::floor(pr * static_cast<double>(keyed.size())));
    for (std::size_t i = 0; i < count; ++i) app.perturbed_ids.insert(keyed[i].second);
  }
  Corpus out = corpus;
  for (auto& it : out.items) {
    if (app.perturbed_ids.count(it.id)) it.features = gen.Apply(it.features);
  }
  return {std::move(out), std::move(app)};
}

MisclassificationStats MisclassificationRate(const Classifier& clf, const Corpus& corpus,
                                             const AttackObjective& objective) {
  if (corpus.empty()) throw DomainError("misclassification rate of an empty corpus");
  MisclassificationStats s;
  std::size_t hit = 0, source_correct = 0, other_correct = 0;
  for (const auto& it : corpus.items) {
    const GroupId pred = clf.Predict(it.features);
    if (objective.IsSource(it.group)) {
      ++s.source_count;
      source_correct += pred == it.group;
      if (objective.kind == AttackObjective::Kind::kSourceUntargeted) {
        hit += pred != it.group;
      } else {
        hit += pred == *objective.target;
      }
    } else {
      ++s.other_count;
      other_correct += pred == it.group;
    }
  }
  if (s.source_count > 0) {
    s.targeted_success = static_cast<double>(hit) / static_cast<double>(s.source_count);
    s.source_accuracy = static_cast<double>(source_correct) / static_cast<double>(s.source_count);
  }
  if (s.other_count > 0) s.other_accuracy = static_cast<double>(other_correct) / static_cast<double>(s.other_count);
  return s;
}

nlohmann::json GeneratorToJson(const PerturbationGenerator& gen, const GroupSchema& groups) {
  nlohmann::json j;
  j["format_version"] = kGeneratorFormatVersion;
  j["arch"] = "residual-tanh";
  j["layers"] = LayersToJson(gen.layers());
  j["epsilon"] = gen.epsilon();
  j["objective"] = gen.objective().Name(groups);
  j["target_classifier_name"] = gen.target_classifier_name();
  return j;
}

PerturbationGenerator GeneratorFromJson(const nlohmann::json& j, const GroupSchema& groups) {
  try {
    if (j.at("format_version").get<int>() != kGeneratorFormatVersion) {
      throw ConfigError("unsupported generator format_version");
    }
    return PerturbationGenerator(LayersFromJson(j.at("layers")), j.at("epsilon").get<double>(),
                                 AttackObjective::Parse(j.at("objective").get<std::string>(), groups),
                                 j.at("target_classifier_name").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator file: ") + e.what());
  }
}

}  // namespace fairrank
