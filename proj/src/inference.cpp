#include "fairrank/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairrank {

namespace {

double Activate(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

// Derivative expressed through the activation output y = act(z).
double ActivateDerivative(Activation a, double y) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kRelu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

}  // namespace

std::string ToString(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "identity";
}

Activation ActivationFromString(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string ToString(ClassifierArch arch) { return arch == ClassifierArch::kLinear ? "linear" : "mlp-1hidden"; }

void DenseLayer::Apply(std::span<const double> x, std::span<double> y) const {
  for (int r = 0; r < out; ++r) {
    const double* row = weights.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(in);
    double s = bias[static_cast<std::size_t>(r)];
    for (int c = 0; c < in; ++c) s += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = s;
  }
}

void DenseLayer::BackpropInput(std::span<const double> dy, std::span<double> dx) const {
  for (int r = 0; r < out; ++r) {
    const double g = dy[static_cast<std::size_t>(r)];
    if (g == 0.0) continue;
    const double* row = weights.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(in);
    for (int c = 0; c < in; ++c) dx[static_cast<std::size_t>(c)] += row[c] * g;
  }
}

void DenseLayer::AccumulateParamGrad(std::span<const double> x, std::span<const double> dy, DenseLayer& grad) const {
  for (int r = 0; r < out; ++r) {
    const double g = dy[static_cast<std::size_t>(r)];
    grad.bias[static_cast<std::size_t>(r)] += g;
    double* row = grad.weights.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(in);
    for (int c = 0; c < in; ++c) row[c] += g * x[static_cast<std::size_t>(c)];
  }
}

DenseLayer DenseLayer::ZerosLike() const {
  return {in, out, Vector(weights.size(), 0.0), Vector(bias.size(), 0.0)};
}

DenseLayer MakeDenseLayer(int in, int out, Rng& rng) {
  DenseLayer l{in, out, Vector(static_cast<std::size_t>(in) * static_cast<std::size_t>(out)),
               Vector(static_cast<std::size_t>(out), 0.0)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& w : l.weights) w = rng.Uniform(-limit, limit);
  return l;
}

void TrainConfig::Validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
}

Vector Softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

double LogSumExp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Classifier::Classifier(ClassifierArch arch, std::string variant_name, std::uint64_t seed,
                       std::vector<DenseLayer> layers, Activation hidden_activation)
    : arch_(arch),
      variant_name_(std::move(variant_name)),
      seed_(seed),
      layers_(std::move(layers)),
      hidden_activation_(hidden_activation) {
  if (layers_.empty()) throw ConfigError("classifier needs at least one layer");
  const std::size_t expected = arch_ == ClassifierArch::kLinear ? 1 : 2;
  if (layers_.size() != expected) throw ConfigError("layer count does not match classifier architecture");
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].in != layers_[i - 1].out) throw ConfigError("classifier layer shapes do not chain");
  }
  for (const auto& l : layers_) {
    if (l.weights.size() != static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out) ||
        l.bias.size() != static_cast<std::size_t>(l.out)) {
      throw ConfigError("classifier layer has inconsistent parameter sizes");
    }
  }
}

Classifier Classifier::Initialize(ClassifierArch arch, const std::string& variant_name, int input_dim,
                                  int num_groups, std::uint64_t seed, int hidden_width) {
  if (input_dim <= 0 || num_groups <= 0) throw ConfigError("classifier dimensions must be positive");
  Rng rng(DeriveSeed(seed, "classifier-init", {HashString(variant_name)}));
  std::vector<DenseLayer> layers;
  if (arch == ClassifierArch::kLinear) {
    layers.push_back(MakeDenseLayer(input_dim, num_groups, rng));
  } else {
    layers.push_back(MakeDenseLayer(input_dim, hidden_width, rng));
    layers.push_back(MakeDenseLayer(hidden_width, num_groups, rng));
  }
  return Classifier(arch, variant_name, seed, std::move(layers), Activation::kTanh);
}

Classifier Classifier::ForVariant(const std::string& variant_name, int input_dim, int num_groups,
                                  std::uint64_t seed) {
  if (variant_name == "df-sim") return Initialize(ClassifierArch::kLinear, variant_name, input_dim, num_groups, seed);
  if (variant_name == "ff-sim") return Initialize(ClassifierArch::kMlp, variant_name, input_dim, num_groups, seed, 32);
  throw ConfigError("unknown classifier variant '" + variant_name + "'");
}

void Classifier::CheckInput(std::span<const double> x) const {
  if (layers_.empty()) throw DomainError("classifier has no layers");
  if (static_cast<int>(x.size()) != input_dim()) {
    throw DomainError("classifier input has dimension " + std::to_string(x.size()) + ", expected " +
                      std::to_string(input_dim()));
  }
}

Classifier::Trace Classifier::Run(std::span<const double> x) const {
  CheckInput(x);
  Trace t;
  t.activations.emplace_back(x.begin(), x.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Vector y(static_cast<std::size_t>(layers_[i].out));
    layers_[i].Apply(t.activations.back(), y);
    if (i + 1 < layers_.size()) {
      for (auto& v : y) v = Activate(hidden_activation_, v);
    }
    t.activations.push_back(std::move(y));
  }
  return t;
}

Vector Classifier::Logits(std::span<const double> x) const { return Run(x).activations.back(); }

Vector Classifier::Forward(std::span<const double> x) const { return Softmax(Logits(x)); }

GroupId Classifier::Predict(std::span<const double> x) const {
  const Vector z = Logits(x);
  return GroupId{static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin())};
}

LossAndGrad Classifier::LossAndGradInput(std::span<const double> x, const TargetSpec& target) const {
  const Trace t = Run(x);
  const Vector& logits = t.activations.back();
  const auto y = static_cast<std::size_t>(target.label.value);
  if (y >= logits.size()) throw DomainError("target label outside classifier output");
  const double sign = target.kind == TargetSpec::Kind::kToward ? 1.0 : -1.0;

  LossAndGrad out;
  out.loss = sign * (LogSumExp(logits) - logits[y]);
  Vector delta = Softmax(logits);
  delta[y] -= 1.0;
  for (auto& d : delta) d *= sign;

  for (std::size_t i = layers_.size(); i-- > 0;) {
    Vector dx(static_cast<std::size_t>(layers_[i].in), 0.0);
    layers_[i].BackpropInput(delta, dx);
    if (i > 0) {
      const Vector& h = t.activations[i];
      for (std::size_t j = 0; j < dx.size(); ++j) dx[j] *= ActivateDerivative(hidden_activation_, h[j]);
    }
    delta = std::move(dx);
  }
  out.grad = std::move(delta);
  return out;
}

double Classifier::AccumulateParamGrad(std::span<const double> x, GroupId label,
                                       std::vector<DenseLayer>& grads) const {
  const Trace t = Run(x);
  const Vector& logits = t.activations.back();
  const auto y = static_cast<std::size_t>(label.value);
  const double loss = LogSumExp(logits) - logits[y];
  Vector delta = Softmax(logits);
  delta[y] -= 1.0;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    layers_[i].AccumulateParamGrad(t.activations[i], delta, grads[i]);
    if (i == 0) break;
    Vector dh(static_cast<std::size_t>(layers_[i].in), 0.0);
    layers_[i].BackpropInput(delta, dh);
    const Vector& h = t.activations[i];
    for (std::size_t j = 0; j < dh.size(); ++j) dh[j] *= ActivateDerivative(hidden_activation_, h[j]);
    delta = std::move(dh);
  }
  return loss;
}

bool operator==(const Classifier& a, const Classifier& b) {
  if (a.arch_ != b.arch_ || a.variant_name_ != b.variant_name_ || a.seed_ != b.seed_ ||
      a.hidden_activation_ != b.hidden_activation_ || a.layers_.size() != b.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& la = a.layers_[i];
    const auto& lb = b.layers_[i];
    if (la.in != lb.in || la.out != lb.out || la.weights != lb.weights || la.bias != lb.bias) return false;
  }
  return true;
}

double Accuracy(const Classifier& clf, const Corpus& corpus) {
  if (corpus.empty()) throw DomainError("accuracy on an empty corpus");
  std::size_t correct = 0;
  for (const auto& it : corpus.items) correct += clf.Predict(it.features) == it.group;
  return static_cast<double>(correct) / static_cast<double>(corpus.size());
}

namespace {

double MeanLoss(const Classifier& clf, const Corpus& c) {
  double s = 0.0;
  for (const auto& it : c.items) {
    const Vector z = clf.Logits(it.features);
    s += LogSumExp(z) - z[static_cast<std::size_t>(it.group.value)];
  }
  return s / static_cast<double>(c.size());
}

}  // namespace

TrainedClassifier TrainClassifier(const Corpus& data, const TrainConfig& cfg, ClassifierArch arch,
                                  const std::string& variant_name) {
  cfg.Validate();
  if (data.empty()) throw ConfigError("cannot train a classifier on an empty corpus");
  const int G = data.groups().size();
  std::vector<bool> seen(static_cast<std::size_t>(G), false);
  for (const auto& it : data.items) seen[static_cast<std::size_t>(it.group.value)] = true;
  for (int g = 0; g < G; ++g) {
    if (!seen[static_cast<std::size_t>(g)]) {
      throw ConfigError("training data has no items of group '" + data.groups().name(GroupId{g}) + "'");
    }
  }

  const int dim = static_cast<int>(data.items.front().features.size());
  Classifier clf = Classifier::Initialize(arch, variant_name, dim, G, cfg.seed);
  if (data.size() < 2) throw ConfigError("classifier training needs at least two items");
  auto [train, heldout] = SplitTrainEval(data, kClassifierHoldoutRatio, DeriveSeed(cfg.seed, "holdout"));

  TrainRecord record;
  record.train_size = train.size();
  record.heldout_size = heldout.size();
  record.epoch_loss.push_back(MeanLoss(clf, train));

  auto& layers = clf.mutable_layers();
  std::vector<DenseLayer> velocity;
  for (const auto& l : layers) velocity.push_back(l.ZerosLike());

  Rng rng(DeriveSeed(cfg.seed, "classifier-batches", {HashString(variant_name)}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.Shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<DenseLayer> grads;
      for (const auto& l : layers) grads.push_back(l.ZerosLike());
      for (std::size_t i = start; i < end; ++i) {
        const Item& it = train.items[order[i]];
        clf.AccumulateParamGrad(it.features, it.group, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t li = 0; li < layers.size(); ++li) {
        auto update = [&](Vector& w, Vector& v, const Vector& g, double decay) {
          for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = cfg.momentum * v[j] - cfg.learning_rate * (g[j] * scale + decay * w[j]);
            w[j] += v[j];
          }
        };
        update(layers[li].weights, velocity[li].weights, grads[li].weights, cfg.weight_decay);
        update(layers[li].bias, velocity[li].bias, grads[li].bias, 0.0);
      }
    }
    record.epoch_loss.push_back(MeanLoss(clf, train));
  }
  record.heldout_accuracy = heldout.empty() ? 0.0 : Accuracy(clf, heldout);
  return {std::move(clf), std::move(record)};
}

TrainedClassifier TrainClassifierVariant(const Corpus& data, const TrainConfig& cfg,
                                         const std::string& variant_name) {
  if (variant_name == "df-sim") return TrainClassifier(data, cfg, ClassifierArch::kLinear, variant_name);
  if (variant_name == "ff-sim") return TrainClassifier(data, cfg, ClassifierArch::kMlp, variant_name);
  throw ConfigError("unknown classifier variant '" + variant_name + "'");
}

nlohmann::json LayersToJson(const std::vector<DenseLayer>& layers) {
  auto arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}});
  }
  return arr;
}

std::vector<DenseLayer> LayersFromJson(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& jl : j) {
    DenseLayer l{jl.at("in").get<int>(), jl.at("out").get<int>(), jl.at("weights").get<Vector>(),
                 jl.at("bias").get<Vector>()};
    if (l.weights.size() != static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out) ||
        l.bias.size() != static_cast<std::size_t>(l.out)) {
      throw ConfigError("weight file: layer dims do not match parameter counts");
    }
    layers.push_back(std::move(l));
  }
  return layers;
}

nlohmann::json ClassifierToJson(const Classifier& clf) {
  nlohmann::json j;
  j["format_version"] = kWeightFormatVersion;
  j["arch"] = ToString(clf.arch());
  j["variant_name"] = clf.variant_name();
  j["seed"] = clf.seed();
  j["hidden_activation"] = ToString(clf.hidden_activation());
  j["layers"] = LayersToJson(clf.layers());
  return j;
}

Classifier ClassifierFromJson(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kWeightFormatVersion) {
      throw ConfigError("unsupported weight file format_version");
    }
    const auto arch_name = j.at("arch").get<std::string>();
    ClassifierArch arch;
    if (arch_name == "linear") {
      arch = ClassifierArch::kLinear;
    } else if (arch_name == "mlp-1hidden") {
      arch = ClassifierArch::kMlp;
    } else {
      throw ConfigError("unknown classifier arch '" + arch_name + "'");
    }
    return Classifier(arch, j.at("variant_name").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                      LayersFromJson(j.at("layers")),
                      ActivationFromString(j.value("hidden_activation", std::string("tanh"))));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed classifier weight file: ") + e.what());
  }
}

}  // namespace fairrank
