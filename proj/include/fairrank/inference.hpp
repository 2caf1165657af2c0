#pragma once

#include <span>
#include <string>
#include <vector>

#include "fairrank/common.hpp"
#include "fairrank/corpus.hpp"
#include "json.hpp"

namespace fairrank {

enum class Activation { kIdentity, kTanh, kRelu };
std::string ToString(Activation a);
Activation ActivationFromString(const std::string& s);

// Fully connected layer, y = W x + b with W stored row-major (out x in).
struct DenseLayer {
  int in = 0;
  int out = 0;
  Vector weights;
  Vector bias;

  void Apply(std::span<const double> x, std::span<double> y) const;
  // dx += W^T dy
  void BackpropInput(std::span<const double> dy, std::span<double> dx) const;
  // dW += dy x^T, db += dy
  void AccumulateParamGrad(std::span<const double> x, std::span<const double> dy, DenseLayer& grad) const;
  DenseLayer ZerosLike() const;
};

// Glorot-uniform weights, zero bias.
DenseLayer MakeDenseLayer(int in, int out, Rng& rng);

enum class ClassifierArch { kLinear, kMlp };
std::string ToString(ClassifierArch arch);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.01;  // L2 penalty on weights, not biases
  std::uint64_t seed = 1;

  void Validate() const;
};

// Which way an input-gradient loss pushes the prediction.
struct TargetSpec {
  enum class Kind { kToward, kAwayFrom };
  Kind kind = Kind::kToward;
  GroupId label;

  static TargetSpec Toward(GroupId g) { return {Kind::kToward, g}; }
  static TargetSpec AwayFrom(GroupId g) { return {Kind::kAwayFrom, g}; }
};

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;  // d loss / d x
};

// Small softmax classifier over demographic groups: either linear or one
// tanh hidden layer. Immutable once trained; all queries are const.
class Classifier {
 public:
  Classifier() = default;
  Classifier(ClassifierArch arch, std::string variant_name, std::uint64_t seed, std::vector<DenseLayer> layers,
             Activation hidden_activation = Activation::kTanh);

  // "df-sim" (linear) or "ff-sim" (hidden width 32), randomly initialized.
  static Classifier ForVariant(const std::string& variant_name, int input_dim, int num_groups, std::uint64_t seed);
  static Classifier Initialize(ClassifierArch arch, const std::string& variant_name, int input_dim, int num_groups,
                               std::uint64_t seed, int hidden_width = 32);

  ClassifierArch arch() const { return arch_; }
  const std::string& variant_name() const { return variant_name_; }
  std::uint64_t seed() const { return seed_; }
  int input_dim() const { return layers_.front().in; }
  int num_groups() const { return layers_.back().out; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  Activation hidden_activation() const { return hidden_activation_; }

  Vector Logits(std::span<const double> x) const;
  Vector Forward(std::span<const double> x) const;  // probability simplex
  GroupId Predict(std::span<const double> x) const;

  // Cross-entropy toward a label, or its negation away from a label, with
  // the exact gradient with respect to the input.
  LossAndGrad LossAndGradInput(std::span<const double> x, const TargetSpec& target) const;

  // Cross-entropy to `label`; accumulates parameter gradients into `grads`
  // (same shapes as layers()). Returns the loss.
  double AccumulateParamGrad(std::span<const double> x, GroupId label, std::vector<DenseLayer>& grads) const;

  friend bool operator==(const Classifier& a, const Classifier& b);

 private:
  struct Trace {
    std::vector<Vector> activations;  // input, hidden outputs..., logits
  };
  Trace Run(std::span<const double> x) const;
  void CheckInput(std::span<const double> x) const;

  ClassifierArch arch_ = ClassifierArch::kLinear;
  std::string variant_name_;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
  Activation hidden_activation_ = Activation::kTanh;
};

Vector Softmax(std::span<const double> logits);
double LogSumExp(std::span<const double> v);

struct TrainRecord {
  Vector epoch_loss;  // mean training loss; index 0 is before any update
  double heldout_accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

struct TrainedClassifier {
  Classifier classifier;
  TrainRecord record;
};

inline constexpr double kClassifierHoldoutRatio = 0.8;

// Mini-batch SGD with momentum on mean cross-entropy. 20% of `data` is held
// out (deterministically from cfg.seed) to report accuracy.
TrainedClassifier TrainClassifier(const Corpus& data, const TrainConfig& cfg, ClassifierArch arch,
                                  const std::string& variant_name = "");
TrainedClassifier TrainClassifierVariant(const Corpus& data, const TrainConfig& cfg, const std::string& variant_name);

double Accuracy(const Classifier& clf, const Corpus& corpus);

inline constexpr int kWeightFormatVersion = 1;
nlohmann::json LayersToJson(const std::vector<DenseLayer>& layers);
std::vector<DenseLayer> LayersFromJson(const nlohmann::json& j);
nlohmann::json ClassifierToJson(const Classifier& clf);
Classifier ClassifierFromJson(const nlohmann::json& j);

}  // namespace fairrank
