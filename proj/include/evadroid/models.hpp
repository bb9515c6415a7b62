#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace evadroid {

inline constexpr int kBenign = 0;
inline constexpr int kMalware = 1;

struct DegenerateData : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotTrained : std::runtime_error {
  NotTrained() : std::runtime_error("model is not trained") {}
};

/// Row-per-sample feature matrix with labels in {kBenign, kMalware}.
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  Eigen::Index dim() const { return x.cols(); }
  void check_two_classes() const;
};

// ---------------------------------------------------------------------------
// Substitute network

struct SubstituteConfig {
  std::vector<int> hidden{128, 128};
  double dropout = 0.5;
  int epochs = 100;
  int batch_size = 256;
  double learning_rate = 0.05;  // AdaGrad
  double adagrad_epsilon = 1e-8;
  std::uint64_t seed = 1;
};

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

/// Dense ReLU network with a 2-way pre-softmax output Z(x). Dropout layers are
/// only active during training.
class SubstituteNetwork {
 public:
  struct Layer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;
  };

  SubstituteNetwork() = default;
  /// Builds an already-trained network from explicit layers (last layer has 2 outputs).
  static SubstituteNetwork from_layers(std::vector<Layer> layers, double dropout = 0.0,
                                       std::uint64_t seed = 0);

  static SubstituteNetwork train(const Dataset& data, const SubstituteConfig& config,
                                 TrainingLog* log = nullptr);

  bool trained() const { return !layers_.empty(); }
  Eigen::Index input_dim() const;

  Eigen::Vector2d logits(const Eigen::VectorXd& x) const;
  Eigen::Vector2d probabilities(const Eigen::VectorXd& x) const;
  int predict(const Eigen::VectorXd& x) const;

  /// 2 x n matrix of d Z_j / d x_i.
  Eigen::MatrixXd logit_jacobian(const Eigen::VectorXd& x) const;
  /// 2 x n matrix of d F_j / d x_i with F = softmax(Z).
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }

  nlohmann::json to_json() const;
  static SubstituteNetwork from_json(const nlohmann::json& j);

 private:
  std::vector<Layer> layers_;
  double dropout_ = 0.5;
  std::uint64_t seed_ = 0;
};

Eigen::Vector2d softmax(const Eigen::Vector2d& z);

// ---------------------------------------------------------------------------
// Target detectors

enum class DetectorKind { LinearSvm, Knn, RandomForest, Oracle };

struct DetectorConfig {
  DetectorKind kind = DetectorKind::LinearSvm;
  int k = 1;                 // KNN
  int trees = 101;           // random forest
  int svm_epochs = 200;
  double svm_lambda = 1e-4;
  double svm_eta0 = 0.1;
  std::uint64_t seed = 1;

  static DetectorConfig parse(const std::string& name, std::uint64_t seed = 1);
  std::string name() const;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual int predict(const Eigen::VectorXd& x) const = 0;
  virtual DetectorKind kind() const = 0;
  virtual std::string name() const = 0;
  virtual nlohmann::json to_json() const = 0;

  double accuracy(const Dataset& data) const;
};

std::unique_ptr<Detector> train_detector(const DetectorConfig& config, const Dataset& data);
std::unique_ptr<Detector> detector_from_json(const nlohmann::json& j);
/// Wraps an arbitrary labeling function (e.g. a remote system) as a detector.
std::unique_ptr<Detector> make_oracle(std::function<int(const Eigen::VectorXd&)> fn,
                                      std::string name = "oracle");

// ---------------------------------------------------------------------------
// Pilot classifier: the model consulted for the attack's stopping condition.

class PilotClassifier {
 public:
  virtual ~PilotClassifier() = default;
  virtual int label(const Eigen::VectorXd& x) const = 0;
  virtual bool black_box() const = 0;
  std::uint64_t queries() const { return queries_.load(); }

 protected:
  void count_query() const { queries_.fetch_add(1); }

 private:
  mutable std::atomic<std::uint64_t> queries_{0};
};

class SubstitutePilot final : public PilotClassifier {
 public:
  explicit SubstitutePilot(const SubstituteNetwork& net) : net_(net) {}
  int label(const Eigen::VectorXd& x) const override {
    count_query();
    return net_.predict(x);
  }
  bool black_box() const override { return false; }

 private:
  const SubstituteNetwork& net_;
};

/// Exposes only the detector's output label.
class BlackBoxPilot final : public PilotClassifier {
 public:
  explicit BlackBoxPilot(const Detector& detector) : detector_(detector) {}
  int label(const Eigen::VectorXd& x) const override {
    count_query();
    return detector_.predict(x);
  }
  bool black_box() const override { return true; }

 private:
  const Detector& detector_;
};

}  // namespace evadroid
