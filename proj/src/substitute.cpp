#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evadroid/models.hpp"

namespace evadroid {

void Dataset::check_two_classes() const {
  if (y.empty()) throw DegenerateData("empty training set");
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) {
    throw std::invalid_argument("label count does not match sample count");
  }
  bool has_benign = std::find(y.begin(), y.end(), kBenign) != y.end();
  bool has_malware = std::find(y.begin(), y.end(), kMalware) != y.end();
  if (!has_benign || !has_malware) throw DegenerateData("training set has a single class");
}

Eigen::Vector2d softmax(const Eigen::Vector2d& z) {
  Eigen::Vector2d e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

SubstituteNetwork SubstituteNetwork::from_layers(std::vector<Layer> layers, double dropout,
                                                 std::uint64_t seed) {
  if (layers.empty() || layers.back().weights.rows() != 2) {
    throw std::invalid_argument("substitute network needs a 2-unit output layer");
  }
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].weights.cols() != layers[l - 1].weights.rows()) {
      throw std::invalid_argument("layer shapes do not chain");
    }
  }
  SubstituteNetwork net;
  net.layers_ = std::move(layers);
  net.dropout_ = dropout;
  net.seed_ = seed;
  return net;
}

Eigen::Index SubstituteNetwork::input_dim() const {
  if (!trained()) throw NotTrained();
  return layers_.front().weights.cols();
}

Eigen::Vector2d SubstituteNetwork::logits(const Eigen::VectorXd& x) const {
  if (!trained()) throw NotTrained();
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    a = (layers_[l].weights * a + layers_[l].bias).cwiseMax(0.0);
  }
  return layers_.back().weights * a + layers_.back().bias;
}

Eigen::Vector2d SubstituteNetwork::probabilities(const Eigen::VectorXd& x) const {
  return softmax(logits(x));
}

int SubstituteNetwork::predict(const Eigen::VectorXd& x) const {
  auto z = logits(x);
  return z[kMalware] > z[kBenign] ? kMalware : kBenign;
}

Eigen::MatrixXd SubstituteNetwork::logit_jacobian(const Eigen::VectorXd& x) const {
  if (!trained()) throw NotTrained();
  std::vector<Eigen::VectorXd> pre;
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    pre.push_back(layers_[l].weights * a + layers_[l].bias);
    a = pre.back().cwiseMax(0.0);
  }
  Eigen::MatrixXd j = layers_.back().weights;
  for (std::size_t l = pre.size(); l-- > 0;) {
    for (Eigen::Index u = 0; u < pre[l].size(); ++u) {
      if (pre[l][u] <= 0.0) j.col(u).setZero();
    }
    j = j * layers_[l].weights;
  }
  return j;
}

Eigen::MatrixXd SubstituteNetwork::jacobian(const Eigen::VectorXd& x) const {
  Eigen::Vector2d f = probabilities(x);
  Eigen::MatrixXd dz = logit_jacobian(x);
  // dF/dZ = diag(F) - F F^T
  Eigen::Matrix2d dfdz = f.asDiagonal();
  dfdz -= f * f.transpose();
  return dfdz * dz;
}

SubstituteNetwork SubstituteNetwork::train(const Dataset& data, const SubstituteConfig& config,
                                           TrainingLog* log) {
  data.check_two_classes();
  if (config.epochs < 1 || config.batch_size < 1) throw std::invalid_argument("bad training schedule");
  if (config.dropout < 0.0 || config.dropout >= 1.0) throw std::invalid_argument("bad dropout rate");

  std::mt19937_64 rng(config.seed);
  std::vector<int> sizes{static_cast<int>(data.dim())};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(2);

  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    std::uniform_real_distribution<double> init(-limit, limit);
    Layer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd::Zero(sizes[l + 1])};
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, c) = init(rng);
    }
    layers.push_back(std::move(layer));
  }
  std::vector<Layer> accum;
  for (const auto& l : layers) {
    accum.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                     Eigen::VectorXd::Zero(l.bias.size())});
  }

  const std::size_t n = data.size();
  const std::size_t hidden_layers = layers.size() - 1;
  const double keep = 1.0 - config.dropout;
  std::bernoulli_distribution keep_unit(keep);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(data.dim(), b);
      Eigen::MatrixXd yb = Eigen::MatrixXd::Zero(2, b);
      for (Eigen::Index c = 0; c < b; ++c) {
        const auto row = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(c)]);
        xb.col(c) = data.x.row(row).transpose();
        yb(data.y[static_cast<std::size_t>(row)], c) = 1.0;
      }

      std::vector<Eigen::MatrixXd> acts{xb};
      std::vector<Eigen::MatrixXd> pre;
      std::vector<Eigen::MatrixXd> masks;
      for (std::size_t l = 0; l < hidden_layers; ++l) {
        Eigen::MatrixXd z = (layers[l].weights * acts.back()).colwise() + layers[l].bias;
        Eigen::MatrixXd mask(z.rows(), z.cols());
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
          for (Eigen::Index r = 0; r < mask.rows(); ++r) {
            mask(r, c) = keep_unit(rng) ? 1.0 / keep : 0.0;
          }
        }
        acts.push_back(z.cwiseMax(0.0).cwiseProduct(mask));
        pre.push_back(std::move(z));
        masks.push_back(std::move(mask));
      }
      Eigen::MatrixXd logits = (layers.back().weights * acts.back()).colwise() + layers.back().bias;

      Eigen::MatrixXd grad_z(2, b);
      for (Eigen::Index c = 0; c < b; ++c) {
        Eigen::Vector2d p = softmax(logits.col(c));
        epoch_loss -= std::log(std::max(p.dot(yb.col(c)), 1e-300));
        grad_z.col(c) = (p - yb.col(c)) / static_cast<double>(b);
      }

      for (std::size_t l = layers.size(); l-- > 0;) {
        Eigen::MatrixXd gw = grad_z * acts[l].transpose();
        Eigen::VectorXd gb = grad_z.rowwise().sum();
        if (l > 0) {
          Eigen::MatrixXd ga = layers[l].weights.transpose() * grad_z;
          grad_z = ga.cwiseProduct(masks[l - 1])
                       .cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
        accum[l].weights.array() += gw.array().square();
        accum[l].bias.array() += gb.array().square();
        layers[l].weights.array() -= config.learning_rate * gw.array() /
                                     (accum[l].weights.array().sqrt() + config.adagrad_epsilon);
        layers[l].bias.array() -= config.learning_rate * gb.array() /
                                  (accum[l].bias.array().sqrt() + config.adagrad_epsilon);
      }
    }
    if (log != nullptr) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return from_layers(std::move(layers), config.dropout, config.seed);
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw std::invalid_argument("bad matrix");
  return Eigen::Map<Eigen::MatrixXd>(flat.data(), rows, cols);
}

}  // namespace

nlohmann::json SubstituteNetwork::to_json() const {
  if (!trained()) throw NotTrained();
  nlohmann::json j;
  j["format"] = "evadroid-substitute";
  j["version"] = 1;
  std::vector<Eigen::Index> widths{input_dim()};
  for (const auto& l : layers_) widths.push_back(l.weights.rows());
  j["architecture"] = {{"widths", widths}, {"activation", "relu"}, {"dropout", dropout_}};
  j["seed"] = seed_;
  for (const auto& l : layers_) {
    j["layers"].push_back({{"weights", matrix_json(l.weights)}, {"bias", matrix_json(l.bias)}});
  }
  return j;
}

SubstituteNetwork SubstituteNetwork::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "evadroid-substitute" || j.value("version", 0) != 1) {
    throw std::invalid_argument("not a substitute checkpoint");
  }
  std::vector<Layer> layers;
  for (const auto& l : j.at("layers")) {
    layers.push_back({matrix_from(l.at("weights")), matrix_from(l.at("bias"))});
  }
  return from_layers(std::move(layers), j.at("architecture").at("dropout").get<double>(),
                     j.at("seed").get<std::uint64_t>());
}

}  // namespace evadroid
