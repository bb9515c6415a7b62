#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evadroid/models.hpp"

namespace evadroid {

double Detector::accuracy(const Dataset& data) const {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(data.x.row(static_cast<Eigen::Index>(i)).transpose()) == data.y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

DetectorConfig DetectorConfig::parse(const std::string& name, std::uint64_t seed) {
  DetectorConfig c;
  c.seed = seed;
  if (name == "svm") {
    c.kind = DetectorKind::LinearSvm;
  } else if (name == "rf") {
    c.kind = DetectorKind::RandomForest;
  } else if (name == "1nn" || name == "3nn") {
    c.kind = DetectorKind::Knn;
    c.k = name[0] - '0';
  } else {
    throw std::invalid_argument("unknown detector: " + name + " (svm, rf, 1nn, 3nn)");
  }
  return c;
}

std::string DetectorConfig::name() const {
  switch (kind) {
    case DetectorKind::LinearSvm: return "svm";
    case DetectorKind::Knn: return std::to_string(k) + "nn";
    case DetectorKind::RandomForest: return "rf";
    case DetectorKind::Oracle: return "oracle";
  }
  return "?";
}

namespace {

// Hinge loss + (lambda/2)|w|^2, per-sample sub-gradient steps with
// eta_t = eta0 / (1 + eta0 * lambda * t). The bias is not regularized.
class LinearSvm final : public Detector {
 public:
  LinearSvm(Eigen::VectorXd w, double b) : w_(std::move(w)), b_(b) {}

  static std::unique_ptr<Detector> fit(const DetectorConfig& cfg, const Dataset& data) {
    std::mt19937_64 rng(cfg.seed);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(data.dim());
    double b = 0.0;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    double t = 0.0;
    for (int epoch = 0; epoch < cfg.svm_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (auto i : order) {
        const double eta = cfg.svm_eta0 / (1.0 + cfg.svm_eta0 * cfg.svm_lambda * t);
        t += 1.0;
        const double y = data.y[i] == kMalware ? 1.0 : -1.0;
        const auto row = data.x.row(static_cast<Eigen::Index>(i));
        const double margin = y * (row.dot(w) + b);
        w *= 1.0 - eta * cfg.svm_lambda;
        if (margin < 1.0) {
          w += eta * y * row.transpose();
          b += eta * y;
        }
      }
    }
    return std::make_unique<LinearSvm>(std::move(w), b);
  }

  int predict(const Eigen::VectorXd& x) const override {
    return x.dot(w_) + b_ > 0.0 ? kMalware : kBenign;
  }
  DetectorKind kind() const override { return DetectorKind::LinearSvm; }
  std::string name() const override { return "svm"; }
  nlohmann::json to_json() const override {
    return {{"format", "evadroid-detector"}, {"version", 1}, {"kind", "svm"},
            {"w", std::vector<double>(w_.data(), w_.data() + w_.size())}, {"b", b_}};
  }
  static std::unique_ptr<Detector> load(const nlohmann::json& j) {
    auto w = j.at("w").get<std::vector<double>>();
    return std::make_unique<LinearSvm>(Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                                       j.at("b").get<double>());
  }

 private:
  Eigen::VectorXd w_;
  double b_;
};

class Knn final : public Detector {
 public:
  Knn(int k, Eigen::MatrixXd x, std::vector<int> y) : k_(k), x_(std::move(x)), y_(std::move(y)) {}

  int predict(const Eigen::VectorXd& x) const override {
    std::vector<std::pair<double, std::size_t>> dist(y_.size());
    for (std::size_t i = 0; i < y_.size(); ++i) {
      dist[i] = {(x_.row(static_cast<Eigen::Index>(i)).transpose() - x).squaredNorm(), i};
    }
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(k_), dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    int votes = 0;
    for (std::size_t i = 0; i < k; ++i) votes += y_[dist[i].second] == kMalware ? 1 : -1;
    if (votes == 0) return y_[dist[0].second];
    return votes > 0 ? kMalware : kBenign;
  }
  DetectorKind kind() const override { return DetectorKind::Knn; }
  std::string name() const override { return std::to_string(k_) + "nn"; }
  nlohmann::json to_json() const override {
    std::vector<double> flat(x_.data(), x_.data() + x_.size());
    return {{"format", "evadroid-detector"}, {"version", 1}, {"kind", "knn"}, {"k", k_},
            {"rows", x_.rows()}, {"cols", x_.cols()}, {"x", flat}, {"y", y_}};
  }
  static std::unique_ptr<Detector> load(const nlohmann::json& j) {
    auto flat = j.at("x").get<std::vector<double>>();
    Eigen::MatrixXd x = Eigen::Map<Eigen::MatrixXd>(flat.data(), j.at("rows").get<Eigen::Index>(),
                                                    j.at("cols").get<Eigen::Index>());
    return std::make_unique<Knn>(j.at("k").get<int>(), std::move(x), j.at("y").get<std::vector<int>>());
  }

 private:
  int k_;
  Eigen::MatrixXd x_;
  std::vector<int> y_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = kBenign;
};

class RandomForest final : public Detector {
 public:
  explicit RandomForest(std::vector<std::vector<TreeNode>> trees) : trees_(std::move(trees)) {}

  static std::unique_ptr<Detector> fit(const DetectorConfig& cfg, const Dataset& data) {
    const auto n_features = static_cast<std::size_t>(data.dim());
    const auto subsample = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(n_features))));
    std::vector<std::vector<TreeNode>> trees;
    for (int t = 0; t < cfg.trees; ++t) {
      std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(t)};
      std::mt19937_64 rng(seq);
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      std::vector<std::size_t> rows(data.size());
      for (auto& r : rows) r = pick(rng);
      std::vector<TreeNode> nodes;
      grow(data, rows, subsample, rng, nodes);
      trees.push_back(std::move(nodes));
    }
    return std::make_unique<RandomForest>(std::move(trees));
  }

  int predict(const Eigen::VectorXd& x) const override {
    int votes = 0;
    for (const auto& tree : trees_) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& n = tree[static_cast<std::size_t>(node)];
        node = x[n.feature] <= n.threshold ? n.left : n.right;
      }
      votes += tree[static_cast<std::size_t>(node)].label == kMalware ? 1 : -1;
    }
    return votes > 0 ? kMalware : kBenign;
  }
  DetectorKind kind() const override { return DetectorKind::RandomForest; }
  std::string name() const override { return "rf"; }
  nlohmann::json to_json() const override {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : trees_) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : tree) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
      trees.push_back(std::move(nodes));
    }
    return {{"format", "evadroid-detector"}, {"version", 1}, {"kind", "rf"}, {"trees", trees}};
  }
  static std::unique_ptr<Detector> load(const nlohmann::json& j) {
    std::vector<std::vector<TreeNode>> trees;
    for (const auto& t : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& n : t) {
        nodes.push_back({n[0].get<int>(), n[1].get<double>(), n[2].get<int>(), n[3].get<int>(),
                         n[4].get<int>()});
      }
      trees.push_back(std::move(nodes));
    }
    return std::make_unique<RandomForest>(std::move(trees));
  }

 private:
  static int majority(const Dataset& data, const std::vector<std::size_t>& rows) {
    std::size_t mal = 0;
    for (auto r : rows) mal += data.y[r] == kMalware ? 1 : 0;
    return 2 * mal > rows.size() ? kMalware : kBenign;
  }

  static double gini(std::size_t mal, std::size_t total) {
    if (total == 0) return 0.0;
    const double p = static_cast<double>(mal) / static_cast<double>(total);
    return 2.0 * p * (1.0 - p);
  }

  static int grow(const Dataset& data, const std::vector<std::size_t>& rows, std::size_t subsample,
                  std::mt19937_64& rng, std::vector<TreeNode>& nodes) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({});
    std::size_t mal = 0;
    for (auto r : rows) mal += data.y[r] == kMalware ? 1 : 0;
    nodes.back().label = majority(data, rows);
    if (mal == 0 || mal == rows.size()) return id;

    std::vector<std::size_t> features(static_cast<std::size_t>(data.dim()));
    std::iota(features.begin(), features.end(), 0);
    std::shuffle(features.begin(), features.end(), rng);
    features.resize(std::min(subsample, features.size()));

    double best_score = gini(mal, rows.size());
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> column(rows.size());
    for (auto f : features) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        column[i] = {data.x(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(f)),
                     data.y[rows[i]]};
      }
      std::sort(column.begin(), column.end());
      std::size_t left_mal = 0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_mal += column[i].second == kMalware ? 1 : 0;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = column.size() - nl;
        const double score = (static_cast<double>(nl) * gini(left_mal, nl) +
                              static_cast<double>(nr) * gini(mal - left_mal, nr)) /
                             static_cast<double>(column.size());
        if (score < best_score - 1e-12) {
          best_score = score;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (column[i].first + column[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : rows) {
      (data.x(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? left : right).push_back(r);
    }
    const int l = grow(data, left, subsample, rng, nodes);
    const int rgt = grow(data, right, subsample, rng, nodes);
    nodes[static_cast<std::size_t>(id)].feature = best_feature;
    nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
    nodes[static_cast<std::size_t>(id)].left = l;
    nodes[static_cast<std::size_t>(id)].right = rgt;
    return id;
  }

  std::vector<std::vector<TreeNode>> trees_;
};

class Oracle final : public Detector {
 public:
  Oracle(std::function<int(const Eigen::VectorXd&)> fn, std::string name)
      : fn_(std::move(fn)), name_(std::move(name)) {}
  int predict(const Eigen::VectorXd& x) const override { return fn_(x); }
  DetectorKind kind() const override { return DetectorKind::Oracle; }
  std::string name() const override { return name_; }
  nlohmann::json to_json() const override {
    throw std::logic_error("oracle detectors cannot be serialized");
  }

 private:
  std::function<int(const Eigen::VectorXd&)> fn_;
  std::string name_;
};

}  // namespace

std::unique_ptr<Detector> train_detector(const DetectorConfig& config, const Dataset& data) {
  data.check_two_classes();
  switch (config.kind) {
    case DetectorKind::LinearSvm: return LinearSvm::fit(config, data);
    case DetectorKind::Knn:
      if (config.k < 1) throw std::invalid_argument("k must be positive");
      return std::make_unique<Knn>(config.k, data.x, data.y);
    case DetectorKind::RandomForest:
      if (config.trees < 1) throw std::invalid_argument("forest needs at least one tree");
      return RandomForest::fit(config, data);
    case DetectorKind::Oracle: break;
  }
  throw std::invalid_argument("oracle detectors are not trained");
}

std::unique_ptr<Detector> detector_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "evadroid-detector" || j.value("version", 0) != 1) {
    throw std::invalid_argument("not a detector checkpoint");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "svm") return LinearSvm::load(j);
  if (kind == "knn") return Knn::load(j);
  if (kind == "rf") return RandomForest::load(j);
  throw std::invalid_argument("unknown detector kind: " + kind);
}

std::unique_ptr<Detector> make_oracle(std::function<int(const Eigen::VectorXd&)> fn,
                                      std::string name) {
  return std::make_unique<Oracle>(std::move(fn), std::move(name));
}

}  // namespace evadroid
