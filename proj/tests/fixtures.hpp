#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evadroid/features.hpp"
#include "evadroid/models.hpp"
#include "evadroid/smali.hpp"

namespace evadroid::testing {

inline const char* const kMyclass = R"(.class public Landroid/os/mypack/Myclass;
.source "Myclass.java"

.method public static callee()V
    .locals 0
    return-void
.end method

.method public static caller()V
    .locals 0
    .line 6
    invoke-static {}, Landroid/os/mypack/Myclass;->callee()V
    invoke-static {}, Landroid/os/mypack/Myclass;->callee()V
    return-void
.end method
)";

/// A small app with an entry activity, a helper class and one obfuscated class.
inline std::vector<SmaliUnit> small_app() {
  const std::string main = R"(.class public Lcom/demo/app/MainActivity;
.super Landroid/app/Activity;

.method protected onCreate(Landroid/os/Bundle;)V
    .locals 2
    invoke-super {p0, p1}, Landroid/app/Activity;->onCreate(Landroid/os/Bundle;)V
    invoke-static {}, Lcom/demo/app/Util;->helper()V
    invoke-static {}, Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I
    invoke-virtual {v0}, Ljava/lang/String;->length()I
    return-void
.end method
)";
  const std::string util = R"(.class public Lcom/demo/app/Util;
.super Ljava/lang/Object;

.method public static helper()V
    .locals 1
    invoke-static {}, Ljava/lang/System;->nanoTime()J
    invoke-static {}, Lo/a/b;->c()V
    return-void
.end method
)";
  const std::string obf = R"(.class public Lo/a/b;
.super Ljava/lang/Object;

.method public static c()V
    .locals 0
    invoke-static {}, Landroid/os/SystemClock;->uptimeMillis()J
    return-void
.end method
)";
  std::vector<SmaliUnit> units;
  for (auto [text, src] : {std::pair{main, "smali/com/demo/app/MainActivity.smali"},
                           std::pair{util, "smali/com/demo/app/Util.smali"},
                           std::pair{obf, "smali/o/a/b.smali"}}) {
    auto parsed = parse_smali_lite(text, src);
    units.insert(units.end(), parsed.begin(), parsed.end());
  }
  mark_entry_point(units, "com.demo.app.MainActivity");
  return units;
}

/// Random counts with a few inactive rows.
inline TransitionCountMatrix random_counts(std::mt19937_64& rng, std::size_t states, int max_count = 6,
                                           double inactive = 0.25) {
  TransitionCountMatrix a;
  a.counts = CountGrid(states);
  std::uniform_int_distribution<int> cell(0, max_count);
  std::bernoulli_distribution off(inactive);
  std::bernoulli_distribution sparse(0.5);
  for (StateId g = 0; g < states; ++g) {
    if (off(rng)) continue;
    for (StateId i = 0; i < states; ++i) a.counts(g, i) = sparse(rng) ? cell(rng) : 0;
    if (a.counts.row_sum(g) == 0) a.counts(g, 0) = 1;
  }
  return a;
}

/// Network with random weights of a given architecture, no training needed.
inline SubstituteNetwork random_network(std::mt19937_64& rng, int input, std::vector<int> hidden = {128, 128},
                                        double scale = 1.0) {
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<SubstituteNetwork::Layer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double s = scale / std::sqrt(static_cast<double>(sizes[l]));
    SubstituteNetwork::Layer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd(sizes[l + 1])};
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = s * n(rng);
      layer.bias(r) = 0.1 * n(rng);
    }
    layers.push_back(std::move(layer));
  }
  return SubstituteNetwork::from_layers(std::move(layers));
}

/// Single linear layer: Z = W x + b.
inline SubstituteNetwork linear_network(const Eigen::MatrixXd& w, const Eigen::Vector2d& b) {
  return SubstituteNetwork::from_layers({{w, b}});
}

/// Two Gaussian blobs separated along a known direction.
inline Dataset blobs(std::mt19937_64& rng, std::size_t n, int dim, double gap) {
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), dim);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    const int label = k % 2 == 0 ? kMalware : kBenign;
    d.y.push_back(label);
    for (int j = 0; j < dim; ++j) d.x(static_cast<Eigen::Index>(k), j) = noise(rng);
    d.x(static_cast<Eigen::Index>(k), 0) += label == kMalware ? gap : -gap;
  }
  return d;
}

}  // namespace evadroid::testing
