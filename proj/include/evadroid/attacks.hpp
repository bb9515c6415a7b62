#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "evadroid/features.hpp"
#include "evadroid/models.hpp"
#include "evadroid/perturbation.hpp"

namespace evadroid {

struct MaskInfeasible : std::runtime_error {
  MaskInfeasible() : std::runtime_error("attack mask leaves no modifiable coordinate") {}
};

struct CwParams {
  double c_init = 0.1;
  double c_max = 1000.0;
  double kappa = 0.0;
  int max_iterations = 1000;  // per value of c
  double step = 0.1;          // AdaGrad base rate
  int target = kMalware;      // class the sample must leave
  /// Ends a c stage once the objective stops improving.
  bool abort_early = true;

  void validate() const;
};

struct JsmaParams {
  /// Iteration budget; nullopt means half the number of features.
  std::optional<int> max_iterations;
  std::int64_t theta = 1;
  int features_per_iteration = 2;
  /// Search domain; nullopt means every coordinate allowed by the mask.
  std::optional<std::vector<std::size_t>> domain;
  int target = kMalware;

  void validate() const;
};

struct BinaryJsmaParams {
  int max_flips = 20;
  /// Modifiable feature ids.
  std::vector<std::size_t> mask;
  int target = kMalware;
};

struct AttackOutcome {
  bool success = false;  // pilot label differs from the target class
  PerturbationPlan plan;
  std::int64_t distortion = 0;
  int iterations = 0;
  int final_label = kMalware;
  std::uint64_t pilot_queries = 0;
};

/// max(Z_t - max_{i != t} Z_i, -kappa)
double cw_adversarial_loss(const Eigen::Vector2d& z, int target, double kappa);

/// Per-cell mask allowing every coordinate whose caller row is in `rows`.
std::vector<bool> row_mask(std::size_t states, const std::vector<StateId>& rows);

/// Maps a 2 x S^2 derivative with respect to features onto call counts:
/// d/da_gi = (d/dx_gi - sum_k d/dx_gk * x_gk) / (a_g + w_g). Rows with a zero
/// denominator get zero derivative.
Eigen::MatrixXd chain_to_counts(const Eigen::MatrixXd& feature_jacobian,
                                const TransitionCountMatrix& counts, const Eigen::VectorXd& omega);

/// d F_j / d a_i at the counts A + omega (omega defaults to zero).
Eigen::MatrixXd count_jacobian(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                               const Eigen::VectorXd* omega = nullptr);

Eigen::VectorXd saliency_map(const Eigen::MatrixXd& jacobian, int target);

struct CwIterate {
  double c = 0.0;
  int iteration = 0;
  const Eigen::VectorXd& omega;
  const Eigen::VectorXd& x;
  double objective = 0.0;
};
using CwObserver = std::function<void(const CwIterate&)>;

/// An empty mask allows every cell.
AttackOutcome cw_attack(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                        const PilotClassifier& pilot, const CwParams& params,
                        const std::vector<bool>& mask = {}, const CwObserver& observer = {});

AttackOutcome jsma_attack_counts(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                                 const PilotClassifier& pilot, const JsmaParams& params,
                                 const std::vector<bool>& mask = {});

AttackOutcome jsma_attack_binary(const SubstituteNetwork& net, const BinaryFeatureVector& x,
                                 const PilotClassifier& pilot, const BinaryJsmaParams& params);

}  // namespace evadroid
