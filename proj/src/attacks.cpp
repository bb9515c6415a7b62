#include "evadroid/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace evadroid {

void CwParams::validate() const {
  if (!(c_init > 0.0) || c_max < c_init || max_iterations < 1 || !(step > 0.0) || kappa < 0.0) {
    throw std::invalid_argument("invalid C&W parameters");
  }
  if (target != kBenign && target != kMalware) throw std::invalid_argument("target must be 0 or 1");
}

void JsmaParams::validate() const {
  if (theta < 1) throw std::invalid_argument("theta must be at least 1");
  if (max_iterations && *max_iterations < 0) throw std::invalid_argument("negative iteration budget");
  if (features_per_iteration != 1 && features_per_iteration != 2) {
    throw std::invalid_argument("features_per_iteration must be 1 or 2");
  }
  if (target != kBenign && target != kMalware) throw std::invalid_argument("target must be 0 or 1");
}

double cw_adversarial_loss(const Eigen::Vector2d& z, int target, double kappa) {
  return std::max(z[target] - z[1 - target], -kappa);
}

std::vector<bool> row_mask(std::size_t states, const std::vector<StateId>& rows) {
  std::vector<bool> mask(states * states, false);
  for (auto g : rows) {
    if (g >= states) throw std::out_of_range("row outside the state space");
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(g * states), states, true);
  }
  return mask;
}

Eigen::MatrixXd chain_to_counts(const Eigen::MatrixXd& feature_jacobian,
                                const TransitionCountMatrix& counts, const Eigen::VectorXd& omega) {
  const auto s = static_cast<Eigen::Index>(counts.states());
  if (feature_jacobian.cols() != s * s || omega.size() != s * s) {
    throw std::invalid_argument("jacobian does not match the state space");
  }
  const Eigen::VectorXd x = perturb_counts_real(counts, omega);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(feature_jacobian.rows(), s * s);
  for (Eigen::Index g = 0; g < s; ++g) {
    double denom = omega.segment(g * s, s).sum();
    for (Eigen::Index i = 0; i < s; ++i) {
      denom += static_cast<double>(counts.counts[static_cast<std::size_t>(g * s + i)]);
    }
    if (denom <= 0.0) continue;
    const auto block = feature_jacobian.middleCols(g * s, s);
    const Eigen::VectorXd mean = block * x.segment(g * s, s);
    out.middleCols(g * s, s) = (block.colwise() - mean) / denom;
  }
  return out;
}

Eigen::MatrixXd count_jacobian(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                               const Eigen::VectorXd* omega) {
  const auto n = static_cast<Eigen::Index>(counts.counts.size());
  const Eigen::VectorXd w = omega != nullptr ? *omega : Eigen::VectorXd::Zero(n);
  return chain_to_counts(net.jacobian(perturb_counts_real(counts, w)), counts, w);
}

Eigen::VectorXd saliency_map(const Eigen::MatrixXd& jacobian, int target) {
  if (jacobian.rows() != 2) throw std::invalid_argument("saliency needs a 2-row jacobian");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(jacobian.cols());
  for (Eigen::Index i = 0; i < jacobian.cols(); ++i) {
    const double jt = jacobian(target, i);
    const double others = jacobian(1 - target, i);
    if (jt > 0.0 || others < 0.0) continue;
    s[i] = std::abs(jt) * others;
  }
  return s;
}

namespace {

CountGrid round_up(const Eigen::VectorXd& omega, std::size_t states) {
  CountGrid grid(states);
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    if (omega[k] > 1e-9) grid[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(std::ceil(omega[k] - 1e-9));
  }
  return grid;
}

Eigen::VectorXd to_real(const CountGrid& grid) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t k = 0; k < grid.size(); ++k) v[static_cast<Eigen::Index>(k)] = static_cast<double>(grid[k]);
  return v;
}

void check_mask(const std::vector<bool>& mask, std::size_t cells) {
  if (mask.empty()) return;
  if (mask.size() != cells) throw std::invalid_argument("mask does not match the state space");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) throw MaskInfeasible();
}

}  // namespace

AttackOutcome cw_attack(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                        const PilotClassifier& pilot, const CwParams& params,
                        const std::vector<bool>& mask, const CwObserver& observer) {
  params.validate();
  const std::size_t states = counts.states();
  const auto n = static_cast<Eigen::Index>(states * states);
  check_mask(mask, states * states);
  const std::uint64_t queries_before = pilot.queries();

  AttackOutcome out;
  out.plan = PerturbationPlan::additions(CountGrid(states));
  Eigen::VectorXd omega = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd x = perturb_counts_real(counts, omega);
  int label = pilot.label(x);

  Eigen::VectorXd allowed = Eigen::VectorXd::Ones(n);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) allowed[static_cast<Eigen::Index>(k)] = 0.0;
  }

  auto objective = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& features, double c) {
    return w.squaredNorm() + c * cw_adversarial_loss(net.logits(features), params.target, params.kappa);
  };

  const int check_every = std::max(1, params.max_iterations / 10);
  for (double c = params.c_init; c < params.c_max && label == params.target; c *= 10.0) {
    Eigen::VectorXd accum = Eigen::VectorXd::Zero(n);
    double checkpoint = std::numeric_limits<double>::infinity();
    for (int it = 0; it < params.max_iterations; ++it) {
      Eigen::VectorXd grad = 2.0 * omega;
      const Eigen::Vector2d z = net.logits(x);
      if (z[params.target] - z[1 - params.target] > -params.kappa) {
        const Eigen::MatrixXd dz = net.logit_jacobian(x);
        Eigen::MatrixXd margin = dz.row(params.target) - dz.row(1 - params.target);
        grad += c * chain_to_counts(margin, counts, omega).row(0).transpose();
      }
      grad = grad.cwiseProduct(allowed);
      accum += grad.cwiseAbs2();
      omega -= (params.step * grad.array() / (accum.array().sqrt() + 1e-8)).matrix();
      omega = omega.cwiseMax(0.0).cwiseProduct(allowed);
      x = perturb_counts_real(counts, omega);
      ++out.iterations;

      const double obj = objective(omega, x, c);
      if (observer) observer(CwIterate{c, it, omega, x, obj});
      if (params.abort_early && (it + 1) % check_every == 0) {
        if (obj > checkpoint * 0.9999) break;
        checkpoint = obj;
      }
    }
    out.plan.call_additions = round_up(omega, states);
    label = pilot.label(perturb_counts_real(counts, to_real(out.plan.call_additions)));
  }

  out.success = label != params.target;
  out.final_label = label;
  out.distortion = out.plan.distortion();
  out.pilot_queries = pilot.queries() - queries_before;
  return out;
}

AttackOutcome jsma_attack_counts(const SubstituteNetwork& net, const TransitionCountMatrix& counts,
                                 const PilotClassifier& pilot, const JsmaParams& params,
                                 const std::vector<bool>& mask) {
  params.validate();
  const std::size_t states = counts.states();
  const std::size_t cells = states * states;
  if (!mask.empty() && mask.size() != cells) throw std::invalid_argument("mask does not match the state space");
  const std::uint64_t queries_before = pilot.queries();

  std::vector<std::size_t> domain;
  if (params.domain) {
    domain = *params.domain;
    std::sort(domain.begin(), domain.end());
    domain.erase(std::unique(domain.begin(), domain.end()), domain.end());
    if (!domain.empty() && domain.back() >= cells) throw std::out_of_range("domain index outside the features");
  } else {
    domain.resize(cells);
    for (std::size_t k = 0; k < cells; ++k) domain[k] = k;
  }
  if (!mask.empty()) std::erase_if(domain, [&](std::size_t k) { return !mask[k]; });

  const int budget = params.max_iterations.value_or(static_cast<int>(cells / 2));
  AttackOutcome out;
  CountGrid omega(states);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
  Eigen::VectorXd x = perturb_counts_real(counts, w);
  int label = pilot.label(x);

  while (label == params.target && out.iterations < budget && !domain.empty()) {
    const Eigen::VectorXd scores = saliency_map(chain_to_counts(net.jacobian(x), counts, w), params.target);
    for (int pick = 0; pick < params.features_per_iteration && !domain.empty(); ++pick) {
      // domain is sorted, so the first maximum is the lowest index
      auto best = domain.begin();
      for (auto it = domain.begin(); it != domain.end(); ++it) {
        if (scores[static_cast<Eigen::Index>(*it)] > scores[static_cast<Eigen::Index>(*best)]) best = it;
      }
      omega[*best] += params.theta;
      w[static_cast<Eigen::Index>(*best)] = static_cast<double>(omega[*best]);
      domain.erase(best);
    }
    x = perturb_counts_real(counts, w);
    label = pilot.label(x);
    ++out.iterations;
  }

  out.plan = PerturbationPlan::additions(std::move(omega));
  out.success = label != params.target;
  out.final_label = label;
  out.distortion = out.plan.distortion();
  out.pilot_queries = pilot.queries() - queries_before;
  return out;
}

AttackOutcome jsma_attack_binary(const SubstituteNetwork& net, const BinaryFeatureVector& x,
                                 const PilotClassifier& pilot, const BinaryJsmaParams& params) {
  if (params.max_flips < 0) throw std::invalid_argument("negative flip budget");
  if (params.target != kBenign && params.target != kMalware) throw std::invalid_argument("target must be 0 or 1");
  const std::uint64_t queries_before = pilot.queries();

  std::vector<std::size_t> candidates;
  for (auto id : params.mask) {
    if (id >= x.bits.size()) throw std::out_of_range("mask feature outside the dictionary");
    if (x.bits[id] == 0) candidates.push_back(id);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  AttackOutcome out;
  std::vector<std::size_t> flips;
  Eigen::VectorXd dense = x.to_dense();
  int label = pilot.label(dense);
  while (label == params.target && out.iterations < params.max_flips && !candidates.empty()) {
    const Eigen::MatrixXd j = net.jacobian(dense);
    auto best = candidates.begin();
    for (auto it = candidates.begin(); it != candidates.end(); ++it) {
      if (j(1 - params.target, static_cast<Eigen::Index>(*it)) >
          j(1 - params.target, static_cast<Eigen::Index>(*best))) {
        best = it;
      }
    }
    dense[static_cast<Eigen::Index>(*best)] = 1.0;
    flips.push_back(*best);
    candidates.erase(best);
    label = pilot.label(dense);
    ++out.iterations;
  }

  out.plan = PerturbationPlan::flips(std::move(flips));
  out.success = label != params.target;
  out.final_label = label;
  out.distortion = out.plan.distortion();
  out.pilot_queries = pilot.queries() - queries_before;
  return out;
}

}  // namespace evadroid
