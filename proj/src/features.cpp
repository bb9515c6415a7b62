#include "evadroid/features.hpp"

#include <cmath>

namespace evadroid {

TransitionCountMatrix transition_counts(const CallGraph& graph, const Abstractor& abstractor) {
  TransitionCountMatrix out{abstractor.mode(), CountGrid(abstractor.state_count())};
  for (const auto& [edge, count] : graph.edges) {
    out.counts(abstractor(edge.first), abstractor(edge.second)) += count;
  }
  return out;
}

MarkovFeatureVector to_probabilities(const TransitionCountMatrix& counts) {
  return perturb_counts(counts, CountGrid(counts.states()));
}

std::pair<TransitionCountMatrix, MarkovFeatureVector> markov_features(const CallGraph& graph,
                                                                      const Abstractor& abstractor) {
  auto counts = transition_counts(graph, abstractor);
  auto x = to_probabilities(counts);
  return {std::move(counts), std::move(x)};
}

MarkovFeatureVector perturb_counts(const TransitionCountMatrix& counts, const CountGrid& omega) {
  const std::size_t s = counts.states();
  if (omega.states() != s) throw std::invalid_argument("perturbation grid size mismatch");
  MarkovFeatureVector out;
  out.mode = counts.mode;
  out.states = s;
  out.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s * s));
  out.active_rows.assign(s, false);
  for (StateId g = 0; g < s; ++g) {
    std::int64_t denom = 0;
    for (StateId i = 0; i < s; ++i) {
      if (omega(g, i) < 0) throw std::invalid_argument("call additions must be non-negative");
      denom += counts.counts(g, i) + omega(g, i);
    }
    if (denom == 0) continue;
    out.active_rows[g] = true;
    for (StateId i = 0; i < s; ++i) {
      out.x[static_cast<Eigen::Index>(g * s + i)] =
          static_cast<double>(counts.counts(g, i) + omega(g, i)) / static_cast<double>(denom);
    }
  }
  return out;
}

Eigen::VectorXd perturb_counts_real(const TransitionCountMatrix& counts,
                                    const Eigen::VectorXd& omega) {
  const auto s = static_cast<Eigen::Index>(counts.states());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(s * s);
  for (Eigen::Index g = 0; g < s; ++g) {
    double denom = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
      denom += static_cast<double>(counts.counts[static_cast<std::size_t>(g * s + i)]) +
               omega[g * s + i];
    }
    if (denom <= 0.0) continue;
    for (Eigen::Index i = 0; i < s; ++i) {
      x[g * s + i] = (static_cast<double>(counts.counts[static_cast<std::size_t>(g * s + i)]) +
                      omega[g * s + i]) /
                     denom;
    }
  }
  return x;
}

double max_simplex_violation(const Eigen::VectorXd& x, std::size_t states) {
  const auto s = static_cast<Eigen::Index>(states);
  double worst = 0.0;
  for (Eigen::Index g = 0; g < s; ++g) {
    double sum = x.segment(g * s, s).sum();
    bool active = (x.segment(g * s, s).array() != 0.0).any();
    if (active) worst = std::max(worst, std::abs(sum - 1.0));
    if ((x.segment(g * s, s).array() < 0.0).any()) worst = std::max(worst, 1.0);
  }
  return worst;
}

}  // namespace evadroid
