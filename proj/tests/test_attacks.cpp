#include <gtest/gtest.h>

#include <random>
#include <set>

#include "evadroid/attacks.hpp"
#include "fixtures.hpp"

using namespace evadroid;
using evadroid::testing::linear_network;
using evadroid::testing::random_counts;
using evadroid::testing::random_network;

namespace {

TransitionCountMatrix two_state(std::vector<std::int64_t> cells) {
  TransitionCountMatrix a;
  a.counts = CountGrid(2);
  a.counts.cells() = std::move(cells);
  return a;
}

// Z_benign = 4 x_01, Z_malware = 2.2: benign once x_01 > 0.55.
SubstituteNetwork toy_network() {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 4);
  w(kBenign, 1) = 4.0;
  return linear_network(w, Eigen::Vector2d(0.0, 2.2));
}

// Smallest squared-norm integer addition in [0, limit]^4 that the network labels benign.
std::int64_t brute_force_optimum(const SubstituteNetwork& net, const TransitionCountMatrix& a, int limit) {
  std::int64_t best = -1;
  for (int w0 = 0; w0 <= limit; ++w0)
    for (int w1 = 0; w1 <= limit; ++w1)
      for (int w2 = 0; w2 <= limit; ++w2)
        for (int w3 = 0; w3 <= limit; ++w3) {
          CountGrid omega(2);
          omega.cells() = {w0, w1, w2, w3};
          if (net.predict(perturb_counts(a, omega).x) != kBenign) continue;
          std::int64_t norm = w0 * w0 + w1 * w1 + w2 * w2 + w3 * w3;
          if (best < 0 || norm < best) best = norm;
        }
  return best;
}

Eigen::MatrixXd count_fd(const SubstituteNetwork& net, const TransitionCountMatrix& a, double h = 1e-6) {
  const auto n = static_cast<Eigen::Index>(a.counts.size());
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd up = Eigen::VectorXd::Zero(n), down = Eigen::VectorXd::Zero(n);
    up[k] = h;
    down[k] = -h;
    j.col(k) = (net.probabilities(perturb_counts_real(a, up)) - net.probabilities(perturb_counts_real(a, down))) /
               (2 * h);
  }
  return j;
}

}  // namespace

TEST(CwLoss, ClampsAtMinusKappa) {
  EXPECT_DOUBLE_EQ(cw_adversarial_loss({2.0, 5.0}, kMalware, 0.0), 3.0);
  EXPECT_DOUBLE_EQ(cw_adversarial_loss({5.0, 2.0}, kMalware, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(cw_adversarial_loss({5.0, 2.0}, kMalware, 100.0), -3.0);
  EXPECT_DOUBLE_EQ(cw_adversarial_loss({500.0, 2.0}, kMalware, 100.0), -100.0);
}

TEST(Saliency, SignConditions) {
  // columns: target derivative positive, admissible, other derivative negative, zero
  Eigen::MatrixXd j(2, 4);
  j.row(kBenign) << 0.9, 0.4, -0.1, 0.0;
  j.row(kMalware) << 0.2, -0.3, -0.5, 0.0;
  auto s = saliency_map(j, kMalware);
  EXPECT_DOUBLE_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 0.12, 1e-15);
  EXPECT_DOUBLE_EQ(s[2], 0.0);
  EXPECT_DOUBLE_EQ(s[3], 0.0);
  EXPECT_EQ(saliency_map(Eigen::MatrixXd::Zero(2, 9), kMalware), Eigen::VectorXd::Zero(9));
  EXPECT_THROW(saliency_map(Eigen::MatrixXd::Zero(3, 2), kMalware), std::invalid_argument);
}

TEST(Saliency, NonNegativeOnRandomJacobians) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    Eigen::MatrixXd j(2, 30);
    for (Eigen::Index c = 0; c < 30; ++c) j.col(c) << n(rng), n(rng);
    EXPECT_GE(saliency_map(j, kMalware).minCoeff(), 0.0);
  }
}

TEST(ChainRule, HandComputedRow) {
  auto a = two_state({3, 1, 0, 0});
  Eigen::MatrixXd jx(2, 4);
  jx << 1.0, 2.0, 5.0, 7.0,
        -1.0, 0.5, 3.0, 3.0;
  auto ja = chain_to_counts(jx, a, Eigen::VectorXd::Zero(4));
  // row mean weighted by x = (.75, .25)
  EXPECT_NEAR(ja(0, 0), (1.0 - 1.25) / 4.0, 1e-15);
  EXPECT_NEAR(ja(0, 1), (2.0 - 1.25) / 4.0, 1e-15);
  EXPECT_NEAR(ja(1, 0), (-1.0 + 0.625) / 4.0, 1e-15);
  // inactive row
  EXPECT_EQ(ja(0, 2), 0.0);
  EXPECT_EQ(ja(1, 3), 0.0);
}

TEST(ChainRule, SingleCalleeRowHasZeroDerivativeOnThatCell) {
  auto a = two_state({5, 0, 0, 0});
  Eigen::MatrixXd jx = Eigen::MatrixXd::Random(2, 4);
  auto ja = chain_to_counts(jx, a, Eigen::VectorXd::Zero(4));
  EXPECT_NEAR(ja(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(ja(1, 0), 0.0, 1e-15);
}

TEST(ChainRule, CountJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_counts(rng, 11);
    auto net = random_network(rng, 121, {32, 32}, 2.0);
    auto analytic = count_jacobian(net, a);
    auto numeric = count_fd(net, a);
    for (StateId g = 0; g < 11; ++g) {
      const bool active = a.counts.row_sum(g) > 0;
      for (StateId i = 0; i < 11; ++i) {
        const auto k = static_cast<Eigen::Index>(g * 11 + i);
        if (active) {
          EXPECT_NEAR(analytic(0, k), numeric(0, k), 1e-6);
          EXPECT_NEAR(analytic(1, k), numeric(1, k), 1e-6);
        } else {
          EXPECT_EQ(analytic.col(k), Eigen::Vector2d::Zero());
        }
      }
    }
  }
}

TEST(ChainRule, RejectsShapeMismatch) {
  EXPECT_THROW(chain_to_counts(Eigen::MatrixXd::Zero(2, 5), two_state({1, 0, 0, 0}), Eigen::VectorXd::Zero(4)),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(CarliniWagner, ToyProblemReachesIntegerOptimum) {
  auto net = toy_network();
  auto a = two_state({3, 1, 0, 0});
  SubstitutePilot pilot(net);
  ASSERT_EQ(net.predict(to_probabilities(a).x), kMalware);

  auto out = cw_attack(net, a, pilot, CwParams{});
  ASSERT_TRUE(out.success);
  EXPECT_EQ(out.final_label, kBenign);
  std::int64_t norm = 0;
  for (auto v : out.plan.call_additions.cells()) norm += v * v;
  EXPECT_EQ(norm, brute_force_optimum(net, a, 6));
  EXPECT_EQ(out.plan.call_additions(0, 1), 3);
  EXPECT_EQ(out.distortion, 3);
}

TEST(CarliniWagner, IteratesStayFeasible) {
  std::mt19937_64 rng(3);
  auto a = random_counts(rng, 11);
  auto net = random_network(rng, 121, {32}, 3.0);
  SubstitutePilot pilot(net);
  auto mask = row_mask(11, {9, 10});
  CwParams p;
  p.max_iterations = 50;
  p.target = net.predict(to_probabilities(a).x);
  cw_attack(net, a, pilot, p, mask, [&](const CwIterate& it) {
    EXPECT_GE(it.omega.minCoeff(), 0.0);
    for (std::size_t k = 0; k < mask.size(); ++k) {
      if (!mask[k]) EXPECT_EQ(it.omega[static_cast<Eigen::Index>(k)], 0.0);
    }
    EXPECT_LE(max_simplex_violation(it.x, 11), 1e-12);
  });
}

TEST(CarliniWagner, AlreadyBenignNeedsNoWork) {
  auto net = toy_network();
  auto a = two_state({1, 3, 0, 0});
  SubstitutePilot pilot(net);
  auto out = cw_attack(net, a, pilot, CwParams{});
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.iterations, 0);
  EXPECT_EQ(out.distortion, 0);
}

TEST(CarliniWagner, EmptyMaskIsInfeasible) {
  auto net = toy_network();
  SubstitutePilot pilot(net);
  EXPECT_THROW(cw_attack(net, two_state({3, 1, 0, 0}), pilot, CwParams{}, std::vector<bool>(4, false)),
               MaskInfeasible);
  CwParams bad;
  bad.c_init = -1.0;
  EXPECT_THROW(cw_attack(net, two_state({3, 1, 0, 0}), pilot, bad), std::invalid_argument);
}

TEST(CarliniWagner, UnreachableTargetFails) {
  // only the inactive row is modifiable, and it carries no gradient
  auto net = toy_network();
  SubstitutePilot pilot(net);
  auto out = cw_attack(net, two_state({3, 1, 0, 0}), pilot, CwParams{}, row_mask(2, {1}));
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.distortion, 0);
}

// ---------------------------------------------------------------------------

TEST(Jsma, AlreadyBenignAndEmptyDomain) {
  auto net = toy_network();
  SubstitutePilot pilot(net);
  auto done = jsma_attack_counts(net, two_state({1, 3, 0, 0}), pilot, JsmaParams{});
  EXPECT_TRUE(done.success);
  EXPECT_EQ(done.iterations, 0);

  JsmaParams empty;
  empty.domain = std::vector<std::size_t>{};
  auto none = jsma_attack_counts(net, two_state({3, 1, 0, 0}), pilot, empty);
  EXPECT_FALSE(none.success);
  EXPECT_EQ(none.iterations, 0);
  EXPECT_EQ(none.distortion, 0);
}

TEST(Jsma, PicksTheSalientCellFirst) {
  auto net = toy_network();
  SubstitutePilot pilot(net);
  JsmaParams p;
  p.features_per_iteration = 1;
  p.theta = 3;
  auto out = jsma_attack_counts(net, two_state({3, 1, 0, 0}), pilot, p);
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.iterations, 1);
  EXPECT_EQ(out.plan.call_additions(0, 1), 3);
  EXPECT_EQ(out.distortion, 3);
}

TEST(Jsma, BudgetAndSingleUseBounds) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_counts(rng, 11);
    auto net = random_network(rng, 121, {32}, 3.0);
    SubstitutePilot pilot(net);
    JsmaParams p;
    p.target = net.predict(to_probabilities(a).x);
    p.max_iterations = 1 + trial;
    auto out = jsma_attack_counts(net, a, pilot, p);
    EXPECT_LE(out.iterations, *p.max_iterations);
    EXPECT_LE(out.distortion, p.theta * p.features_per_iteration * out.iterations);
    for (auto v : out.plan.call_additions.cells()) EXPECT_LE(v, p.theta);
    EXPECT_EQ(out.pilot_queries, static_cast<std::uint64_t>(out.iterations + 1));
  }
}

TEST(Jsma, DefaultBudgetIsHalfTheFeatures) {
  // a pilot that never changes its mind exhausts the budget
  std::mt19937_64 rng(5);
  auto a = random_counts(rng, 11);
  auto net = random_network(rng, 121, {16});
  auto stubborn = make_oracle([](const Eigen::VectorXd&) { return kMalware; });
  BlackBoxPilot pilot(*stubborn);
  auto out = jsma_attack_counts(net, a, pilot, JsmaParams{});
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.iterations, 60);
  EXPECT_EQ(out.distortion, 120);
}

TEST(Jsma, RespectsMask) {
  std::mt19937_64 rng(6);
  auto a = random_counts(rng, 11);
  auto net = random_network(rng, 121, {16});
  auto stubborn = make_oracle([](const Eigen::VectorXd&) { return kMalware; });
  BlackBoxPilot pilot(*stubborn);
  auto mask = row_mask(11, {9, 10});
  auto out = jsma_attack_counts(net, a, pilot, JsmaParams{}, mask);
  EXPECT_EQ(out.distortion, 22);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) EXPECT_EQ(out.plan.call_additions[k], 0);
  }
}

// ---------------------------------------------------------------------------

namespace {

// Z_benign = 5 b_3 + b_1, Z_malware = 2.
SubstituteNetwork binary_network() {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 6);
  w(kBenign, 3) = 5.0;
  w(kBenign, 1) = 1.0;
  return linear_network(w, Eigen::Vector2d(0.0, 2.0));
}

}  // namespace

TEST(BinaryJsma, FlipsDominantFeatureFirst) {
  auto net = binary_network();
  SubstitutePilot pilot(net);
  BinaryFeatureVector x{{0, 0, 0, 0, 0, 1}};
  auto out = jsma_attack_binary(net, x, pilot, {20, {0, 1, 2, 3, 4}, kMalware});
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.plan.bit_flips, (std::vector<std::size_t>{3}));
}

TEST(BinaryJsma, OnlyAddsFeatures) {
  auto net = binary_network();
  SubstitutePilot pilot(net);
  BinaryFeatureVector full{{1, 1, 1, 0, 1, 1}};
  auto out = jsma_attack_binary(net, full, pilot, {20, {0, 1, 2, 4, 5}, kMalware});
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.iterations, 0);
  EXPECT_TRUE(out.plan.bit_flips.empty());

  std::mt19937_64 rng(7);
  auto random_net = random_network(rng, 40, {16});
  SubstitutePilot rp(random_net);
  std::bernoulli_distribution bit(0.3);
  for (int trial = 0; trial < 10; ++trial) {
    BinaryFeatureVector v;
    for (int i = 0; i < 40; ++i) v.bits.push_back(bit(rng));
    std::vector<std::size_t> mask;
    for (std::size_t i = 0; i < 40; i += 2) mask.push_back(i);
    auto r = jsma_attack_binary(random_net, v, rp, {5, mask, random_net.predict(v.to_dense())});
    std::set<std::size_t> seen;
    for (auto id : r.plan.bit_flips) {
      EXPECT_EQ(v.bits[id], 0);
      EXPECT_EQ(id % 2, 0u);
      EXPECT_TRUE(seen.insert(id).second);
    }
    EXPECT_LE(r.plan.bit_flips.size(), 5u);
  }
}
