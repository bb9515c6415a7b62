// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "evadroid/harness.hpp"

using namespace evadroid;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::map<std::uint64_t, std::unique_ptr<Workbench>>& benches() {
  static std::map<std::uint64_t, std::unique_ptr<Workbench>> b;
  return b;
}

Workbench& bench(std::uint64_t seed) {
  auto& b = benches()[seed];
  if (!b) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    b = std::make_unique<Workbench>(cfg);
  }
  return *b;
}

Eigen::VectorXd random_omega(std::mt19937_64& rng, std::size_t cells, double zero_fraction) {
  std::uniform_real_distribution<double> u(0.1, 5.0);
  std::bernoulli_distribution zero(zero_fraction);
  Eigen::VectorXd w(static_cast<Eigen::Index>(cells));
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = zero(rng) ? 0.0 : u(rng);
  return w;
}

// Central differences of F = softmax(Z) with respect to call counts at A + omega.
// F_0 + F_1 = 1, so only the less likely class, which keeps full precision, is differenced.
Eigen::MatrixXd fd_count_jacobian(const SubstituteNetwork& net, const TransitionCountMatrix& a,
                                  const Eigen::VectorXd& omega, double h) {
  const Eigen::Vector2d p = net.probabilities(perturb_counts_real(a, omega));
  const int small = p[0] < p[1] ? 0 : 1;
  Eigen::MatrixXd j(2, omega.size());
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    Eigen::VectorXd up = omega, down = omega;
    up[k] += h;
    down[k] -= h;
    const double d = (net.probabilities(perturb_counts_real(a, up))[small] -
                      net.probabilities(perturb_counts_real(a, down))[small]) /
                     (2 * h);
    j(small, k) = d;
    j(1 - small, k) = -d;
  }
  return j;
}

double row_total(const TransitionCountMatrix& a, const Eigen::VectorXd& omega, StateId g) {
  const auto s = static_cast<Eigen::Index>(a.states());
  return static_cast<double>(a.counts.row_sum(g)) + omega.segment(static_cast<Eigen::Index>(g) * s, s).sum();
}

std::size_t lowest_argmax(const Eigen::VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  }
  return best;
}

std::vector<TransitionCountMatrix> test_counts(Workbench& b) {
  std::vector<TransitionCountMatrix> out;
  for (auto i : b.test_malware()) {
    out.push_back(transition_counts(build_call_graph(b.original().samples[i].units), b.abstractor(false)));
  }
  return out;
}

// ---------------------------------------------------------------------------

Verdict gradient_oracle() {
  auto t0 = Clock::now();
  Verdict v;
  auto& b = bench(7);
  const auto& net = b.substitute(FeatureModel::Markov, true);
  const auto counts = test_counts(b);
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& a = counts[static_cast<std::size_t>(trial) % counts.size()];
    const Eigen::VectorXd omega = random_omega(rng, a.counts.size(), 0.5);
    const Eigen::MatrixXd analytic = count_jacobian(net, a, &omega);
    const Eigen::MatrixXd numeric = fd_count_jacobian(net, a, omega, 1e-6);
    // rows with no calls and no additions are not differentiable; their analytic derivative is zero
    Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(2, omega.size());
    const auto s = a.states();
    for (StateId g = 0; g < s; ++g) {
      const auto cols = Eigen::seqN(static_cast<Eigen::Index>(g * s), static_cast<Eigen::Index>(s));
      if (row_total(a, omega, g) > 0.0) {
        diff(Eigen::all, cols) = analytic(Eigen::all, cols) - numeric(Eigen::all, cols);
      } else if (analytic(Eigen::all, cols).cwiseAbs().maxCoeff() != 0.0) {
        v.require(false, "inactive row with non-zero derivative");
      }
    }
    const double scale = std::max(numeric.cwiseAbs().maxCoeff(), 1e-12);
    worst = std::max(worst, diff.cwiseAbs().maxCoeff() / scale);
  }
  const double t = seconds_since(t0);
  v.detail << "max relative error " << worst << ", " << t << " s";
  v.require(worst < 1e-4, "relative error < 1e-4");
  v.require(t < 10.0, "runtime < 10 s");
  return v;
}

Verdict simplex_invariant() {
  Verdict v;
  auto& b = bench(7);
  const auto& net = b.substitute(FeatureModel::Markov, true);
  SubstitutePilot pilot(net);
  const auto counts = test_counts(b);
  std::size_t iterates = 0;
  std::size_t violations = 0;
  double worst = 0.0;
  for (int run = 0; run < 50; ++run) {
    CwParams p;
    p.max_iterations = 200;
    cw_attack(net, counts[static_cast<std::size_t>(run)], pilot, p, {}, [&](const CwIterate& it) {
      ++iterates;
      const double dev = max_simplex_violation(it.x, counts[0].states());
      worst = std::max(worst, dev);
      if (dev > 1e-9 || it.omega.minCoeff() < 0.0) ++violations;
    });
  }
  v.detail << iterates << " iterates, max row-sum deviation " << worst << ", " << violations << " violations";
  v.require(violations == 0, "zero violations");
  v.require(iterates > 0, "iterates observed");
  return v;
}

Verdict injection_round_trip() {
  auto t0 = Clock::now();
  Verdict v;
  auto& b = bench(7);
  const auto& abstractor = b.abstractor(false);
  const auto& wl = b.tables().whitelist;
  const std::size_t s = abstractor.state_count();
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::int64_t> amount(1, 50);
  std::uniform_int_distribution<int> cells_per_plan(1, 12);
  std::size_t mismatches = 0;
  std::size_t plans = 0;
  for (auto strategy : {Strategy::Simple, Strategy::Sophisticated}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto& sample = b.original().samples[static_cast<std::size_t>(trial) % b.original().samples.size()];
      auto rows = strategy == Strategy::Simple ? std::vector<StateId>{} : sophisticated_rows(sample.units, abstractor);
      if (strategy == Strategy::Simple) {
        for (StateId g = 0; g < s; ++g) rows.push_back(g);
      }
      if (rows.empty()) continue;
      CountGrid omega(s);
      std::uniform_int_distribution<std::size_t> row(0, rows.size() - 1), col(0, s - 1);
      for (int k = cells_per_plan(rng); k > 0; --k) omega(rows[row(rng)], col(rng)) = amount(rng);
      auto ip = plan_injection(PerturbationPlan::additions(omega), strategy, sample.units, abstractor, wl);
      auto after = parse_smali_lite(serialize(apply_injection(sample.units, ip)));
      auto before_counts = transition_counts(build_call_graph(sample.units), abstractor);
      auto after_counts = transition_counts(build_call_graph(after), abstractor);
      ++plans;
      for (std::size_t c = 0; c < omega.size(); ++c) {
        if (after_counts.counts[c] != before_counts.counts[c] + omega[c]) {
          ++mismatches;
          break;
        }
      }
    }
  }
  const double t = seconds_since(t0);
  v.detail << plans << " plans, " << mismatches << " mismatches, " << t << " s";
  v.require(plans == 200, "100 plans per strategy");
  v.require(mismatches == 0, "exact count equality");
  v.require(t < 30.0, "runtime < 30 s");
  return v;
}

Verdict saliency_equivalence() {
  Verdict v;
  auto& b = bench(7);
  const auto& net = b.substitute(FeatureModel::Markov, true);
  const auto counts = test_counts(b);
  std::mt19937_64 rng(404);
  int same_argmax = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& a = counts[static_cast<std::size_t>(trial) % counts.size()];
    const Eigen::VectorXd omega = random_omega(rng, a.counts.size(), 0.8);
    const Eigen::VectorXd library = saliency_map(count_jacobian(net, a, &omega), kMalware);
    const Eigen::MatrixXd j = fd_count_jacobian(net, a, omega, 1e-6);
    Eigen::VectorXd direct = Eigen::VectorXd::Zero(j.cols());
    for (Eigen::Index i = 0; i < j.cols(); ++i) {
      const auto g = static_cast<StateId>(static_cast<std::size_t>(i) / a.states());
      if (row_total(a, omega, g) <= 0.0) continue;
      const double jt = j(kMalware, i);
      const double jo = j(kBenign, i);
      direct[i] = (jt <= 0.0 && jo >= 0.0) ? std::abs(jt) * jo : 0.0;
    }
    worst = std::max(worst, (library - direct).cwiseAbs().maxCoeff());
    same_argmax += lowest_argmax(library) == lowest_argmax(direct) ? 1 : 0;
  }
  v.detail << same_argmax << "/100 identical argmax, max abs difference " << worst;
  v.require(same_argmax == 100, "argmax agreement 100/100");
  v.require(worst < 1e-8, "values agree");
  return v;
}

Verdict end_to_end() {
  auto t0 = Clock::now();
  Verdict v;
  auto& b = bench(7);
  for (const char* d : {"svm", "rf", "1nn", "3nn"}) {
    const double acc = b.detector_accuracy(FeatureModel::Markov, d);
    v.detail << d << " acc " << acc << "; ";
    v.require(acc >= 0.9, std::string(d) + " accuracy >= 0.9");
  }
  for (auto alg : {Algorithm::Cw, Algorithm::Jsma}) {
    RunSpec spec;
    spec.algorithm = alg;
    spec.scenario = Scenario::FT;
    auto ft = b.run(spec).metrics;
    spec.scenario = Scenario::FTB;
    auto ftb = b.run(spec).metrics;
    const std::string name(to_string(alg));
    v.detail << name << " FT substitute " << ft.substitute_evasion_rate << " svm " << ft.evasion_rate << ", FTB svm "
             << ftb.evasion_rate << "; ";
    v.require(ft.substitute_evasion_rate >= 0.9, name + " FT substitute evasion >= 0.9");
    v.require(ft.evasion_rate >= 0.7, name + " FT transferred evasion >= 0.7");
    v.require(ftb.evasion_rate >= 0.9, name + " FTB evasion >= 0.9");
  }
  const double t = seconds_since(t0);
  v.detail << t << " s";
  v.require(t < 300.0, "runtime < 5 min");
  return v;
}

Verdict knowledge_monotonicity() {
  Verdict v;
  for (std::uint64_t seed : {7, 8, 9}) {
    for (auto alg : {Algorithm::Cw, Algorithm::Jsma}) {
      RunSpec spec;
      spec.algorithm = alg;
      spec.scenario = Scenario::F;
      const double f = bench(seed).run(spec).metrics.evasion_rate;
      spec.scenario = Scenario::FTB;
      const double ftb = bench(seed).run(spec).metrics.evasion_rate;
      v.detail << "seed " << seed << " " << to_string(alg) << " F " << f << " FTB " << ftb << "; ";
      v.require(ftb >= f, "FTB >= F");
    }
  }
  return v;
}

Verdict confidence_monotonicity() {
  Verdict v;
  for (std::uint64_t seed : {7, 8, 9}) {
    RunSpec spec;
    spec.algorithm = Algorithm::Cw;
    spec.strategy = Strategy::Sophisticated;
    spec.cw.kappa = 0.0;
    auto low = bench(seed).run(spec);
    spec.cw.kappa = 100.0;
    auto high = bench(seed).run(spec);
    // samples the attack succeeds on at both confidence levels
    double d_low = 0.0, d_high = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < low.outcomes.size(); ++i) {
      if (!low.outcomes[i].pilot_success || !high.outcomes[i].pilot_success) continue;
      d_low += static_cast<double>(low.outcomes[i].distortion);
      d_high += static_cast<double>(high.outcomes[i].distortion);
      ++n;
    }
    if (n > 0) {
      d_low /= n;
      d_high /= n;
    }
    v.detail << "seed " << seed << " n=" << n << " kappa0 " << d_low << " kappa100 " << d_high << "; ";
    v.require(n > 0, "non-empty successful subset");
    v.require(d_high >= d_low, "distortion(kappa=100) >= distortion(kappa=0)");
  }
  return v;
}

Verdict drebin_attack() {
  Verdict v;
  for (std::uint64_t seed : {7, 8, 9}) {
    auto& b = bench(seed);
    RunSpec spec;
    spec.features = FeatureModel::Drebin;
    spec.scenario = Scenario::FT;
    spec.drebin_budget = 20;
    spec.drebin_mask = DrebinMask::Dexcode;
    auto dex = b.run(spec);
    const auto data = b.dataset(FeatureModel::Drebin, b.test_malware(), false);
    std::size_t bad_flips = 0;
    for (std::size_t r = 0; r < dex.outcomes.size(); ++r) {
      for (auto f : dex.outcomes[r].flips) {
        if (data.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) != 0.0) ++bad_flips;
      }
      if (dex.outcomes[r].flips.size() > 20) ++bad_flips;
    }
    spec.drebin_mask = DrebinMask::SystemPermissions;
    auto small = b.run(spec).metrics;
    spec.drebin_mask = DrebinMask::AllPermissions;
    auto large = b.run(spec).metrics;
    v.detail << "seed " << seed << " dexcode substitute " << dex.metrics.substitute_evasion_rate << " violations "
             << dex.metrics.mask_violations + bad_flips << ", system-perm svm " << small.evasion_rate
             << " all-perm svm " << large.evasion_rate << "; ";
    v.require(bad_flips == 0 && dex.metrics.mask_violations == 0 && small.mask_violations == 0 &&
                  large.mask_violations == 0,
              "only in-mask 0->1 flips");
    v.require(dex.metrics.substitute_evasion_rate >= 0.9, "substitute evasion >= 0.9");
    v.require(large.evasion_rate > small.evasion_rate, "larger mask transfers strictly better");
  }
  return v;
}

Verdict defence() {
  Verdict v;
  auto& b = bench(7);
  RunSpec spec;
  spec.scenario = Scenario::FT;
  auto report = run_defence_experiment(b, spec);
  const double off = report.simple_off.metrics.realized_fraction;
  const double on = report.simple_on.metrics.realized_fraction;
  v.detail << "simple realized " << off << " -> " << on << ", sophisticated violations "
           << report.sophisticated_off.metrics.mask_violations + report.sophisticated_on.metrics.mask_violations
           << "; ";
  v.require(on < off, "filter reduces realized perturbation");
  v.require(report.sophisticated_off.metrics.mask_violations == 0 &&
                report.sophisticated_on.metrics.mask_violations == 0,
            "sophisticated mask compliance");

  // the injected camouflage callers are self-defined once filtered
  const auto& plain = b.abstractor(false);
  const auto& filtered = b.abstractor(true);
  const auto& sample = b.original().samples[b.test_malware().front()];
  CountGrid omega(plain.state_count());
  for (StateId g = 0; g < plain.table().named_state_count(); ++g) omega(g, g) = 1;
  auto ip = plan_injection(PerturbationPlan::additions(omega), Strategy::Simple, sample.units, plain,
                           b.tables().whitelist);
  std::size_t relabelled = 0;
  for (const auto& unit : ip.new_units) {
    for (const auto& u : parse_smali_lite(unit.text)) {
      if (filtered.abstract_class(u.class_name) == plain.table().self_defined()) ++relabelled;
    }
  }
  v.detail << relabelled << "/" << ip.new_units.size() << " camouflage classes self-defined after filtering";
  v.require(!ip.new_units.empty() && relabelled == ip.new_units.size(), "camouflage callers relabelled");
  return v;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"gradient oracle", gradient_oracle},
      {"simplex invariant", simplex_invariant},
      {"injection round-trip", injection_round_trip},
      {"saliency equivalence", saliency_equivalence},
      {"desk-scale end-to-end", end_to_end},
      {"knowledge monotonicity", knowledge_monotonicity},
      {"confidence monotonicity", confidence_monotonicity},
      {"binary-feature attack", drebin_attack},
      {"defence", defence},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failures += v.pass ? 0 : 1;
    std::printf("criterion %d (%s): %s - %s\n", index, name, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
