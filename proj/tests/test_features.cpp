#include <gtest/gtest.h>

#include <random>

#include "evadroid/features.hpp"
#include "evadroid/injection.hpp"
#include "fixtures.hpp"

using namespace evadroid;
using evadroid::testing::random_counts;
using evadroid::testing::small_app;

namespace {

const Abstractor& fam() {
  static const Abstractor a(AbstractionTable::builtin(AbstractionMode::Family));
  return a;
}
StateId fs(std::string_view name) { return *fam().table().find_state(name); }

TransitionCountMatrix two_state(std::vector<std::int64_t> cells) {
  TransitionCountMatrix a;
  a.counts = CountGrid(2);
  a.counts.cells() = std::move(cells);
  return a;
}

}  // namespace

TEST(Markov, SingleEdgeRow) {
  CallGraph g;
  auto m = MethodRef::from_qualified("android.app.Activity", "onCreate");
  auto n = MethodRef::from_qualified("java.lang.String", "length");
  g.nodes = {m, n};
  g.edges[{m, n}] = 1;
  auto [counts, x] = markov_features(g, fam());
  const auto s = fam().state_count();
  EXPECT_DOUBLE_EQ(x.x[fs("android") * s + fs("java")], 1.0);
  EXPECT_DOUBLE_EQ(x.x.sum(), 1.0);
  EXPECT_TRUE(x.active_rows[fs("android")]);
  EXPECT_EQ(std::count(x.active_rows.begin(), x.active_rows.end(), true), 1);
}

TEST(Markov, EmptyGraph) {
  auto [counts, x] = markov_features(CallGraph{}, fam());
  EXPECT_EQ(x.x.size(), 121);
  EXPECT_DOUBLE_EQ(x.x.sum(), 0.0);
  EXPECT_EQ(std::count(x.active_rows.begin(), x.active_rows.end(), true), 0);
}

TEST(Markov, AppRowsAreStochastic) {
  auto [counts, x] = markov_features(build_call_graph(small_app()), fam());
  EXPECT_LE(max_simplex_violation(x.x, x.states), 1e-12);
  const auto s = fam().state_count();
  // MainActivity makes 3 calls (invoke-super is opaque), Util makes 2
  EXPECT_EQ(counts.counts.row_sum(fam().table().self_defined()), 5);
  EXPECT_EQ(counts.counts(fam().table().obfuscated(), fs("android")), 1);
  EXPECT_NEAR(x.x[fam().table().self_defined() * s + fs("android")], 0.2, 1e-15);
}

TEST(Markov, PerturbExamples) {
  auto x = perturb_counts(two_state({3, 1, 0, 0}), [] {
    CountGrid w(2);
    w(0, 1) = 1;
    return w;
  }());
  EXPECT_DOUBLE_EQ(x.x[0], 0.6);
  EXPECT_DOUBLE_EQ(x.x[1], 0.4);
  EXPECT_NEAR(x.x[0] - 0.75, -0.15, 1e-15);

  auto y = perturb_counts(two_state({3, 1, 0, 0}), [] {
    CountGrid w(2);
    w(1, 0) = 2;
    return w;
  }());
  EXPECT_DOUBLE_EQ(y.x[2], 1.0);
  EXPECT_DOUBLE_EQ(y.x[3], 0.0);
  EXPECT_TRUE(y.active_rows[1]);
}

TEST(Markov, ZeroPerturbationIsIdentity) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    auto a = random_counts(rng, 11);
    auto x = to_probabilities(a);
    auto y = perturb_counts(a, CountGrid(11));
    EXPECT_EQ(x.x, y.x);
    EXPECT_EQ(x.active_rows, y.active_rows);
  }
}

TEST(Markov, RealAndIntegerPerturbationAgree) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> add(0, 3);
  for (int k = 0; k < 20; ++k) {
    auto a = random_counts(rng, 11);
    CountGrid w(11);
    Eigen::VectorXd wr(121);
    for (std::size_t c = 0; c < w.size(); ++c) {
      w[c] = add(rng);
      wr[static_cast<Eigen::Index>(c)] = static_cast<double>(w[c]);
    }
    EXPECT_LE((perturb_counts(a, w).x - perturb_counts_real(a, wr)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE(max_simplex_violation(perturb_counts_real(a, wr), 11), 1e-12);
  }
}

TEST(Markov, PerturbationNeverDecreasesCountsAndRejectsNegatives) {
  CountGrid w(2);
  w(0, 0) = -1;
  EXPECT_THROW(perturb_counts(two_state({1, 1, 1, 1}), w), std::invalid_argument);
  EXPECT_THROW(PerturbationPlan::additions(w), std::invalid_argument);
}

TEST(Markov, PerturbCommutesWithInjection) {
  const auto wl = SdkWhitelist::builtin();
  auto app = small_app();
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> amount(0, 4);
  for (int trial = 0; trial < 10; ++trial) {
    CountGrid w(11);
    for (std::size_t c = 0; c < w.size(); c += 7) w[c] = amount(rng);
    auto base = transition_counts(build_call_graph(app), fam());
    auto predicted = perturb_counts(base, w);
    auto injected = apply_injection(app, plan_injection(PerturbationPlan::additions(w), Strategy::Simple, app, fam(), wl));
    auto [counts, actual] = markov_features(build_call_graph(injected), fam());
    EXPECT_EQ(predicted.x, actual.x);
  }
}

// ---------------------------------------------------------------------------

namespace {

const char* const kSuspiciousBlock = R"(.class public Lcom/demo/Feature;
.method public addSuspiciousApiFeature()V
    .locals 1
    const-string v0, "phone"
    invoke-virtual {p0, v0}, Landroid/content/Context;->getSystemService(Ljava/lang/String;)Ljava/lang/Object;
    const-string v0, "http://203.0.113.5/gate.php"
    const-string v0, "android.permission.SEND_SMS"
    return-void
.end method
)";

}  // namespace

TEST(Drebin, ObservesEveryFeatureKind) {
  Manifest m{"com.demo", "com.demo.Main", {"android.hardware.camera"}, {"android.permission.SEND_SMS"},
             {"com.demo.Svc"}, {"android.intent.action.MAIN"}};
  auto strings = observe_drebin_strings(parse_smali_lite(kSuspiciousBlock), m, DrebinApiList::builtin());
  auto has = [&](DrebinSet s, const std::string& v) { return strings[static_cast<int>(s) - 1].count(v) == 1; };
  EXPECT_TRUE(has(DrebinSet::S1, "android.hardware.camera"));
  EXPECT_TRUE(has(DrebinSet::S2, "android.permission.SEND_SMS"));
  EXPECT_TRUE(has(DrebinSet::S3, "com.demo.Svc"));
  EXPECT_TRUE(has(DrebinSet::S4, "android.intent.action.MAIN"));
  EXPECT_TRUE(has(DrebinSet::S7, "getSystemService"));
  EXPECT_TRUE(has(DrebinSet::S6, "android.permission.SEND_SMS"));
  EXPECT_TRUE(has(DrebinSet::S8, "http://203.0.113.5/gate.php"));
  EXPECT_FALSE(has(DrebinSet::S8, "phone"));
}

TEST(Drebin, PresenceBitsAndEmptyCorpus) {
  auto dict = FeatureDictionary::parse(
      "S7 getSystemService\nS2 android.permission.SEND_SMS\nS5 sendTextMessage\nS8 http://x.example\n");
  ASSERT_EQ(dict.size(), 4u);
  EXPECT_EQ(dict.at(0).set, DrebinSet::S2);  // sets ordered S1..S8

  Manifest m;
  m.permissions = {"android.permission.SEND_SMS"};
  auto bits = drebin_features(parse_smali_lite(kSuspiciousBlock), m, dict);
  EXPECT_EQ(bits.bits[*dict.find(DrebinSet::S7, "getSystemService")], 1);
  EXPECT_EQ(bits.bits[*dict.find(DrebinSet::S2, "android.permission.SEND_SMS")], 1);
  EXPECT_EQ(bits.bits[*dict.find(DrebinSet::S5, "sendTextMessage")], 0);
  EXPECT_EQ(bits.count(), 2u);

  auto none = drebin_features({}, Manifest{}, dict);
  EXPECT_EQ(none.count(), 0u);
  EXPECT_EQ(none.to_sparse_text(), "");
}

TEST(Drebin, DictionaryOrderAndSerialization) {
  std::vector<DrebinStrings> obs(2);
  obs[0][7].insert("https://b.example");
  obs[0][7].insert("https://a.example");
  obs[1][0].insert("android.hardware.wifi");
  obs[1][7].insert("https://a.example");
  auto dict = FeatureDictionary::from_observations(obs);
  ASSERT_EQ(dict.size(), 3u);
  EXPECT_EQ(dict.at(0).feature, "android.hardware.wifi");
  EXPECT_EQ(dict.at(1).feature, "https://a.example");
  EXPECT_EQ(FeatureDictionary::parse(dict.serialize()).entries(), dict.entries());
  EXPECT_EQ(dict.ids_in({DrebinSet::S8}), (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(parse_drebin_set("S9"), std::invalid_argument);
}

TEST(Drebin, NeverInvokedFeatureInjectionSetsBits) {
  auto dict = FeatureDictionary::parse(
      "S5 getDeviceId\nS6 android.permission.READ_SMS\nS7 getSystemService\nS8 http://203.0.113.77/panel\n"
      "S2 android.permission.CAMERA\n");
  auto app = small_app();
  Manifest m{"com.demo.app", "com.demo.app.MainActivity", {}, {}, {}, {}};
  auto before = drebin_features(app, m, dict);
  EXPECT_EQ(before.count(), 0u);

  std::vector<std::size_t> flips(dict.size());
  for (std::size_t i = 0; i < flips.size(); ++i) flips[i] = i;
  auto ip = plan_feature_injection(flips, dict, app);
  auto units = apply_injection(app, ip);
  auto manifest = apply_manifest_edits(m, ip);
  auto after = drebin_features(units, manifest, dict);
  EXPECT_EQ(after.count(), dict.size());

  // the injected method is never called, so the call graph only gains its own edges
  Abstractor fam_a(AbstractionTable::builtin(AbstractionMode::Family));
  auto g_before = build_call_graph(app);
  auto g_after = build_call_graph(units);
  for (const auto& [edge, n] : g_before.edges) EXPECT_EQ(g_after.edges.at(edge), n);
}
