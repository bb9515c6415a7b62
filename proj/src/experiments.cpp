#include <algorithm>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include "evadroid/harness.hpp"
#include "text_util.hpp"

namespace evadroid {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::F: return "F";
    case Scenario::FT: return "FT";
    case Scenario::FB: return "FB";
    case Scenario::FTB: return "FTB";
  }
  return "?";
}

Scenario parse_scenario(std::string_view text) {
  if (text == "F") return Scenario::F;
  if (text == "FT") return Scenario::FT;
  if (text == "FB") return Scenario::FB;
  if (text == "FTB") return Scenario::FTB;
  throw std::invalid_argument("unknown scenario: " + std::string(text) + " (F, FT, FB, FTB)");
}

bool pilot_is_detector(Scenario s) { return s == Scenario::FB || s == Scenario::FTB; }
bool uses_original_training(Scenario s) { return s == Scenario::FT || s == Scenario::FTB; }

std::string_view to_string(Algorithm a) { return a == Algorithm::Cw ? "cw" : "jsma"; }

Algorithm parse_algorithm(std::string_view text) {
  if (text == "cw") return Algorithm::Cw;
  if (text == "jsma") return Algorithm::Jsma;
  throw std::invalid_argument("unknown algorithm: " + std::string(text) + " (cw, jsma)");
}

std::string_view to_string(FeatureModel f) { return f == FeatureModel::Markov ? "markov" : "drebin"; }

FeatureModel parse_feature_model(std::string_view text) {
  if (text == "markov") return FeatureModel::Markov;
  if (text == "drebin") return FeatureModel::Drebin;
  throw std::invalid_argument("unknown feature model: " + std::string(text) + " (markov, drebin)");
}

std::string_view to_string(DrebinMask m) {
  switch (m) {
    case DrebinMask::Dexcode: return "dexcode";
    case DrebinMask::SystemPermissions: return "system-permissions";
    case DrebinMask::AllPermissions: return "all-permissions";
  }
  return "?";
}

DrebinMask parse_drebin_mask(std::string_view text) {
  if (text == "dexcode") return DrebinMask::Dexcode;
  if (text == "system-permissions") return DrebinMask::SystemPermissions;
  if (text == "all-permissions") return DrebinMask::AllPermissions;
  throw std::invalid_argument("unknown Drebin mask: " + std::string(text));
}

std::vector<std::size_t> drebin_mask_ids(DrebinMask mask, const FeatureDictionary& dict) {
  switch (mask) {
    case DrebinMask::Dexcode:
      return dict.ids_in({DrebinSet::S5, DrebinSet::S6, DrebinSet::S7, DrebinSet::S8});
    case DrebinMask::AllPermissions: return dict.ids_in({DrebinSet::S2});
    case DrebinMask::SystemPermissions: {
      std::vector<std::size_t> ids;
      for (auto id : dict.ids_in({DrebinSet::S2})) {
        if (detail::starts_with(dict.at(id).feature, "android.permission.")) ids.push_back(id);
      }
      return ids;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  generator.validate();
  if (test_malware >= generator.malware || benign_holdout >= generator.benign) {
    throw std::invalid_argument("held-out sets must leave training samples of both classes");
  }
  if (surrogate_drift < 0.0 || surrogate_drift > 1.0) throw std::invalid_argument("drift must lie in [0, 1]");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"seed", seed},
          {"mode", to_string(mode)},
          {"generator", generator.to_json()},
          {"surrogate_drift", surrogate_drift},
          {"test_malware", test_malware},
          {"benign_holdout", benign_holdout},
          {"substitute",
           {{"hidden", substitute.hidden},
            {"dropout", substitute.dropout},
            {"epochs", substitute.epochs},
            {"batch_size", substitute.batch_size},
            {"learning_rate", substitute.learning_rate},
            {"adagrad_epsilon", substitute.adagrad_epsilon}}},
          {"substitute_on_detector_labels", substitute_on_detector_labels},
          {"threads", threads}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
  c.surrogate_drift = j.value("surrogate_drift", c.surrogate_drift);
  c.test_malware = j.value("test_malware", c.test_malware);
  c.benign_holdout = j.value("benign_holdout", c.benign_holdout);
  if (j.contains("substitute")) {
    const auto& s = j.at("substitute");
    c.substitute.hidden = s.value("hidden", c.substitute.hidden);
    c.substitute.dropout = s.value("dropout", c.substitute.dropout);
    c.substitute.epochs = s.value("epochs", c.substitute.epochs);
    c.substitute.batch_size = s.value("batch_size", c.substitute.batch_size);
    c.substitute.learning_rate = s.value("learning_rate", c.substitute.learning_rate);
    c.substitute.adagrad_epsilon = s.value("adagrad_epsilon", c.substitute.adagrad_epsilon);
  }
  c.substitute_on_detector_labels = j.value("substitute_on_detector_labels", c.substitute_on_detector_labels);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

nlohmann::json RunSpec::to_json() const {
  nlohmann::json jsma_json = {{"theta", jsma.theta}, {"features_per_iteration", jsma.features_per_iteration}};
  jsma_json["max_iterations"] = jsma.max_iterations ? nlohmann::json(*jsma.max_iterations) : nlohmann::json(nullptr);
  return {{"features", to_string(features)},
          {"scenario", to_string(scenario)},
          {"algorithm", to_string(algorithm)},
          {"strategy", to_string(strategy)},
          {"detector", detector},
          {"filter", filter},
          {"attack_benign", attack_benign},
          {"cw",
           {{"c_init", cw.c_init},
            {"c_max", cw.c_max},
            {"kappa", cw.kappa},
            {"max_iterations", cw.max_iterations},
            {"step", cw.step},
            {"abort_early", cw.abort_early}}},
          {"jsma", jsma_json},
          {"drebin", {{"budget", drebin_budget}, {"mask", to_string(drebin_mask)}}}};
}

RunSpec RunSpec::from_json(const nlohmann::json& j) {
  RunSpec r;
  if (j.contains("features")) r.features = parse_feature_model(j.at("features").get<std::string>());
  if (j.contains("scenario")) r.scenario = parse_scenario(j.at("scenario").get<std::string>());
  if (j.contains("algorithm")) r.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  if (j.contains("strategy")) r.strategy = parse_strategy(j.at("strategy").get<std::string>());
  r.detector = j.value("detector", r.detector);
  r.filter = j.value("filter", r.filter);
  r.attack_benign = j.value("attack_benign", r.attack_benign);
  if (j.contains("cw")) {
    const auto& c = j.at("cw");
    r.cw.c_init = c.value("c_init", r.cw.c_init);
    r.cw.c_max = c.value("c_max", r.cw.c_max);
    r.cw.kappa = c.value("kappa", r.cw.kappa);
    r.cw.max_iterations = c.value("max_iterations", r.cw.max_iterations);
    r.cw.step = c.value("step", r.cw.step);
    r.cw.abort_early = c.value("abort_early", r.cw.abort_early);
    r.cw.validate();
  }
  if (j.contains("jsma")) {
    const auto& s = j.at("jsma");
    if (s.contains("max_iterations") && !s.at("max_iterations").is_null()) {
      r.jsma.max_iterations = s.at("max_iterations").get<int>();
    }
    r.jsma.theta = s.value("theta", r.jsma.theta);
    r.jsma.features_per_iteration = s.value("features_per_iteration", r.jsma.features_per_iteration);
    r.jsma.validate();
  }
  if (j.contains("drebin")) {
    const auto& d = j.at("drebin");
    r.drebin_budget = d.value("budget", r.drebin_budget);
    if (d.contains("mask")) r.drebin_mask = parse_drebin_mask(d.at("mask").get<std::string>());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Outcomes and metrics

nlohmann::json SampleOutcome::to_json() const {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["label"] = label;
  j["pilot_success"] = pilot_success;
  j["iterations"] = iterations;
  j["pilot_queries"] = pilot_queries;
  j["distortion"] = distortion;
  j["realized"] = realized;
  j["detector_before"] = detector_before;
  j["detector_after"] = detector_after;
  j["substitute_after"] = substitute_after;
  j["mask_violations"] = mask_violations;
  j["consistent"] = consistent;
  j["added_per_set"] = added_per_set;
  j["cells"] = cells;
  j["flips"] = flips;
  return nlohmann::json::parse(j.dump());
}

SampleOutcome SampleOutcome::from_json(const nlohmann::json& j) {
  SampleOutcome o;
  o.id = j.at("id").get<std::string>();
  o.label = j.at("label").get<int>();
  o.pilot_success = j.at("pilot_success").get<bool>();
  o.iterations = j.at("iterations").get<int>();
  o.pilot_queries = j.at("pilot_queries").get<std::uint64_t>();
  o.distortion = j.at("distortion").get<std::int64_t>();
  o.realized = j.at("realized").get<std::int64_t>();
  o.detector_before = j.at("detector_before").get<int>();
  o.detector_after = j.at("detector_after").get<int>();
  o.substitute_after = j.at("substitute_after").get<int>();
  o.mask_violations = j.at("mask_violations").get<std::size_t>();
  o.consistent = j.at("consistent").get<bool>();
  o.added_per_set = j.at("added_per_set").get<std::array<std::int64_t, 8>>();
  o.cells = j.at("cells").get<std::vector<std::array<std::int64_t, 3>>>();
  o.flips = j.at("flips").get<std::vector<std::size_t>>();
  return o;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"samples", samples},
          {"evasion_rate", evasion_rate},
          {"baseline_evasion_rate", baseline_evasion_rate},
          {"substitute_evasion_rate", substitute_evasion_rate},
          {"pilot_success_rate", pilot_success_rate},
          {"avg_distortion", avg_distortion},
          {"realized_fraction", realized_fraction},
          {"mask_violations", mask_violations},
          {"inconsistent", inconsistent},
          {"avg_added_per_set", avg_added_per_set}};
}

MetricsReport compute_metrics(const std::vector<SampleOutcome>& outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("no outcomes to summarize");
  MetricsReport m;
  m.samples = outcomes.size();
  const double n = static_cast<double>(outcomes.size());
  std::int64_t planned = 0;
  std::int64_t realized = 0;
  for (const auto& o : outcomes) {
    m.evasion_rate += o.evaded() ? 1.0 : 0.0;
    m.baseline_evasion_rate += o.detector_before != o.label ? 1.0 : 0.0;
    m.substitute_evasion_rate += o.substitute_after != o.label ? 1.0 : 0.0;
    m.pilot_success_rate += o.pilot_success ? 1.0 : 0.0;
    m.avg_distortion += static_cast<double>(o.distortion);
    planned += o.distortion;
    realized += o.realized;
    m.mask_violations += o.mask_violations;
    m.inconsistent += o.consistent ? 0 : 1;
    for (std::size_t k = 0; k < 8; ++k) m.avg_added_per_set[k] += static_cast<double>(o.added_per_set[k]);
  }
  m.evasion_rate /= n;
  m.baseline_evasion_rate /= n;
  m.substitute_evasion_rate /= n;
  m.pilot_success_rate /= n;
  m.avg_distortion /= n;
  for (auto& v : m.avg_added_per_set) v /= n;
  m.realized_fraction = planned == 0 ? 1.0 : static_cast<double>(realized) / static_cast<double>(planned);
  return m;
}

std::string outcomes_to_jsonl(const std::vector<SampleOutcome>& outcomes) {
  std::string out;
  for (const auto& o : outcomes) out += o.to_json().dump() + "\n";
  return out;
}

std::vector<SampleOutcome> outcomes_from_jsonl(std::string_view text) {
  std::vector<SampleOutcome> out;
  for (auto line : detail::split_lines(text)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    out.push_back(SampleOutcome::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

void EvasionGrid::add(const RunResult& result) {
  const std::string det = result.spec.detector;
  const std::string alg(to_string(result.spec.algorithm));
  auto it = std::find_if(rows.begin(), rows.end(),
                         [&](const Row& r) { return r.detector == det && r.algorithm == alg; });
  if (it == rows.end()) {
    rows.push_back({det, alg, result.metrics.baseline_evasion_rate, {}, {}});
    it = rows.end() - 1;
  }
  const std::string sc(to_string(result.spec.scenario));
  it->by_scenario[sc] = result.metrics.evasion_rate;
  it->distortion_by_scenario[sc] = result.metrics.avg_distortion;
}

std::string EvasionGrid::to_csv() const {
  static const char* const kScenarios[] = {"F", "FT", "FB", "FTB"};
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "detector,algorithm,baseline";
  for (const char* s : kScenarios) out << ",scenario_" << s;
  for (const char* s : kScenarios) out << ",distortion_" << s;
  out << "\n";
  for (const auto& r : rows) {
    out << r.detector << "," << r.algorithm << "," << r.baseline;
    for (const char* s : kScenarios) {
      out << ",";
      if (auto it = r.by_scenario.find(s); it != r.by_scenario.end()) out << it->second;
    }
    for (const char* s : kScenarios) {
      out << ",";
      if (auto it = r.distortion_by_scenario.find(s); it != r.distortion_by_scenario.end()) out << it->second;
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Workbench

struct Workbench::Impl {
  Impl(const DataTables& t, AbstractionMode mode)
      : plain(t.table(mode)), filtered(t.table(mode), &t.whitelist) {}

  Abstractor plain;
  Abstractor filtered;
  std::array<std::vector<TransitionCountMatrix>, 2> counts;  // by filter flag
  std::vector<TransitionCountMatrix> surrogate_counts;
  std::optional<FeatureDictionary> dict;
  std::vector<BinaryFeatureVector> bits;
  std::vector<BinaryFeatureVector> surrogate_bits;
  std::map<std::string, std::unique_ptr<Detector>> detectors;
  std::map<std::string, SubstituteNetwork> substitutes;
};

namespace {

std::string detector_key(FeatureModel f, const std::string& name, bool filter) {
  return std::string(to_string(f)) + "/" + name + (filter ? "/filtered" : "");
}

std::string substitute_key(FeatureModel f, bool original) {
  return std::string(to_string(f)) + (original ? "/original" : "/surrogate");
}

std::vector<TransitionCountMatrix> extract_counts(const Corpus& corpus, const Abstractor& abstractor,
                                                  unsigned threads) {
  std::vector<TransitionCountMatrix> out(corpus.samples.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    out[i] = transition_counts(build_call_graph(corpus.samples[i].units), abstractor);
  });
  return out;
}

}  // namespace

Workbench::Workbench(ExperimentConfig config, DataTables tables)
    : config_(std::move(config)), tables_(std::move(tables)) {
  config_.validate();
  GeneratorConfig orig = config_.generator;
  orig.provenance = Provenance::Original;
  original_ = generate_synthetic_corpus(orig, config_.seed, tables_);
  GeneratorConfig sur = config_.generator;
  sur.provenance = Provenance::Surrogate;
  sur.drift = config_.surrogate_drift;
  sur.benign = config_.generator.benign - config_.benign_holdout;
  sur.malware = config_.generator.malware - config_.test_malware;
  surrogate_ = generate_synthetic_corpus(sur, config_.seed ^ 0x5eed5eedULL, tables_);
  prepare();
}

Workbench::Workbench(ExperimentConfig config, Corpus original, Corpus surrogate, DataTables tables)
    : config_(std::move(config)),
      tables_(std::move(tables)),
      original_(std::move(original)),
      surrogate_(std::move(surrogate)) {
  original_.validate();
  surrogate_.validate();
  prepare();
}

Workbench::~Workbench() = default;

void Workbench::prepare() {
  std::sort(original_.samples.begin(), original_.samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  std::vector<std::size_t> malware;
  std::vector<std::size_t> benign;
  for (std::size_t i = 0; i < original_.samples.size(); ++i) {
    (original_.samples[i].label == kMalware ? malware : benign).push_back(i);
  }
  if (config_.test_malware >= malware.size() || config_.benign_holdout >= benign.size()) {
    throw std::invalid_argument("held-out sets must leave training samples of both classes");
  }
  std::mt19937_64 rng(config_.seed);
  std::shuffle(malware.begin(), malware.end(), rng);
  std::shuffle(benign.begin(), benign.end(), rng);
  test_malware_.assign(malware.begin(), malware.begin() + static_cast<std::ptrdiff_t>(config_.test_malware));
  benign_holdout_.assign(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(config_.benign_holdout));
  training_.assign(malware.begin() + static_cast<std::ptrdiff_t>(config_.test_malware), malware.end());
  training_.insert(training_.end(), benign.begin() + static_cast<std::ptrdiff_t>(config_.benign_holdout), benign.end());
  std::sort(test_malware_.begin(), test_malware_.end());
  std::sort(benign_holdout_.begin(), benign_holdout_.end());
  std::sort(training_.begin(), training_.end());

  impl_ = std::make_unique<Impl>(tables_, config_.mode);
  impl_->counts[0] = extract_counts(original_, impl_->plain, config_.threads);
  impl_->counts[1] = extract_counts(original_, impl_->filtered, config_.threads);
  impl_->surrogate_counts = extract_counts(surrogate_, impl_->plain, config_.threads);
}

const Abstractor& Workbench::abstractor(bool filter) const { return filter ? impl_->filtered : impl_->plain; }

const FeatureDictionary& Workbench::dictionary() {
  if (!impl_->dict) {
    std::vector<DrebinStrings> observed;
    for (auto i : training_) {
      const auto& s = original_.samples[i];
      observed.push_back(observe_drebin_strings(s.units, s.manifest, tables_.apis));
    }
    impl_->dict = FeatureDictionary::from_observations(observed);
    auto extract = [&](const Corpus& corpus) {
      std::vector<BinaryFeatureVector> out(corpus.samples.size());
      parallel_for(out.size(), config_.threads, [&](std::size_t i) {
        out[i] = drebin_features(corpus.samples[i].units, corpus.samples[i].manifest, *impl_->dict);
      });
      return out;
    };
    impl_->bits = extract(original_);
    impl_->surrogate_bits = extract(surrogate_);
  }
  return *impl_->dict;
}

Dataset Workbench::dataset(FeatureModel features, const std::vector<std::size_t>& indices, bool filter) {
  if (features == FeatureModel::Drebin) dictionary();
  Dataset d;
  const Eigen::Index dim = features == FeatureModel::Markov
                               ? static_cast<Eigen::Index>(impl_->plain.state_count() * impl_->plain.state_count())
                               : static_cast<Eigen::Index>(impl_->dict->size());
  d.x.resize(static_cast<Eigen::Index>(indices.size()), dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    d.x.row(static_cast<Eigen::Index>(r)) =
        features == FeatureModel::Markov ? to_probabilities(impl_->counts[filter ? 1 : 0][i]).x.transpose()
                                         : impl_->bits[i].to_dense().transpose();
    d.y.push_back(original_.samples[i].label);
  }
  return d;
}

const Detector& Workbench::detector(FeatureModel features, const std::string& name, bool filter) {
  auto key = detector_key(features, name, filter);
  auto it = impl_->detectors.find(key);
  if (it == impl_->detectors.end()) {
    auto cfg = DetectorConfig::parse(name, config_.seed);
    it = impl_->detectors.emplace(key, train_detector(cfg, dataset(features, training_, filter))).first;
  }
  return *it->second;
}

const SubstituteNetwork& Workbench::substitute(FeatureModel features, bool original_training) {
  auto key = substitute_key(features, original_training);
  auto it = impl_->substitutes.find(key);
  if (it != impl_->substitutes.end()) return it->second;

  Dataset data;
  if (original_training) {
    data = dataset(features, training_, false);
  } else {
    if (features == FeatureModel::Drebin) dictionary();
    const auto n = surrogate_.samples.size();
    const Eigen::Index dim = features == FeatureModel::Markov
                                 ? static_cast<Eigen::Index>(impl_->plain.state_count() * impl_->plain.state_count())
                                 : static_cast<Eigen::Index>(impl_->dict->size());
    data.x.resize(static_cast<Eigen::Index>(n), dim);
    for (std::size_t i = 0; i < n; ++i) {
      data.x.row(static_cast<Eigen::Index>(i)) =
          features == FeatureModel::Markov ? to_probabilities(impl_->surrogate_counts[i]).x.transpose()
                                           : impl_->surrogate_bits[i].to_dense().transpose();
      data.y.push_back(surrogate_.samples[i].label);
    }
  }
  if (config_.substitute_on_detector_labels) {
    const Detector& det = detector(features, "svm");
    for (std::size_t i = 0; i < data.size(); ++i) data.y[i] = det.predict(data.x.row(static_cast<Eigen::Index>(i)).transpose());
  }
  SubstituteConfig cfg = config_.substitute;
  cfg.seed = config_.seed * 1000003ULL + (original_training ? 1 : 2) + (features == FeatureModel::Drebin ? 10 : 0);
  return impl_->substitutes.emplace(key, SubstituteNetwork::train(data, cfg)).first->second;
}

double Workbench::detector_accuracy(FeatureModel features, const std::string& name, bool filter) {
  std::vector<std::size_t> eval = test_malware_;
  eval.insert(eval.end(), benign_holdout_.begin(), benign_holdout_.end());
  return detector(features, name, filter).accuracy(dataset(features, eval, filter));
}

void Workbench::set_detector(FeatureModel features, const std::string& name, bool filter,
                             std::unique_ptr<Detector> detector) {
  impl_->detectors[detector_key(features, name, filter)] = std::move(detector);
}

void Workbench::set_substitute(FeatureModel features, bool original_training, SubstituteNetwork net) {
  impl_->substitutes[substitute_key(features, original_training)] = std::move(net);
}

RunResult Workbench::run(const RunSpec& spec) {
  if (spec.features == FeatureModel::Drebin && spec.algorithm == Algorithm::Cw) {
    throw std::invalid_argument("C&W is defined for call-count features only");
  }
  spec.cw.validate();
  spec.jsma.validate();
  const Detector& det = detector(spec.features, spec.detector, spec.filter);
  const SubstituteNetwork& sub = substitute(spec.features, uses_original_training(spec.scenario));
  const auto& indices = spec.attack_benign ? benign_holdout_ : test_malware_;
  const int target = spec.attack_benign ? kBenign : kMalware;
  std::vector<std::size_t> drebin_mask;
  if (spec.features == FeatureModel::Drebin) drebin_mask = drebin_mask_ids(spec.drebin_mask, dictionary());
  const Abstractor& plain = impl_->plain;
  const Abstractor& eval = abstractor(spec.filter);
  const std::size_t states = plain.state_count();

  std::vector<SampleOutcome> outcomes(indices.size());
  parallel_for(indices.size(), config_.threads, [&](std::size_t k) {
    const std::size_t idx = indices[k];
    const Sample& sample = original_.samples[idx];
    std::unique_ptr<PilotClassifier> pilot;
    if (pilot_is_detector(spec.scenario)) {
      pilot = std::make_unique<BlackBoxPilot>(det);
    } else {
      pilot = std::make_unique<SubstitutePilot>(sub);
    }
    SampleOutcome o;
    o.id = sample.id;
    o.label = sample.label;

    if (spec.features == FeatureModel::Drebin) {
      const auto& bits = impl_->bits[idx];
      BinaryJsmaParams params{spec.drebin_budget, drebin_mask, target};
      auto attack = jsma_attack_binary(sub, bits, *pilot, params);
      auto inj = plan_feature_injection(attack.plan.bit_flips, *impl_->dict, sample.units);
      auto units = apply_injection(sample.units, inj);
      auto manifest = apply_manifest_edits(sample.manifest, inj);
      auto after = drebin_features(units, manifest, *impl_->dict);
      BinaryFeatureVector expected = bits;
      for (auto f : attack.plan.bit_flips) {
        expected.bits[f] = 1;
        ++o.added_per_set[static_cast<std::size_t>(impl_->dict->set_of(f)) - 1];
        if (after.bits[f] == 1) ++o.realized;
        if (!std::binary_search(drebin_mask.begin(), drebin_mask.end(), f)) ++o.mask_violations;
      }
      o.consistent = after == expected;
      o.detector_before = det.predict(bits.to_dense());
      o.detector_after = det.predict(after.to_dense());
      o.substitute_after = sub.predict(after.to_dense());
      o.flips = attack.plan.bit_flips;
      o.pilot_success = attack.success;
      o.iterations = attack.iterations;
      o.pilot_queries = attack.pilot_queries;
      o.distortion = attack.distortion;
      outcomes[k] = std::move(o);
      return;
    }

    const auto& counts = impl_->counts[0][idx];
    std::vector<bool> mask;
    if (spec.strategy == Strategy::Sophisticated) mask = row_mask(states, sophisticated_rows(sample.units, plain));
    CwParams cw = spec.cw;
    cw.target = target;
    JsmaParams jsma = spec.jsma;
    jsma.target = target;
    AttackOutcome attack = spec.algorithm == Algorithm::Cw ? cw_attack(sub, counts, *pilot, cw, mask)
                                                           : jsma_attack_counts(sub, counts, *pilot, jsma, mask);
    const CountGrid& plan = attack.plan.call_additions;
    auto inj = plan_injection(attack.plan, spec.strategy, sample.units, plain, tables_.whitelist);
    auto units = apply_injection(sample.units, inj);
    const auto graph = build_call_graph(units);
    const auto after_plain = transition_counts(graph, plain);
    const auto after_eval = spec.filter ? transition_counts(graph, eval) : after_plain;
    const auto& before_eval = impl_->counts[spec.filter ? 1 : 0][idx];

    o.consistent = true;
    for (std::size_t c = 0; c < plan.size(); ++c) {
      const auto delta = after_plain.counts[c] - counts.counts[c];
      if (delta != plan[c]) o.consistent = false;
      const auto eval_delta = after_eval.counts[c] - before_eval.counts[c];
      o.realized += std::min(plan[c], std::max<std::int64_t>(0, eval_delta));
      if (plan[c] > 0 && !mask.empty() && !mask[c]) ++o.mask_violations;
      if (spec.strategy == Strategy::Sophisticated && delta > 0 && !plain.table().is_sentinel(c / states)) {
        ++o.mask_violations;
      }
      if (plan[c] > 0) {
        o.cells.push_back({static_cast<std::int64_t>(c / states), static_cast<std::int64_t>(c % states), plan[c]});
      }
    }
    o.detector_before = det.predict(to_probabilities(before_eval).x);
    o.detector_after = det.predict(to_probabilities(after_eval).x);
    o.substitute_after = sub.predict(to_probabilities(after_plain).x);
    o.pilot_success = attack.success;
    o.iterations = attack.iterations;
    o.pilot_queries = attack.pilot_queries;
    o.distortion = attack.distortion;
    outcomes[k] = std::move(o);
  });

  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  RunResult result{spec, std::move(outcomes), {}};
  result.metrics = compute_metrics(result.outcomes);
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

DefenceReport run_defence_experiment(Workbench& bench, const RunSpec& base) {
  RunSpec spec = base;
  spec.features = FeatureModel::Markov;
  DefenceReport r;
  spec.strategy = Strategy::Simple;
  spec.filter = false;
  r.simple_off = bench.run(spec);
  spec.filter = true;
  r.simple_on = bench.run(spec);
  spec.strategy = Strategy::Sophisticated;
  spec.filter = false;
  r.sophisticated_off = bench.run(spec);
  spec.filter = true;
  r.sophisticated_on = bench.run(spec);
  return r;
}

RunResult run_side_effect_experiment(Workbench& bench, const RunSpec& base) {
  RunSpec spec = base;
  spec.attack_benign = true;
  return bench.run(spec);
}

std::vector<SweepPoint> run_budget_sweep(Workbench& bench, const RunSpec& base, const std::vector<int>& bounds,
                                         const std::vector<std::string>& detectors) {
  std::vector<SweepPoint> out;
  for (const auto& d : detectors) {
    for (int b : bounds) {
      RunSpec spec = base;
      spec.algorithm = Algorithm::Jsma;
      spec.detector = d;
      spec.jsma.max_iterations = b;
      spec.drebin_budget = b;
      out.push_back({b, d, bench.run(spec).metrics});
    }
  }
  return out;
}

}  // namespace evadroid
