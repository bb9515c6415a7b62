#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evadroid/abstraction.hpp"
#include "evadroid/attacks.hpp"
#include "evadroid/features.hpp"
#include "evadroid/injection.hpp"
#include "evadroid/models.hpp"
#include "evadroid/smali.hpp"

namespace evadroid {

// ---------------------------------------------------------------------------
// Data tables

/// Abstraction tables, SDK white-list and Drebin API list. Files present in a
/// data directory replace the compiled-in defaults one by one.
struct DataTables {
  AbstractionTable family;
  AbstractionTable package;
  SdkWhitelist whitelist;
  DrebinApiList apis;

  static DataTables builtin();
  static DataTables load(const std::filesystem::path& dir);
  /// `dir` if given, else $EVADROID_DATA_DIR if set, else the defaults.
  static DataTables resolve(const std::optional<std::filesystem::path>& dir = std::nullopt);

  const AbstractionTable& table(AbstractionMode mode) const {
    return mode == AbstractionMode::Family ? family : package;
  }
};

inline constexpr const char* kDataDirEnv = "EVADROID_DATA_DIR";

// ---------------------------------------------------------------------------
// Corpus

enum class Provenance { Original, Surrogate, Synthetic };
std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view text);

struct Sample {
  std::string id;
  int label = kBenign;
  std::vector<SmaliUnit> units;
  Manifest manifest;
};

struct Corpus {
  Provenance provenance = Provenance::Synthetic;
  std::vector<Sample> samples;

  /// Throws on duplicate ids or a sample without an entry point.
  void validate() const;
  const Sample& find(const std::string& id) const;
};

/// Layout: `<dir>/corpus.json` index, `<dir>/<id>/manifest.json`,
/// `<dir>/<id>/<unit source path>` smali-lite files.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Writes or reads the units and manifest of one sample directory.
void write_sample(const Sample& sample, const std::filesystem::path& dir);
Sample read_sample(const std::filesystem::path& dir, std::string id, int label);

// ---------------------------------------------------------------------------
// Synthetic corpus generator

struct GeneratorConfig {
  std::size_t benign = 400;
  std::size_t malware = 400;
  /// 0 gives identical class priors, 1 fully class-specific priors.
  double margin = 0.5;
  /// Mixes a shared random shift into all priors (used for surrogate corpora).
  double drift = 0.0;
  /// Seed of the class priors. Corpora sharing it come from the same population.
  std::uint64_t world_seed = 2018;
  int min_calls = 20;
  int max_calls = 60;
  /// Dirichlet concentration of per-sample transition rows around the prior.
  double concentration = 300.0;
  Provenance provenance = Provenance::Synthetic;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

Corpus generate_synthetic_corpus(const GeneratorConfig& config, std::uint64_t seed,
                                 const DataTables& tables);

// ---------------------------------------------------------------------------
// Experiments

enum class Scenario { F, FT, FB, FTB };
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view text);
/// Pilot is the detector (black box) rather than the substitute.
bool pilot_is_detector(Scenario s);
/// Attacker trains on the original rather than the surrogate corpus.
bool uses_original_training(Scenario s);

enum class Algorithm { Cw, Jsma };
std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view text);

enum class FeatureModel { Markov, Drebin };
std::string_view to_string(FeatureModel f);
FeatureModel parse_feature_model(std::string_view text);

/// Modifiable Drebin features: dexcode sets S5-S8, system permissions
/// (android.permission.*), or every requested permission including custom ones.
enum class DrebinMask { Dexcode, SystemPermissions, AllPermissions };
std::string_view to_string(DrebinMask m);
DrebinMask parse_drebin_mask(std::string_view text);
std::vector<std::size_t> drebin_mask_ids(DrebinMask mask, const FeatureDictionary& dict);

struct ExperimentConfig {
  std::uint64_t seed = 7;
  AbstractionMode mode = AbstractionMode::Family;
  GeneratorConfig generator;
  double surrogate_drift = 0.3;
  std::size_t test_malware = 100;
  std::size_t benign_holdout = 100;
  SubstituteConfig substitute;
  /// Train the substitute on detector-predicted labels instead of ground truth.
  bool substitute_on_detector_labels = false;
  unsigned threads = 0;  // 0 = hardware concurrency

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct RunSpec {
  FeatureModel features = FeatureModel::Markov;
  Scenario scenario = Scenario::FT;
  Algorithm algorithm = Algorithm::Jsma;
  Strategy strategy = Strategy::Simple;
  std::string detector = "svm";
  /// Defender extracts features with the white-list filter.
  bool filter = false;
  /// Attack the benign holdout with the target inverted.
  bool attack_benign = false;
  CwParams cw;
  JsmaParams jsma;
  int drebin_budget = 20;
  DrebinMask drebin_mask = DrebinMask::Dexcode;

  nlohmann::json to_json() const;
  static RunSpec from_json(const nlohmann::json& j);
};

struct SampleOutcome {
  std::string id;
  int label = kMalware;
  bool pilot_success = false;
  int iterations = 0;
  std::uint64_t pilot_queries = 0;
  std::int64_t distortion = 0;
  /// Planned additions that survive re-extraction by the defender.
  std::int64_t realized = 0;
  int detector_before = kMalware;
  int detector_after = kMalware;
  int substitute_after = kMalware;
  /// Planned cells outside the strategy mask plus injected edges with a named caller.
  std::size_t mask_violations = 0;
  /// Re-extracted (unfiltered) features equal the plan-predicted features.
  bool consistent = true;
  std::array<std::int64_t, 8> added_per_set{};
  /// Sparse plan: [caller, callee, count] cells or flipped feature ids.
  std::vector<std::array<std::int64_t, 3>> cells;
  std::vector<std::size_t> flips;

  bool evaded() const { return detector_after != label; }
  nlohmann::json to_json() const;
  static SampleOutcome from_json(const nlohmann::json& j);
};

struct MetricsReport {
  std::size_t samples = 0;
  double evasion_rate = 0.0;           // detector, after attack
  double baseline_evasion_rate = 0.0;  // detector, before attack
  double substitute_evasion_rate = 0.0;
  double pilot_success_rate = 0.0;
  double avg_distortion = 0.0;
  double realized_fraction = 1.0;
  std::size_t mask_violations = 0;
  std::size_t inconsistent = 0;
  std::array<double, 8> avg_added_per_set{};

  nlohmann::json to_json() const;
};

/// Throws std::invalid_argument on an empty outcome set.
MetricsReport compute_metrics(const std::vector<SampleOutcome>& outcomes);

struct RunResult {
  RunSpec spec;
  std::vector<SampleOutcome> outcomes;  // sorted by sample id
  MetricsReport metrics;
};

/// Corpora, splits, extracted features and trained models for one seed.
/// Models are trained on first use; attacks run sample-parallel.
class Workbench {
 public:
  explicit Workbench(ExperimentConfig config, DataTables tables = DataTables::builtin());
  Workbench(ExperimentConfig config, Corpus original, Corpus surrogate,
            DataTables tables = DataTables::builtin());
  ~Workbench();
  Workbench(const Workbench&) = delete;
  Workbench& operator=(const Workbench&) = delete;

  const ExperimentConfig& config() const { return config_; }
  const DataTables& tables() const { return tables_; }
  const Corpus& original() const { return original_; }
  const Corpus& surrogate() const { return surrogate_; }
  const std::vector<std::size_t>& test_malware() const { return test_malware_; }
  const std::vector<std::size_t>& benign_holdout() const { return benign_holdout_; }
  const std::vector<std::size_t>& training() const { return training_; }

  const Abstractor& abstractor(bool filter) const;
  const FeatureDictionary& dictionary();

  /// Feature matrix of original-corpus samples (by index).
  Dataset dataset(FeatureModel features, const std::vector<std::size_t>& indices, bool filter);
  const Detector& detector(FeatureModel features, const std::string& name, bool filter = false);
  const SubstituteNetwork& substitute(FeatureModel features, bool original_training);
  /// Accuracy on test malware plus benign holdout.
  double detector_accuracy(FeatureModel features, const std::string& name, bool filter = false);

  RunResult run(const RunSpec& spec);

  /// Installs pre-trained models (e.g. loaded checkpoints).
  void set_detector(FeatureModel features, const std::string& name, bool filter,
                    std::unique_ptr<Detector> detector);
  void set_substitute(FeatureModel features, bool original_training, SubstituteNetwork net);

 private:
  struct Impl;
  void prepare();

  ExperimentConfig config_;
  DataTables tables_;
  Corpus original_;
  Corpus surrogate_;
  std::vector<std::size_t> test_malware_;
  std::vector<std::size_t> benign_holdout_;
  std::vector<std::size_t> training_;
  std::unique_ptr<Impl> impl_;
};

struct DefenceReport {
  RunResult simple_off;
  RunResult simple_on;
  RunResult sophisticated_off;
  RunResult sophisticated_on;
};

DefenceReport run_defence_experiment(Workbench& bench, const RunSpec& base);

/// Benign->malware flip rate of the attack with the target inverted.
RunResult run_side_effect_experiment(Workbench& bench, const RunSpec& base);

struct SweepPoint {
  int bound = 0;
  std::string detector;
  MetricsReport metrics;
};
/// JSMA with increasing iteration budgets.
std::vector<SweepPoint> run_budget_sweep(Workbench& bench, const RunSpec& base,
                                         const std::vector<int>& bounds,
                                         const std::vector<std::string>& detectors);

// ---------------------------------------------------------------------------
// Report emission

std::string outcomes_to_jsonl(const std::vector<SampleOutcome>& outcomes);
std::vector<SampleOutcome> outcomes_from_jsonl(std::string_view text);

/// Evasion-rate grid: one row per (detector, algorithm), columns baseline, F, FT, FB, FTB.
struct EvasionGrid {
  struct Row {
    std::string detector;
    std::string algorithm;
    double baseline = 0.0;
    std::map<std::string, double> by_scenario;
    std::map<std::string, double> distortion_by_scenario;
  };
  std::vector<Row> rows;

  void add(const RunResult& result);
  std::string to_csv() const;
};

/// Runs `fn(i)` for i in [0, n) on `threads` workers (0 = hardware concurrency).
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace evadroid
