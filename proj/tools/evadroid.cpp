#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "evadroid/harness.hpp"

namespace fs = std::filesystem;
using namespace evadroid;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

struct Options {
  std::string config_file;
  std::string data_dir;
  std::uint64_t seed = 7;
  std::string mode = "family";
  std::string scenario = "FT";
  std::string algorithm = "jsma";
  std::string strategy = "simple";
  std::string features = "markov";
  std::string detector = "svm";
  std::string drebin_mask = "dexcode";
  double kappa = 0.0;
  int budget = 0;
  std::size_t benign = 400;
  std::size_t malware = 400;
  double margin = 0.5;
  std::size_t test_malware = 100;
  std::size_t benign_holdout = 100;
  unsigned threads = 0;
  std::string original_dir;
  std::string surrogate_dir;
  std::string models_dir;
  std::string out = "results";
};

struct Flags {
  CLI::App* app = nullptr;
  bool set(const std::string& name) const { return app->count(name) > 0; }
};

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_file, "JSON config with \"experiment\" and \"attack\" sections");
  app->add_option("--data-dir", o.data_dir, "directory overriding the built-in data tables");
  app->add_option("--seed", o.seed, "experiment seed");
  app->add_option("--mode", o.mode, "family | package")->check(CLI::IsMember({"family", "package"}));
  app->add_option("--scenario", o.scenario, "F | FT | FB | FTB")->check(CLI::IsMember({"F", "FT", "FB", "FTB"}));
  app->add_option("--algorithm", o.algorithm, "cw | jsma")->check(CLI::IsMember({"cw", "jsma"}));
  app->add_option("--strategy", o.strategy, "simple | sophisticated")
      ->check(CLI::IsMember({"simple", "sophisticated"}));
  app->add_option("--features", o.features, "markov | drebin")->check(CLI::IsMember({"markov", "drebin"}));
  app->add_option("--detector", o.detector, "svm | rf | 1nn | 3nn");
  app->add_option("--drebin-mask", o.drebin_mask, "dexcode | system-permissions | all-permissions");
  app->add_option("--kappa", o.kappa, "C&W confidence");
  app->add_option("--budget", o.budget, "JSMA iteration budget or Drebin flip budget");
  app->add_option("--benign", o.benign, "benign samples in the generated original corpus");
  app->add_option("--malware", o.malware, "malware samples in the generated original corpus");
  app->add_option("--margin", o.margin, "generator class margin in [0, 1]");
  app->add_option("--test-malware", o.test_malware, "held-out malware attacked per run");
  app->add_option("--benign-holdout", o.benign_holdout, "held-out benign samples");
  app->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  app->add_option("--original", o.original_dir, "original corpus directory (generated when absent)");
  app->add_option("--surrogate", o.surrogate_dir, "surrogate corpus directory (generated when absent)");
  app->add_option("--models", o.models_dir, "checkpoint directory written by `train`");
  app->add_option("--out", o.out, "output directory");
}

nlohmann::json config_section(const Options& o, const char* key) {
  if (o.config_file.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(slurp(o.config_file));
  return j.contains(key) ? j.at(key) : nlohmann::json::object();
}

ExperimentConfig experiment_config(const Options& o, const Flags& f) {
  auto base = config_section(o, "experiment");
  ExperimentConfig c = ExperimentConfig::from_json(base);
  if (f.set("--seed") || !base.contains("seed")) c.seed = o.seed;
  if (f.set("--mode")) c.mode = parse_mode(o.mode);
  if (f.set("--benign") || !base.contains("generator")) c.generator.benign = o.benign;
  if (f.set("--malware") || !base.contains("generator")) c.generator.malware = o.malware;
  if (f.set("--margin")) c.generator.margin = o.margin;
  if (f.set("--test-malware") || !base.contains("test_malware")) c.test_malware = o.test_malware;
  if (f.set("--benign-holdout") || !base.contains("benign_holdout")) c.benign_holdout = o.benign_holdout;
  if (f.set("--threads")) c.threads = o.threads;
  c.validate();
  return c;
}

RunSpec run_spec(const Options& o, const Flags& f) {
  auto base = config_section(o, "attack");
  RunSpec r = RunSpec::from_json(base);
  if (f.set("--features") || !base.contains("features")) r.features = parse_feature_model(o.features);
  if (f.set("--scenario") || !base.contains("scenario")) r.scenario = parse_scenario(o.scenario);
  if (f.set("--algorithm") || !base.contains("algorithm")) r.algorithm = parse_algorithm(o.algorithm);
  if (f.set("--strategy") || !base.contains("strategy")) r.strategy = parse_strategy(o.strategy);
  if (f.set("--detector") || !base.contains("detector")) r.detector = o.detector;
  if (f.set("--drebin-mask")) r.drebin_mask = parse_drebin_mask(o.drebin_mask);
  if (f.set("--kappa")) r.cw.kappa = o.kappa;
  if (f.set("--budget")) {
    r.jsma.max_iterations = o.budget;
    r.drebin_budget = o.budget;
  }
  r.cw.validate();
  r.jsma.validate();
  return r;
}

std::unique_ptr<Workbench> make_bench(const Options& o, const Flags& f) {
  auto cfg = experiment_config(o, f);
  auto tables = DataTables::resolve(o.data_dir.empty() ? std::nullopt : std::optional<fs::path>(o.data_dir));
  std::unique_ptr<Workbench> bench;
  if (!o.original_dir.empty() || !o.surrogate_dir.empty()) {
    if (o.original_dir.empty() || o.surrogate_dir.empty()) {
      throw std::invalid_argument("--original and --surrogate must be given together");
    }
    bench = std::make_unique<Workbench>(cfg, read_corpus(o.original_dir), read_corpus(o.surrogate_dir), tables);
  } else {
    bench = std::make_unique<Workbench>(cfg, tables);
  }
  if (!o.models_dir.empty()) {
    const fs::path dir(o.models_dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (entry.path().extension() != ".json") continue;
      auto j = nlohmann::json::parse(slurp(entry.path()));
      // names: <features>-substitute-<original|surrogate>.json, <features>-detector-<name>.json
      const auto dash = name.find('-');
      if (dash == std::string::npos) continue;
      const auto features = parse_feature_model(name.substr(0, dash));
      const auto rest = entry.path().stem().string().substr(dash + 1);
      if (rest.rfind("substitute-", 0) == 0) {
        bench->set_substitute(features, rest == "substitute-original", SubstituteNetwork::from_json(j));
      } else if (rest.rfind("detector-", 0) == 0) {
        bench->set_detector(features, rest.substr(9), false, detector_from_json(j));
      }
    }
  }
  return bench;
}

void write_run(const fs::path& dir, const RunResult& r, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  spit(dir / "outcomes.jsonl", outcomes_to_jsonl(r.outcomes));
  nlohmann::json run = {{"experiment", cfg.to_json()}, {"attack", r.spec.to_json()}, {"metrics", r.metrics.to_json()}};
  spit(dir / "run.json", run.dump(2) + "\n");
  EvasionGrid grid;
  grid.add(r);
  spit(dir / "summary.csv", grid.to_csv());
}

std::string run_label(const RunSpec& s) {
  std::string l = std::string(to_string(s.features)) + "-" + std::string(to_string(s.algorithm)) + "-" +
                  std::string(to_string(s.scenario)) + "-" + std::string(to_string(s.strategy)) + "-" + s.detector;
  if (s.filter) l += "-filtered";
  if (s.attack_benign) l += "-benign";
  return l;
}

void print_metrics(const std::string& label, const MetricsReport& m) {
  std::cout << label << ": evasion " << m.evasion_rate << " (baseline " << m.baseline_evasion_rate
            << ", substitute " << m.substitute_evasion_rate << "), avg distortion " << m.avg_distortion
            << ", realized " << m.realized_fraction << ", mask violations " << m.mask_violations << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial evasion attacks on call-graph and string-feature malware detectors"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::string> report_runs;
  std::vector<int> bounds{1, 2, 5, 10, 20, 40};
  std::vector<std::string> detectors{"svm", "rf", "1nn", "3nn"};
  std::vector<std::string> grid_scenarios;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  std::string provenance = "synthetic";
  double drift = 0.0;
  std::uint64_t world_seed = GeneratorConfig{}.world_seed;
  gen->add_option("--provenance", provenance, "original | surrogate | synthetic");
  gen->add_option("--drift", drift, "shared prior shift in [0, 1]");
  gen->add_option("--world-seed", world_seed, "seed of the class priors");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "train detectors and substitutes, write checkpoints");
  train->add_option("--detectors", detectors, "detectors to train")->delimiter(',');
  add_common(train, o);

  auto* attack = app.add_subcommand("attack", "attack held-out samples and export outcomes");
  add_common(attack, o);

  auto* report = app.add_subcommand("report", "recompute metrics from outcome files and emit a summary grid");
  report->add_option("runs", report_runs, "run directories written by `attack`")->required();
  add_common(report, o);

  auto* grid = app.add_subcommand("grid", "run every scenario for both algorithms and emit the evasion grid");
  grid->add_option("--detectors", detectors, "detectors to attack")->delimiter(',');
  add_common(grid, o);

  auto* defence = app.add_subcommand("defence", "white-list filtering defence, filter off vs on");
  add_common(defence, o);

  auto* sweep = app.add_subcommand("sweep", "JSMA modification upper-bound sweep");
  sweep->add_option("--bounds", bounds, "iteration budgets")->delimiter(',');
  sweep->add_option("--detectors", detectors, "detectors to attack")->delimiter(',');
  add_common(sweep, o);

  auto* side = app.add_subcommand("side-effect", "attack benign samples with the target inverted");
  add_common(side, o);

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* active = app.get_subcommands().front();
    Flags flags{active};
    const fs::path out(o.out);

    if (active == gen) {
      auto cfg = experiment_config(o, flags).generator;
      cfg.provenance = parse_provenance(provenance);
      cfg.drift = drift;
      cfg.world_seed = world_seed;
      auto tables = DataTables::resolve(o.data_dir.empty() ? std::nullopt : std::optional<fs::path>(o.data_dir));
      write_corpus(generate_synthetic_corpus(cfg, o.seed, tables), out);
      std::cout << "wrote " << cfg.benign + cfg.malware << " samples to " << out << "\n";
      return 0;
    }

    if (active == report) {
      EvasionGrid g;
      for (const auto& dir : report_runs) {
        auto run = nlohmann::json::parse(slurp(fs::path(dir) / "run.json"));
        RunResult r;
        r.spec = RunSpec::from_json(run.at("attack"));
        r.outcomes = outcomes_from_jsonl(slurp(fs::path(dir) / "outcomes.jsonl"));
        r.metrics = compute_metrics(r.outcomes);
        print_metrics(run_label(r.spec), r.metrics);
        g.add(r);
      }
      spit(out / "summary.csv", g.to_csv());
      std::cout << g.to_csv();
      return 0;
    }

    auto bench = make_bench(o, flags);
    const auto spec = run_spec(o, flags);

    if (active == train) {
      fs::create_directories(out);
      nlohmann::json acc;
      for (const auto& d : detectors) {
        const auto& det = bench->detector(spec.features, d);
        spit(out / (std::string(to_string(spec.features)) + "-detector-" + d + ".json"), det.to_json().dump() + "\n");
        acc[d] = bench->detector_accuracy(spec.features, d);
        std::cout << d << " test accuracy " << acc[d].get<double>() << "\n";
      }
      for (bool original : {true, false}) {
        const auto& net = bench->substitute(spec.features, original);
        spit(out / (std::string(to_string(spec.features)) + "-substitute-" + (original ? "original" : "surrogate") + ".json"),
             net.to_json().dump() + "\n");
      }
      spit(out / "accuracy.json", acc.dump(2) + "\n");
      return 0;
    }

    if (active == attack) {
      auto r = bench->run(spec);
      write_run(out / run_label(spec), r, bench->config());
      print_metrics(run_label(spec), r.metrics);
      return 0;
    }

    if (active == grid) {
      EvasionGrid g;
      for (const auto& d : detectors) {
        for (auto alg : {Algorithm::Jsma, Algorithm::Cw}) {
          if (spec.features == FeatureModel::Drebin && alg == Algorithm::Cw) continue;
          for (auto sc : {Scenario::F, Scenario::FT, Scenario::FB, Scenario::FTB}) {
            RunSpec s = spec;
            s.detector = d;
            s.algorithm = alg;
            s.scenario = sc;
            auto r = bench->run(s);
            write_run(out / run_label(s), r, bench->config());
            print_metrics(run_label(s), r.metrics);
            g.add(r);
          }
        }
      }
      spit(out / "evasion_grid.csv", g.to_csv());
      std::cout << g.to_csv();
      return 0;
    }

    if (active == defence) {
      auto rep = run_defence_experiment(*bench, spec);
      nlohmann::json j;
      for (const auto* r : {&rep.simple_off, &rep.simple_on, &rep.sophisticated_off, &rep.sophisticated_on}) {
        write_run(out / run_label(r->spec), *r, bench->config());
        print_metrics(run_label(r->spec), r->metrics);
        j[run_label(r->spec)] = r->metrics.to_json();
      }
      spit(out / "defence.json", j.dump(2) + "\n");
      return 0;
    }

    if (active == sweep) {
      auto points = run_budget_sweep(*bench, spec, bounds, detectors);
      std::ostringstream csv;
      csv << "detector,bound,evasion_rate,avg_distortion\n";
      for (const auto& p : points) {
        csv << p.detector << "," << p.bound << "," << p.metrics.evasion_rate << "," << p.metrics.avg_distortion << "\n";
      }
      spit(out / "sweep.csv", csv.str());
      std::cout << csv.str();
      return 0;
    }

    if (active == side) {
      auto r = run_side_effect_experiment(*bench, spec);
      write_run(out / run_label(r.spec), r, bench->config());
      std::cout << "benign->malware flip rate " << r.metrics.evasion_rate << " (baseline false positives "
                << r.metrics.baseline_evasion_rate << ")\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
