#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evadroid/abstraction.hpp"
#include "evadroid/features.hpp"
#include "evadroid/perturbation.hpp"
#include "evadroid/smali.hpp"

namespace evadroid {

enum class Strategy { Simple, Sophisticated };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct StrategyViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoEntryPoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One realized perturbation cell (or one flipped feature): where the code goes
/// and what it adds.
struct InjectionBlock {
  std::string target_unit;  // class receiving the code, or the new class
  std::string code;
  StateId caller_state = 0;
  StateId callee_state = 0;
  std::int64_t repetitions = 0;
};

/// Concrete edits realizing a PerturbationPlan.
///
/// Simple strategy: for every cell (g, i) a new class under a path that
/// abstracts to g whose static initializer invokes `callee()` of a class that
/// abstracts to i `repetitions` times. The entry point reads the class's
/// `hook` static field, which triggers the initializer without adding a call
/// edge.
///
/// Sophisticated strategy: invocations of the designated no-op SDK call (or
/// of a fresh no-op method for sentinel callees) appended to an existing
/// method whose class is self-defined or obfuscated, preferring the entry
/// point.
struct InjectionPlan {
  struct LineInsertion {
    std::string unit_class;
    std::size_t method = 0;
    std::vector<std::string> lines;  // inserted before the method's last return
  };
  struct UnitAppend {
    std::string unit_class;
    std::vector<std::string> lines;
  };
  struct NewUnit {
    std::string source;
    std::string text;
  };

  Strategy strategy = Strategy::Simple;
  std::vector<InjectionBlock> blocks;
  std::vector<NewUnit> new_units;
  std::vector<LineInsertion> insertions;
  std::vector<UnitAppend> appends;
  std::vector<FeatureDictionary::Entry> manifest_additions;

  bool empty() const {
    return new_units.empty() && insertions.empty() && appends.empty() &&
           manifest_additions.empty();
  }
};

/// Sentinel rows that have a host method for the sophisticated strategy.
std::vector<StateId> sophisticated_rows(const std::vector<SmaliUnit>& units,
                                        const Abstractor& abstractor);

InjectionPlan plan_injection(const PerturbationPlan& plan, Strategy strategy,
                             const std::vector<SmaliUnit>& target, const Abstractor& abstractor,
                             const SdkWhitelist& whitelist);

/// Realizes 0->1 feature flips: dexcode features as a never-invoked method in
/// the entry-point class, manifest features as manifest additions.
InjectionPlan plan_feature_injection(const std::vector<std::size_t>& flips,
                                     const FeatureDictionary& dict,
                                     const std::vector<SmaliUnit>& target);

std::vector<SmaliUnit> apply_injection(const std::vector<SmaliUnit>& units,
                                       const InjectionPlan& plan);

Manifest apply_manifest_edits(Manifest manifest, const InjectionPlan& plan);

}  // namespace evadroid
