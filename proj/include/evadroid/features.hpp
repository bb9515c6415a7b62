#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "evadroid/abstraction.hpp"
#include "evadroid/perturbation.hpp"
#include "evadroid/smali.hpp"

namespace evadroid {

// ---------------------------------------------------------------------------
// Markov-chain call-graph features

/// Integer calls from caller state g (row) to callee state i (column).
struct TransitionCountMatrix {
  AbstractionMode mode = AbstractionMode::Family;
  CountGrid counts;

  std::size_t states() const { return counts.states(); }
};

/// Row-normalized transition probabilities, flattened row-major (g * S + i).
/// Rows without outgoing calls are all zero and not active.
struct MarkovFeatureVector {
  AbstractionMode mode = AbstractionMode::Family;
  std::size_t states = 0;
  Eigen::VectorXd x;
  std::vector<bool> active_rows;
};

TransitionCountMatrix transition_counts(const CallGraph& graph, const Abstractor& abstractor);

/// Counts and probabilities for one call graph.
std::pair<TransitionCountMatrix, MarkovFeatureVector> markov_features(const CallGraph& graph,
                                                                      const Abstractor& abstractor);

MarkovFeatureVector to_probabilities(const TransitionCountMatrix& counts);

/// X'[g,i] = (a_gi + w_gi) / (a_g + w_g) for rows where the denominator is positive.
MarkovFeatureVector perturb_counts(const TransitionCountMatrix& counts, const CountGrid& omega);

/// Real-valued form used inside the optimizer; `omega` has S*S entries.
Eigen::VectorXd perturb_counts_real(const TransitionCountMatrix& counts,
                                    const Eigen::VectorXd& omega);

/// Largest |row sum - 1| over rows with a positive denominator.
double max_simplex_violation(const Eigen::VectorXd& x, std::size_t states);

// ---------------------------------------------------------------------------
// Binary string features

enum class DrebinSet : int { S1 = 1, S2, S3, S4, S5, S6, S7, S8 };

std::string_view to_string(DrebinSet set);
DrebinSet parse_drebin_set(std::string_view tag);
inline bool is_manifest_set(DrebinSet s) { return static_cast<int>(s) <= 4; }

/// API names recognized as restricted (S5) or suspicious (S7) calls.
class DrebinApiList {
 public:
  static DrebinApiList parse(std::string_view text);
  static DrebinApiList builtin();

  std::optional<DrebinSet> classify(std::string_view method_name) const;

 private:
  std::map<std::string, DrebinSet, std::less<>> names_;
};

/// Strings observed in one sample, per set.
using DrebinStrings = std::array<std::set<std::string>, 8>;

DrebinStrings observe_drebin_strings(const std::vector<SmaliUnit>& units, const Manifest& manifest,
                                     const DrebinApiList& apis);

/// Ordered feature space: sets S1..S8, lexicographic within a set.
class FeatureDictionary {
 public:
  struct Entry {
    DrebinSet set;
    std::string feature;
    bool operator==(const Entry&) const = default;
  };

  static FeatureDictionary from_observations(const std::vector<DrebinStrings>& observed);
  static FeatureDictionary from_entries(std::vector<Entry> entries);
  /// `<set-tag> <feature-string>` per line.
  static FeatureDictionary parse(std::string_view text);
  std::string serialize() const;

  std::size_t size() const { return entries_.size(); }
  const Entry& at(std::size_t id) const { return entries_.at(id); }
  DrebinSet set_of(std::size_t id) const { return entries_.at(id).set; }
  std::optional<std::size_t> find(DrebinSet set, std::string_view feature) const;
  std::vector<std::size_t> ids_in(std::initializer_list<DrebinSet> sets) const;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::pair<int, std::string>, std::size_t, std::less<>> index_;
};

/// Presence bits over a dictionary.
struct BinaryFeatureVector {
  std::vector<std::uint8_t> bits;

  Eigen::VectorXd to_dense() const;
  std::size_t count() const;
  /// Sparse "index:value" text, one pair per set bit separated by spaces.
  std::string to_sparse_text() const;
  bool operator==(const BinaryFeatureVector&) const = default;
};

/// bit[f] = 1 iff f occurs in its source: manifest lists for S1-S4, smali text
/// for S5-S8 (API names as "->name(", other strings as substrings).
BinaryFeatureVector drebin_features(const std::vector<SmaliUnit>& units, const Manifest& manifest,
                                    const FeatureDictionary& dict);

}  // namespace evadroid
