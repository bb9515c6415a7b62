#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evadroid {

using StateId = std::size_t;

struct TableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A method reference as it appears in disassembled code. `class_path` is the
/// dotted package path; it may also carry the class name when `class_name` is
/// empty (e.g. "android.telephony.SmsManager").
struct MethodRef {
  std::string class_path;
  std::string class_name;
  std::string method_name;
  std::string signature;

  /// Fully qualified dotted class name.
  std::string qualified_class() const;

  /// "L<a/b/C>;" descriptor form.
  std::string descriptor() const;

  static MethodRef from_qualified(std::string_view qualified_class, std::string method = {},
                                  std::string signature = {});

  auto operator<=>(const MethodRef&) const = default;
};

enum class AbstractionMode { Family, Package };

std::string_view to_string(AbstractionMode mode);
AbstractionMode parse_mode(std::string_view text);

/// Splits a dotted path into segments.
std::vector<std::string_view> split_segments(std::string_view dotted);

/// Identifier-mangling heuristic: obfuscated iff every segment is at most
/// `max_segment_length` characters long.
struct ObfuscationRule {
  std::size_t max_segment_length = 2;
  bool matches(std::string_view qualified_class) const;
};

/// Prefix table for one abstraction mode. Named states are numbered in order of
/// first appearance in the table text; the two sentinels come last.
class AbstractionTable {
 public:
  static constexpr std::string_view kSelfDefined = "self-defined";
  static constexpr std::string_view kObfuscated = "obfuscated";

  /// Parses `<prefix> <state-name>` records; `#` starts a comment.
  static AbstractionTable parse(std::string_view text, AbstractionMode mode);
  static AbstractionTable load(const std::string& path, AbstractionMode mode);
  static AbstractionTable builtin(AbstractionMode mode);

  AbstractionMode mode() const { return mode_; }
  std::size_t state_count() const { return names_.size(); }
  std::size_t named_state_count() const { return names_.size() - 2; }
  const std::string& state_name(StateId id) const { return names_.at(id); }
  std::optional<StateId> find_state(std::string_view name) const;
  StateId self_defined() const { return names_.size() - 2; }
  StateId obfuscated() const { return names_.size() - 1; }
  bool is_sentinel(StateId id) const { return id >= names_.size() - 2; }

  /// Longest segment-wise prefix match over the known prefixes.
  std::optional<StateId> match(std::string_view qualified_class) const;

  /// Shortest prefix mapped to a named state; used to synthesize class paths
  /// that abstract to that state.
  const std::string& canonical_prefix(StateId id) const { return canonical_prefix_.at(id); }

  const std::map<std::string, StateId>& prefixes() const { return prefixes_; }

 private:
  AbstractionMode mode_ = AbstractionMode::Family;
  std::map<std::string, StateId> prefixes_;
  std::vector<std::string> names_;
  std::vector<std::string> canonical_prefix_;
};

/// A designated side-effect-free SDK call usable as injected callee.
struct NoopCall {
  std::string qualified_class;
  std::string method;  // name + descriptor, e.g. "d(Ljava/lang/String;)I"
};

/// The SDK class white-list. Also carries per-class method descriptors used by
/// the corpus generator and the designated no-op calls.
class SdkWhitelist {
 public:
  static SdkWhitelist parse(std::string_view text);
  static SdkWhitelist load(const std::string& path);
  static SdkWhitelist builtin();

  bool contains(std::string_view qualified_class) const;
  const std::map<std::string, std::vector<std::string>>& classes() const { return classes_; }
  const std::vector<NoopCall>& noop_calls() const { return noops_; }

 private:
  std::map<std::string, std::vector<std::string>> classes_;
  std::vector<NoopCall> noops_;
};

/// White-list filter outcome: either the ref passes through or it is rejected
/// and must be abstracted as self-defined.
struct FilterResult {
  bool rejected = false;
};

FilterResult apply_whitelist_filter(const MethodRef& ref, const AbstractionTable& table,
                                    const SdkWhitelist* whitelist);

/// Maps method references to abstract states. Immutable after construction.
class Abstractor {
 public:
  Abstractor(AbstractionTable table, const SdkWhitelist* filter = nullptr,
             ObfuscationRule rule = {});

  StateId operator()(const MethodRef& ref) const { return abstract_class(ref.qualified_class()); }
  StateId abstract_class(std::string_view qualified_class) const;

  const AbstractionTable& table() const { return table_; }
  AbstractionMode mode() const { return table_.mode(); }
  std::size_t state_count() const { return table_.state_count(); }
  bool filtering() const { return filter_ != nullptr; }
  const ObfuscationRule& obfuscation_rule() const { return rule_; }

 private:
  AbstractionTable table_;
  const SdkWhitelist* filter_;
  ObfuscationRule rule_;
};

StateId abstract_call(const MethodRef& ref, const AbstractionTable& table,
                      const ObfuscationRule& rule = {});

/// Family-mode state of a package-mode state (by abstracting the package prefix).
StateId family_of(StateId package_state, const AbstractionTable& package_table,
                  const AbstractionTable& family_table);

/// The designated no-op call for a named state, if the white-list provides one.
std::optional<NoopCall> noop_call_for(StateId state, const Abstractor& abstractor,
                                      const SdkWhitelist& whitelist);

}  // namespace evadroid
