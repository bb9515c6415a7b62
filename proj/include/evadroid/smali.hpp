#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evadroid/abstraction.hpp"

namespace evadroid {

struct SmaliParseError : std::runtime_error {
  SmaliParseError(std::string source, std::size_t line, const std::string& what);
  std::string source;
  std::size_t line;  // 1-based
};

struct InvokeRecord {
  std::size_t line = 0;  // index into SmaliUnit::lines
  std::string kind;      // "static", "virtual" or "direct"
  MethodRef target;
};

struct SmaliMethod {
  std::string name;
  std::string descriptor;  // "(params)ret"
  std::size_t begin_line = 0;
  std::size_t end_line = 0;
  std::vector<InvokeRecord> invokes;
};

/// One `.class` record of smali-lite text with its lines kept verbatim.
struct SmaliUnit {
  std::string source;      // corpus-relative file path
  std::string class_name;  // dotted, fully qualified
  std::vector<std::string> lines;
  bool trailing_newline = true;
  std::vector<SmaliMethod> methods;
  std::optional<std::size_t> entry_method;

  MethodRef method_ref(const SmaliMethod& m) const;
  const SmaliMethod* find_method(std::string_view name) const;

  bool operator==(const SmaliUnit& other) const {
    return source == other.source && lines == other.lines &&
           trailing_newline == other.trailing_newline && entry_method == other.entry_method;
  }
};

/// Parses smali-lite text. A new unit starts at every `.class` line; lines
/// preceding the first `.class` belong to the first unit.
std::vector<SmaliUnit> parse_smali_lite(std::string_view text, const std::string& source = {});

/// Line-preserving serialization; parse(serialize(u)) == u.
std::string serialize(const SmaliUnit& unit);
std::string serialize(const std::vector<SmaliUnit>& units);

/// Parses "Lcom/foo/Bar;->name(params)ret".
std::optional<MethodRef> parse_method_descriptor(std::string_view text);
std::string class_descriptor(std::string_view qualified_class);

/// Flags `method` (default onCreate) of `entry_class` as the entry point.
/// Returns false when no such method exists.
bool mark_entry_point(std::vector<SmaliUnit>& units, std::string_view entry_class,
                      std::string_view method = "onCreate");

struct CallGraph {
  std::set<MethodRef> nodes;
  std::map<std::pair<MethodRef, MethodRef>, std::int64_t> edges;

  std::int64_t total_calls() const;
};

CallGraph build_call_graph(const std::vector<SmaliUnit>& units);

/// The AndroidManifest stand-in stored next to each corpus sample.
struct Manifest {
  std::string package;
  std::string main_activity;
  std::vector<std::string> hardware;        // S1
  std::vector<std::string> permissions;     // S2
  std::vector<std::string> components;      // S3
  std::vector<std::string> intent_filters;  // S4

  std::string to_json() const;
  static Manifest from_json(std::string_view text);
  bool operator==(const Manifest&) const = default;
};

}  // namespace evadroid
