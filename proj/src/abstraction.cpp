#include "evadroid/abstraction.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "evadroid/embedded_tables.inc"
#include "text_util.hpp"

namespace evadroid {

std::string MethodRef::qualified_class() const {
  if (class_name.empty()) return class_path;
  if (class_path.empty()) return class_name;
  return class_path + "." + class_name;
}

std::string MethodRef::descriptor() const {
  std::string q = qualified_class();
  std::replace(q.begin(), q.end(), '.', '/');
  return "L" + q + ";";
}

MethodRef MethodRef::from_qualified(std::string_view qualified_class, std::string method,
                                    std::string signature) {
  MethodRef ref;
  auto dot = qualified_class.rfind('.');
  if (dot == std::string_view::npos) {
    ref.class_name = std::string(qualified_class);
  } else {
    ref.class_path = std::string(qualified_class.substr(0, dot));
    ref.class_name = std::string(qualified_class.substr(dot + 1));
  }
  ref.method_name = std::move(method);
  ref.signature = std::move(signature);
  return ref;
}

std::string_view to_string(AbstractionMode mode) {
  return mode == AbstractionMode::Family ? "family" : "package";
}

AbstractionMode parse_mode(std::string_view text) {
  if (text == "family") return AbstractionMode::Family;
  if (text == "package") return AbstractionMode::Package;
  throw TableError("unknown abstraction mode: " + std::string(text));
}

std::vector<std::string_view> split_segments(std::string_view dotted) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    auto dot = dotted.find('.', start);
    if (dot == std::string_view::npos) dot = dotted.size();
    out.push_back(dotted.substr(start, dot - start));
    start = dot + 1;
  }
  return out;
}

bool ObfuscationRule::matches(std::string_view qualified_class) const {
  if (qualified_class.empty()) return false;
  for (auto seg : split_segments(qualified_class)) {
    if (seg.empty() || seg.size() > max_segment_length) return false;
  }
  return true;
}

AbstractionTable AbstractionTable::parse(std::string_view text, AbstractionMode mode) {
  AbstractionTable table;
  table.mode_ = mode;
  std::map<std::string, StateId, std::less<>> by_name;
  std::size_t line_no = 0;
  for (auto raw : detail::split_lines(text)) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto fields = detail::split_ws(line);
    if (fields.size() != 2) {
      throw TableError("abstraction table line " + std::to_string(line_no) +
                       ": expected '<prefix> <state-name>'");
    }
    std::string prefix(fields[0]);
    std::string name(fields[1]);
    if (name == kSelfDefined || name == kObfuscated) {
      throw TableError("abstraction table line " + std::to_string(line_no) +
                       ": sentinel states are implicit");
    }
    for (auto seg : split_segments(prefix)) {
      if (seg.empty()) {
        throw TableError("abstraction table line " + std::to_string(line_no) +
                         ": malformed prefix '" + prefix + "'");
      }
    }
    auto [it, inserted] = by_name.try_emplace(name, table.names_.size());
    if (inserted) {
      table.names_.push_back(name);
      table.canonical_prefix_.push_back(prefix);
    } else if (split_segments(prefix).size() <
               split_segments(table.canonical_prefix_[it->second]).size()) {
      table.canonical_prefix_[it->second] = prefix;
    }
    if (!table.prefixes_.emplace(prefix, it->second).second) {
      throw TableError("abstraction table line " + std::to_string(line_no) +
                       ": duplicate prefix '" + prefix + "'");
    }
  }
  table.names_.emplace_back(kSelfDefined);
  table.names_.emplace_back(kObfuscated);
  table.canonical_prefix_.emplace_back();
  table.canonical_prefix_.emplace_back();
  return table;
}

AbstractionTable AbstractionTable::load(const std::string& path, AbstractionMode mode) {
  return parse(detail::read_file(path), mode);
}

AbstractionTable AbstractionTable::builtin(AbstractionMode mode) {
  return parse(mode == AbstractionMode::Family ? embedded::kFamilyTable : embedded::kPackageTable,
               mode);
}

std::optional<StateId> AbstractionTable::find_state(std::string_view name) const {
  for (StateId i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::optional<StateId> AbstractionTable::match(std::string_view qualified_class) const {
  // Try successively shorter segment prefixes; the first hit is the longest.
  std::string_view candidate = qualified_class;
  while (!candidate.empty()) {
    auto it = prefixes_.find(std::string(candidate));
    if (it != prefixes_.end()) return it->second;
    auto dot = candidate.rfind('.');
    if (dot == std::string_view::npos) break;
    candidate = candidate.substr(0, dot);
  }
  return std::nullopt;
}

SdkWhitelist SdkWhitelist::parse(std::string_view text) {
  SdkWhitelist wl;
  std::size_t line_no = 0;
  for (auto raw : detail::split_lines(text)) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto fields = detail::split_ws(line);
    if (fields[0] == "@noop") {
      if (fields.size() != 3) {
        throw TableError("white-list line " + std::to_string(line_no) +
                         ": expected '@noop <class> <method>'");
      }
      wl.noops_.push_back({std::string(fields[1]), std::string(fields[2])});
      auto& methods = wl.classes_[std::string(fields[1])];
      if (std::find(methods.begin(), methods.end(), fields[2]) == methods.end()) {
        methods.emplace_back(fields[2]);
      }
      continue;
    }
    auto& methods = wl.classes_[std::string(fields[0])];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (std::find(methods.begin(), methods.end(), fields[i]) == methods.end()) {
        methods.emplace_back(fields[i]);
      }
    }
  }
  return wl;
}

SdkWhitelist SdkWhitelist::load(const std::string& path) { return parse(detail::read_file(path)); }

SdkWhitelist SdkWhitelist::builtin() { return parse(embedded::kSdkWhitelist); }

bool SdkWhitelist::contains(std::string_view qualified_class) const {
  return classes_.find(std::string(qualified_class)) != classes_.end();
}

FilterResult apply_whitelist_filter(const MethodRef& ref, const AbstractionTable& table,
                                    const SdkWhitelist* whitelist) {
  if (whitelist == nullptr) return {};
  auto q = ref.qualified_class();
  if (table.match(q) && !whitelist->contains(q)) return {true};
  return {};
}

StateId abstract_call(const MethodRef& ref, const AbstractionTable& table,
                      const ObfuscationRule& rule) {
  auto q = ref.qualified_class();
  if (auto hit = table.match(q)) return *hit;
  return rule.matches(q) ? table.obfuscated() : table.self_defined();
}

Abstractor::Abstractor(AbstractionTable table, const SdkWhitelist* filter, ObfuscationRule rule)
    : table_(std::move(table)), filter_(filter), rule_(rule) {}

StateId Abstractor::abstract_class(std::string_view qualified_class) const {
  if (auto hit = table_.match(qualified_class)) {
    if (filter_ != nullptr && !filter_->contains(qualified_class)) return table_.self_defined();
    return *hit;
  }
  return rule_.matches(qualified_class) ? table_.obfuscated() : table_.self_defined();
}

StateId family_of(StateId package_state, const AbstractionTable& package_table,
                  const AbstractionTable& family_table) {
  if (package_state == package_table.self_defined()) return family_table.self_defined();
  if (package_state == package_table.obfuscated()) return family_table.obfuscated();
  auto hit = family_table.match(package_table.canonical_prefix(package_state));
  return hit ? *hit : family_table.self_defined();
}

std::optional<NoopCall> noop_call_for(StateId state, const Abstractor& abstractor,
                                      const SdkWhitelist& whitelist) {
  for (const auto& call : whitelist.noop_calls()) {
    if (abstractor.abstract_class(call.qualified_class) == state) return call;
  }
  return std::nullopt;
}

}  // namespace evadroid
