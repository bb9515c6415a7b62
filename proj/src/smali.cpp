#include "evadroid/smali.hpp"

#include <algorithm>

#include <json.hpp>

#include "text_util.hpp"

namespace evadroid {

using detail::starts_with;
using detail::trim;

SmaliParseError::SmaliParseError(std::string src, std::size_t ln, const std::string& what)
    : std::runtime_error((src.empty() ? std::string("<text>") : src) + ":" + std::to_string(ln) +
                         ": " + what),
      source(std::move(src)),
      line(ln) {}

MethodRef SmaliUnit::method_ref(const SmaliMethod& m) const {
  return MethodRef::from_qualified(class_name, m.name, m.descriptor);
}

const SmaliMethod* SmaliUnit::find_method(std::string_view name) const {
  for (const auto& m : methods) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

std::string class_descriptor(std::string_view qualified_class) {
  std::string s(qualified_class);
  std::replace(s.begin(), s.end(), '.', '/');
  return "L" + s + ";";
}

namespace {

std::optional<std::string> parse_class_token(std::string_view tok) {
  if (tok.size() < 3 || tok.front() != 'L' || tok.back() != ';') return std::nullopt;
  std::string s(tok.substr(1, tok.size() - 2));
  if (s.empty() || s.find_first_of(" \t;") != std::string::npos) return std::nullopt;
  std::replace(s.begin(), s.end(), '/', '.');
  if (s.front() == '.' || s.back() == '.' || s.find("..") != std::string::npos) return std::nullopt;
  return s;
}

// "name(params)ret" -> (name, "(params)ret")
std::optional<std::pair<std::string, std::string>> split_method_token(std::string_view tok) {
  auto open = tok.find('(');
  auto close = tok.find(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open ||
      open == 0 || close + 1 >= tok.size()) {
    return std::nullopt;
  }
  return std::make_pair(std::string(tok.substr(0, open)), std::string(tok.substr(open)));
}

bool is_invoke_kind(std::string_view op, std::string& kind) {
  for (std::string_view k : {"static", "virtual", "direct"}) {
    std::string base = "invoke-" + std::string(k);
    if (op == base || op == base + "/range") {
      kind = std::string(k);
      return true;
    }
  }
  return false;
}

}  // namespace

std::optional<MethodRef> parse_method_descriptor(std::string_view text) {
  auto arrow = text.find(";->");
  if (arrow == std::string_view::npos) return std::nullopt;
  auto cls = parse_class_token(text.substr(0, arrow + 1));
  auto method = split_method_token(text.substr(arrow + 3));
  if (!cls || !method) return std::nullopt;
  return MethodRef::from_qualified(*cls, method->first, method->second);
}

std::vector<SmaliUnit> parse_smali_lite(std::string_view text, const std::string& source) {
  std::vector<SmaliUnit> units;
  std::vector<std::string> preamble;
  SmaliMethod* open_method = nullptr;
  auto lines = detail::split_lines(text);

  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view raw = lines[n];
    auto line = trim(raw);
    auto fail = [&](const std::string& what) { throw SmaliParseError(source, n + 1, what); };

    if (starts_with(line, ".class") && (line.size() == 6 || line[6] == ' ' || line[6] == '\t')) {
      if (open_method != nullptr) fail("'.class' inside a method");
      auto toks = detail::split_ws(line);
      auto cls = toks.size() >= 2 ? parse_class_token(toks.back()) : std::nullopt;
      if (!cls) fail("malformed .class record");
      SmaliUnit unit;
      unit.source = source;
      unit.class_name = *cls;
      if (units.empty()) unit.lines = std::move(preamble);
      units.push_back(std::move(unit));
      units.back().lines.emplace_back(raw);
      continue;
    }
    if (units.empty()) {
      if (!line.empty() && !starts_with(line, "#")) fail("record before any .class");
      preamble.emplace_back(raw);
      continue;
    }
    SmaliUnit& unit = units.back();
    std::size_t index = unit.lines.size();
    unit.lines.emplace_back(raw);

    if (starts_with(line, ".method") && (line.size() == 7 || line[7] == ' ' || line[7] == '\t')) {
      if (open_method != nullptr) fail("nested .method");
      auto toks = detail::split_ws(line);
      auto parts = toks.size() >= 2 ? split_method_token(toks.back()) : std::nullopt;
      if (!parts) fail("malformed .method record");
      SmaliMethod m;
      m.name = parts->first;
      m.descriptor = parts->second;
      m.begin_line = index;
      unit.methods.push_back(std::move(m));
      open_method = &unit.methods.back();
    } else if (line == ".end method") {
      if (open_method == nullptr) fail("'.end method' without .method");
      open_method->end_line = index;
      open_method = nullptr;
    } else if (starts_with(line, "invoke-")) {
      auto toks = detail::split_ws(line);
      std::string kind;
      if (!is_invoke_kind(toks[0], kind)) continue;  // other invoke forms are opaque
      if (open_method == nullptr) fail("invoke outside a method");
      auto close = line.find('}');
      if (line.find('{') == std::string_view::npos || close == std::string_view::npos) {
        fail("malformed invoke registers");
      }
      auto rest = trim(line.substr(close + 1));
      if (rest.empty() || rest.front() != ',') fail("malformed invoke record");
      auto target = parse_method_descriptor(trim(rest.substr(1)));
      if (!target) fail("malformed invoke target");
      open_method->invokes.push_back({index, kind, std::move(*target)});
    }
  }
  if (open_method != nullptr) {
    throw SmaliParseError(source, lines.size(), "unterminated .method");
  }
  if (!units.empty()) {
    units.back().trailing_newline = !text.empty() && text.back() == '\n';
  }
  return units;
}

std::string serialize(const SmaliUnit& unit) {
  std::string out;
  for (std::size_t i = 0; i < unit.lines.size(); ++i) {
    out += unit.lines[i];
    if (i + 1 < unit.lines.size() || unit.trailing_newline) out += '\n';
  }
  return out;
}

std::string serialize(const std::vector<SmaliUnit>& units) {
  std::string out;
  for (const auto& u : units) out += serialize(u);
  return out;
}

bool mark_entry_point(std::vector<SmaliUnit>& units, std::string_view entry_class,
                      std::string_view method) {
  bool found = false;
  for (auto& u : units) {
    u.entry_method.reset();
    if (found || u.class_name != entry_class) continue;
    for (std::size_t m = 0; m < u.methods.size(); ++m) {
      if (u.methods[m].name == method) {
        u.entry_method = m;
        found = true;
        break;
      }
    }
  }
  return found;
}

std::int64_t CallGraph::total_calls() const {
  std::int64_t total = 0;
  for (const auto& [_, count] : edges) total += count;
  return total;
}

CallGraph build_call_graph(const std::vector<SmaliUnit>& units) {
  CallGraph graph;
  for (const auto& unit : units) {
    for (const auto& m : unit.methods) {
      auto caller = unit.method_ref(m);
      graph.nodes.insert(caller);
      for (const auto& inv : m.invokes) {
        graph.nodes.insert(inv.target);
        ++graph.edges[{caller, inv.target}];
      }
    }
  }
  return graph;
}

std::string Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["package"] = package;
  j["main_activity"] = main_activity;
  j["hardware"] = hardware;
  j["permissions"] = permissions;
  j["components"] = components;
  j["intent_filters"] = intent_filters;
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  Manifest m;
  m.package = j.value("package", "");
  m.main_activity = j.value("main_activity", "");
  auto list = [&](const char* key) {
    return j.contains(key) ? j.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
  };
  m.hardware = list("hardware");
  m.permissions = list("permissions");
  m.components = list("components");
  m.intent_filters = list("intent_filters");
  return m;
}

}  // namespace evadroid
