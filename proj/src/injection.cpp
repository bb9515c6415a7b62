#include "evadroid/injection.hpp"

#include <algorithm>
#include <set>

#include "text_util.hpp"

namespace evadroid {

std::string_view to_string(Strategy s) {
  return s == Strategy::Simple ? "simple" : "sophisticated";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "simple") return Strategy::Simple;
  if (text == "sophisticated") return Strategy::Sophisticated;
  throw std::invalid_argument("unknown strategy: " + std::string(text));
}

namespace {

const SmaliUnit* entry_unit(const std::vector<SmaliUnit>& units) {
  for (const auto& u : units) {
    if (u.entry_method) return &u;
  }
  return nullptr;
}

std::string source_for(const std::string& qualified_class) {
  std::string path = qualified_class;
  std::replace(path.begin(), path.end(), '.', '/');
  return "smali/" + path + ".smali";
}

std::string simple_name(const std::string& qualified_class) {
  auto dot = qualified_class.rfind('.');
  return dot == std::string::npos ? qualified_class : qualified_class.substr(dot + 1);
}

// Deterministic generator of fresh class names abstracting to a given state.
class ClassNamer {
 public:
  ClassNamer(const std::vector<SmaliUnit>& units, const Abstractor& abstractor)
      : abstractor_(abstractor) {
    for (const auto& u : units) used_.insert(u.class_name);
  }

  std::string fresh(StateId state, std::string_view stem) {
    const auto& table = abstractor_.table();
    for (int attempts = 0; attempts < 100000; ++attempts) {
      std::size_t k = counter_++;
      std::string name;
      if (state == table.obfuscated()) {
        name = "z";
        std::size_t v = k;
        for (int d = 0; d < 4; ++d) {
          name += '.';
          name += static_cast<char>('a' + v % 26);
          v /= 26;
        }
      } else if (state == table.self_defined()) {
        name = "advpack." + std::string(stem) + std::to_string(k);
      } else {
        name = table.canonical_prefix(state) + ".advpack." + std::string(stem) + std::to_string(k);
      }
      if (used_.count(name) != 0) continue;
      if (abstractor_.abstract_class(name) != state) {
        throw std::logic_error("cannot synthesize a class abstracting to state " +
                               table.state_name(state));
      }
      used_.insert(name);
      return name;
    }
    throw std::logic_error("class name space exhausted");
  }

 private:
  const Abstractor& abstractor_;
  std::set<std::string> used_;
  std::size_t counter_ = 0;
};

std::string invoke_line(std::string_view kind, const std::string& cls, const std::string& method) {
  return "    invoke-" + std::string(kind) + " {}, " + class_descriptor(cls) + "->" + method;
}

std::string unit_header(const std::string& cls) {
  return ".class public " + class_descriptor(cls) + "\n.super Ljava/lang/Object;\n.source \"" +
         simple_name(cls) + ".java\"\n";
}

std::string callee_method() {
  return "\n.method public static callee()V\n    .locals 0\n    return-void\n.end method\n";
}

std::string initializer(const std::vector<std::string>& body) {
  std::string out =
      "\n.field public static hook:Ljava/lang/Object;\n\n"
      ".method static constructor <clinit>()V\n    .locals 0\n";
  for (const auto& l : body) out += l + "\n";
  out += "    return-void\n.end method\n";
  return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

// Host method for sophisticated insertions into sentinel row `state`.
std::optional<std::pair<std::string, std::size_t>> host_for(const std::vector<SmaliUnit>& units,
                                                            const Abstractor& abstractor,
                                                            StateId state) {
  if (const auto* entry = entry_unit(units)) {
    if (abstractor.abstract_class(entry->class_name) == state) {
      return std::make_pair(entry->class_name, *entry->entry_method);
    }
  }
  for (const auto& u : units) {
    if (u.methods.empty() || abstractor.abstract_class(u.class_name) != state) continue;
    return std::make_pair(u.class_name, std::size_t{0});
  }
  return std::nullopt;
}

}  // namespace

std::vector<StateId> sophisticated_rows(const std::vector<SmaliUnit>& units,
                                        const Abstractor& abstractor) {
  std::vector<StateId> rows;
  for (StateId s : {abstractor.table().self_defined(), abstractor.table().obfuscated()}) {
    if (host_for(units, abstractor, s)) rows.push_back(s);
  }
  return rows;
}

InjectionPlan plan_injection(const PerturbationPlan& plan, Strategy strategy,
                             const std::vector<SmaliUnit>& target, const Abstractor& abstractor,
                             const SdkWhitelist& whitelist) {
  if (plan.kind != PerturbationPlan::Kind::CallAdditions) {
    throw std::invalid_argument("plan_injection expects call additions");
  }
  InjectionPlan out;
  out.strategy = strategy;
  if (plan.empty()) return out;

  const auto& table = abstractor.table();
  const auto& omega = plan.call_additions;
  if (omega.states() != table.state_count()) {
    throw std::invalid_argument("perturbation grid does not match the abstraction mode");
  }
  const SmaliUnit* entry = entry_unit(target);
  if (entry == nullptr) throw NoEntryPoint("target has no entry-point method");

  ClassNamer namer(target, abstractor);
  const std::size_t s = omega.states();

  if (strategy == Strategy::Simple) {
    InjectionPlan::LineInsertion hooks{entry->class_name, *entry->entry_method, {}};
    for (StateId g = 0; g < s; ++g) {
      for (StateId i = 0; i < s; ++i) {
        const auto reps = omega(g, i);
        if (reps == 0) continue;
        std::string caller = namer.fresh(g, "Inj");
        std::string callee = g == i ? caller : namer.fresh(i, "Inj");
        std::vector<std::string> body(static_cast<std::size_t>(reps),
                                      invoke_line("static", callee, "callee()V"));
        std::string caller_text = unit_header(caller) + initializer(body);
        if (g == i) caller_text += callee_method();
        out.new_units.push_back({source_for(caller), caller_text});
        std::string code = caller_text;
        if (g != i) {
          std::string callee_text = unit_header(callee) + callee_method();
          out.new_units.push_back({source_for(callee), callee_text});
          code += callee_text;
        }
        std::string hook = "    sget-object v0, " + class_descriptor(caller) + "->hook:Ljava/lang/Object;";
        hooks.lines.push_back(hook);
        code += hook + "\n";
        out.blocks.push_back({caller, std::move(code), g, i, reps});
      }
    }
    out.insertions.push_back(std::move(hooks));
    return out;
  }

  // Sophisticated: rows must originate from sentinel states.
  for (StateId g = 0; g < s; ++g) {
    if (table.is_sentinel(g)) continue;
    if (omega.row_sum(g) != 0) {
      throw StrategyViolation("sophisticated strategy cannot add calls from state '" +
                              table.state_name(g) + "'");
    }
  }
  for (StateId g : {table.self_defined(), table.obfuscated()}) {
    if (omega.row_sum(g) == 0) continue;
    auto host = host_for(target, abstractor, g);
    if (!host) {
      throw StrategyViolation("no existing method hosts calls from state '" +
                              table.state_name(g) + "'");
    }
    InjectionPlan::LineInsertion insertion{host->first, host->second, {}};
    for (StateId i = 0; i < s; ++i) {
      const auto reps = omega(g, i);
      if (reps == 0) continue;
      std::string line;
      std::string code;
      if (table.is_sentinel(i)) {
        std::string nop = namer.fresh(i, "Nop");
        std::string text = unit_header(nop) + callee_method();
        out.new_units.push_back({source_for(nop), text});
        code = text;
        line = invoke_line("static", nop, "callee()V");
      } else {
        auto call = noop_call_for(i, abstractor, whitelist);
        if (!call) {
          throw StrategyViolation("no designated no-op call for state '" + table.state_name(i) +
                                  "'");
        }
        line = invoke_line("static", call->qualified_class, call->method);
      }
      std::vector<std::string> lines(static_cast<std::size_t>(reps), line);
      code += join_lines(lines);
      insertion.lines.insert(insertion.lines.end(), lines.begin(), lines.end());
      out.blocks.push_back({host->first, std::move(code), g, i, reps});
    }
    out.insertions.push_back(std::move(insertion));
  }
  return out;
}

InjectionPlan plan_feature_injection(const std::vector<std::size_t>& flips,
                                     const FeatureDictionary& dict,
                                     const std::vector<SmaliUnit>& target) {
  InjectionPlan out;
  out.strategy = Strategy::Sophisticated;
  if (flips.empty()) return out;

  std::vector<std::string> body;
  for (std::size_t id : flips) {
    const auto& e = dict.at(id);
    if (is_manifest_set(e.set)) {
      out.manifest_additions.push_back(e);
      out.blocks.push_back({"manifest", std::string(to_string(e.set)) + " " + e.feature, 0, 0, 1});
      continue;
    }
    std::string line;
    if (e.set == DrebinSet::S5 || e.set == DrebinSet::S7) {
      line = "    invoke-virtual {p0}, Ljava/lang/Object;->" + e.feature + "()V";
    } else {
      line = "    const-string v0, \"" + e.feature + "\"";
    }
    body.push_back(line);
    out.blocks.push_back({"", line + "\n", 0, 0, 1});
  }
  if (body.empty()) return out;

  const SmaliUnit* entry = entry_unit(target);
  if (entry == nullptr) throw NoEntryPoint("target has no entry-point method");
  std::string method_name = "addFeatures";
  for (int k = 0; entry->find_method(method_name) != nullptr; ++k) {
    method_name = "addFeatures" + std::to_string(k);
  }
  InjectionPlan::UnitAppend append{entry->class_name, {}};
  append.lines.push_back("");
  append.lines.push_back(".method private " + method_name + "()V");
  append.lines.push_back("    .locals 1");
  append.lines.insert(append.lines.end(), body.begin(), body.end());
  append.lines.push_back("    return-void");
  append.lines.push_back(".end method");
  for (auto& b : out.blocks) {
    if (b.target_unit.empty()) b.target_unit = entry->class_name;
  }
  out.appends.push_back(std::move(append));
  return out;
}

std::vector<SmaliUnit> apply_injection(const std::vector<SmaliUnit>& units,
                                       const InjectionPlan& plan) {
  std::vector<SmaliUnit> out = units;
  if (plan.empty()) return out;

  auto find_unit = [&](const std::string& cls) -> SmaliUnit& {
    for (auto& u : out) {
      if (u.class_name == cls) return u;
    }
    throw std::invalid_argument("injection target class not found: " + cls);
  };
  auto reparse = [](SmaliUnit& u) {
    auto entry = u.entry_method;
    auto reparsed = parse_smali_lite(serialize(u), u.source);
    if (reparsed.size() != 1) throw std::logic_error("injected unit does not re-parse as one class");
    reparsed.front().entry_method = entry;
    u = std::move(reparsed.front());
  };

  for (const auto& ins : plan.insertions) {
    SmaliUnit& u = find_unit(ins.unit_class);
    if (ins.method >= u.methods.size()) throw std::invalid_argument("injection method out of range");
    const auto& m = u.methods[ins.method];
    std::size_t at = m.end_line;
    for (std::size_t l = m.end_line; l > m.begin_line; --l) {
      if (detail::starts_with(detail::trim(u.lines[l - 1]), "return")) {
        at = l - 1;
        break;
      }
    }
    u.lines.insert(u.lines.begin() + static_cast<std::ptrdiff_t>(at), ins.lines.begin(),
                   ins.lines.end());
    reparse(u);
  }
  for (const auto& app : plan.appends) {
    SmaliUnit& u = find_unit(app.unit_class);
    u.lines.insert(u.lines.end(), app.lines.begin(), app.lines.end());
    u.trailing_newline = true;
    reparse(u);
  }
  for (const auto& nu : plan.new_units) {
    auto parsed = parse_smali_lite(nu.text, nu.source);
    for (auto& p : parsed) out.push_back(std::move(p));
  }
  return out;
}

Manifest apply_manifest_edits(Manifest manifest, const InjectionPlan& plan) {
  for (const auto& e : plan.manifest_additions) {
    std::vector<std::string>* list = nullptr;
    switch (e.set) {
      case DrebinSet::S1: list = &manifest.hardware; break;
      case DrebinSet::S2: list = &manifest.permissions; break;
      case DrebinSet::S3: list = &manifest.components; break;
      case DrebinSet::S4: list = &manifest.intent_filters; break;
      default: throw std::invalid_argument("not a manifest feature set");
    }
    if (std::find(list->begin(), list->end(), e.feature) == list->end()) list->push_back(e.feature);
  }
  return manifest;
}

}  // namespace evadroid
