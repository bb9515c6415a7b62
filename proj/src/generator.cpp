#include <algorithm>
#include <cmath>
#include <random>

#include "evadroid/harness.hpp"

namespace evadroid {

void GeneratorConfig::validate() const {
  if (benign + malware == 0) throw std::invalid_argument("generator needs at least one sample");
  if (margin < 0.0 || margin > 1.0) throw std::invalid_argument("margin must lie in [0, 1]");
  if (drift < 0.0 || drift > 1.0) throw std::invalid_argument("drift must lie in [0, 1]");
  if (min_calls < 1 || max_calls < min_calls) throw std::invalid_argument("bad call-count range");
  if (!(concentration > 0.0)) throw std::invalid_argument("concentration must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"benign", benign},         {"malware", malware},     {"margin", margin},
          {"drift", drift},           {"world_seed", world_seed}, {"min_calls", min_calls},
          {"max_calls", max_calls},   {"concentration", concentration},
          {"provenance", to_string(provenance)}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.benign = j.value("benign", c.benign);
  c.malware = j.value("malware", c.malware);
  c.margin = j.value("margin", c.margin);
  c.drift = j.value("drift", c.drift);
  c.world_seed = j.value("world_seed", c.world_seed);
  c.min_calls = j.value("min_calls", c.min_calls);
  c.max_calls = j.value("max_calls", c.max_calls);
  c.concentration = j.value("concentration", c.concentration);
  if (j.contains("provenance")) c.provenance = parse_provenance(j.at("provenance").get<std::string>());
  c.validate();
  return c;
}

namespace {

using Rng = std::mt19937_64;
using Dist = std::vector<double>;

Dist dirichlet(Rng& rng, const Dist& alpha) {
  Dist out(alpha.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    std::gamma_distribution<double> g(std::max(alpha[k], 1e-3), 1.0);
    out[k] = g(rng);
    sum += out[k];
  }
  if (!(sum > 0.0)) return Dist(alpha.size(), 1.0 / static_cast<double>(alpha.size()));
  for (auto& v : out) v /= sum;
  return out;
}

Dist flat_dirichlet(Rng& rng, std::size_t n, double a) { return dirichlet(rng, Dist(n, a)); }

Dist mix(const Dist& a, const Dist& b, double w) {
  Dist out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = (1.0 - w) * a[k] + w * b[k];
  return out;
}

Dist scaled(const Dist& p, double s) {
  Dist out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = s * p[k];
  return out;
}

std::vector<int> multinomial(Rng& rng, int n, const Dist& p) {
  std::vector<int> counts(p.size(), 0);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  for (int k = 0; k < n; ++k) ++counts[pick(rng)];
  return counts;
}

struct DrebinFeature {
  DrebinSet set;
  std::string value;
  double p_benign;
  double p_malware;
};

/// Class priors shared by every corpus drawn from the same world seed.
struct World {
  std::size_t states = 0;
  std::array<Dist, 2> rows;                     // caller-row weights per class
  std::array<std::vector<Dist>, 2> transitions;  // per class, per caller row
  std::vector<DrebinFeature> drebin;
};

const char* const kHardware[] = {"android.hardware.camera", "android.hardware.camera.autofocus",
                                 "android.hardware.location.gps", "android.hardware.telephony",
                                 "android.hardware.wifi", "android.hardware.bluetooth",
                                 "android.hardware.sensor.accelerometer", "android.hardware.touchscreen"};
const char* const kSystemPermissions[] = {
    "SEND_SMS", "READ_SMS", "RECEIVE_SMS", "READ_PHONE_STATE", "CALL_PHONE", "READ_CONTACTS",
    "WRITE_CONTACTS", "ACCESS_FINE_LOCATION", "ACCESS_COARSE_LOCATION", "INTERNET",
    "ACCESS_NETWORK_STATE", "ACCESS_WIFI_STATE", "CHANGE_WIFI_STATE", "CAMERA", "RECORD_AUDIO",
    "WRITE_EXTERNAL_STORAGE", "READ_EXTERNAL_STORAGE", "WAKE_LOCK", "VIBRATE", "RECEIVE_BOOT_COMPLETED",
    "GET_ACCOUNTS", "GET_TASKS", "SYSTEM_ALERT_WINDOW", "INSTALL_PACKAGES"};
const char* const kVendors[] = {"google.android.c2dm", "acme.maps", "vendor.push", "skyline.sync",
                                "brightcove.player", "foto.share", "tinyco.game", "mediaplus.cast"};
const char* const kCustomPermissionNames[] = {"C2D_MESSAGE", "MAPS_RECEIVE", "READ_SETTINGS"};
const char* const kComponents[] = {
    "com.google.android.gms.ads.AdActivity", "com.facebook.LoginActivity", "com.sync.SyncService",
    "com.push.PushReceiver", "com.pay.BillingService", "com.boot.BootReceiver", "com.sms.SmsReceiver",
    "com.admin.DeviceAdmin", "com.media.PlayerService", "com.widget.ClockWidget", "com.update.UpdateService",
    "com.analytics.CampaignReceiver", "com.share.ShareActivity", "com.settings.PrefsActivity",
    "com.alarm.AlarmReceiver", "com.daemon.KeepAliveService"};
const char* const kIntentFilters[] = {
    "android.intent.action.MAIN", "android.intent.action.VIEW", "android.intent.action.BOOT_COMPLETED",
    "android.provider.Telephony.SMS_RECEIVED", "android.intent.action.PACKAGE_ADDED",
    "android.intent.action.USER_PRESENT", "android.intent.action.SEND", "android.net.conn.CONNECTIVITY_CHANGE",
    "android.intent.action.PHONE_STATE", "android.intent.category.BROWSABLE", "android.intent.action.SEARCH",
    "android.app.action.DEVICE_ADMIN_ENABLED"};
const char* const kUrls[] = {
    "https://www.google-analytics.com/collect", "https://graph.facebook.com", "https://api.twitter.com",
    "https://play.googleapis.com", "https://cdn.jsdelivr.net", "https://maps.googleapis.com",
    "https://pagead2.googlesyndication.com", "https://api.weather.example.org", "https://fonts.gstatic.com",
    "https://updates.example-cdn.net", "http://198.51.100.23/gate.php", "http://203.0.113.77/panel",
    "http://cnc.example-bot.ru/cmd", "http://pay.sms-premium.example/sub", "192.0.2.44",
    "198.51.100.9", "http://track.example-adware.cn/t", "https://crashlytics.example.io",
    "https://login.example-bank.com", "http://203.0.113.5:8080/upload"};

World make_world(const GeneratorConfig& cfg, std::size_t states, const DrebinApiList& apis,
                 const std::vector<std::string>& api_names) {
  Rng rng(cfg.world_seed);
  World w;
  w.states = states;
  const Dist base_rows = flat_dirichlet(rng, states, 1.0);
  std::vector<Dist> base_trans;
  for (std::size_t g = 0; g < states; ++g) base_trans.push_back(flat_dirichlet(rng, states, 0.6));
  for (int c = 0; c < 2; ++c) {
    w.rows[c] = mix(base_rows, flat_dirichlet(rng, states, 0.6), cfg.margin);
    for (std::size_t g = 0; g < states; ++g) {
      w.transitions[c].push_back(mix(base_trans[g], flat_dirichlet(rng, states, 0.4), cfg.margin));
    }
  }

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto add = [&](DrebinSet set, std::string value, double lean) {
    // lean > 0 favours malware, lean < 0 favours benign
    const double base = 0.05 + 0.25 * u01(rng);
    const double shift = 0.55 * cfg.margin * std::abs(lean);
    double pb = base;
    double pm = base;
    (lean > 0 ? pm : pb) += shift;
    w.drebin.push_back({set, std::move(value), std::min(pb, 0.95), std::min(pm, 0.95)});
  };
  auto random_lean = [&](double benign_share) {
    const double r = u01(rng);
    if (r < benign_share) return -(0.5 + 0.5 * u01(rng));
    if (r < benign_share + 0.4) return 0.5 + 0.5 * u01(rng);
    return 0.0;
  };

  for (const char* h : kHardware) add(DrebinSet::S1, h, random_lean(0.3));
  for (const char* p : kSystemPermissions) {
    add(DrebinSet::S2, std::string("android.permission.") + p, u01(rng) < 0.6 ? 0.5 + 0.5 * u01(rng) : 0.0);
  }
  for (const char* v : kVendors) {
    for (const char* n : kCustomPermissionNames) {
      add(DrebinSet::S2, std::string("com.") + v + ".permission." + n, -(0.6 + 0.4 * u01(rng)));
    }
  }
  for (const char* comp : kComponents) add(DrebinSet::S3, comp, random_lean(0.3));
  for (const char* f : kIntentFilters) add(DrebinSet::S4, f, random_lean(0.3));
  for (const auto& name : api_names) add(*apis.classify(name), name, random_lean(0.35));
  for (std::size_t k = 0; k < 10; ++k) {
    add(DrebinSet::S6, std::string("android.permission.") + kSystemPermissions[k], random_lean(0.35));
  }
  for (const char* url : kUrls) add(DrebinSet::S8, url, random_lean(0.45));

  if (cfg.drift > 0.0) {
    Rng shift(cfg.world_seed ^ 0x9e3779b97f4a7c15ULL);
    const Dist d_rows = flat_dirichlet(shift, states, 1.0);
    std::vector<Dist> d_trans;
    for (std::size_t g = 0; g < states; ++g) d_trans.push_back(flat_dirichlet(shift, states, 0.6));
    for (int c = 0; c < 2; ++c) {
      w.rows[c] = mix(w.rows[c], d_rows, cfg.drift);
      for (std::size_t g = 0; g < states; ++g) w.transitions[c][g] = mix(w.transitions[c][g], d_trans[g], cfg.drift);
    }
    std::uniform_real_distribution<double> noise(0.0, 0.4);
    for (auto& f : w.drebin) {
      f.p_benign = (1.0 - cfg.drift) * f.p_benign + cfg.drift * noise(shift);
      f.p_malware = (1.0 - cfg.drift) * f.p_malware + cfg.drift * noise(shift);
    }
  }
  return w;
}

std::string slashed(const std::string& dotted) {
  std::string s = dotted;
  std::replace(s.begin(), s.end(), '.', '/');
  return s;
}

std::string source_for(const std::string& cls) { return "smali/" + slashed(cls) + ".smali"; }

struct Callee {
  std::string cls;
  std::string method;  // name + descriptor
};

struct Catalog {
  // family state -> white-listed classes with callable methods
  std::vector<std::vector<std::pair<std::string, std::vector<std::string>>>> by_state;
  std::map<std::string, Callee> api_callee;  // Drebin API name -> a class declaring it
};

Catalog make_catalog(const DataTables& tables, const Abstractor& family) {
  Catalog cat;
  cat.by_state.resize(family.state_count());
  for (const auto& [cls, methods] : tables.whitelist.classes()) {
    std::vector<std::string> plain;
    for (const auto& m : methods) {
      const auto name = m.substr(0, m.find('('));
      if (tables.apis.classify(name)) {
        cat.api_callee.try_emplace(name, Callee{cls, m});
      } else {
        plain.push_back(m);
      }
    }
    if (plain.empty()) plain.push_back("hashCode()I");
    const StateId s = family.abstract_class(cls);
    if (!family.table().is_sentinel(s)) cat.by_state[s].emplace_back(cls, std::move(plain));
  }
  return cat;
}

std::string invoke_line(const Callee& c) {
  return "    invoke-static {}, L" + slashed(c.cls) + ";->" + c.method;
}

SmaliUnit unit_from(const std::string& cls, const std::string& super, const std::vector<std::vector<std::string>>& methods) {
  std::string text = ".class public L" + slashed(cls) + ";\n.super L" + slashed(super) + ";\n";
  for (const auto& m : methods) {
    text += "\n";
    for (const auto& line : m) text += line + "\n";
  }
  auto units = parse_smali_lite(text, source_for(cls));
  return std::move(units.front());
}

std::vector<std::string> method_body(const std::string& header, const std::vector<std::string>& body) {
  std::vector<std::string> lines{header, "    .locals 2"};
  lines.insert(lines.end(), body.begin(), body.end());
  lines.push_back("    return-void");
  lines.push_back(".end method");
  return lines;
}

const char* const kAppWords[] = {"tool", "game", "news", "photo", "music", "chat", "shop", "note",
                                 "fit", "bank", "weather", "scan", "clean", "flash", "map", "quiz"};

Sample make_sample(const World& world, const Catalog& cat, const GeneratorConfig& cfg,
                   const AbstractionTable& family, int label, std::size_t index, std::uint64_t seed) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index)};
  Rng rng(seq);
  const std::size_t s = world.states;
  const StateId self = family.self_defined();
  const StateId obf = family.obfuscated();

  Sample sample;
  sample.id = std::string(label == kMalware ? "malware-" : "benign-") +
              std::string(4 - std::min<std::size_t>(4, std::to_string(index).size()), '0') + std::to_string(index);
  sample.label = label;
  std::uniform_int_distribution<std::size_t> word(0, std::size(kAppWords) - 1);
  const std::string pkg = std::string("com.") + kAppWords[word(rng)] + std::to_string(index) +
                          (label == kMalware ? "m" : "b");
  const std::string main_cls = pkg + ".MainActivity";
  const std::string util_cls = pkg + ".Util";
  const char letters[] = "abcdefghijklmnopqrstuvwxyz";
  std::uniform_int_distribution<int> letter(0, 25);
  const std::string obf_cls = std::string("o.") + letters[letter(rng)] + "." + letters[letter(rng)];

  // transition counts
  std::uniform_int_distribution<int> total(cfg.min_calls, cfg.max_calls);
  const Dist row_w = dirichlet(rng, scaled(world.rows[label], cfg.concentration));
  const auto row_counts = multinomial(rng, total(rng), row_w);

  auto pick_callee = [&](StateId i) -> Callee {
    if (i == self) {
      std::uniform_int_distribution<int> h(0, 3);
      return {util_cls, "helper" + std::to_string(h(rng)) + "()V"};
    }
    if (i == obf) {
      std::uniform_int_distribution<int> h(0, 1);
      return {obf_cls, h(rng) == 0 ? "b()V" : "c()V"};
    }
    const auto& classes = cat.by_state[i];
    std::uniform_int_distribution<std::size_t> pc(0, classes.size() - 1);
    const auto& [cls, methods] = classes[pc(rng)];
    std::uniform_int_distribution<std::size_t> pm(0, methods.size() - 1);
    return {cls, methods[pm(rng)]};
  };

  std::vector<std::vector<std::string>> rows(s);
  for (std::size_t g = 0; g < s; ++g) {
    if (row_counts[g] == 0) continue;
    if (g != self && g != obf && cat.by_state[g].empty()) continue;
    const Dist p = dirichlet(rng, scaled(world.transitions[label][g], cfg.concentration));
    const auto cells = multinomial(rng, row_counts[g], p);
    for (std::size_t i = 0; i < s; ++i) {
      if (i != self && i != obf && cat.by_state[i].empty()) continue;
      for (int k = 0; k < cells[i]; ++k) rows[g].push_back(invoke_line(pick_callee(i)));
    }
  }

  // Drebin strings
  std::vector<std::string> api_lines;
  std::vector<std::string> string_lines;
  for (const auto& f : world.drebin) {
    std::bernoulli_distribution present(label == kMalware ? f.p_malware : f.p_benign);
    if (!present(rng)) continue;
    switch (f.set) {
      case DrebinSet::S1: sample.manifest.hardware.push_back(f.value); break;
      case DrebinSet::S2: sample.manifest.permissions.push_back(f.value); break;
      case DrebinSet::S3: sample.manifest.components.push_back(f.value); break;
      case DrebinSet::S4: sample.manifest.intent_filters.push_back(f.value); break;
      case DrebinSet::S5:
      case DrebinSet::S7: {
        const auto& c = cat.api_callee.at(f.value);
        api_lines.push_back("    invoke-virtual {v0}, L" + slashed(c.cls) + ";->" + c.method);
        break;
      }
      case DrebinSet::S6:
      case DrebinSet::S8: string_lines.push_back("    const-string v1, \"" + f.value + "\""); break;
    }
  }
  sample.manifest.package = pkg;
  sample.manifest.main_activity = main_cls;

  std::vector<std::string> on_create{"    invoke-super {p0, p1}, Landroid/app/Activity;->onCreate(Landroid/os/Bundle;)V"};
  on_create.insert(on_create.end(), rows[self].begin(), rows[self].end());
  sample.units.push_back(unit_from(main_cls, "android.app.Activity",
                                   {method_body(".method protected onCreate(Landroid/os/Bundle;)V", on_create),
                                    method_body(".method private initServices()V", api_lines),
                                    method_body(".method private loadConfig()V", string_lines)}));
  std::vector<std::vector<std::string>> helpers;
  for (int h = 0; h < 4; ++h) {
    helpers.push_back(method_body(".method public static helper" + std::to_string(h) + "()V", {"    nop"}));
  }
  sample.units.push_back(unit_from(util_cls, "java.lang.Object", helpers));
  sample.units.push_back(unit_from(obf_cls, "java.lang.Object",
                                   {method_body(".method public static a()V", rows[obf]),
                                    method_body(".method public static b()V", {}),
                                    method_body(".method public static c()V", {})}));

  // bundled-library callers: one white-listed class per active named row
  for (std::size_t g = 0; g < s; ++g) {
    if (g == self || g == obf || rows[g].empty()) continue;
    const auto& classes = cat.by_state[g];
    std::uniform_int_distribution<std::size_t> pc(0, classes.size() - 1);
    const auto& cls = classes[pc(rng)].first;
    sample.units.push_back(unit_from(cls, "java.lang.Object", {method_body(".method public run()V", rows[g])}));
  }

  std::sort(sample.units.begin(), sample.units.end(),
            [](const SmaliUnit& a, const SmaliUnit& b) { return a.source < b.source; });
  mark_entry_point(sample.units, main_cls);
  return sample;
}

}  // namespace

Corpus generate_synthetic_corpus(const GeneratorConfig& config, std::uint64_t seed, const DataTables& tables) {
  config.validate();
  const Abstractor family(tables.family);
  const Catalog cat = make_catalog(tables, family);
  std::vector<std::string> api_names;
  for (const auto& [name, callee] : cat.api_callee) api_names.push_back(name);
  const World world = make_world(config, family.state_count(), tables.apis, api_names);

  Corpus corpus;
  corpus.provenance = config.provenance;
  for (std::size_t k = 0; k < config.benign; ++k) {
    corpus.samples.push_back(make_sample(world, cat, config, family.table(), kBenign, k, seed));
  }
  for (std::size_t k = 0; k < config.malware; ++k) {
    corpus.samples.push_back(make_sample(world, cat, config, family.table(), kMalware, k, seed));
  }
  corpus.validate();
  return corpus;
}

}  // namespace evadroid
