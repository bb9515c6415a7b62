#include <algorithm>
#include <cctype>

#include "evadroid/embedded_tables.inc"
#include "evadroid/features.hpp"
#include "text_util.hpp"

namespace evadroid {

namespace {

struct SmaliTokens {
  std::set<std::string, std::less<>> api_names;  // every "->name(" reference
  std::set<std::string, std::less<>> literals;   // every quoted string
};

SmaliTokens scan_tokens(const std::vector<SmaliUnit>& units) {
  SmaliTokens out;
  for (const auto& unit : units) {
    for (const auto& line : unit.lines) {
      std::size_t pos = 0;
      while ((pos = line.find("->", pos)) != std::string::npos) {
        pos += 2;
        auto open = line.find('(', pos);
        if (open == std::string::npos) break;
        auto name = std::string_view(line).substr(pos, open - pos);
        if (!name.empty() && name.find_first_of(" \t,;:") == std::string_view::npos) {
          out.api_names.emplace(name);
        }
      }
      pos = 0;
      while ((pos = line.find('"', pos)) != std::string::npos) {
        auto close = line.find('"', pos + 1);
        if (close == std::string::npos) break;
        out.literals.emplace(line.substr(pos + 1, close - pos - 1));
        pos = close + 1;
      }
    }
  }
  return out;
}

bool looks_like_ipv4(std::string_view s) {
  int dots = 0;
  int digits = 0;
  for (char c : s) {
    if (c == '.') {
      if (digits == 0) return false;
      ++dots;
      digits = 0;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      if (++digits > 3) return false;
    } else {
      return false;
    }
  }
  return dots == 3 && digits > 0;
}

bool is_network_address(std::string_view s) {
  return detail::starts_with(s, "http://") || detail::starts_with(s, "https://") ||
         looks_like_ipv4(s);
}

bool is_permission(std::string_view s) {
  return s.find(".permission.") != std::string_view::npos && s.find(' ') == std::string_view::npos;
}

}  // namespace

std::string_view to_string(DrebinSet set) {
  static constexpr std::array<std::string_view, 8> tags{"S1", "S2", "S3", "S4",
                                                        "S5", "S6", "S7", "S8"};
  return tags.at(static_cast<std::size_t>(set) - 1);
}

DrebinSet parse_drebin_set(std::string_view tag) {
  if (tag.size() == 2 && tag[0] == 'S' && tag[1] >= '1' && tag[1] <= '8') {
    return static_cast<DrebinSet>(tag[1] - '0');
  }
  throw std::invalid_argument("unknown feature set tag: " + std::string(tag));
}

DrebinApiList DrebinApiList::parse(std::string_view text) {
  DrebinApiList list;
  for (auto raw : detail::split_lines(text)) {
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto fields = detail::split_ws(line);
    if (fields.size() != 2) throw std::invalid_argument("malformed API list line");
    auto set = parse_drebin_set(fields[0]);
    if (set != DrebinSet::S5 && set != DrebinSet::S7) {
      throw std::invalid_argument("API list entries must be S5 or S7");
    }
    list.names_.emplace(std::string(fields[1]), set);
  }
  return list;
}

DrebinApiList DrebinApiList::builtin() { return parse(embedded::kDrebinApiList); }

std::optional<DrebinSet> DrebinApiList::classify(std::string_view method_name) const {
  auto it = names_.find(method_name);
  if (it == names_.end()) return std::nullopt;
  return it->second;
}

DrebinStrings observe_drebin_strings(const std::vector<SmaliUnit>& units, const Manifest& manifest,
                                     const DrebinApiList& apis) {
  DrebinStrings out;
  auto put = [&](DrebinSet s, const std::string& v) {
    out[static_cast<std::size_t>(s) - 1].insert(v);
  };
  for (const auto& v : manifest.hardware) put(DrebinSet::S1, v);
  for (const auto& v : manifest.permissions) put(DrebinSet::S2, v);
  for (const auto& v : manifest.components) put(DrebinSet::S3, v);
  for (const auto& v : manifest.intent_filters) put(DrebinSet::S4, v);

  auto tokens = scan_tokens(units);
  for (const auto& name : tokens.api_names) {
    if (auto set = apis.classify(name)) put(*set, name);
  }
  for (const auto& lit : tokens.literals) {
    if (is_permission(lit)) {
      put(DrebinSet::S6, lit);
    } else if (is_network_address(lit)) {
      put(DrebinSet::S8, lit);
    }
  }
  return out;
}

FeatureDictionary FeatureDictionary::from_entries(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.set != b.set) return a.set < b.set;
    return a.feature < b.feature;
  });
  entries.erase(std::unique(entries.begin(), entries.end()), entries.end());
  FeatureDictionary dict;
  dict.entries_ = std::move(entries);
  for (std::size_t i = 0; i < dict.entries_.size(); ++i) {
    dict.index_.emplace(std::make_pair(static_cast<int>(dict.entries_[i].set),
                                       dict.entries_[i].feature),
                        i);
  }
  return dict;
}

FeatureDictionary FeatureDictionary::from_observations(const std::vector<DrebinStrings>& observed) {
  std::vector<Entry> entries;
  for (const auto& sample : observed) {
    for (std::size_t s = 0; s < sample.size(); ++s) {
      for (const auto& f : sample[s]) entries.push_back({static_cast<DrebinSet>(s + 1), f});
    }
  }
  return from_entries(std::move(entries));
}

FeatureDictionary FeatureDictionary::parse(std::string_view text) {
  std::vector<Entry> entries;
  for (auto raw : detail::split_lines(text)) {
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto space = line.find(' ');
    if (space == std::string_view::npos) throw std::invalid_argument("malformed dictionary line");
    entries.push_back({parse_drebin_set(line.substr(0, space)),
                       std::string(detail::trim(line.substr(space + 1)))});
  }
  return from_entries(std::move(entries));
}

std::string FeatureDictionary::serialize() const {
  std::string out;
  for (const auto& e : entries_) {
    out += to_string(e.set);
    out += ' ';
    out += e.feature;
    out += '\n';
  }
  return out;
}

std::optional<std::size_t> FeatureDictionary::find(DrebinSet set, std::string_view feature) const {
  auto it = index_.find(std::make_pair(static_cast<int>(set), std::string(feature)));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> FeatureDictionary::ids_in(std::initializer_list<DrebinSet> sets) const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (std::find(sets.begin(), sets.end(), entries_[i].set) != sets.end()) ids.push_back(i);
  }
  return ids;
}

Eigen::VectorXd BinaryFeatureVector::to_dense() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) v[static_cast<Eigen::Index>(i)] = bits[i];
  return v;
}

std::size_t BinaryFeatureVector::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string BinaryFeatureVector::to_sparse_text() const {
  std::string out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == 0) continue;
    if (!out.empty()) out += ' ';
    out += std::to_string(i) + ":1";
  }
  return out;
}

BinaryFeatureVector drebin_features(const std::vector<SmaliUnit>& units, const Manifest& manifest,
                                    const FeatureDictionary& dict) {
  auto tokens = scan_tokens(units);
  auto in = [](const std::vector<std::string>& list, const std::string& v) {
    return std::find(list.begin(), list.end(), v) != list.end();
  };
  BinaryFeatureVector out;
  out.bits.assign(dict.size(), 0);
  for (std::size_t id = 0; id < dict.size(); ++id) {
    const auto& e = dict.at(id);
    bool present = false;
    switch (e.set) {
      case DrebinSet::S1: present = in(manifest.hardware, e.feature); break;
      case DrebinSet::S2: present = in(manifest.permissions, e.feature); break;
      case DrebinSet::S3: present = in(manifest.components, e.feature); break;
      case DrebinSet::S4: present = in(manifest.intent_filters, e.feature); break;
      case DrebinSet::S5:
      case DrebinSet::S7: present = tokens.api_names.count(e.feature) > 0; break;
      case DrebinSet::S6:
      case DrebinSet::S8: present = tokens.literals.count(e.feature) > 0; break;
    }
    out.bits[id] = present ? 1 : 0;
  }
  return out;
}

}  // namespace evadroid
