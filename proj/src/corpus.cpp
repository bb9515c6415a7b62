#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <set>
#include <thread>

#include "evadroid/harness.hpp"
#include "text_util.hpp"

namespace evadroid {

namespace fs = std::filesystem;

DataTables DataTables::builtin() {
  return {AbstractionTable::builtin(AbstractionMode::Family),
          AbstractionTable::builtin(AbstractionMode::Package), SdkWhitelist::builtin(),
          DrebinApiList::builtin()};
}

DataTables DataTables::load(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir.string());
  DataTables t = builtin();
  auto present = [&](const char* name) { return fs::is_regular_file(dir / name); };
  if (present("family.table")) {
    t.family = AbstractionTable::load((dir / "family.table").string(), AbstractionMode::Family);
  }
  if (present("package.table")) {
    t.package = AbstractionTable::load((dir / "package.table").string(), AbstractionMode::Package);
  }
  if (present("sdk_whitelist.txt")) t.whitelist = SdkWhitelist::load((dir / "sdk_whitelist.txt").string());
  if (present("drebin_api.txt")) {
    t.apis = DrebinApiList::parse(detail::read_file((dir / "drebin_api.txt").string()));
  }
  return t;
}

DataTables DataTables::resolve(const std::optional<fs::path>& dir) {
  if (dir) return load(*dir);
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return load(env);
  return builtin();
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Original: return "original";
    case Provenance::Surrogate: return "surrogate";
    case Provenance::Synthetic: return "synthetic";
  }
  return "?";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "original") return Provenance::Original;
  if (text == "surrogate") return Provenance::Surrogate;
  if (text == "synthetic") return Provenance::Synthetic;
  throw std::invalid_argument("unknown provenance: " + std::string(text));
}

void Corpus::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (s.id.empty() || !ids.insert(s.id).second) throw std::invalid_argument("duplicate or empty sample id: " + s.id);
    if (s.label != kBenign && s.label != kMalware) throw std::invalid_argument("bad label for " + s.id);
    bool entry = std::any_of(s.units.begin(), s.units.end(), [](const SmaliUnit& u) { return u.entry_method.has_value(); });
    if (!entry) throw NoEntryPoint("sample " + s.id + " has no entry point");
  }
}

const Sample& Corpus::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("no sample " + id);
}

namespace {

void check_relative(const std::string& path) {
  fs::path p(path);
  if (path.empty() || p.is_absolute()) throw std::invalid_argument("unit source must be a relative path: " + path);
  for (const auto& part : p) {
    if (part == "..") throw std::invalid_argument("unit source escapes the sample directory: " + path);
  }
}

std::string label_name(int label) { return label == kMalware ? "malware" : "benign"; }

int parse_label(const std::string& s) {
  if (s == "malware") return kMalware;
  if (s == "benign") return kBenign;
  throw std::invalid_argument("unknown label: " + s);
}

}  // namespace

void write_sample(const Sample& sample, const fs::path& dir) {
  fs::create_directories(dir);
  detail::write_file((dir / "manifest.json").string(), sample.manifest.to_json());
  std::vector<std::string> order;
  std::map<std::string, std::vector<SmaliUnit>> files;
  for (const auto& u : sample.units) {
    check_relative(u.source);
    if (!files.contains(u.source)) order.push_back(u.source);
    files[u.source].push_back(u);
  }
  for (const auto& source : order) {
    const fs::path path = dir / source;
    fs::create_directories(path.parent_path());
    detail::write_file(path.string(), serialize(files[source]));
  }
}

Sample read_sample(const fs::path& dir, std::string id, int label) {
  Sample s;
  s.id = std::move(id);
  s.label = label;
  s.manifest = Manifest::from_json(detail::read_file((dir / "manifest.json").string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".smali") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto units = parse_smali_lite(detail::read_file(f.string()), fs::relative(f, dir).generic_string());
    s.units.insert(s.units.end(), std::make_move_iterator(units.begin()), std::make_move_iterator(units.end()));
  }
  if (!mark_entry_point(s.units, s.manifest.main_activity)) {
    throw NoEntryPoint("sample " + s.id + ": main activity " + s.manifest.main_activity + " has no onCreate");
  }
  return s;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  corpus.validate();
  fs::create_directories(dir);
  nlohmann::ordered_json index;
  index["format"] = "evadroid-corpus";
  index["version"] = 1;
  index["provenance"] = to_string(corpus.provenance);
  index["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : corpus.samples) {
    check_relative(s.id);
    write_sample(s, dir / s.id);
    index["samples"].push_back({{"id", s.id}, {"label", label_name(s.label)}});
  }
  detail::write_file((dir / "corpus.json").string(), index.dump(2) + "\n");
}

Corpus read_corpus(const fs::path& dir) {
  const auto index = nlohmann::json::parse(detail::read_file((dir / "corpus.json").string()));
  if (index.value("format", "") != "evadroid-corpus") throw std::invalid_argument("not a corpus index: " + dir.string());
  Corpus c;
  c.provenance = parse_provenance(index.at("provenance").get<std::string>());
  for (const auto& s : index.at("samples")) {
    auto id = s.at("id").get<std::string>();
    check_relative(id);
    c.samples.push_back(read_sample(dir / id, id, parse_label(s.at("label").get<std::string>())));
  }
  c.validate();
  return c;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace evadroid
