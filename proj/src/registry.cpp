#include "dataforge/registry.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <regex>

#include "dataforge/error.hpp"
#include "internal/fsutil.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto lo = s.find_first_not_of(ws);
  if (lo == std::string_view::npos) return {};
  auto hi = s.find_last_not_of(ws);
  return s.substr(lo, hi - lo + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

[[noreturn]] void malformed(std::size_t line, const std::string& msg) {
  fail(ErrorCode::kMalformedTag, "line " + std::to_string(line) + ": " + msg);
}

std::string unquote(std::string_view v) {
  v = trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

struct RequiredSection {
  const char* title;
  std::vector<const char*> children;
};

const std::vector<RequiredSection>& required_sections() {
  static const std::vector<RequiredSection> kRequired = {
      {"Dataset Description", {}},
      {"Languages", {}},
      {"Dataset Structure", {"Data Fields", "Data Splits"}},
      {"Considerations for Using the Data", {"Social Impact", "Known Limitations"}},
      {"Licensing Information", {}},
      {"Citation Information", {}},
  };
  return kRequired;
}

std::optional<std::size_t> find_section(const DataCard& card, std::string_view title, std::size_t lo, std::size_t hi) {
  const auto want = lower(title);
  for (std::size_t i = lo; i < hi; ++i) {
    if (lower(trim(card.sections[i].title)) == want) return i;
  }
  return std::nullopt;
}

/// One past the last descendant of section i.
std::size_t section_end(const DataCard& card, std::size_t i) {
  std::size_t j = i + 1;
  while (j < card.sections.size() && card.sections[j].level > card.sections[i].level) ++j;
  return j;
}

Finding error(std::string kind, std::string msg) { return {Finding::Severity::kError, std::move(kind), std::move(msg)}; }

/// Exclusive lock on `<root>/.lock` for registry mutations.
class DirLock {
 public:
  explicit DirLock(const fs::path& root) {
    fd_ = ::open((root / ".lock").c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::kIoError, "cannot open registry lock in " + root.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      fail(ErrorCode::kIoError, "cannot lock registry " + root.string());
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

void check_card(const std::string& text, const Vocabulary& vocab, const DatasetInfo* info) {
  auto card = parse_card(text);
  std::string msg;
  for (const auto& f : validate_card(card, vocab, info)) {
    if (!f.is_error()) continue;
    if (!msg.empty()) msg += "; ";
    msg += f.message;
  }
  if (!msg.empty()) fail(ErrorCode::kValidationFailed, msg);
}

}  // namespace

const std::vector<std::string>& tag_keys() {
  static const std::vector<std::string> kKeys = {"languages", "task_categories", "task_ids",
                                                 "licenses",  "size_category",   "multilinguality"};
  return kKeys;
}

bool is_single_valued_tag(std::string_view key) { return key == "size_category" || key == "multilinguality"; }

std::string size_category_for(std::uint64_t rows) {
  if (rows < 1'000) return "n<1K";
  if (rows < 10'000) return "1K<n<10K";
  if (rows < 100'000) return "10K<n<100K";
  if (rows < 1'000'000) return "100K<n<1M";
  if (rows < 10'000'000) return "1M<n<10M";
  return "n>10M";
}

Vocabulary Vocabulary::load(const fs::path& dir) {
  Vocabulary v;
  for (const auto& key : tag_keys()) {
    auto path = dir / (key + ".txt");
    if (!fs::exists(path)) fail(ErrorCode::kIoError, "missing vocabulary file " + path.string());
    auto text = detail::read_file(path);
    auto& set = v.values_[key];
    for (auto line : split_lines(text)) {
      line = trim(line);
      if (!line.empty() && line.front() != '#') set.emplace(line);
    }
  }
  return v;
}

Vocabulary Vocabulary::locate(const fs::path& registry_root) {
  if (fs::exists(registry_root / "vocab" / "languages.txt")) return load(registry_root / "vocab");
  if (const char* env = std::getenv("DATAFORGE_VOCAB_DIR"); env != nullptr && *env != '\0') return load(env);
  return load(DATAFORGE_DEFAULT_VOCAB_DIR);
}

bool Vocabulary::allows(const std::string& key, const std::string& value) const {
  auto it = values_.find(key);
  return it != values_.end() && it->second.count(value) > 0;
}

const std::set<std::string>& Vocabulary::values(const std::string& key) const {
  static const std::set<std::string> kEmpty;
  auto it = values_.find(key);
  return it == values_.end() ? kEmpty : it->second;
}

DataCard parse_card(std::string_view text) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != "---") fail(ErrorCode::kMissingFrontMatter, "card must start with a --- line");
  std::size_t close = 1;
  while (close < lines.size() && trim(lines[close]) != "---") ++close;
  if (close == lines.size()) fail(ErrorCode::kMissingFrontMatter, "front matter is not closed by a --- line");

  DataCard card;
  std::string current;
  for (std::size_t i = 1; i < close; ++i) {
    const auto lineno = i + 1;
    auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '-') {
      if (current.empty()) malformed(lineno, "list item outside a tag");
      card.tags[current].push_back(unquote(line.substr(1)));
      continue;
    }
    auto colon = line.find(':');
    if (colon == std::string_view::npos) malformed(lineno, "expected 'key: value'");
    std::string key(trim(line.substr(0, colon)));
    if (std::find(tag_keys().begin(), tag_keys().end(), key) == tag_keys().end()) {
      malformed(lineno, "unknown tag key '" + key + "'");
    }
    if (card.tags.count(key)) malformed(lineno, "duplicate tag key '" + key + "'");
    auto& values = card.tags[key];
    current = key;
    auto rest = trim(line.substr(colon + 1));
    if (rest.empty()) continue;
    current.clear();
    if (rest.front() == '[') {
      if (rest.back() != ']') malformed(lineno, "unterminated list");
      rest = rest.substr(1, rest.size() - 2);
      std::size_t start = 0;
      while (start <= rest.size() && !trim(rest).empty()) {
        auto comma = rest.find(',', start);
        auto item = unquote(rest.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (item.empty()) malformed(lineno, "empty list item");
        values.push_back(std::move(item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
    } else {
      values.push_back(unquote(rest));
    }
  }
  for (auto& [key, values] : card.tags) {
    std::vector<std::string> unique;
    for (auto& v : values) {
      if (std::find(unique.begin(), unique.end(), v) == unique.end()) unique.push_back(std::move(v));
    }
    values = std::move(unique);
    if (is_single_valued_tag(key) && values.size() > 1) {
      fail(ErrorCode::kMalformedTag, "tag '" + key + "' takes a single value");
    }
  }

  card.body_line = close + 2;
  static const std::regex kHeading(R"(^(#{1,3})\s+(.*?)\s*#*\s*$)");
  bool fenced = false;
  std::string* body = nullptr;
  for (std::size_t i = close + 1; i < lines.size(); ++i) {
    auto line = lines[i];
    auto t = trim(line);
    if (t.substr(0, 3) == "```" || t.substr(0, 3) == "~~~") fenced = !fenced;
    std::cmatch m;
    if (!fenced && std::regex_match(line.begin(), line.end(), m, kHeading)) {
      card.sections.push_back({static_cast<int>(m[1].length()), m[2].str(), "", i + 1});
      body = &card.sections.back().body;
      continue;
    }
    if (body != nullptr) {
      body->append(line);
      body->push_back('\n');
    }
  }
  return card;
}

json Finding::to_json() const {
  return {{"severity", severity == Severity::kError ? "error" : "warning"}, {"kind", kind}, {"message", message}};
}

std::map<std::string, std::uint64_t> stated_split_counts(const DataCard& card) {
  std::map<std::string, std::uint64_t> out;
  auto idx = find_section(card, "Data Splits", 0, card.sections.size());
  if (!idx) return out;
  static const std::regex kColon(R"(^\s*(?:[-*]\s+)?`?([A-Za-z0-9_.\-]+)`?\s*:\s*([0-9][0-9,_]*)\s*$)");
  static const std::regex kTable(R"(^\s*\|\s*`?([A-Za-z0-9_.\-]+)`?\s*\|\s*([0-9][0-9,_]*)\s*\|.*$)");
  for (auto line : split_lines(card.sections[*idx].body)) {
    std::cmatch m;
    if (std::regex_match(line.begin(), line.end(), m, kColon) || std::regex_match(line.begin(), line.end(), m, kTable)) {
      std::string digits;
      for (char c : m[2].str()) {
        if (c != ',' && c != '_') digits.push_back(c);
      }
      out[m[1].str()] = std::stoull(digits);
    }
  }
  return out;
}

std::vector<Finding> validate_card(const DataCard& card, const Vocabulary& vocab, const DatasetInfo* info) {
  std::vector<Finding> out;
  const auto n = card.sections.size();
  for (const auto& req : required_sections()) {
    auto idx = find_section(card, req.title, 0, n);
    if (!idx) {
      out.push_back(error("missing_section", std::string("missing section '") + req.title + "'"));
      continue;
    }
    for (const auto* child : req.children) {
      if (!find_section(card, child, *idx + 1, section_end(card, *idx))) {
        out.push_back(error("missing_subsection",
                            std::string("missing subsection '") + child + "' under '" + req.title + "'"));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (trim(card.sections[i].body).empty() && section_end(card, i) == i + 1) {
      out.push_back({Finding::Severity::kWarning, "empty_section",
                     "section '" + card.sections[i].title + "' (line " + std::to_string(card.sections[i].line) +
                         ") is empty"});
    }
  }
  for (const auto& [key, values] : card.tags) {
    for (const auto& v : values) {
      if (!vocab.allows(key, v)) {
        out.push_back(error("vocabulary_violation", "'" + v + "' is not an allowed value for " + key));
      }
    }
  }
  if (info != nullptr) {
    for (const auto& [split, count] : stated_split_counts(card)) {
      auto it = info->split_rows.find(split);
      if (it == info->split_rows.end()) {
        out.push_back(error("unknown_split", "card lists split '" + split + "' which the dataset does not have"));
      } else if (it->second != count) {
        out.push_back(error("split_count_mismatch", "card says " + split + "=" + std::to_string(count) +
                                                        " but the dataset has " + std::to_string(it->second)));
      }
    }
    auto sc = card.tags.find("size_category");
    if (sc != card.tags.end() && !sc->second.empty() && vocab.allows("size_category", sc->second[0])) {
      std::uint64_t total = 0;
      for (const auto& [_, rows] : info->split_rows) total += rows;
      auto expected = size_category_for(total);
      if (sc->second[0] != expected) {
        out.push_back(error("size_category_mismatch", "size_category is " + sc->second[0] + " but the dataset has " +
                                                          std::to_string(total) + " rows (" + expected + ")"));
      }
    }
  }
  return out;
}

json entry_to_json(const RegistryEntry& e) {
  return {{"id", e.id}, {"builder", e.builder}, {"card_revision", e.card_revision}, {"models", e.models}};
}

RegistryEntry entry_from_json(const json& j) {
  try {
    RegistryEntry e;
    e.id = j.at("id").get<std::string>();
    e.builder = j.value("builder", std::string("builder.json"));
    e.card_revision = j.value("card_revision", std::uint64_t{0});
    e.models = j.value("models", std::vector<std::string>{});
    return e;
  } catch (const json::exception& ex) {
    fail(ErrorCode::kInvalidArgument, std::string("bad registry entry: ") + ex.what());
  }
}

Registry Registry::open(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCode::kIoError, "registry directory not found: " + root.string());
  Registry r;
  r.root_ = root;
  r.vocab_ = Vocabulary::locate(root);
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory() && fs::exists(d.path() / "entry.json")) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) r.load_entry(d);
  return r;
}

void Registry::load_entry(const fs::path& dir) {
  auto j = json::parse(detail::read_file(dir / "entry.json"), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kParseError, "invalid JSON in " + (dir / "entry.json").string());
  Loaded l{entry_from_json(j), {}};
  if (l.entry.id != dir.filename().string() || !is_valid_dataset_id(l.entry.id)) {
    fail(ErrorCode::kInvalidArgument, "entry id '" + l.entry.id + "' does not match directory " + dir.string());
  }
  if (l.entry.card_revision > 0) {
    auto path = dir / "cards" / (std::to_string(l.entry.card_revision) + ".md");
    if (fs::exists(path)) {
      try {
        l.tags = parse_card(detail::read_file(path)).tags;
      } catch (const Error&) {
        // A broken card leaves the entry untagged.
      }
    }
  }
  entries_[l.entry.id] = std::move(l);
}

std::vector<std::string> Registry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

const RegistryEntry& Registry::entry(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorCode::kUnknownDataset, "unknown dataset '" + id + "'");
  return it->second.entry;
}

BuilderDef Registry::builder(const std::string& id) const {
  return load_builder(root_ / id / entry(id).builder);
}

fs::path Registry::card_path(const std::string& id, std::uint64_t revision) const {
  return root_ / id / "cards" / (std::to_string(revision) + ".md");
}

std::optional<std::string> Registry::card_text(const std::string& id) const {
  const auto& e = entry(id);
  if (e.card_revision == 0) return std::nullopt;
  auto path = card_path(id, e.card_revision);
  if (!fs::exists(path)) return std::nullopt;
  return detail::read_file(path);
}

const TagSet& Registry::tags(const std::string& id) const {
  entry(id);
  return entries_.at(id).tags;
}

std::vector<std::string> Registry::search(const TagFilter& filter) const {
  for (const auto& [key, values] : filter) {
    if (std::find(tag_keys().begin(), tag_keys().end(), key) == tag_keys().end()) {
      fail(ErrorCode::kInvalidArgument, "unknown tag key '" + key + "'");
    }
    for (const auto& v : values) {
      if (!vocab_.allows(key, v)) fail(ErrorCode::kUnknownVocabularyValue, "'" + v + "' is not a known " + key + " value");
    }
  }
  std::vector<std::string> out;
  for (const auto& [id, loaded] : entries_) {
    bool ok = true;
    for (const auto& [key, wanted] : filter) {
      if (wanted.empty()) continue;
      auto it = loaded.tags.find(key);
      ok = it != loaded.tags.end() && std::any_of(wanted.begin(), wanted.end(), [&](const std::string& w) {
             return std::find(it->second.begin(), it->second.end(), w) != it->second.end();
           });
      if (!ok) break;
    }
    if (ok) out.push_back(id);
  }
  return out;
}

RegistryEntry Registry::add_entry(const std::string& id, const json& builder_json, const std::optional<std::string>& card,
                                  const std::vector<std::string>& models) {
  if (!is_valid_dataset_id(id)) fail(ErrorCode::kInvalidArgument, "invalid dataset id '" + id + "'");
  DirLock lock(root_);
  const auto dir = root_ / id;
  if (entries_.count(id) || fs::exists(dir / "entry.json")) {
    fail(ErrorCode::kInvalidArgument, "dataset '" + id + "' is already registered");
  }
  auto def = builder_from_json(builder_json, dir);
  if (def.id != id) fail(ErrorCode::kInvalidArgument, "builder id '" + def.id + "' differs from entry id '" + id + "'");
  if (card) check_card(*card, vocab_, nullptr);

  RegistryEntry e{id, "builder.json", card ? 1u : 0u, models};
  fs::create_directories(dir / "cards");
  detail::write_file_atomic(dir / "builder.json", builder_json.dump(2) + "\n");
  if (card) detail::write_file_atomic(dir / "cards" / "1.md", *card);
  detail::write_file_atomic(dir / "entry.json", entry_to_json(e).dump(2) + "\n");
  entries_[id] = {e, card ? parse_card(*card).tags : TagSet{}};
  return e;
}

RegistryEntry Registry::bump_card_revision(const std::string& id, const std::string& text, const DatasetInfo* info) {
  entry(id);
  check_card(text, vocab_, info);
  DirLock lock(root_);
  // Another process may have bumped since we loaded.
  load_entry(root_ / id);
  auto e = entries_.at(id).entry;
  e.card_revision += 1;
  fs::create_directories(root_ / id / "cards");
  detail::write_file_atomic(card_path(id, e.card_revision), text);
  detail::write_file_atomic(root_ / id / "entry.json", entry_to_json(e).dump(2) + "\n");
  entries_[id] = {e, parse_card(text).tags};
  return e;
}

DatasetDict load_dataset(const Registry& registry, const std::string& id, const fs::path& cache_dir,
                         const DownloadOptions& options) {
  auto dict = build_dataset(registry.builder(id), cache_dir, options);
  auto text = registry.card_text(id);
  if (!text) {
    dict.warnings.push_back(id + ": no data card");
    return dict;
  }
  try {
    auto card = parse_card(*text);
    for (const auto& f : validate_card(card, registry.vocabulary(), &dict.info)) {
      dict.warnings.push_back(id + " card " + f.kind + ": " + f.message);
    }
  } catch (const Error& e) {
    dict.warnings.push_back(id + " card " + std::string(error_code_name(e.code())) + ": " + e.what());
  }
  return dict;
}

}  // namespace dataforge
