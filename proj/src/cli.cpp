#include "dataforge/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dataforge/builder.hpp"
#include "dataforge/error.hpp"
#include "dataforge/index.hpp"
#include "dataforge/metrics.hpp"
#include "dataforge/registry.hpp"
#include "dataforge/server.hpp"
#include "dataforge/stream.hpp"
#include "dataforge/transform.hpp"
#include "internal/fsutil.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path default_cache_dir() {
  if (const char* env = std::getenv("DATAFORGE_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  const char* home = std::getenv("HOME");
  return fs::path(home != nullptr ? home : ".") / ".cache" / "dataforge";
}

fs::path default_registry() {
  if (const char* env = std::getenv("DATAFORGE_REGISTRY"); env != nullptr && *env != '\0') return env;
  return "registry";
}

struct Globals {
  std::string registry = default_registry().string();
  std::string cache_dir = default_cache_dir().string();
  bool json = false;
};

bool is_builder_file(const std::string& target) {
  return target.size() > 5 && target.ends_with(".json") && fs::is_regular_file(target);
}

/// A registry id or a path to a builder.json.
DatasetDict load_target(const Globals& g, const std::string& target, std::ostream& err) {
  DatasetDict dict = is_builder_file(target) ? build_dataset(load_builder(target), g.cache_dir)
                                             : load_dataset(Registry::open(g.registry), target, g.cache_dir);
  for (const auto& w : dict.warnings) err << "warning: " << w << "\n";
  return dict;
}

std::string default_split(const DatasetDict& dict) {
  return dict.splits.count("train") ? "train" : dict.splits.begin()->first;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

/// Integer if the whole line is one, else the text.
Value label_value(const std::string& line) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
  if (!line.empty() && ec == std::errc() && p == line.data() + line.size()) return Value(v);
  return Value(line);
}

/// A JSON array of strings becomes a reference list, anything else is text.
Value reference_value(const std::string& line) {
  if (!line.empty() && line.front() == '[') {
    auto j = json::parse(line, nullptr, false);
    if (j.is_array() && !j.empty() && std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_string(); })) {
      List refs;
      for (const auto& e : j) refs.emplace_back(e.get<std::string>());
      return Value(std::move(refs));
    }
  }
  return Value(line);
}

/// "id" or "id{...json params...}".
std::pair<std::string, json> parse_op(const std::string& text) {
  auto brace = text.find('{');
  if (brace == std::string::npos) return {text, json::object()};
  auto params = json::parse(text.substr(brace), nullptr, false);
  if (params.is_discarded() || !params.is_object()) fail(ErrorCode::kInvalidArgument, "bad params in '" + text + "'");
  return {text.substr(0, brace), params};
}

void split_values(const std::vector<std::string>& in, std::vector<std::string>& out) {
  for (const auto& v : in) {
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
  }
}

void print_findings(const std::vector<Finding>& findings, bool as_json, std::ostream& out) {
  if (as_json) {
    json arr = json::array();
    for (const auto& f : findings) arr.push_back(f.to_json());
    out << arr.dump(2) << "\n";
    return;
  }
  if (findings.empty()) out << "card is valid\n";
  for (const auto& f : findings) out << (f.is_error() ? "error" : "warning") << ": " << f.kind << ": " << f.message << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Build, inspect, transform and serve datasets.", "dataforge"};
  app.set_version_flag("--version", DATAFORGE_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--registry", g.registry, "Registry directory (env DATAFORGE_REGISTRY)");
  app.add_option("--cache-dir", g.cache_dir, "Cache directory (env DATAFORGE_CACHE_DIR)");
  app.add_flag("--json", g.json, "Machine-readable output");

  std::function<void()> action;

  // build
  std::string target;
  auto* build = app.add_subcommand("build", "Download and convert a dataset");
  build->add_option("dataset", target, "Registry id or builder.json path")->required();
  build->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      if (g.json) {
        out << info_to_json(dict.info).dump(2) << "\n";
        return;
      }
      out << "built " << dict.info.id << " " << dict.info.version << "\n";
      for (const auto& [name, rows] : dict.info.split_rows) out << "  " << name << ": " << rows << " rows\n";
    };
  });

  // info
  auto* info = app.add_subcommand("info", "Describe a dataset");
  info->add_option("dataset", target, "Registry id or builder.json path")->required();
  info->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      const auto& i = dict.info;
      if (g.json) {
        out << json{{"info", info_to_json(i)},
                    {"schema", schema_to_json_value(dict.splits.begin()->second.schema())}}
                   .dump(2)
            << "\n";
        return;
      }
      out << i.id << " " << i.version << "\n" << i.description << "\n";
      if (!i.license.empty()) out << "license: " << i.license << "\n";
      out << "splits:\n";
      for (const auto& [name, rows] : i.split_rows) out << "  " << name << ": " << rows << " rows\n";
      out << "columns:\n";
      for (const auto& c : dict.splits.begin()->second.schema().columns()) {
        out << "  " << c.name << ": " << type_to_json(c.type).dump() << (c.nullable ? " (nullable)" : "") << "\n";
      }
    };
  });

  // rows
  std::string split;
  std::uint64_t offset = 0, limit = 10;
  auto* rows = app.add_subcommand("rows", "Print a slice of a split");
  rows->add_option("dataset", target)->required();
  rows->add_option("--split", split, "Split name (default train)");
  rows->add_option("--offset", offset, "First row")->capture_default_str();
  rows->add_option("--limit", limit, "Number of rows")->capture_default_str()->check(CLI::PositiveNumber);
  rows->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      auto name = split.empty() ? default_split(dict) : split;
      const auto& table = dict.split(name);
      const auto end = std::min(table.num_rows(), offset + limit);
      if (offset > table.num_rows()) fail(ErrorCode::kOutOfBounds, "offset past the end of " + name);
      json page = json::array();
      for (const auto& row : table.slice(offset, end)) page.push_back(row_to_json(table.schema(), row));
      if (g.json) {
        out << json{{"dataset", dict.info.id}, {"split", name},         {"offset", offset},
                    {"limit", limit},          {"total", table.num_rows()}, {"rows", page}}
                   .dump()
            << "\n";
      } else {
        for (const auto& r : page) out << r.dump() << "\n";
      }
    };
  });

  // map
  std::vector<std::string> ops;
  unsigned workers = 1;
  auto* map = app.add_subcommand("map", "Apply registered transforms to a split, cached");
  map->add_option("dataset", target)->required();
  map->add_option("--split", split);
  map->add_option("--op", ops, "Transform as id or id{json params}; repeat to chain")->required();
  map->add_option("--workers", workers)->capture_default_str()->check(CLI::PositiveNumber);
  map->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      auto name = split.empty() ? default_split(dict) : split;
      auto registry = TransformRegistry::with_builtins();
      Transformer t(g.cache_dir, registry);
      Table table = dict.split(name);
      json steps = json::array();
      for (const auto& op : ops) {
        auto [id, params] = parse_op(op);
        const auto& def = registry.get(id);
        if (def.kind == TransformDef::Kind::kPredicate) {
          table = t.filter(table, registry.spec(OpKind::kFilter, id, params), workers);
        } else {
          table = t.map(table, registry.spec(OpKind::kMap, id, params), workers);
        }
        steps.push_back({{"op", id}, {"fingerprint", table.fingerprint().hex()}, {"rows", table.num_rows()}});
      }
      if (g.json) {
        out << json{{"steps", steps}, {"path", table.path().string()}, {"invocations", t.invocations()},
                    {"cache_hits", t.cache_hits()}}
                   .dump(2)
            << "\n";
        return;
      }
      for (const auto& s : steps) {
        out << s["op"].get<std::string>() << "  " << s["fingerprint"].get<std::string>() << "  " << s["rows"] << " rows\n";
      }
      out << "output: " << table.path().string() << "\n";
      out << "cache hits: " << t.cache_hits() << "/" << ops.size() << "\n";
    };
  });

  // stream
  std::string manifest;
  std::optional<std::uint64_t> take;
  auto* stream = app.add_subcommand("stream", "Run a streaming pipeline and print its rows");
  stream->add_option("manifest", manifest, "Pipeline JSON")->required()->check(CLI::ExistingFile);
  stream->add_option("--limit", take, "Stop after this many rows");
  stream->callback([&] {
    action = [&] {
      auto registry = TransformRegistry::with_builtins();
      auto j = json::parse(detail::read_file(manifest), nullptr, false);
      if (j.is_discarded()) fail(ErrorCode::kParseError, "invalid JSON in " + manifest);
      auto p = pipeline_from_json(j, registry, fs::path(manifest).parent_path());
      auto s = stream_rows(p, registry);
      std::uint64_t n = 0;
      while (!take || n < *take) {
        auto row = s->next();
        if (!row) break;
        out << row_to_json(s->schema(), *row).dump() << "\n";
        ++n;
      }
    };
  });

  // index
  auto* index = app.add_subcommand("index", "Build or query a text or vector index");
  index->require_subcommand(1);
  std::string column, metric_name = "cosine", query_text, query_vector;
  bool vector = false;
  std::size_t k = 10;
  auto add_index_opts = [&](CLI::App* c) {
    c->add_option("dataset", target)->required();
    c->add_option("--split", split);
    c->add_option("--column", column)->required();
    c->add_flag("--vector", vector, "Vector index over a float tensor column");
    c->add_option("--metric", metric_name, "cosine, inner_product or l2")->capture_default_str();
  };
  auto* ibuild = index->add_subcommand("build", "Build and cache an index");
  add_index_opts(ibuild);
  ibuild->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      const auto& table = dict.split(split.empty() ? default_split(dict) : split);
      json res{{"column", column}};
      if (vector) {
        auto ix = vector_index_for(g.cache_dir, table, column, metric_from_name(metric_name));
        res["vectors"] = ix.size();
        res["dim"] = ix.dim();
        res["path"] = index_path(g.cache_dir, table, column, "vix").string();
      } else {
        auto ix = text_index_for(g.cache_dir, table, column);
        res["documents"] = ix.doc_count();
        res["path"] = index_path(g.cache_dir, table, column, "tix").string();
      }
      if (g.json) {
        out << res.dump(2) << "\n";
      } else {
        out << "index: " << res["path"].get<std::string>() << "\n";
      }
    };
  });
  auto* iquery = index->add_subcommand("query", "Top-k search");
  add_index_opts(iquery);
  iquery->add_option("--text", query_text, "Text query (BM25)");
  iquery->add_option("--query-vector", query_vector, "Comma-separated floats");
  iquery->add_option("-k", k, "Number of hits")->capture_default_str()->check(CLI::PositiveNumber);
  iquery->callback([&] {
    action = [&] {
      auto dict = load_target(g, target, err);
      const auto& table = dict.split(split.empty() ? default_split(dict) : split);
      std::vector<Hit> hits;
      if (vector) {
        std::vector<float> q;
        std::stringstream ss(query_vector);
        std::string item;
        while (std::getline(ss, item, ',')) q.push_back(std::stof(item));
        hits = vector_index_for(g.cache_dir, table, column, metric_from_name(metric_name)).query(q, k);
      } else {
        hits = text_index_for(g.cache_dir, table, column).query(query_text, k);
      }
      json arr = json::array();
      for (const auto& h : hits) arr.push_back({{"row", h.row}, {"score", h.score}});
      if (g.json) {
        out << arr.dump(2) << "\n";
        return;
      }
      for (const auto& h : hits) {
        out << h.row << "\t" << h.score << "\t" << row_to_json(table.schema(), table.row(h.row)).dump() << "\n";
      }
    };
  });

  // metric
  std::string metric, preds_path, refs_path, pos_label;
  bool smooth = false;
  auto* met = app.add_subcommand("metric", "Score predictions against references, one per line");
  met->add_option("name", metric, "accuracy, f1, exact_match or bleu")->required();
  met->add_option("--predictions", preds_path)->required()->check(CLI::ExistingFile);
  met->add_option("--references", refs_path)->required()->check(CLI::ExistingFile);
  met->add_option("--pos-label", pos_label, "Positive label for f1 (default 1)");
  met->add_flag("--smooth", smooth, "Add-one smoothing for BLEU");
  met->callback([&] {
    action = [&] {
      MetricOptions opts;
      opts.smooth = smooth;
      if (!pos_label.empty()) opts.pos_label = label_value(pos_label);
      auto state = MetricState::create(metric, opts);
      const bool labels = metric == "accuracy" || metric == "f1";
      std::vector<Value> p, r;
      for (const auto& l : read_lines(preds_path)) p.push_back(labels ? label_value(l) : Value(l));
      for (const auto& l : read_lines(refs_path)) r.push_back(labels ? label_value(l) : reference_value(l));
      state.add_batch(p, r);
      auto res = state.compute();
      if (g.json) {
        out << res.to_json() << "\n";
        return;
      }
      for (const auto& [key, v] : res.scores) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        out << key << ": " << buf << "\n";
      }
    };
  });

  // card validate
  auto* card = app.add_subcommand("card", "Data card tools");
  card->require_subcommand(1);
  std::string card_target, against;
  auto* validate = card->add_subcommand("validate", "Check a card against the template and the dataset");
  validate->add_option("card", card_target, "Card file or registry id")->required();
  validate->add_option("--dataset", against, "Compare split counts with this dataset");
  validate->callback([&] {
    action = [&] {
      auto registry = Registry::open(fs::is_directory(g.registry) ? fs::path(g.registry) : fs::temp_directory_path());
      std::string text;
      std::string dataset = against;
      if (fs::is_regular_file(card_target)) {
        text = detail::read_file(card_target);
      } else {
        auto t = registry.card_text(card_target);
        if (!t) fail(ErrorCode::kInvalidArgument, card_target + " has no data card");
        text = *t;
        if (dataset.empty()) dataset = card_target;
      }
      std::optional<DatasetDict> dict;
      if (!dataset.empty()) dict = load_target(g, dataset, err);
      auto findings = validate_card(parse_card(text), registry.vocabulary(), dict ? &dict->info : nullptr);
      print_findings(findings, g.json, out);
      if (std::any_of(findings.begin(), findings.end(), [](const Finding& f) { return f.is_error(); })) {
        throw Error(ErrorCode::kValidationFailed, "card has errors");
      }
    };
  });

  // search
  std::vector<std::string> langs, tasks, task_ids, licenses, sizes, multi;
  auto* search = app.add_subcommand("search", "Find datasets by tag");
  search->add_option("--lang", langs, "Language code; repeat or comma-separate for OR");
  search->add_option("--task", tasks, "Task category");
  search->add_option("--task-id", task_ids);
  search->add_option("--license", licenses);
  search->add_option("--size", sizes);
  search->add_option("--multilinguality", multi);
  search->callback([&] {
    action = [&] {
      TagFilter f;
      split_values(langs, f["languages"]);
      split_values(tasks, f["task_categories"]);
      split_values(task_ids, f["task_ids"]);
      split_values(licenses, f["licenses"]);
      split_values(sizes, f["size_category"]);
      split_values(multi, f["multilinguality"]);
      auto ids = Registry::open(g.registry).search(f);
      if (g.json) {
        out << json(ids).dump() << "\n";
      } else {
        for (const auto& id : ids) out << id << "\n";
      }
    };
  });

  // serve
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  bool no_build = false;
  auto* serve = app.add_subcommand("serve", "Read-only HTTP API over the registry");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  serve->add_flag("--no-build", no_build, "Only serve datasets already in the cache");
  serve->add_option("--static-dir", static_dir, "Viewer assets to serve under /")->check(CLI::ExistingDirectory);
  serve->callback([&] {
    action = [&] {
      ServeOptions opts;
      opts.build_missing = !no_build;
      if (!static_dir.empty()) opts.static_dir = static_dir;
      auto api = std::make_shared<const Api>(Registry::open(g.registry), g.cache_dir, opts);
      for (const auto& w : api->warnings()) err << "warning: " << w << "\n";
      Server server(api, opts);
      auto bound = server.bind(host, port);
      out << "listening on http://" << host << ":" << bound << "\n" << std::flush;
      server.listen();
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  try {
    action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace dataforge
