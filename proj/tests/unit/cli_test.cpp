#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dataforge/cli.hpp"
#include "dataforge/registry.hpp"
#include "support/cards.hpp"
#include "support/temp_dir.hpp"

namespace dataforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

const fs::path kFixtures = DATAFORGE_FIXTURES_DIR;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  CliResult run(std::vector<std::string> args) {
    std::vector<std::string> full = {"--registry", (kFixtures / "registry").string(), "--cache-dir", (tmp_ / "cache").string()};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code = run_cli(full, out, err);
    return {code, out.str(), err.str()};
  }
  fs::path write(const std::string& name, const std::string& text) {
    auto p = tmp_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }
  TempDir tmp_;
};

TEST_F(CliTest, Info) {
  auto r = run({"info", "toy_sentiment"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Short English film review"), std::string::npos);
  EXPECT_NE(r.out.find("1.0.0"), std::string::npos);
  EXPECT_NE(r.out.find("train: 40 rows"), std::string::npos);
  EXPECT_NE(r.out.find("test: 12 rows"), std::string::npos);
  auto j = json::parse(run({"info", "toy_sentiment", "--json"}).out);
  EXPECT_EQ(j["info"]["splits"]["train"], 40);
}

TEST_F(CliTest, RowsGivesTheSixthRow) {
  auto r = run({"rows", "toy_sentiment", "--split", "train", "--offset", "5", "--limit", "1", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto page = json::parse(r.out);
  auto dict = load_dataset(Registry::open(kFixtures / "registry"), "toy_sentiment", tmp_ / "cache");
  const auto& table = dict.split("train");
  ASSERT_EQ(page["rows"].size(), 1u);
  EXPECT_EQ(page["rows"][0], row_to_json(table.schema(), table.slice(5, 6)[0]));
  EXPECT_EQ(page["rows"][0]["id"], 5);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"rows"}).code, 2);
  EXPECT_EQ(run({"rows", "toy_sentiment", "--limit", "0"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  auto missing = run({"info", "no_such_dataset"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("unknown_dataset"), std::string::npos);
  EXPECT_EQ(run({"rows", "toy_sentiment", "--offset", "41"}).code, 1);
}

TEST_F(CliTest, BuildFromBuilderFile) {
  auto r = run({"build", (kFixtures / "registry" / "toy_translation" / "builder.json").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("train: 8 rows"), std::string::npos);
}

TEST_F(CliTest, MapIsCachedOnSecondRun) {
  std::vector<std::string> args = {"map", "toy_sentiment", "--op", R"(lowercase{"column":"sentence"})", "--op",
                                   R"(int_mod{"column":"id","divisor":2})", "--json"};
  auto first = json::parse(run(args).out);
  auto second = json::parse(run(args).out);
  EXPECT_EQ(first["steps"][1]["rows"], 20);
  EXPECT_GT(first["invocations"].get<int>(), 0);
  EXPECT_EQ(second["invocations"], 0);
  EXPECT_EQ(second["cache_hits"], 2);
  EXPECT_EQ(first["steps"], second["steps"]);
  EXPECT_EQ(run({"map", "toy_sentiment", "--op", "no_such_op"}).code, 1);
}

TEST_F(CliTest, Search) {
  EXPECT_EQ(run({"search", "--lang", "es", "--task", "question-answering"}).out, "toy_qa_es\n");
  EXPECT_EQ(run({"search", "--lang", "es,fr", "--json"}).out, "[\"toy_qa_es\",\"toy_translation\"]\n");
  EXPECT_EQ(run({"search", "--lang", "xx"}).code, 1);
}

TEST_F(CliTest, Metric) {
  auto p = write("p.txt", "1\n0\n1\n");
  auto r = write("r.txt", "1\n1\n1\n");
  auto res = run({"metric", "f1", "--predictions", p.string(), "--references", r.string(), "--json"});
  ASSERT_EQ(res.code, 0) << res.err;
  EXPECT_DOUBLE_EQ(json::parse(res.out)["scores"]["f1"].get<double>(), 0.8);
  auto c = write("c.txt", "the cat sat on the mat\n");
  auto refs = write("refs.txt", "[\"the cat sat on the mat\", \"a cat sat\"]\n");
  res = run({"metric", "bleu", "--predictions", c.string(), "--references", refs.string()});
  EXPECT_NE(res.out.find("bleu: 1.000000"), std::string::npos) << res.out;
  auto shorter = write("s.txt", "1\n");
  EXPECT_EQ(run({"metric", "accuracy", "--predictions", shorter.string(), "--references", r.string()}).code, 1);
}

TEST_F(CliTest, CardValidate) {
  EXPECT_EQ(run({"card", "validate", "toy_qa_es"}).code, 0);
  testing::CardSpec spec{{{"languages", {"en"}}}, {{"train", 3}}, {"Known Limitations"}, {}};
  auto bad = write("card.md", testing::render_card(spec));
  auto r = run({"card", "validate", bad.string(), "--json"});
  EXPECT_EQ(r.code, 1);
  auto findings = json::parse(r.out);
  ASSERT_EQ(findings.size(), 1u);
  EXPECT_EQ(findings[0]["kind"], "missing_subsection");
  auto mismatch = run({"card", "validate", bad.string(), "--dataset", "toy_translation"});
  EXPECT_NE(mismatch.out.find("split_count_mismatch"), std::string::npos);
  EXPECT_EQ(run({"card", "validate", write("x.md", "no front matter").string()}).code, 1);
}

TEST_F(CliTest, StreamManifest) {
  auto r = run({"stream", (kFixtures / "stream" / "manifest.json").string(), "--limit", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto row = json::parse(line);
    EXPECT_FALSE(row["text"].is_null());
    ++n;
  }
  EXPECT_EQ(n, 4);
}

TEST_F(CliTest, IndexBuildAndQuery) {
  EXPECT_EQ(run({"index", "build", "toy_sentiment", "--column", "sentence"}).code, 0);
  auto r = run({"index", "query", "toy_sentiment", "--column", "sentence", "--text", "camera fun", "-k", "1", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto hits = json::parse(r.out);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0]["row"], 2);
  EXPECT_EQ(run({"index", "query", "toy_sentiment", "--column", "label", "--text", "x"}).code, 1);
}

}  // namespace
}  // namespace dataforge
