#include <gtest/gtest.h>

#include <httplib.h>

#include "dataforge/error.hpp"
#include "dataforge/server.hpp"
#include "support/temp_dir.hpp"

namespace dataforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

const fs::path kRegistry = fs::path(DATAFORGE_FIXTURES_DIR) / "registry";

class ServerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new TempDir();
    fs::copy(kRegistry, *tmp_ / "reg", fs::copy_options::recursive);
    api_ = std::make_shared<const Api>(Registry::open(*tmp_ / "reg"), *tmp_ / "cache");
    server_ = new Server(api_);
    server_->bind("127.0.0.1", 0);
    server_->start();
  }
  static void TearDownTestSuite() {
    delete server_;
    api_.reset();
    delete tmp_;
  }

  static httplib::Result get(const std::string& path) {
    httplib::Client c("127.0.0.1", server_->port());
    return c.Get(path);
  }
  static json get_json(const std::string& path, int expect_status = 200) {
    auto res = get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return nullptr;
    EXPECT_EQ(res->status, expect_status) << path << " " << res->body;
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");
    return json::parse(res->body);
  }

  static inline TempDir* tmp_ = nullptr;
  static inline std::shared_ptr<const Api> api_;
  static inline Server* server_ = nullptr;
};

TEST_F(ServerTest, ListsDatasets) {
  EXPECT_TRUE(api_->warnings().empty());
  auto list = get_json("/api/datasets");
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0]["id"], "toy_qa_es");
  EXPECT_EQ(list[0]["tags"]["languages"], json::array({"es"}));
  EXPECT_EQ(list[1]["splits"], json::array({"test", "train"}));
  EXPECT_EQ(list[1]["num_rows"]["train"], 40);
  EXPECT_EQ(list[1]["models"], json::array({"toy-sentiment-bow"}));
}

TEST_F(ServerTest, DatasetInfoAndSchema) {
  auto d = get_json("/api/datasets/toy_sentiment");
  EXPECT_EQ(d["info"]["version"], "1.0.0");
  EXPECT_EQ(d["schema"]["columns"][2]["type"]["tag"], "class_label");
}

TEST_F(ServerTest, RowsMatchSlice) {
  auto page = get_json("/api/datasets/toy_sentiment/rows?split=train&offset=0&limit=2");
  auto dict = open_built_dataset(api_->registry().builder("toy_sentiment"), *tmp_ / "cache");
  ASSERT_TRUE(dict);
  const auto& table = dict->split("train");
  auto rows = table.slice(0, 2);
  ASSERT_EQ(page["rows"].size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(page["rows"][i], row_to_json(table.schema(), rows[i]));
  EXPECT_EQ(page["rows"][0]["label"], (json{{"code", 1}, {"label", "pos"}}));
  EXPECT_EQ(page["total"], 40);
}

TEST_F(ServerTest, PagingIsComplete) {
  for (const std::string split : {"train", "test"}) {
    auto all = get_json("/api/datasets/toy_sentiment/rows?split=" + split + "&limit=1000")["rows"];
    for (int limit : {1, 7, 100}) {
      json joined = json::array();
      std::uint64_t offset = 0;
      while (true) {
        auto page = get_json("/api/datasets/toy_sentiment/rows?split=" + split + "&offset=" + std::to_string(offset) +
                             "&limit=" + std::to_string(limit));
        auto n = page["rows"].size();
        EXPECT_EQ(n, std::min<std::uint64_t>(limit, page["total"].get<std::uint64_t>() - offset));
        for (auto& r : page["rows"]) joined.push_back(r);
        offset += n;
        if (n == 0 || offset == page["total"]) break;
      }
      EXPECT_EQ(joined, all) << split << " limit " << limit;
    }
  }
}

TEST_F(ServerTest, ErrorStatuses) {
  EXPECT_EQ(get_json("/api/datasets/nope", 404), (json{{"error", "unknown_dataset"}}));
  EXPECT_EQ(get_json("/api/datasets/nope/rows", 404), (json{{"error", "unknown_dataset"}}));
  for (const std::string q : {"limit=0", "limit=1001", "limit=abc", "offset=-1", "offset=41", "offset=1.5", "page=2"}) {
    EXPECT_EQ(get_json("/api/datasets/toy_sentiment/rows?" + q, 400)["error"], "bad_request") << q;
  }
  EXPECT_EQ(get_json("/api/datasets/toy_sentiment/rows?offset=40")["rows"].size(), 0u);
  EXPECT_EQ(get_json("/api/datasets/toy_sentiment/rows?limit=1000")["rows"].size(), 40u);
  EXPECT_EQ(get_json("/api/datasets/toy_sentiment/rows?split=dev", 404)["error"], "unknown_split");
  EXPECT_EQ(get_json("/api/nothing", 404)["error"], "not_found");
  EXPECT_EQ(get_json("/elsewhere", 404)["error"], "not_found");
}

TEST_F(ServerTest, Card) {
  auto c = get_json("/api/datasets/toy_qa_es/card");
  EXPECT_EQ(c["revision"], 1);
  EXPECT_EQ(c["tags"]["task_categories"], json::array({"question-answering"}));
  EXPECT_NE(c["markdown"].get<std::string>().find("## Licensing Information"), std::string::npos);
  EXPECT_EQ(c["findings"], json::array());
}

TEST_F(ServerTest, Search) {
  EXPECT_EQ(get_json("/api/search?lang=es&task=question-answering"), json::array({"toy_qa_es"}));
  EXPECT_EQ(get_json("/api/search?lang=es,fr"), json::array({"toy_qa_es", "toy_translation"}));
  EXPECT_EQ(get_json("/api/search?lang=es&lang=fr"), json::array({"toy_qa_es", "toy_translation"}));
  EXPECT_EQ(get_json("/api/search").size(), 3u);
  EXPECT_EQ(get_json("/api/search?lang=de"), json::array());
  EXPECT_EQ(get_json("/api/search?lang=xx", 400)["error"], "unknown_vocabulary_value");
  EXPECT_EQ(get_json("/api/search?colour=red", 400)["error"], "bad_request");
}

TEST_F(ServerTest, CorsAndMethods) {
  auto res = get("/api/datasets");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  httplib::Client c("127.0.0.1", server_->port());
  auto opt = c.Options("/api/datasets");
  ASSERT_TRUE(opt);
  EXPECT_EQ(opt->status, 204);
  auto post = c.Post("/api/datasets", "{}", "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 405);
}

TEST_F(ServerTest, RequestsAreReadOnly) {
  auto before = testing::tree_digest(tmp_->path());
  for (const auto& path : {"/api/datasets", "/api/datasets/toy_qa_es", "/api/datasets/toy_qa_es/rows?limit=3",
                           "/api/datasets/toy_translation/card", "/api/search?lang=en", "/api/datasets/nope",
                           "/api/datasets/toy_sentiment/rows?split=test&offset=11"}) {
    ASSERT_TRUE(get(path));
  }
  EXPECT_EQ(testing::tree_digest(tmp_->path()), before);
}

TEST_F(ServerTest, PortInUse) {
  Server other(api_);
  try {
    other.bind("127.0.0.1", server_->port());
    FAIL() << "bind succeeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPortInUse);
  }
}

TEST(ApiNoBuild, UnbuiltDatasetsAreListedButNotPaged) {
  TempDir tmp;
  ServeOptions opts;
  opts.build_missing = false;
  Api api(Registry::open(kRegistry), tmp / "cache", opts);
  EXPECT_FALSE(fs::exists(tmp / "cache"));
  auto list = api.get("/api/datasets");
  EXPECT_EQ(list.body[0]["built"], false);
  EXPECT_EQ(api.get("/api/datasets/toy_qa_es/rows").status, 409);
}

}  // namespace
}  // namespace dataforge
