#include <gtest/gtest.h>
#include <zlib.h>

#include <fstream>

#include "dataforge/error.hpp"
#include "dataforge/source.hpp"
#include "support/temp_dir.hpp"

namespace dataforge {
namespace {

using nlohmann::json;
using testing::TempDir;

class StringSource : public ByteSource {
 public:
  // Small chunk sizes exercise buffer refills mid-line.
  explicit StringSource(std::string s, std::size_t chunk = 3) : s_(std::move(s)), chunk_(chunk) {}
  std::size_t read(char* dst, std::size_t n) override {
    n = std::min({n, chunk_, s_.size() - pos_});
    std::memcpy(dst, s_.data() + pos_, n);
    pos_ += n;
    return n;
  }

 private:
  std::string s_;
  std::size_t chunk_;
  std::size_t pos_ = 0;
};

std::unique_ptr<ByteSource> Src(std::string s) { return std::make_unique<StringSource>(std::move(s)); }

std::vector<std::vector<std::string>> Csv(const std::string& text, char delim = ',') {
  CsvReader r(Src(text), delim);
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> f;
  while (r.next(f)) out.push_back(f);
  return out;
}

using Records = std::vector<std::vector<std::string>>;

TEST(LineReader, SplitsAcrossRefills) {
  LineReader r(Src("alpha\nbe\r\n\nlast"), 4096);
  std::string line;
  std::vector<std::string> lines;
  while (r.next(line)) lines.push_back(line);
  EXPECT_EQ(lines, (std::vector<std::string>{"alpha", "be\r", "", "last"}));
  EXPECT_EQ(r.line_number(), 4u);
}

TEST(LineReader, LongLineGrowsBuffer) {
  std::string big(20000, 'x');
  LineReader r(std::make_unique<StringSource>(big + "\nz\n", 1000), 4096);
  std::string line;
  ASSERT_TRUE(r.next(line));
  EXPECT_EQ(line, big);
  ASSERT_TRUE(r.next(line));
  EXPECT_EQ(line, "z");
  EXPECT_FALSE(r.next(line));
}

TEST(Csv, QuotedDelimiter) { EXPECT_EQ(Csv("a,\"b,c\"\n"), (Records{{"a", "b,c"}})); }

TEST(Csv, EscapedQuotesAndEmptyFields) {
  EXPECT_EQ(Csv("\"say \"\"hi\"\"\",,x\n,\n"), (Records{{"say \"hi\"", "", "x"}, {"", ""}}));
}

TEST(Csv, CrlfAndLfTerminators) {
  EXPECT_EQ(Csv("a,b\r\nc,d\ne,f"), (Records{{"a", "b"}, {"c", "d"}, {"e", "f"}}));
}

TEST(Csv, LineBreakInsideQuotes) {
  CsvReader r(Src("h\n\"one\r\ntwo\"\nnext\n"), ',');
  std::vector<std::string> f;
  ASSERT_TRUE(r.next(f));
  ASSERT_TRUE(r.next(f));
  EXPECT_EQ(f, (std::vector<std::string>{"one\r\ntwo"}));
  EXPECT_EQ(r.record_line(), 2u);
  ASSERT_TRUE(r.next(f));
  EXPECT_EQ(f, (std::vector<std::string>{"next"}));
  EXPECT_EQ(r.record_line(), 4u);
}

TEST(Csv, OtherDelimiter) { EXPECT_EQ(Csv("a\t\"b\tc\"\n", '\t'), (Records{{"a", "b\tc"}})); }

TEST(Csv, MalformedQuoting) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      Csv(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("ok\n\"never closed\n"), 2u);
  EXPECT_EQ(line_of("a\nb\nab\"c\n"), 3u);
  EXPECT_EQ(line_of("\"x\"y\n"), 1u);
}

Schema Sentiment() {
  return Schema({{"text", FeatureType::string()}, {"label", FeatureType::class_label({"neg", "pos"})}});
}

TEST(RowReader, CsvHeaderLookupAndLabels) {
  FieldMap fm = {{"text", "sentence"}, {"label", "label"}};
  RowReader r(Src("label,sentence\npos,good\n0,\"bad, really\"\n"), SourceFormat::kCsv, {}, fm, Sentiment());
  auto a = r.next();
  auto b = r.next();
  ASSERT_TRUE(a && b);
  EXPECT_EQ(*a, (Row{Value("good"), Value(1)}));
  EXPECT_EQ(*b, (Row{Value("bad, really"), Value(0)}));
  EXPECT_FALSE(r.next());
}

TEST(RowReader, CsvByIndexWithoutHeader) {
  FieldMap fm = {{"text", 1}, {"label", 0}};
  FormatOptions opts;
  opts.has_header = false;
  RowReader r(Src("1,x\n"), SourceFormat::kCsv, opts, fm, Sentiment());
  EXPECT_EQ(*r.next(), (Row{Value("x"), Value(1)}));
}

TEST(RowReader, CsvTypedCells) {
  Schema s({{"i", FeatureType::int64(), true},
            {"f", FeatureType::float64()},
            {"b", FeatureType::boolean()},
            {"seq", FeatureType::sequence(FeatureType::int64())}});
  FieldMap fm = {{"i", "i"}, {"f", "f"}, {"b", "b"}, {"seq", "seq"}};
  RowReader r(Src("i,f,b,seq\n,2.5,true,\"[1,2]\"\n-7,NaN,0,[]\n"), SourceFormat::kCsv, {}, fm, s);
  auto a = *r.next();
  EXPECT_TRUE(a[0].is_null());
  EXPECT_EQ(a[1], Value(2.5));
  EXPECT_EQ(a[2], Value(true));
  EXPECT_EQ(a[3], Value(List{Value(1), Value(2)}));
  auto b = *r.next();
  EXPECT_EQ(b[0], Value(-7));
  EXPECT_TRUE(std::isnan(b[1].as_float()));
}

TEST(RowReader, CsvTypeErrorCarriesLine) {
  Schema s({{"n", FeatureType::int64()}});
  RowReader r(Src("n\n1\n2\nthree\n"), SourceFormat::kCsv, {}, {{"n", "n"}}, s);
  r.next();
  r.next();
  try {
    r.next();
    FAIL();
  } catch (const TypeError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_EQ(e.path(), "n");
  }
}

TEST(RowReader, JsonlLabelStringToCode) {
  Schema s({{"label", FeatureType::class_label({"neg", "pos"})}});
  RowReader r(Src("{\"label\":\"pos\"}\n"), SourceFormat::kJsonl, {}, {{"label", "label"}}, s);
  EXPECT_EQ(*r.next(), (Row{Value(1)}));
}

TEST(RowReader, JsonlMalformedLineSeven) {
  std::string text;
  for (int i = 1; i <= 6; ++i) text += "{\"x\":" + std::to_string(i) + "}\n";
  text += "{\"x\": 7,,}\n";
  Schema s({{"x", FeatureType::int64()}});
  RowReader r(Src(text), SourceFormat::kJsonl, {}, {{"x", "x"}}, s);
  for (int i = 0; i < 6; ++i) ASSERT_TRUE(r.next());
  try {
    r.next();
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
  }
}

TEST(RowReader, JsonlPointersAndMissingKeys) {
  Schema s({{"a", FeatureType::string()}, {"deep", FeatureType::int64(), true}});
  FieldMap fm = {{"a", "a"}, {"deep", "/x/y/0"}};
  RowReader r(Src("{\"a\":\"p\",\"x\":{\"y\":[5]}}\n\n  \n{\"a\":\"q\"}\n"), SourceFormat::kJsonl, {}, fm, s);
  EXPECT_EQ(*r.next(), (Row{Value("p"), Value(5)}));
  EXPECT_EQ(*r.next(), (Row{Value("q"), Value()}));
  EXPECT_EQ(r.line(), 4u);
  EXPECT_FALSE(r.next());
}

TEST(RowReader, JsonlMissingRequiredIsTypeError) {
  Schema s({{"a", FeatureType::string()}});
  RowReader r(Src("{}\n"), SourceFormat::kJsonl, {}, {{"a", "a"}}, s);
  EXPECT_THROW(r.next(), TypeError);
}

TEST(RowReader, TextLines) {
  Schema s({{"line", FeatureType::string()}});
  RowReader r(Src("first\r\n\nthird\n"), SourceFormat::kText, {}, {{"line", "line"}}, s);
  std::vector<std::string> got;
  while (auto row = r.next()) got.push_back((*row)[0].as_text());
  EXPECT_EQ(got, (std::vector<std::string>{"first", "", "third"}));
}

TEST(RowReader, RejectsInvalidUtf8) {
  Schema s({{"line", FeatureType::string()}});
  RowReader r(Src("ok\nbad \xC3\x28\n"), SourceFormat::kText, {}, {{"line", "line"}}, s);
  r.next();
  try {
    r.next();
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(RowReader, MissingFieldMapEntry) {
  Schema s({{"a", FeatureType::string()}});
  EXPECT_THROW(RowReader(Src(""), SourceFormat::kJsonl, {}, {}, s), Error);
}

TEST(Gzip, InflatesFilesAndConcatenatedMembers) {
  TempDir dir;
  auto path = dir / "x.txt.gz";
  for (const char* part : {"one\ntwo\n", "three\n"}) {
    gzFile gz = gzopen(path.c_str(), "ab");
    gzputs(gz, part);
    gzclose(gz);
  }
  Schema s({{"line", FeatureType::string()}});
  RowReader r(open_source(path.string(), {}, false), SourceFormat::kText, {}, {{"line", "line"}}, s);
  int n = 0;
  while (r.next()) ++n;
  EXPECT_EQ(n, 3);
}

TEST(Gzip, TruncatedStreamFails) {
  TempDir dir;
  auto path = dir / "x.gz";
  gzFile gz = gzopen(path.c_str(), "wb");
  std::string payload(100000, 'a');
  gzwrite(gz, payload.data(), payload.size());
  gzclose(gz);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  auto src = open_source(path.string(), {}, false);
  char buf[4096];
  EXPECT_THROW(
      {
        while (src->read(buf, sizeof buf) > 0) {
        }
      },
      Error);
}

TEST(Locations, ResolveRelativeAndFileUrls) {
  EXPECT_EQ(resolve_local("data/a.csv", "/base"), std::filesystem::path("/base/data/a.csv"));
  EXPECT_EQ(resolve_local("file:///abs/a.csv", "/base"), std::filesystem::path("/abs/a.csv"));
  EXPECT_TRUE(is_remote("https://x/y"));
  EXPECT_FALSE(is_remote("file:///x"));
}

}  // namespace
}  // namespace dataforge
