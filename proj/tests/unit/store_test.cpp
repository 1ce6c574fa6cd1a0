#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "dataforge/error.hpp"
#include "dataforge/store.hpp"
#include "support/generators.hpp"
#include "support/temp_dir.hpp"

namespace dataforge {
namespace {

using testing::Generator;
using testing::TempDir;

Schema IdText() {
  return Schema({{"id", FeatureType::int64()}, {"text", FeatureType::string(), true}});
}

std::vector<Row> IdTextRows(std::int64_t n) {
  std::vector<Row> rows;
  for (std::int64_t i = 0; i < n; ++i) {
    rows.push_back({Value(i), i % 7 == 0 ? Value() : Value("row " + std::to_string(i))});
  }
  return rows;
}

std::string ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void WriteFile(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode OpenError(const std::filesystem::path& p, bool verify = false) {
  try {
    open_table(p, {.verify = verify});
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

TEST(WriteTable, EmptyTable) {
  TempDir dir;
  auto t = write_table(IdText(), std::span<const Row>{}, dir / "e.dset");
  EXPECT_EQ(t.num_rows(), 0u);
  EXPECT_EQ(t.num_batches(), 0u);
  auto reopened = open_table(dir / "e.dset", {.verify = true});
  EXPECT_EQ(reopened.num_rows(), 0u);
  EXPECT_TRUE(reopened.read_all().empty());
  EXPECT_TRUE(reopened.slice(0, 0).empty());
}

TEST(WriteTable, BatchesUseCeilingDivision) {
  TempDir dir;
  auto rows = IdTextRows(25'000);
  auto t = write_table(IdText(), rows, dir / "t.dset", 10'000);
  ASSERT_EQ(t.num_batches(), 3u);
  EXPECT_EQ(t.batch(0).rows, 10'000u);
  EXPECT_EQ(t.batch(1).rows, 10'000u);
  EXPECT_EQ(t.batch(2).rows, 5'000u);
  EXPECT_EQ(t.cumulative_rows(), (std::vector<std::uint64_t>{10'000, 20'000, 25'000}));
}

TEST(WriteTable, ReadAllReturnsRowsInOrder) {
  TempDir dir;
  auto rows = IdTextRows(1234);
  auto t = write_table(IdText(), rows, dir / "t.dset", 100);
  EXPECT_EQ(t.read_all(), rows);
  EXPECT_EQ(open_table(dir / "t.dset").row(0), rows[0]);
}

TEST(WriteTable, RejectsInvalidRowsAndLeavesNoFile) {
  TempDir dir;
  {
    TableWriter w(dir / "bad.dset", IdText());
    w.append({Value(1), Value("ok")});
    EXPECT_THROW(w.append({Value("nope"), Value("x")}), TypeError);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "bad.dset"));
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(Layout, MatchesByteLayoutForTinyTable) {
  TempDir dir;
  Schema s({{"a", FeatureType::int64()}});
  auto t = write_table(s, std::vector<Row>{{Value(5)}, {Value(-1)}}, dir / "tiny.dset");
  auto bytes = ReadFile(dir / "tiny.dset");
  const std::string json = schema_to_json(s);

  std::string expected("DSET1\0", 6);
  auto put = [&](auto v) { expected.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
  auto pad = [&] { while (expected.size() % 8) expected.push_back('\0'); };
  put(std::uint16_t{1});
  put(std::uint32_t(json.size()));
  expected += json;
  pad();
  const std::uint64_t batch_offset = expected.size();
  put(std::uint64_t{2});          // rows
  put(std::uint32_t{2});          // validity + data
  put(std::uint64_t{1});
  put(std::uint64_t{16});
  pad();
  expected.push_back('\x03');
  pad();
  put(std::int64_t{5});
  put(std::int64_t{-1});
  put(std::uint64_t{1});
  put(batch_offset);
  put(std::uint64_t{2});
  // Fingerprint: schema, then per batch rows, buffer count and each buffer, all length-framed.
  Sha256 h;
  h.update_framed(json);
  h.update_u64(2);
  h.update_u64(2);
  h.update_framed(std::string("\x03", 1));
  std::string data;
  std::int64_t vals[2] = {5, -1};
  data.append(reinterpret_cast<const char*>(vals), 16);
  h.update_framed(data);
  auto digest = h.finish();
  expected.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  put(std::uint32_t{8 + 16 + 32});
  expected.append("DSET1\0", 6);

  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(t.fingerprint(), Fingerprint(digest));
}

TEST(OpenTable, DetectsCorruption) {
  TempDir dir;
  auto path = dir / "t.dset";
  write_table(IdText(), IdTextRows(50), path);
  const auto good = ReadFile(path);

  WriteFile(path, good.substr(0, good.size() - 1));
  EXPECT_EQ(OpenError(path), ErrorCode::kTruncatedFile);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  WriteFile(path, bad_magic);
  EXPECT_EQ(OpenError(path), ErrorCode::kBadMagic);

  auto bad_version = good;
  bad_version[6] = 2;
  WriteFile(path, bad_version);
  EXPECT_EQ(OpenError(path), ErrorCode::kUnsupportedVersion);

  // Flip a byte inside the text data buffer (well past the header).
  auto flipped = good;
  auto pos = flipped.find("row 13");
  ASSERT_NE(pos, std::string::npos);
  flipped[pos] ^= 0x20;
  WriteFile(path, flipped);
  EXPECT_NO_THROW(open_table(path));
  EXPECT_EQ(OpenError(path, true), ErrorCode::kChecksumMismatch);

  WriteFile(path, good);
  EXPECT_NO_THROW(open_table(path, {.verify = true}));
}

TEST(Slice, IdentityEmptyAndAcrossBatchBoundary) {
  TempDir dir;
  auto rows = IdTextRows(25'000);
  auto t = write_table(IdText(), rows, dir / "t.dset");
  auto all = t.read_all();
  EXPECT_EQ(t.slice(0, t.num_rows()), all);
  EXPECT_TRUE(t.slice(17, 17).empty());
  auto s = t.slice(9'999, 10'001);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s, std::vector<Row>(all.begin() + 9'999, all.begin() + 10'001));
  EXPECT_EQ(s[1][0], Value(10'000));
}

TEST(Slice, OutOfBounds) {
  TempDir dir;
  auto t = write_table(IdText(), IdTextRows(10), dir / "t.dset");
  for (auto [a, b] : {std::pair<std::uint64_t, std::uint64_t>{0, 11}, {5, 4}, {11, 11}}) {
    try {
      t.slice(a, b);
      ADD_FAILURE() << a << "," << b;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kOutOfBounds);
    }
  }
  EXPECT_THROW(t.row(10), Error);
}

TEST(Slice, BatchChoiceSatisfiesCumulativeBounds) {
  TempDir dir;
  auto t = write_table(IdText(), IdTextRows(1000), dir / "t.dset", 37);
  const auto& cum = t.cumulative_rows();
  for (std::uint64_t i = 0; i < t.num_rows(); ++i) {
    auto b = t.batch_for_row(i);
    std::uint64_t lo = b == 0 ? 0 : cum[b - 1];
    ASSERT_LE(lo, i);
    ASSERT_LT(i, cum[b]);
  }
}

TEST(Column, YieldsValuesAndRejectsUnknownNames) {
  TempDir dir;
  Schema s({{"n", FeatureType::int64()}});
  auto t = write_table(s, std::vector<Row>{{Value(1)}, {Value(2)}, {Value(3)}}, dir / "t.dset");
  auto reader = t.column("n");
  std::vector<Value> got;
  while (auto v = reader.next()) got.push_back(*v);
  EXPECT_EQ(got, (std::vector<Value>{Value(1), Value(2), Value(3)}));
  try {
    t.column("missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownColumn);
  }
}

TEST(Column, FixedWidthSumTouchesNoOffsets) {
  TempDir dir;
  Schema s({{"n", FeatureType::int64()}, {"s", FeatureType::string()}});
  TableWriter w(dir / "big.dset", s);
  std::int64_t expect = 0;
  for (std::int64_t i = 0; i < 1'000'000; ++i) {
    w.append({Value(i * 3 - 7), Value("x")});
    expect += i * 3 - 7;
  }
  auto t = w.finish();
  auto before = store_counters().offsets_reads.load();
  EXPECT_EQ(column_sum_int64(t, "n"), expect);
  EXPECT_EQ(store_counters().offsets_reads.load(), before);

  // The chunks alias the mapped file.
  auto chunks = t.column("n").int64_chunks();
  auto mapped = t.batch(0).file->bytes();
  EXPECT_GE(reinterpret_cast<const std::byte*>(chunks[0].data()), mapped.data());
  EXPECT_LT(reinterpret_cast<const std::byte*>(chunks[0].data()), mapped.data() + mapped.size());

  // Decoding the string column does read offsets.
  t.column("s").next();
  EXPECT_GT(store_counters().offsets_reads.load(), before);
}

TEST(Column, NullCount) {
  TempDir dir;
  auto t = write_table(IdText(), IdTextRows(100), dir / "t.dset", 30);
  EXPECT_EQ(t.column("text").null_count(), 15u);  // multiples of 7 in [0, 100)
  EXPECT_EQ(t.column("id").null_count(), 0u);
}

TEST(Concat, ByBatchReference) {
  TempDir dir;
  auto ra = IdTextRows(30);
  std::vector<Row> rb;
  for (std::int64_t i = 100; i < 145; ++i) rb.push_back({Value(i), Value("b")});
  auto a = write_table(IdText(), ra, dir / "a.dset", 8);
  auto b = write_table(IdText(), rb, dir / "b.dset", 8);

  std::vector<Table> one{a};
  EXPECT_EQ(concat_tables(one).read_all(), ra);

  std::vector<Table> both{a, b};
  auto c = concat_tables(both);
  EXPECT_EQ(c.num_rows(), a.num_rows() + b.num_rows());
  EXPECT_EQ(c.num_batches(), a.num_batches() + b.num_batches());
  for (std::uint64_t i = a.num_rows(); i < c.num_rows(); ++i) EXPECT_EQ(c.row(i), rb[i - a.num_rows()]);
  EXPECT_EQ(c.batch(0).file.get(), a.batch(0).file.get());

  // Same content written directly with the same batching has the same fingerprint.
  std::vector<Row> joined = ra;
  joined.insert(joined.end(), rb.begin(), rb.end());
  EXPECT_NE(c.fingerprint(), a.fingerprint());

  auto other = write_table(Schema({{"x", FeatureType::int64()}}), std::vector<Row>{{Value(1)}}, dir / "x.dset");
  std::vector<Table> mismatched{a, other};
  try {
    concat_tables(mismatched);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaMismatch);
  }
}

TEST(Fingerprint, StableAcrossIdenticalWrites) {
  TempDir dir;
  auto rows = IdTextRows(500);
  auto a = write_table(IdText(), rows, dir / "a.dset", 64);
  auto b = write_table(IdText(), rows, dir / "b.dset", 64);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(ReadFile(dir / "a.dset"), ReadFile(dir / "b.dset"));
  rows[3][0] = Value(-3);
  auto c = write_table(IdText(), rows, dir / "c.dset", 64);
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(RoundTrip, RandomSchemasAndRows) {
  TempDir dir;
  Generator gen(42);
  for (int i = 0; i < 100; ++i) {
    auto schema = gen.schema();
    auto rows = gen.rows(schema, gen.uniform(0, 40));
    auto path = dir / ("r" + std::to_string(i) + ".dset");
    write_table(schema, rows, path, gen.uniform(1, 16));
    auto t = open_table(path, {.verify = true});
    ASSERT_EQ(t.schema(), schema);
    ASSERT_EQ(t.read_all(), rows) << schema_to_json(schema);
  }
}

TEST(DatasetInfo, JsonRoundTrip) {
  DatasetInfo info;
  info.id = "demo";
  info.version = "1.0.0";
  info.split_rows = {{"train", 10}, {"test", 2}};
  info.download_checksums = {{"file:///x", std::string(64, 'a')}};
  info.recommended_metrics = {"accuracy"};
  auto back = info_from_json(info_to_json(info));
  EXPECT_EQ(back.id, info.id);
  EXPECT_EQ(back.split_rows, info.split_rows);
  EXPECT_EQ(back.download_checksums, info.download_checksums);
  EXPECT_EQ(back.recommended_metrics, info.recommended_metrics);
}

}  // namespace
}  // namespace dataforge
