#include "dataforge/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dataforge/error.hpp"
#include "dataforge/kernels.hpp"
#include "dataforge/text.hpp"
#include "internal/fsutil.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint16_t kIndexVersion = 1;

class Out {
 public:
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class In {
 public:
  In(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::kTruncatedFile, name_ + ": unexpected end of index file");
  }
  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
};

void write_header(Out& out, std::string_view magic, const json& header) {
  out.bytes(magic);
  out.put<std::uint16_t>(kIndexVersion);
  out.put<std::uint16_t>(0);
  auto text = header.dump();
  out.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  out.bytes(text);
}

json read_header(In& in, std::string_view magic, const fs::path& path) {
  if (in.remaining() < magic.size() || in.bytes(magic.size()) != magic) {
    fail(ErrorCode::kBadMagic, path.string() + ": not a " + std::string(magic) + " index");
  }
  auto version = in.get<std::uint16_t>();
  if (version != kIndexVersion) {
    fail(ErrorCode::kUnsupportedVersion, path.string() + ": index version " + std::to_string(version));
  }
  in.get<std::uint16_t>();
  auto len = in.get<std::uint32_t>();
  try {
    return json::parse(in.bytes(len));
  } catch (const json::parse_error&) {
    fail(ErrorCode::kTruncatedFile, path.string() + ": corrupt index header");
  }
}

bool ranks_before(const Hit& a, const Hit& b) { return a.score > b.score || (a.score == b.score && a.row < b.row); }

void keep_top(std::vector<Hit>& hits, std::size_t k, bool (*before)(const Hit&, const Hit&)) {
  if (hits.size() > k) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), before);
    hits.resize(k);
  } else {
    std::sort(hits.begin(), hits.end(), before);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Text

void TextIndex::add_document(std::string_view text) {
  const auto row = static_cast<std::uint64_t>(doc_len_.size());
  auto tokens = text::tokenize(text);
  doc_len_.push_back(static_cast<std::uint32_t>(tokens.size()));
  std::sort(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t j = i;
    while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
    postings_[tokens[i]].push_back({row, static_cast<std::uint32_t>(j - i)});
    i = j;
  }
}

void TextIndex::finish() {
  std::uint64_t total = 0;
  for (auto len : doc_len_) total += len;
  avgdl_ = doc_len_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(doc_len_.size());
}

TextIndex TextIndex::build(const Table& table, const std::string& column, Bm25Params params) {
  auto idx = table.schema().index_of(column);
  if (table.schema()[idx].type.tag() != TypeTag::kString) {
    fail(ErrorCode::kWrongType, "column '" + column + "' is not a string column");
  }
  TextIndex ix;
  ix.params_ = params;
  auto reader = table.column(column);
  while (auto v = reader.next()) ix.add_document(v->is_null() ? std::string_view() : std::string_view(v->as_text()));
  ix.finish();
  return ix;
}

TextIndex TextIndex::from_documents(std::span<const std::string> docs, Bm25Params params) {
  TextIndex ix;
  ix.params_ = params;
  for (const auto& d : docs) ix.add_document(d);
  ix.finish();
  return ix;
}

const std::vector<Posting>& TextIndex::postings(std::string_view term) const {
  static const std::vector<Posting> kEmpty;
  auto it = postings_.find(term);
  return it == postings_.end() ? kEmpty : it->second;
}

double TextIndex::idf(std::string_view term) const {
  const double n = static_cast<double>(postings(term).size());
  const double N = static_cast<double>(doc_count());
  return std::log((N - n + 0.5) / (n + 0.5) + 1.0);
}

std::vector<Hit> TextIndex::query(std::string_view q, std::size_t k) const {
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be at least 1");
  auto terms = text::tokenize(q);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  std::vector<double> acc;
  std::vector<std::uint64_t> touched;
  const double k1 = params_.k1;
  const double b = params_.b;
  for (const auto& term : terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    if (acc.empty()) acc.assign(doc_count(), 0.0);
    const double w = idf(term);
    for (const auto& p : it->second) {
      const double tf = p.tf;
      const double norm = 1.0 - b + b * static_cast<double>(doc_len_[p.row]) / avgdl_;
      if (acc[p.row] == 0.0) touched.push_back(p.row);
      acc[p.row] += w * (tf * (k1 + 1.0)) / (tf + k1 * norm);
    }
  }
  std::vector<Hit> hits;
  hits.reserve(touched.size());
  for (auto row : touched) {
    if (acc[row] > 0.0) hits.push_back({row, acc[row]});
  }
  keep_top(hits, k, ranks_before);
  return hits;
}

void TextIndex::save(const fs::path& path) const {
  Out out;
  write_header(out, "TIX1",
               json{{"tokenizer", text::kTokenizerVersion},
                    {"k1", params_.k1},
                    {"b", params_.b},
                    {"docs", doc_len_.size()},
                    {"terms", postings_.size()}});
  for (auto len : doc_len_) out.put(len);
  for (const auto& [term, list] : postings_) {
    out.put(static_cast<std::uint32_t>(term.size()));
    out.bytes(term);
    out.put(static_cast<std::uint64_t>(list.size()));
    for (const auto& p : list) {
      out.put(p.row);
      out.put(p.tf);
    }
  }
  detail::write_file_atomic(path, out.str());
}

TextIndex TextIndex::load(const fs::path& path) {
  In in(detail::read_file(path), path.string());
  auto header = read_header(in, "TIX1", path);
  if (header.value("tokenizer", "") != text::kTokenizerVersion) {
    fail(ErrorCode::kUnsupportedVersion, path.string() + ": index built with tokenizer " + header.value("tokenizer", "?"));
  }
  TextIndex ix;
  ix.params_ = {header.at("k1").get<double>(), header.at("b").get<double>()};
  const auto docs = header.at("docs").get<std::uint64_t>();
  const auto terms = header.at("terms").get<std::uint64_t>();
  if (docs > in.remaining() / 4) fail(ErrorCode::kTruncatedFile, path.string() + ": document table truncated");
  ix.doc_len_.resize(docs);
  for (auto& len : ix.doc_len_) len = in.get<std::uint32_t>();
  for (std::uint64_t t = 0; t < terms; ++t) {
    std::string term(in.bytes(in.get<std::uint32_t>()));
    auto count = in.get<std::uint64_t>();
    if (count > in.remaining() / 12) fail(ErrorCode::kTruncatedFile, path.string() + ": postings truncated");
    auto& list = ix.postings_[std::move(term)];
    list.resize(count);
    for (auto& p : list) {
      p.row = in.get<std::uint64_t>();
      p.tf = in.get<std::uint32_t>();
      if (p.row >= docs) fail(ErrorCode::kTruncatedFile, path.string() + ": posting row out of range");
    }
  }
  if (!in.at_end()) fail(ErrorCode::kTruncatedFile, path.string() + ": trailing bytes");
  ix.finish();
  return ix;
}

// ---------------------------------------------------------------------------
// Vectors

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kCosine: return "cosine";
    case Metric::kInnerProduct: return "inner_product";
    case Metric::kL2: return "l2";
  }
  return "?";
}

Metric metric_from_name(std::string_view name) {
  if (name == "cosine") return Metric::kCosine;
  if (name == "inner_product" || name == "ip") return Metric::kInnerProduct;
  if (name == "l2") return Metric::kL2;
  fail(ErrorCode::kInvalidArgument, "unknown metric '" + std::string(name) + "'");
}

namespace {

// Returns false for an all-zero vector.
bool normalize(std::span<float> v) {
  double ss = 0;
  for (float x : v) ss += static_cast<double>(x) * x;
  if (ss == 0.0) return false;
  const double inv = 1.0 / std::sqrt(ss);
  for (float& x : v) x = static_cast<float>(x * inv);
  return true;
}

bool l2_before(const Hit& a, const Hit& b) { return a.score < b.score || (a.score == b.score && a.row < b.row); }

}  // namespace

VectorIndex VectorIndex::from_vectors(std::vector<float> data, std::size_t dim, Metric metric) {
  if (dim == 0) fail(ErrorCode::kInvalidArgument, "vector dimension must be at least 1");
  if (data.size() % dim != 0) fail(ErrorCode::kDimensionMismatch, "data length is not a multiple of the dimension");
  VectorIndex ix;
  ix.metric_ = metric;
  ix.dim_ = dim;
  ix.data_ = std::move(data);
  const auto n = ix.data_.size() / dim;
  ix.rows_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ix.rows_[i] = i;
    if (metric == Metric::kCosine && !normalize({ix.data_.data() + i * dim, dim})) {
      fail(ErrorCode::kZeroVector, "row " + std::to_string(i) + " is a zero vector");
    }
  }
  return ix;
}

VectorIndex VectorIndex::build(const Table& table, const std::string& column, Metric metric) {
  auto idx = table.schema().index_of(column);
  const auto& type = table.schema()[idx].type;
  if (type.tag() != TypeTag::kTensor || type.shape().size() != 1 || type.dtype() == TensorDtype::kInt64) {
    fail(ErrorCode::kWrongType, "column '" + column + "' is not a rank-1 float tensor");
  }
  VectorIndex ix;
  ix.metric_ = metric;
  ix.dim_ = type.shape()[0];
  auto reader = table.column(column);
  std::uint64_t row = 0;
  while (auto v = reader.next()) {
    if (!v->is_null()) {
      const auto& items = v->as_list();
      const auto start = ix.data_.size();
      for (const auto& x : items) ix.data_.push_back(static_cast<float>(x.as_float()));
      if (metric == Metric::kCosine && !normalize({ix.data_.data() + start, ix.dim_})) {
        fail(ErrorCode::kZeroVector, "row " + std::to_string(row) + " of '" + column + "' is a zero vector");
      }
      ix.rows_.push_back(row);
    }
    ++row;
  }
  return ix;
}

std::vector<Hit> VectorIndex::query(std::span<const float> q, std::size_t k) const {
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (q.size() != dim_) {
    fail(ErrorCode::kDimensionMismatch,
         "query has dimension " + std::to_string(q.size()) + ", index has " + std::to_string(dim_));
  }
  std::vector<float> query(q.begin(), q.end());
  if (metric_ == Metric::kCosine && !normalize(query)) fail(ErrorCode::kZeroVector, "query is a zero vector");

  const auto& kt = kernels::active();
  std::vector<Hit> hits(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const float* v = data_.data() + i * dim_;
    const float s = metric_ == Metric::kL2 ? kt.l2sq_f32(query.data(), v, dim_) : kt.dot_f32(query.data(), v, dim_);
    hits[i] = {rows_[i], static_cast<double>(s)};
  }
  if (metric_ == Metric::kL2) {
    keep_top(hits, k, l2_before);
    for (auto& h : hits) h.score = std::sqrt(h.score);
  } else {
    keep_top(hits, k, ranks_before);
  }
  return hits;
}

void VectorIndex::save(const fs::path& path) const {
  Out out;
  write_header(out, "VIX1", json{{"metric", metric_name(metric_)}, {"dim", dim_}, {"count", rows_.size()}});
  for (auto r : rows_) out.put(r);
  out.bytes(std::string_view(reinterpret_cast<const char*>(data_.data()), data_.size() * sizeof(float)));
  detail::write_file_atomic(path, out.str());
}

VectorIndex VectorIndex::load(const fs::path& path) {
  In in(detail::read_file(path), path.string());
  auto header = read_header(in, "VIX1", path);
  VectorIndex ix;
  ix.metric_ = metric_from_name(header.at("metric").get<std::string>());
  ix.dim_ = header.at("dim").get<std::size_t>();
  const auto count = header.at("count").get<std::uint64_t>();
  if (count > in.remaining() / 8 || ix.dim_ == 0) fail(ErrorCode::kTruncatedFile, path.string() + ": row table truncated");
  ix.rows_.resize(count);
  for (auto& r : ix.rows_) r = in.get<std::uint64_t>();
  const auto floats = count * ix.dim_;
  if (in.remaining() != floats * sizeof(float)) fail(ErrorCode::kTruncatedFile, path.string() + ": vector data size");
  ix.data_.resize(floats);
  std::memcpy(ix.data_.data(), in.bytes(floats * sizeof(float)).data(), floats * sizeof(float));
  return ix;
}

// ---------------------------------------------------------------------------
// Cache

fs::path index_path(const fs::path& cache_dir, const Table& table, const std::string& column, std::string_view ext) {
  return cache_dir / "indexes" / table.fingerprint().hex() / (column + "." + std::string(ext));
}

TextIndex text_index_for(const fs::path& cache_dir, const Table& table, const std::string& column) {
  auto path = index_path(cache_dir, table, column, "tix");
  if (fs::exists(path)) {
    try {
      return TextIndex::load(path);
    } catch (const Error&) {
    }
  }
  auto ix = TextIndex::build(table, column);
  ix.save(path);
  return ix;
}

VectorIndex vector_index_for(const fs::path& cache_dir, const Table& table, const std::string& column, Metric metric) {
  auto path = index_path(cache_dir, table, column, "vix");
  if (fs::exists(path)) {
    try {
      auto ix = VectorIndex::load(path);
      if (ix.metric() == metric) return ix;
    } catch (const Error&) {
    }
  }
  auto ix = VectorIndex::build(table, column, metric);
  ix.save(path);
  return ix;
}

}  // namespace dataforge
