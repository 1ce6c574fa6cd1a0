#include <gtest/gtest.h>

#include <cmath>

#include "dataforge/error.hpp"
#include "dataforge/metrics.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace dataforge {
namespace {

using testing::Generator;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::vector<Value> ints(std::initializer_list<std::int64_t> xs) {
  std::vector<Value> out;
  for (auto x : xs) out.emplace_back(x);
  return out;
}

std::vector<Value> strs(const std::vector<std::string>& xs) {
  std::vector<Value> out;
  for (const auto& x : xs) out.emplace_back(x);
  return out;
}

MetricResult run(std::string_view name, const std::vector<Value>& p, const std::vector<Value>& r, MetricOptions o = {}) {
  auto s = MetricState::create(name, o);
  s.add_batch(p, r);
  return s.compute();
}

TEST(Metrics, BinaryF1Example) {
  auto res = run("f1", ints({1, 0, 1}), ints({1, 1, 1}));
  EXPECT_DOUBLE_EQ(res.scores.at("f1"), 0.8);
  EXPECT_EQ(res.counts.at("tp"), 2u);
  EXPECT_EQ(res.counts.at("fn"), 1u);
  EXPECT_EQ(res.counts.at("fp"), 0u);
}

TEST(Metrics, MacroF1AveragesOverSeenLabels) {
  auto res = run("f1", ints({1, 0, 1}), ints({1, 1, 1}));
  // label 1: 0.8, label 0: no true positives.
  EXPECT_DOUBLE_EQ(res.scores.at("macro_f1"), 0.4);
}

TEST(Metrics, PosLabelOption) {
  MetricOptions o;
  o.pos_label = Value(std::string("spam"));
  auto res = run("f1", strs({"spam", "ham"}), strs({"spam", "spam"}), o);
  EXPECT_DOUBLE_EQ(res.scores.at("f1"), 2.0 / 3.0);
}

TEST(Metrics, AccuracyDistinguishesIntFromString) {
  std::vector<Value> p = {Value(std::int64_t{1}), Value(std::string("a"))};
  std::vector<Value> r = {Value(std::string("1")), Value(std::string("a"))};
  EXPECT_DOUBLE_EQ(run("accuracy", p, r).scores.at("accuracy"), 0.5);
}

TEST(Metrics, ExactMatchAnyReference) {
  std::vector<Value> refs = {Value(List{Value(std::string("Paris")), Value(std::string("paris"))}),
                             Value(std::string("4"))};
  auto res = run("exact_match", strs({"paris", "four"}), refs);
  EXPECT_DOUBLE_EQ(res.scores.at("exact_match"), 0.5);
}

TEST(Bleu, ClippedUnigramPrecision) {
  // "the" occurs once in the reference, so only one of the four counts.
  auto res = run("bleu", strs({"the the the the"}), strs({"the cat"}));
  EXPECT_DOUBLE_EQ(res.scores.at("precision_1"), 0.25);
  EXPECT_DOUBLE_EQ(testing::bleu_bruteforce({"the the the the the the"}, {{"the cat is on the mat"}}), 0.0);
  EXPECT_DOUBLE_EQ(run("bleu", strs({"the the the the the the the"}), strs({"the cat is on the mat"})).scores.at("precision_1"),
                   2.0 / 7.0);
  EXPECT_EQ(res.scores.at("bleu"), 0.0);
}

TEST(Bleu, IdenticalCorpusScoresOne) {
  std::vector<std::string> corpus = {"the quick brown fox jumps", "over the lazy dog today"};
  auto res = run("bleu", strs(corpus), strs(corpus));
  EXPECT_DOUBLE_EQ(res.scores.at("bleu"), 1.0);
  EXPECT_DOUBLE_EQ(res.scores.at("brevity_penalty"), 1.0);
}

TEST(Bleu, BrevityPenalty) {
  auto res = run("bleu", strs({"a b c d"}), strs({"a b c d e f g h"}));
  EXPECT_DOUBLE_EQ(res.scores.at("brevity_penalty"), std::exp(1.0 - 8.0 / 4.0));
  EXPECT_DOUBLE_EQ(res.scores.at("bleu"), std::exp(1.0 - 2.0));
}

TEST(Bleu, ClosestReferenceTiesToShorter) {
  std::vector<std::uint64_t> refs = {7, 3, 5};
  EXPECT_EQ(closest_reference_length(4, refs), 3u);
  EXPECT_EQ(closest_reference_length(6, refs), 5u);
  EXPECT_EQ(closest_reference_length(9, refs), 7u);
}

TEST(Bleu, ClippingUsesMaxOverReferences) {
  std::vector<Value> refs = {Value(List{Value(std::string("the cat")), Value(std::string("the the dog"))})};
  auto res = run("bleu", strs({"the the the"}), refs);
  EXPECT_DOUBLE_EQ(res.scores.at("precision_1"), 2.0 / 3.0);
}

TEST(Bleu, SmoothingLiftsHigherOrders) {
  MetricOptions o;
  o.smooth = true;
  auto res = run("bleu", strs({"a b x y"}), strs({"a b c d"}), o);
  EXPECT_DOUBLE_EQ(res.scores.at("precision_1"), 0.5);
  EXPECT_DOUBLE_EQ(res.scores.at("precision_2"), 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(res.scores.at("precision_4"), 1.0 / 2.0);
  EXPECT_GT(res.scores.at("bleu"), 0.0);
  EXPECT_EQ(run("bleu", strs({"a b x y"}), strs({"a b c d"})).scores.at("bleu"), 0.0);
}

TEST(Bleu, MatchesBruteForce) {
  Generator g(31);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    std::vector<Value> ref_values;
    auto sentence = [&] {
      std::string s;
      auto n = g.uniform(1, 12);
      for (std::uint64_t i = 0; i < n; ++i) s += (i ? " " : "") + std::string(1, static_cast<char>('a' + g.uniform(0, 4)));
      return s;
    };
    auto segments = g.uniform(1, 6);
    for (std::uint64_t i = 0; i < segments; ++i) {
      cands.push_back(sentence());
      refs.emplace_back();
      List list;
      auto k = g.uniform(1, 3);
      for (std::uint64_t j = 0; j < k; ++j) {
        refs.back().push_back(sentence());
        list.emplace_back(refs.back().back());
      }
      ref_values.emplace_back(std::move(list));
    }
    for (bool smooth : {false, true}) {
      MetricOptions o;
      o.smooth = smooth;
      auto got = run("bleu", strs(cands), ref_values, o).scores.at("bleu");
      EXPECT_NEAR(got, testing::bleu_bruteforce(cands, refs, smooth), 1e-9) << "case " << t;
    }
  }
}

TEST(Metrics, LabelMetricsMatchOracles) {
  Generator g(5);
  for (int t = 0; t < 100; ++t) {
    auto n = g.uniform(1, 40);
    std::vector<std::string> p, r;
    std::vector<Value> pv, rv;
    for (std::uint64_t i = 0; i < n; ++i) {
      auto a = static_cast<std::int64_t>(g.uniform(0, 3));
      auto b = static_cast<std::int64_t>(g.uniform(0, 3));
      p.push_back(std::to_string(a));
      r.push_back(std::to_string(b));
      pv.emplace_back(a);
      rv.emplace_back(b);
    }
    EXPECT_DOUBLE_EQ(run("accuracy", pv, rv).scores.at("accuracy"), testing::accuracy_naive(p, r));
    auto f1 = run("f1", pv, rv);
    EXPECT_DOUBLE_EQ(f1.scores.at("f1"), testing::f1_naive(p, r, "1"));
    EXPECT_DOUBLE_EQ(f1.scores.at("macro_f1"), testing::macro_f1_naive(p, r));
  }
}

TEST(Merge, ShardingIsBitIdentical) {
  Generator g(8);
  std::vector<Value> p, r;
  for (int i = 0; i < 200; ++i) {
    p.emplace_back(g.text(20));
    r.emplace_back(g.coin(0.3) ? p.back() : Value(g.text(20)));
  }
  for (auto name : MetricState::names()) {
    if (name == "accuracy" || name == "f1") continue;
    auto whole = MetricState::create(name);
    whole.add_batch(p, r);
    auto expected = whole.compute().to_json();
    for (std::size_t shards : {2u, 3u, 8u}) {
      std::vector<MetricState> parts;
      for (std::size_t s = 0; s < shards; ++s) {
        auto lo = p.size() * s / shards, hi = p.size() * (s + 1) / shards;
        auto part = MetricState::create(name);
        part.add_batch(std::span(p).subspan(lo, hi - lo), std::span(r).subspan(lo, hi - lo));
        parts.push_back(part);
      }
      auto merged = MetricState::create(name);
      for (auto it = parts.rbegin(); it != parts.rend(); ++it) merged.merge(*it);
      EXPECT_EQ(merged, whole) << name;
      EXPECT_EQ(merged.compute().to_json(), expected) << name;
    }
  }
}

TEST(Merge, IdentityAndCommutativity) {
  auto a = MetricState::create("f1");
  a.add_batch(ints({1, 0, 2}), ints({1, 1, 2}));
  auto b = MetricState::create("f1");
  b.add_batch(ints({0, 0}), ints({0, 1}));
  EXPECT_EQ(merge(a, MetricState::create("f1")), a);
  EXPECT_EQ(merge(a, b), merge(b, a));
  auto c = MetricState::create("f1");
  c.add_batch(ints({2}), ints({0}));
  EXPECT_EQ(merge(merge(a, b), c), merge(a, merge(b, c)));
}

TEST(Merge, MismatchRejected) {
  auto a = MetricState::create("accuracy");
  EXPECT_EQ(CodeOf([&] { a.merge(MetricState::create("f1")); }), ErrorCode::kMetricMismatch);
  MetricOptions smooth;
  smooth.smooth = true;
  auto b = MetricState::create("bleu");
  EXPECT_EQ(CodeOf([&] { b.merge(MetricState::create("bleu", smooth)); }), ErrorCode::kMetricMismatch);
}

TEST(Metrics, Errors) {
  EXPECT_EQ(CodeOf([] { MetricState::create("accuracy").compute(); }), ErrorCode::kEmptyState);
  EXPECT_EQ(CodeOf([] { MetricState::create("bleu").compute(); }), ErrorCode::kEmptyState);
  EXPECT_EQ(CodeOf([] { MetricState::create("rouge"); }), ErrorCode::kInvalidArgument);
  auto s = MetricState::create("accuracy");
  EXPECT_EQ(CodeOf([&] { s.add_batch(ints({1, 2}), ints({1})); }), ErrorCode::kLengthMismatch);
  std::vector<Value> bad = {Value(std::int64_t{1}), Value(2.5)};
  EXPECT_EQ(CodeOf([&] { s.add_batch(bad, ints({1, 2})); }), ErrorCode::kTypeError);
  EXPECT_EQ(s.total, 0u);
  auto bleu = MetricState::create("bleu");
  EXPECT_EQ(CodeOf([&] { bleu.add_batch(ints({1}), strs({"x"})); }), ErrorCode::kTypeError);
}

TEST(Metrics, ResultJsonUses17Digits) {
  auto res = run("accuracy", ints({1, 0, 0}), ints({1, 1, 1}));
  EXPECT_EQ(res.to_json(), R"({"counts":{"correct":1,"total":3},"scores":{"accuracy":0.33333333333333331}})");
}

TEST(Metrics, StateJsonRoundTrip) {
  auto s = MetricState::create("bleu");
  s.add_batch(strs({"a b c", "d e"}), strs({"a b d", "d e f"}));
  EXPECT_EQ(MetricState::from_json(s.to_json()), s);
  auto f = MetricState::create("f1");
  f.add_batch(ints({1, 0}), ints({0, 0}));
  EXPECT_EQ(MetricState::from_json(nlohmann::json::parse(f.to_json().dump())), f);
}

}  // namespace
}  // namespace dataforge
