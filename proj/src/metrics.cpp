#include "dataforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dataforge/error.hpp"
#include "dataforge/schema.hpp"
#include "dataforge/text.hpp"

namespace dataforge {

using nlohmann::json;

namespace {

constexpr std::string_view kMetricVersion = "1.0.0";

std::string label_key(const Value& v, std::size_t i) {
  if (!v.is_int() && !v.is_text() && !v.is_bool()) {
    throw TypeError(std::string("label must be an integer, string or bool, got ") + v.kind_name(),
                    "[" + std::to_string(i) + "]");
  }
  return plain_to_json(v).dump();
}

const std::string& text_of(const Value& v, const std::string& path) {
  if (!v.is_text()) throw TypeError(std::string("expected a string, got ") + v.kind_name(), path);
  return v.as_text();
}

std::vector<std::string> references_of(const Value& v, std::size_t i) {
  const auto path = "references[" + std::to_string(i) + "]";
  if (v.is_text()) return {v.as_text()};
  if (!v.is_list() || v.as_list().empty()) {
    throw TypeError("reference must be a string or a non-empty list of strings", path);
  }
  std::vector<std::string> out;
  for (std::size_t j = 0; j < v.as_list().size(); ++j) {
    out.push_back(text_of(v.as_list()[j], path + "[" + std::to_string(j) + "]"));
  }
  return out;
}

using NgramCounts = std::map<std::vector<std::string_view>, std::uint64_t>;

NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string_view> g(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                    toks.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++out[std::move(g)];
  }
  return out;
}

double f1_of(const Confusion& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

std::string format17(double v) {
  if (std::isnan(v)) return "\"NaN\"";
  if (std::isinf(v)) return v > 0 ? "\"Infinity\"" : "\"-Infinity\"";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t closest_reference_length(std::uint64_t candidate, std::span<const std::uint64_t> references) {
  std::uint64_t best = references.empty() ? 0 : references[0];
  auto dist = [&](std::uint64_t r) { return r > candidate ? r - candidate : candidate - r; };
  for (auto r : references) {
    if (dist(r) < dist(best) || (dist(r) == dist(best) && r < best)) best = r;
  }
  return best;
}

std::string MetricResult::to_json() const {
  std::string out = "{\"counts\":{";
  bool first = true;
  for (const auto& [k, v] : counts) {
    if (!first) out += ",";
    first = false;
    out += json(k).dump() + ":" + std::to_string(v);
  }
  out += "},\"scores\":{";
  first = true;
  for (const auto& [k, v] : scores) {
    if (!first) out += ",";
    first = false;
    out += json(k).dump() + ":" + format17(v);
  }
  return out + "}}";
}

std::vector<std::string> MetricState::names() { return {"accuracy", "bleu", "exact_match", "f1"}; }

MetricState MetricState::create(std::string_view name, MetricOptions options) {
  auto all = names();
  if (std::find(all.begin(), all.end(), name) == all.end()) {
    fail(ErrorCode::kInvalidArgument, "unknown metric '" + std::string(name) + "'");
  }
  MetricState s;
  s.id_ = std::string(name);
  s.version_ = std::string(kMetricVersion);
  if (name == "f1") label_key(options.pos_label, 0);
  s.options_ = std::move(options);
  return s;
}

void MetricState::add_batch(std::span<const Value> predictions, std::span<const Value> references) {
  if (predictions.size() != references.size()) {
    fail(ErrorCode::kLengthMismatch, std::to_string(predictions.size()) + " predictions but " +
                                         std::to_string(references.size()) + " references");
  }
  // Validate the whole batch first so a bad element leaves the state untouched.
  MetricState next = *this;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const auto& r = references[i];
    if (id_ == "accuracy") {
      if (label_key(p, i) == label_key(r, i)) ++next.correct;
    } else if (id_ == "f1") {
      auto pk = label_key(p, i);
      auto rk = label_key(r, i);
      if (pk == rk) {
        ++next.per_class[pk].tp;
      } else {
        ++next.per_class[pk].fp;
        ++next.per_class[rk].fn;
      }
    } else if (id_ == "exact_match") {
      const auto& cand = text_of(p, "predictions[" + std::to_string(i) + "]");
      auto refs = references_of(r, i);
      if (std::find(refs.begin(), refs.end(), cand) != refs.end()) ++next.correct;
    } else {
      auto cand = text::tokenize(text_of(p, "predictions[" + std::to_string(i) + "]"));
      std::vector<std::vector<std::string>> refs;
      std::vector<std::uint64_t> ref_lens;
      for (const auto& ref : references_of(r, i)) {
        refs.push_back(text::tokenize(ref));
        ref_lens.push_back(refs.back().size());
      }
      next.candidate_length += cand.size();
      next.reference_length += closest_reference_length(cand.size(), ref_lens);
      for (std::size_t n = 1; n <= 4; ++n) {
        auto cand_counts = ngrams(cand, n);
        NgramCounts max_ref;
        for (const auto& ref : refs) {
          for (const auto& [g, c] : ngrams(ref, n)) {
            auto& slot = max_ref[g];
            slot = std::max(slot, c);
          }
        }
        for (const auto& [g, c] : cand_counts) {
          auto it = max_ref.find(g);
          if (it != max_ref.end()) next.clipped[n - 1] += std::min(c, it->second);
        }
        next.candidate_ngrams[n - 1] += cand.size() >= n ? cand.size() - n + 1 : 0;
      }
    }
    ++next.total;
  }
  *this = std::move(next);
}

void MetricState::merge(const MetricState& other) {
  if (id_ != other.id_ || version_ != other.version_ || !(options_ == other.options_)) {
    fail(ErrorCode::kMetricMismatch, "cannot merge " + id_ + "@" + version_ + " with " + other.id_ + "@" + other.version_);
  }
  total += other.total;
  correct += other.correct;
  for (const auto& [k, c] : other.per_class) {
    auto& mine = per_class[k];
    mine.tp += c.tp;
    mine.fp += c.fp;
    mine.fn += c.fn;
  }
  for (std::size_t n = 0; n < 4; ++n) {
    clipped[n] += other.clipped[n];
    candidate_ngrams[n] += other.candidate_ngrams[n];
  }
  candidate_length += other.candidate_length;
  reference_length += other.reference_length;
}

MetricState merge(MetricState a, const MetricState& b) {
  a.merge(b);
  return a;
}

MetricResult MetricState::compute() const {
  MetricResult res;
  res.counts["total"] = total;
  if (id_ == "bleu") {
    if (candidate_length == 0) fail(ErrorCode::kEmptyState, "bleu needs a non-empty candidate corpus");
    double log_sum = 0;
    bool zero = false;
    for (std::size_t n = 0; n < 4; ++n) {
      double num = static_cast<double>(clipped[n]);
      double den = static_cast<double>(candidate_ngrams[n]);
      if (options_.smooth && n > 0) {
        num += 1;
        den += 1;
      }
      res.scores["precision_" + std::to_string(n + 1)] = den == 0 ? 0.0 : num / den;
      if (num == 0 || den == 0) {
        zero = true;
      } else {
        log_sum += 0.25 * std::log(num / den);
      }
    }
    const double c = static_cast<double>(candidate_length);
    const double r = static_cast<double>(reference_length);
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    res.scores["brevity_penalty"] = bp;
    res.scores["bleu"] = zero ? 0.0 : bp * std::exp(log_sum);
    res.counts["candidate_length"] = candidate_length;
    res.counts["reference_length"] = reference_length;
    return res;
  }
  if (total == 0) fail(ErrorCode::kEmptyState, id_ + " has no examples");
  if (id_ == "accuracy" || id_ == "exact_match") {
    res.scores[id_] = static_cast<double>(correct) / static_cast<double>(total);
    res.counts["correct"] = correct;
    return res;
  }
  auto it = per_class.find(label_key(options_.pos_label, 0));
  res.scores["f1"] = it == per_class.end() ? 0.0 : f1_of(it->second);
  double sum = 0;
  for (const auto& [_, c] : per_class) sum += f1_of(c);
  res.scores["macro_f1"] = sum / static_cast<double>(per_class.size());
  if (it != per_class.end()) {
    res.counts["tp"] = it->second.tp;
    res.counts["fp"] = it->second.fp;
    res.counts["fn"] = it->second.fn;
  }
  return res;
}

json MetricState::to_json() const {
  json classes = json::object();
  for (const auto& [k, c] : per_class) classes[k] = {c.tp, c.fp, c.fn};
  return json{{"id", id_},
              {"version", version_},
              {"pos_label", plain_to_json(options_.pos_label)},
              {"smooth", options_.smooth},
              {"total", total},
              {"correct", correct},
              {"per_class", std::move(classes)},
              {"clipped", clipped},
              {"candidate_ngrams", candidate_ngrams},
              {"candidate_length", candidate_length},
              {"reference_length", reference_length}};
}

MetricState MetricState::from_json(const json& j) {
  MetricOptions opts;
  const auto& pl = j.at("pos_label");
  if (pl.is_number_integer()) {
    opts.pos_label = Value(pl.get<std::int64_t>());
  } else if (pl.is_string()) {
    opts.pos_label = Value(pl.get<std::string>());
  } else if (pl.is_boolean()) {
    opts.pos_label = Value(pl.get<bool>());
  }
  opts.smooth = j.at("smooth").get<bool>();
  auto s = create(j.at("id").get<std::string>(), opts);
  if (j.at("version") != s.version_) fail(ErrorCode::kMetricMismatch, "metric state version differs");
  s.total = j.at("total").get<std::uint64_t>();
  s.correct = j.at("correct").get<std::uint64_t>();
  for (const auto& [k, v] : j.at("per_class").items()) {
    s.per_class[k] = {v.at(0).get<std::uint64_t>(), v.at(1).get<std::uint64_t>(), v.at(2).get<std::uint64_t>()};
  }
  s.clipped = j.at("clipped").get<std::array<std::uint64_t, 4>>();
  s.candidate_ngrams = j.at("candidate_ngrams").get<std::array<std::uint64_t, 4>>();
  s.candidate_length = j.at("candidate_length").get<std::uint64_t>();
  s.reference_length = j.at("reference_length").get<std::uint64_t>();
  return s;
}

}  // namespace dataforge
