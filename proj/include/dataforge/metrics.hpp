#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "dataforge/value.hpp"

namespace dataforge {

struct MetricOptions {
  /// F1: label treated as positive for the binary score.
  Value pos_label = Value(std::int64_t{1});
  /// BLEU: add-one smoothing of p_n for n >= 2.
  bool smooth = false;

  friend bool operator==(const MetricOptions&, const MetricOptions&) = default;
};

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct MetricResult {
  std::map<std::string, double> scores;
  std::map<std::string, std::uint64_t> counts;

  /// Scores printed with 17 significant digits.
  std::string to_json() const;
};

/// Sufficient statistics for one of accuracy, f1, exact_match or bleu.
/// Merging adds counters field-wise, so any sharding gives the same result.
class MetricState {
 public:
  /// Throws kInvalidArgument for an unknown name.
  static MetricState create(std::string_view name, MetricOptions options = {});
  static std::vector<std::string> names();

  /// Labels (accuracy, f1) are integers, strings or bools. exact_match and
  /// bleu take a string prediction and a string or list-of-strings reference.
  /// Throws kLengthMismatch, kTypeError.
  void add_batch(std::span<const Value> predictions, std::span<const Value> references);
  /// Throws kMetricMismatch.
  void merge(const MetricState& other);
  /// Throws kEmptyState.
  MetricResult compute() const;

  const std::string& id() const { return id_; }
  const std::string& version() const { return version_; }
  const MetricOptions& options() const { return options_; }

  std::uint64_t total = 0;
  std::uint64_t correct = 0;
  /// Keyed by the label's JSON text, so 1 and "1" stay distinct.
  std::map<std::string, Confusion> per_class;
  std::array<std::uint64_t, 4> clipped{};
  std::array<std::uint64_t, 4> candidate_ngrams{};
  std::uint64_t candidate_length = 0;
  std::uint64_t reference_length = 0;

  nlohmann::json to_json() const;
  static MetricState from_json(const nlohmann::json& j);

  friend bool operator==(const MetricState&, const MetricState&) = default;

 private:
  std::string id_;
  std::string version_;
  MetricOptions options_;
};

MetricState merge(MetricState a, const MetricState& b);

/// Closest reference length to `candidate`, ties to the shorter.
std::uint64_t closest_reference_length(std::uint64_t candidate, std::span<const std::uint64_t> references);

}  // namespace dataforge
