#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "medvqa/util.hpp"

namespace medvqa {

/// A correlation coefficient, or DEGENERATE when it is undefined (fewer than
/// two points, or a constant vector). There is no numeric sentinel.
class Correlation {
 public:
  static Correlation of(double v) { return Correlation(v); }
  static Correlation degenerate(std::string reason) {
    Correlation c;
    c.reason_ = std::move(reason);
    return c;
  }

  bool defined() const { return value_.has_value(); }
  bool is_degenerate() const { return !value_.has_value(); }
  /// Throws DEGENERATE when undefined.
  double value() const;
  const std::optional<double>& get() const { return value_; }
  const std::string& reason() const { return reason_; }

 private:
  Correlation() = default;
  explicit Correlation(double v) : value_(v) {}
  std::optional<double> value_;
  std::string reason_;
};

Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Pearson over average ranks; tied values share the mean of their ranks.
Correlation spearman(std::span<const double> x, std::span<const double> y);

/// 1-based fractional ranks.
std::vector<double> average_ranks(std::span<const double> v);

struct ScoreVector {
  std::string rater_id;
  std::vector<std::pair<std::string, double>> scores;  // (sample_id, score), ids unique

  /// Throws BAD_REQUEST on a repeated sample id.
  void validate() const;
};

struct AgreementResult {
  std::string rater_a;
  std::string rater_b;
  std::size_t n = 0;
  Correlation pearson_r = Correlation::degenerate("not computed");
  Correlation spearman_rho = Correlation::degenerate("not computed");

  json to_json() const;
  static AgreementResult from_json(const json& j);
};

/// Aligns two vectors on their shared sample ids (in a's order).
std::pair<std::vector<double>, std::vector<double>> align(const ScoreVector& a, const ScoreVector& b);

AgreementResult agreement(const ScoreVector& a, const ScoreVector& b);

/// All unordered pairs (i < j) in input order.
std::vector<AgreementResult> agreement_matrix(const std::vector<ScoreVector>& vectors);

}  // namespace medvqa
