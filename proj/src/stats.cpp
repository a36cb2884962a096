#include "medvqa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "medvqa/error.hpp"

namespace medvqa {

namespace {
constexpr const char* kModule = "stats";
}

double Correlation::value() const {
  if (!value_) throw Error(Errc::Degenerate, kModule, "correlation undefined: " + reason_);
  return *value_;
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(Errc::BadRequest, kModule, "pearson: vectors differ in length");
  const std::size_t n = x.size();
  if (n < 2) return Correlation::degenerate("fewer than two paired observations");
  // Two-pass: centre first for numerical stability.
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return Correlation::degenerate("constant vector");
  const double r = sxy / std::sqrt(sxx * syy);
  if (!std::isfinite(r)) return Correlation::degenerate("non-finite input");
  return Correlation::of(std::clamp(r, -1.0, 1.0));
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    // positions i..j (0-based) share ranks i+1..j+1
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(Errc::BadRequest, kModule, "spearman: vectors differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

void ScoreVector::validate() const {
  std::set<std::string_view> seen;
  for (const auto& [id, unused] : scores) {
    if (!seen.insert(id).second) {
      throw Error(Errc::BadRequest, kModule, "rater " + rater_id + " scores sample " + id + " twice");
    }
  }
}

std::pair<std::vector<double>, std::vector<double>> align(const ScoreVector& a, const ScoreVector& b) {
  std::map<std::string_view, double> other;
  for (const auto& [id, s] : b.scores) other.emplace(id, s);
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& [id, s] : a.scores) {
    auto it = other.find(id);
    if (it == other.end()) continue;
    out.first.push_back(s);
    out.second.push_back(it->second);
  }
  return out;
}

AgreementResult agreement(const ScoreVector& a, const ScoreVector& b) {
  a.validate();
  b.validate();
  AgreementResult r;
  r.rater_a = a.rater_id;
  r.rater_b = b.rater_id;
  const auto [x, y] = align(a, b);
  r.n = x.size();
  if (r.n < 2) {
    r.pearson_r = Correlation::degenerate("fewer than two shared samples");
    r.spearman_rho = Correlation::degenerate("fewer than two shared samples");
    return r;
  }
  r.pearson_r = pearson(x, y);
  r.spearman_rho = spearman(x, y);
  return r;
}

std::vector<AgreementResult> agreement_matrix(const std::vector<ScoreVector>& vectors) {
  std::vector<AgreementResult> out;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) out.push_back(agreement(vectors[i], vectors[j]));
  }
  return out;
}

namespace {

json corr_json(const Correlation& c) { return c.defined() ? json(*c.get()) : json(nullptr); }

Correlation corr_from(const json& j, const std::string& reason) {
  if (j.is_null()) return Correlation::degenerate(reason);
  return Correlation::of(j.get<double>());
}

}  // namespace

json AgreementResult::to_json() const {
  json j = {{"rater_a", rater_a},
            {"rater_b", rater_b},
            {"n", n},
            {"pearson_r", corr_json(pearson_r)},
            {"spearman_rho", corr_json(spearman_rho)},
            {"status", pearson_r.defined() && spearman_rho.defined() ? "OK" : "DEGENERATE"}};
  if (!pearson_r.defined()) j["reason"] = pearson_r.reason();
  else if (!spearman_rho.defined()) j["reason"] = spearman_rho.reason();
  return j;
}

AgreementResult AgreementResult::from_json(const json& j) {
  AgreementResult r;
  r.rater_a = j.at("rater_a").get<std::string>();
  r.rater_b = j.at("rater_b").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  const std::string reason = j.value("reason", std::string("degenerate"));
  r.pearson_r = corr_from(j.at("pearson_r"), reason);
  r.spearman_rho = corr_from(j.at("spearman_rho"), reason);
  return r;
}

}  // namespace medvqa
