#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"

#include "bicross/core/error.hpp"
#include "bicross/core/tensor.hpp"

namespace bicross::eval {

inline constexpr double kEvalMinDepth = 1e-3;
inline constexpr double kEvalMaxDepth = 20.0;

struct Metrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t n_valid = 0;

  bool operator==(const Metrics&) const = default;
};

inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel}, {"rmse", m.rmse},      {"delta1", m.delta1},
                     {"delta2", m.delta2},   {"delta3", m.delta3}, {"n_valid", m.n_valid}};
}

inline void from_json(const nlohmann::json& j, Metrics& m) {
  m.abs_rel = j.at("abs_rel").get<double>();
  m.sq_rel = j.at("sq_rel").get<double>();
  m.rmse = j.at("rmse").get<double>();
  m.delta1 = j.at("delta1").get<double>();
  m.delta2 = j.at("delta2").get<double>();
  m.delta3 = j.at("delta3").get<double>();
  m.n_valid = j.value("n_valid", std::size_t{0});
}

// Running sums so several maps can be pooled into one population mean.
class MetricAccumulator {
 public:
  MetricAccumulator(double d_min = kEvalMinDepth, double d_max = kEvalMaxDepth) : d_min_(d_min), d_max_(d_max) {
    if (!(d_min > 0.0) || !(d_max > d_min)) throw InvalidParameter("metric clamp needs 0 < d_min < d_max");
  }

  void add(const Tensor& pred, const Tensor& gt) {
    if (pred.size() != gt.size()) {
      throw InvalidInput("compute_metrics: pred " + Tensor::shape_string(pred.shape()) + " vs gt " +
                         Tensor::shape_string(gt.shape()));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const double g = gt[i];
      if (!(g >= d_min_ && g <= d_max_)) continue;
      if (!std::isfinite(pred[i])) throw InvalidInput("compute_metrics: non-finite prediction");
      const double p = std::clamp(pred[i], d_min_, d_max_);
      const double diff = p - g;
      abs_rel_ += std::abs(diff) / g;
      sq_rel_ += diff * diff / g;
      sq_ += diff * diff;
      const double ratio = std::max(p / g, g / p);
      if (ratio < 1.25) ++d1_;
      if (ratio < 1.25 * 1.25) ++d2_;
      if (ratio < 1.25 * 1.25 * 1.25) ++d3_;
      ++n_;
    }
  }

  Metrics result() const {
    if (n_ == 0) throw DegenerateInput("compute_metrics: no valid pixels inside the depth clamp");
    const double n = static_cast<double>(n_);
    Metrics m;
    m.abs_rel = abs_rel_ / n;
    m.sq_rel = sq_rel_ / n;
    m.rmse = std::sqrt(sq_ / n);
    m.delta1 = static_cast<double>(d1_) / n;
    m.delta2 = static_cast<double>(d2_) / n;
    m.delta3 = static_cast<double>(d3_) / n;
    m.n_valid = n_;
    return m;
  }

 private:
  double d_min_, d_max_;
  double abs_rel_ = 0.0, sq_rel_ = 0.0, sq_ = 0.0;
  std::size_t d1_ = 0, d2_ = 0, d3_ = 0, n_ = 0;
};

inline Metrics compute_metrics(const Tensor& pred, const Tensor& gt, double d_min = kEvalMinDepth,
                               double d_max = kEvalMaxDepth) {
  MetricAccumulator acc(d_min, d_max);
  acc.add(pred, gt);
  return acc.result();
}

// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInput("correlation needs two equal-length samples of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInput("correlation of a constant sample");
  return sab / std::sqrt(saa * sbb);
}

// Spearman rank correlation.
inline double rank_correlation(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

}  // namespace bicross::eval
