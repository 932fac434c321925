#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "multiflow/error.hpp"

namespace multiflow {

enum class FitTransform { Linear, LogLog, LogX };

inline const char* to_string(FitTransform t) {
  switch (t) {
    case FitTransform::Linear: return "linear";
    case FitTransform::LogLog: return "log-log";
    case FitTransform::LogX: return "log-x";
  }
  return "unknown";
}

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  std::size_t n = 0;
  FitTransform transform = FitTransform::Linear;
};

/// Ordinary least squares of y on x after the requested transform. Rows with
/// non-finite values or non-positive log arguments are skipped.
inline FitResult fit_slope(const std::vector<double>& x, const std::vector<double>& y,
                           FitTransform transform = FitTransform::Linear) {
  if (x.size() != y.size()) throw Error(ErrorCode::DegenerateFit, "x and y differ in length");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double xi = x[i], yi = y[i];
    if (transform != FitTransform::Linear) {
      if (!(xi > 0.0)) continue;
      xi = std::log(xi);
    }
    if (transform == FitTransform::LogLog) {
      if (!(yi > 0.0)) continue;
      yi = std::log(yi);
    }
    if (!std::isfinite(xi) || !std::isfinite(yi)) continue;
    xs.push_back(xi);
    ys.push_back(yi);
  }
  const std::size_t n = xs.size();
  if (n < 3) throw Error(ErrorCode::DegenerateFit, "fewer than 3 usable rows");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::DegenerateFit, "abscissae are all equal");
  FitResult r;
  r.transform = transform;
  r.n = n;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ys[i] - r.intercept - r.slope * xs[i];
    ssr += e * e;
  }
  r.stderr_slope = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  return r;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double center = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// (max - min) / mean of a positive sample.
inline double relative_spread(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double lo = v.front(), hi = v.front(), s = 0.0;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    s += x;
  }
  return (hi - lo) / (s / static_cast<double>(v.size()));
}

}  // namespace multiflow
