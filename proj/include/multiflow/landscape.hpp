#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "multiflow/error.hpp"
#include "multiflow/flow.hpp"
#include "multiflow/frames.hpp"
#include "multiflow/hermite.hpp"

namespace multiflow {

inline constexpr double kTolCurv = 1e-8;
inline constexpr int kMaxEnumerationTargets = 20;

enum class Parity { Odd, Even };

inline Parity parity_of(int p) { return p % 2 == 0 ? Parity::Even : Parity::Odd; }
inline const char* to_string(Parity p) { return p == Parity::Odd ? "odd" : "even"; }

enum class Family { Pure, Mixed, OrthogonalComplement, Average };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Pure: return "pure";
    case Family::Mixed: return "mixed";
    case Family::OrthogonalComplement: return "orthogonal-complement";
    case Family::Average: return "average";
  }
  return "unknown";
}

enum class Classification { Minimum, Saddle, Maximum, Degenerate };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::Minimum: return "minimum";
    case Classification::Saddle: return "saddle";
    case Classification::Maximum: return "maximum";
    case Classification::Degenerate: return "degenerate";
  }
  return "unknown";
}

/// Eigenpoint u_j = xi_j / sqrt(l) on a support S. Bit j of `support` marks
/// j in S; bit j of `signs` marks xi_j = -1. The orthogonal-complement family
/// is represented by a single entry with l = 0 and u_star = 0.
struct FixedPoint {
  std::uint32_t support = 0;
  std::uint32_t signs = 0;
  int ell = 0;
  Family family = Family::Pure;
  ReducedPoint u_star;
  Classification classification = Classification::Degenerate;
  double residual = 0.0;
  double min_curvature = std::numeric_limits<double>::quiet_NaN();
  double max_curvature = std::numeric_limits<double>::quiet_NaN();
};

/// All in-span eigenpoints of the orthogonal landscape: every nonempty support
/// with all-plus signs (odd) or every sign pattern modulo global sign (even),
/// followed by one orthogonal-complement representative.
inline std::vector<FixedPoint> enumerate_fixed_points(int k, int p_star, Parity parity) {
  if (k < 1) throw Error(ErrorCode::DimensionTooSmall, "k must be >= 1");
  if (k > kMaxEnumerationTargets) {
    throw Error(ErrorCode::TooManyTargets, "enumeration limited to k <= " + std::to_string(kMaxEnumerationTargets));
  }
  if (p_star < 1) throw Error(ErrorCode::ConfigError, "p_star must be >= 1");
  std::vector<FixedPoint> out;
  const std::uint32_t n_subsets = (std::uint32_t{1} << k);
  for (std::uint32_t S = 1; S < n_subsets; ++S) {
    const int ell = std::popcount(S);
    const double level = 1.0 / std::sqrt(static_cast<double>(ell));
    std::vector<int> members;
    for (int j = 0; j < k; ++j) {
      if (S & (std::uint32_t{1} << j)) members.push_back(j);
    }
    // The lowest member keeps sign + so that +-u are counted once.
    const std::uint32_t n_patterns = parity == Parity::Even ? (std::uint32_t{1} << (ell - 1)) : 1;
    for (std::uint32_t pattern = 0; pattern < n_patterns; ++pattern) {
      FixedPoint fp;
      fp.support = S;
      fp.ell = ell;
      fp.family = ell == 1 ? Family::Pure : Family::Mixed;
      fp.u_star = ReducedPoint::Zero(k);
      for (int m = 0; m < ell; ++m) {
        const bool negative = m > 0 && (pattern & (std::uint32_t{1} << (m - 1)));
        const int j = members[static_cast<std::size_t>(m)];
        if (negative) fp.signs |= (std::uint32_t{1} << j);
        fp.u_star(j) = negative ? -level : level;
      }
      out.push_back(std::move(fp));
    }
  }
  FixedPoint perp;
  perp.family = Family::OrthogonalComplement;
  perp.u_star = ReducedPoint::Zero(k);
  out.push_back(std::move(perp));
  return out;
}

/// Number of in-span points produced by enumerate_fixed_points.
inline std::uint64_t expected_in_span_count(int k, Parity parity) {
  std::uint64_t p = 1;
  if (parity == Parity::Odd) return (std::uint64_t{1} << k) - 1;
  for (int i = 0; i < k; ++i) p *= 3;
  return (p - 1) / 2;
}

/// ||(A - u u^T) grad L0(u)||.
inline double residual(const Frame& frame, const DualSeries& dual, const ReducedPoint& u) {
  return reduced_rhs(frame, dual, u).norm();
}

/// Minimum-norm w with V^T w = u; unit exactly when s2(u) = 1.
inline Vec lift(const Frame& frame, const ReducedPoint& u) { return frame.V() * frame.solve(u); }

/// d^2/dtheta^2 L(w cos(theta) + v sin(theta)) at theta = 0.
inline double curvature_at(const Frame& frame, const DualSeries& dual, const Vec& w_star, const Vec& v) {
  if (w_star.size() != frame.d() || v.size() != frame.d()) {
    throw Error(ErrorCode::DimensionMismatch, "w_star and v must live in R^d");
  }
  require_unit(w_star, "w_star");
  require_unit(v, "v");
  if (std::abs(w_star.dot(v)) > kTolUnitNorm) throw Error(ErrorCode::NotOrthogonal, "v is not tangent at w_star");
  const Vec u = frame.V().transpose() * w_star;
  const Vec t = frame.V().transpose() * v;
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    s += -dual_deriv2(dual, u(j)) * t(j) * t(j) + u(j) * dual_deriv(dual, u(j));
  }
  return s;
}

/// Orthonormal basis of the tangent space {v : v . w = 0}, as d x (d-1).
inline Mat tangent_basis(const Vec& w) {
  Eigen::HouseholderQR<Mat> qr(w);
  const Mat Q = qr.householderQ() * Mat::Identity(w.size(), w.size());
  return Q.rightCols(w.size() - 1);
}

/// Orthonormal basis of the tangent directions at w inside span V.
inline Mat in_span_tangent_basis(const Frame& frame, const Vec& w) {
  const Mat P = frame.V() - w * (w.transpose() * frame.V());
  Eigen::ColPivHouseholderQR<Mat> qr(P);
  qr.setThreshold(1e-10);
  const Eigen::Index r = qr.rank();
  const Mat Q = qr.householderQ() * Mat::Identity(P.rows(), r);
  return Q;
}

/// Riemannian Hessian of L at unit w restricted to the columns of an
/// orthonormal tangent basis B.
inline Mat tangent_hessian(const Frame& frame, const DualSeries& dual, const Vec& w, const Mat& B) {
  const Vec u = frame.V().transpose() * w;
  Vec curv(u.size());
  double radial = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    curv(j) = -dual_deriv2(dual, u(j));
    radial += u(j) * dual_deriv(dual, u(j));
  }
  const Mat T = frame.V().transpose() * B;
  Mat H = T.transpose() * curv.asDiagonal() * T;
  H.diagonal().array() += radial;
  return H;
}

struct CurvatureRange {
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
};

inline CurvatureRange curvature_range(const Frame& frame, const DualSeries& dual, const Vec& w, const Mat& B) {
  if (B.cols() == 0) return {};
  const Eigen::SelfAdjointEigenSolver<Mat> es(tangent_hessian(frame, dual, w, B), Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

inline Classification classify_range(const CurvatureRange& r, double tol = kTolCurv) {
  if (std::isnan(r.min)) return Classification::Degenerate;
  if (r.min > tol) return Classification::Minimum;
  if (r.max < -tol) return Classification::Maximum;
  if (r.min < -tol && r.max > tol) return Classification::Saddle;
  return Classification::Degenerate;
}

/// Unit vector orthogonal to span V (first column of a complement basis).
inline std::optional<Vec> complement_representative(const Frame& frame) {
  if (frame.d() <= frame.k()) return std::nullopt;
  Eigen::HouseholderQR<Mat> qr(frame.V());
  const Mat Q = qr.householderQ() * Mat::Identity(frame.d(), frame.d());
  return Vec(Q.col(frame.k()));
}

/// Fills residual, curvature range, and classification of each point for the
/// given frame and dual.
inline void classify_fixed_points(const Frame& frame, const DualSeries& dual, std::vector<FixedPoint>& points,
                                  double tol = kTolCurv) {
  for (auto& fp : points) {
    if (fp.u_star.size() != frame.k()) throw Error(ErrorCode::DimensionMismatch, "fixed point has wrong k");
    std::optional<Vec> w;
    if (fp.family == Family::OrthogonalComplement) {
      w = complement_representative(frame);
      fp.residual = 0.0;
      if (w) fp.residual = full_rhs(frame, dual, *w).norm();
    } else {
      fp.residual = residual(frame, dual, fp.u_star);
      Vec lifted = lift(frame, fp.u_star);
      if (std::abs(lifted.norm() - 1.0) <= 1e-9) w = lifted / lifted.norm();
    }
    if (!w) continue;
    const CurvatureRange r = curvature_range(frame, dual, *w, tangent_basis(*w));
    fp.min_curvature = r.min;
    fp.max_curvature = r.max;
    fp.classification = classify_range(r, tol);
  }
}

// ---------------------------------------------------------------------------
// Average point

inline double beta_c(int p_star, int k) {
  return static_cast<double>(p_star - 2) / static_cast<double>(k + p_star - 2);
}

inline double beta_min_upper(int P, int k) { return beta_c(P, k); }

/// -sum_p c_p k alpha^p with alpha^2 = (1 + (k-1) beta)/k.
inline double loss_at_average(int k, double beta, const DualSeries& dual) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::BetaOutOfRange, "beta must lie in [0, 1]");
  return -static_cast<double>(k) * dual_eval(dual, average_dot(k, beta));
}

enum class Verdict { StrictSaddle, LocalMinimum, LocalMaximum, Unresolved };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::StrictSaddle: return "strict-saddle";
    case Verdict::LocalMinimum: return "local-minimum";
    case Verdict::LocalMaximum: return "local-maximum";
    case Verdict::Unresolved: return "unresolved";
  }
  return "unknown";
}

enum class DirectionClass { InSpanWorst, InSpanBest, OrthogonalComplement };

inline const char* to_string(DirectionClass c) {
  switch (c) {
    case DirectionClass::InSpanWorst: return "in-span-worst";
    case DirectionClass::InSpanBest: return "in-span-best";
    case DirectionClass::OrthogonalComplement: return "orthogonal-complement";
  }
  return "unknown";
}

struct CurvatureReport {
  double beta = 0.0;
  int k = 0;
  std::vector<std::pair<DirectionClass, double>> second_derivs;
  Verdict verdict = Verdict::Unresolved;           // from the computed signs
  Verdict analytic = Verdict::Unresolved;          // from the degree thresholds
  double beta_c = 0.0;
  double beta_min_upper = 0.0;

  double value(DirectionClass c) const {
    for (const auto& [cls, v] : second_derivs) {
      if (cls == c) return v;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

inline Verdict verdict_from_signs(const std::vector<double>& values, double tol = kTolCurv) {
  bool neg = false, pos = false, zero = false;
  for (double v : values) {
    if (v < -tol) neg = true;
    else if (v > tol) pos = true;
    else zero = true;
  }
  if (neg && pos) return Verdict::StrictSaddle;
  if (zero) return Verdict::Unresolved;
  if (pos) return Verdict::LocalMinimum;
  return Verdict::LocalMaximum;
}

/// Second derivatives of L at the average point of an equiangular frame in
/// d = k + 1, along the extremal in-span tangent directions and the
/// orthogonal complement.
inline CurvatureReport classify_average(int k, double beta, const DualSeries& dual, double tol = kTolCurv) {
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorCode::BetaOutOfRange, "beta must lie in [0, 1)");
  const Frame frame = Frame::equiangular(k, k + 1, beta);
  const Vec w_bar = average_point(frame).w_bar;
  CurvatureReport rep;
  rep.beta = beta;
  rep.k = k;
  std::vector<double> values;
  if (k >= 2) {
    const CurvatureRange r = curvature_range(frame, dual, w_bar, in_span_tangent_basis(frame, w_bar));
    rep.second_derivs.emplace_back(DirectionClass::InSpanWorst, r.min);
    rep.second_derivs.emplace_back(DirectionClass::InSpanBest, r.max);
    values.push_back(r.min);
    values.push_back(r.max);
  }
  const Vec perp = *complement_representative(frame);
  const double c_perp = curvature_at(frame, dual, w_bar, perp);
  rep.second_derivs.emplace_back(DirectionClass::OrthogonalComplement, c_perp);
  values.push_back(c_perp);
  rep.verdict = verdict_from_signs(values, tol);

  rep.beta_c = beta_c(dual.p_star(), k);
  rep.beta_min_upper = beta_min_upper(dual.degree(), k);
  if (k >= 2 && dual.p_star() >= 2) {
    if (beta < rep.beta_c) rep.analytic = Verdict::StrictSaddle;
    else if (beta > rep.beta_min_upper) rep.analytic = Verdict::LocalMinimum;
  }
  return rep;
}

/// Bisects the sign change of the worst in-span curvature at the average
/// point over beta in [lo, hi]; requires a sign change on the bracket.
inline double bisect_average_threshold(int k, const DualSeries& dual, double lo = 0.0, double hi = 1.0 - 1e-9,
                                       double tol = 1e-12) {
  const auto f = [&](double b) { return classify_average(k, b, dual).value(DirectionClass::InSpanWorst); };
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo * fhi > 0.0) throw Error(ErrorCode::NoHit, "no curvature sign change on the bracket");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Tensor power iteration

struct PowerIterationResult {
  Vec w_final;
  int iterations = 0;
  bool converged = false;
  std::optional<FixedPoint> point;
};

/// Matches u against the in-span points, modulo global sign.
inline std::optional<FixedPoint> match_fixed_point(const std::vector<FixedPoint>& points, const ReducedPoint& u,
                                                   double tol = 1e-8) {
  for (const auto& fp : points) {
    if (fp.family == Family::OrthogonalComplement) continue;
    if ((fp.u_star - u).norm() < tol || (fp.u_star + u).norm() < tol) return fp;
  }
  return std::nullopt;
}

/// w <- normalize(sum_j (v_j . w)^{p*-1} v_j) on an orthonormal frame.
inline PowerIterationResult tensor_power_iteration(const Frame& frame, int p_star, const Vec& w0, int iters) {
  if (!frame.is_orthonormal()) throw Error(ErrorCode::NotOrthogonal, "power iteration requires an orthonormal frame");
  if (w0.size() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "w0 has wrong dimension");
  require_unit(w0, "w0");
  PowerIterationResult res;
  Vec w = w0;
  for (int it = 0; it < iters; ++it) {
    const Vec u = frame.V().transpose() * w;
    const Vec next_u = u.array().pow(p_star - 1).matrix();
    Vec next = frame.V() * next_u;
    const double norm = next.norm();
    if (!(norm > 1e-300)) throw Error(ErrorCode::ZeroContraction, "contraction vanished; w is orthogonal to span V");
    next /= norm;
    const double step = (next - w).norm();
    w = next;
    res.iterations = it + 1;
    if (step < 1e-12) {
      res.converged = true;
      break;
    }
  }
  res.w_final = w;
  if (res.converged) {
    const auto points = enumerate_fixed_points(frame.k(), p_star, parity_of(p_star));
    res.point = match_fixed_point(points, frame.V().transpose() * w);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSearchReport {
  std::size_t points_checked = 0;
  std::size_t extra_stationary = 0;      // residual below tol, outside every neighborhood
  double min_residual_outside = std::numeric_limits<double>::infinity();
};

/// Scans the reduced ball of an orthonormal frame on a Cartesian grid and the
/// unit sphere on an angular grid (k <= 3), flagging near-stationary points
/// away from the known points (modulo sign) and the origin.
inline GridSearchReport grid_search_stationary(const Frame& frame, const DualSeries& dual,
                                               const std::vector<FixedPoint>& known, double resolution = 0.01,
                                               double residual_tol = 1e-6, double neighborhood = 0.02) {
  const int k = frame.k();
  if (k > 3) throw Error(ErrorCode::TooManyTargets, "grid search limited to k <= 3");
  std::vector<ReducedPoint> anchors{ReducedPoint::Zero(k)};
  for (const auto& fp : known) {
    if (fp.family == Family::OrthogonalComplement) continue;
    anchors.push_back(fp.u_star);
    anchors.push_back(-fp.u_star);
  }
  GridSearchReport rep;
  const auto visit = [&](const ReducedPoint& u) {
    ++rep.points_checked;
    for (const auto& a : anchors) {
      if ((u - a).norm() < neighborhood) return;
    }
    const double r = residual(frame, dual, u);
    rep.min_residual_outside = std::min(rep.min_residual_outside, r);
    if (r < residual_tol) ++rep.extra_stationary;
  };

  const int n = static_cast<int>(std::lround(1.0 / resolution));
  ReducedPoint u(k);
  std::vector<int> idx(static_cast<std::size_t>(k), -n);
  while (true) {
    for (int j = 0; j < k; ++j) u(j) = idx[static_cast<std::size_t>(j)] * resolution;
    if (u.squaredNorm() <= 1.0 + 1e-12) visit(u);
    int j = 0;
    while (j < k && ++idx[static_cast<std::size_t>(j)] > n) idx[static_cast<std::size_t>(j++)] = -n;
    if (j == k) break;
  }

  const double pi = std::numbers::pi;
  if (k == 1) {
    visit(ReducedPoint::Constant(1, 1.0));
    visit(ReducedPoint::Constant(1, -1.0));
  } else if (k == 2) {
    for (double th = 0.0; th < 2.0 * pi; th += resolution) visit(Eigen::Vector2d(std::cos(th), std::sin(th)));
  } else {
    for (double th = 0.0; th <= pi + 1e-12; th += resolution) {
      for (double ph = 0.0; ph < 2.0 * pi; ph += resolution) {
        visit(Eigen::Vector3d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
      }
    }
  }
  return rep;
}

}  // namespace multiflow
