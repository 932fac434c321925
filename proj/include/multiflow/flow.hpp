#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "multiflow/error.hpp"
#include "multiflow/frames.hpp"
#include "multiflow/hermite.hpp"

namespace multiflow {

enum class Integrator { ProjectedEuler, Rk4 };

inline const char* to_string(Integrator i) {
  return i == Integrator::ProjectedEuler ? "projected-euler" : "rk4";
}

/// Fixed-step integration settings. Time advances by eta per step.
struct FlowConfig {
  double eta = 1e-3;
  Integrator integrator = Integrator::Rk4;
  double t_max = 1e6;
  double stop_grad_tol = 1e-9;
  double stop_align_threshold = 0.5;  // hitting level for ||u||_2
  std::size_t record_stride = 100;
  bool stop_at_hit = false;

  void validate() const {
    if (!(eta > 0.0)) throw Error(ErrorCode::ConfigError, "eta must be > 0");
    if (!(t_max > 0.0)) throw Error(ErrorCode::ConfigError, "t_max must be > 0");
    if (!(stop_align_threshold > 0.0 && stop_align_threshold <= 1.0)) {
      throw Error(ErrorCode::ConfigError, "stop_align_threshold must lie in (0, 1]");
    }
    if (record_stride == 0) throw Error(ErrorCode::ConfigError, "record_stride must be >= 1");
  }
};

enum class StopReason { TimeLimit, Stationary, Hit };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::TimeLimit: return "time-limit";
    case StopReason::Stationary: return "stationary";
    case StopReason::Hit: return "hit";
  }
  return "unknown";
}

struct TrajectoryRecord {
  int leader = 0;  // argmax_j u_j(0); deltas are u_leader - u_j
  std::vector<double> times;
  std::vector<ReducedPoint> u_path;
  std::vector<double> loss_path;
  std::vector<double> s2_path;
  std::vector<Vec> delta_path;  // k-1 entries, j != leader in increasing order
  std::optional<double> hit_time;

  ReducedPoint final_u;
  std::optional<Vec> final_w;  // full-space runs only
  double final_time = 0.0;
  double final_rhs_norm = 0.0;
  StopReason stop = StopReason::TimeLimit;
};

// ---------------------------------------------------------------------------
// Loss and right-hand sides

/// L0(u) = -sum_j g(u_j) (loss constant fixed to zero).
inline double loss_L0(const DualSeries& dual, const ReducedPoint& u) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) s += dual_eval(dual, u(j));
  return -s;
}

/// grad L0(u) = -sum_p c_p p u^{p-1}, entrywise.
inline Vec grad_L0(const DualSeries& dual, const ReducedPoint& u) {
  Vec g(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) g(j) = -dual_deriv(dual, u(j));
  return g;
}

/// du/dt = -(A - u u^T) grad L0(u).
inline Vec reduced_rhs(const Frame& frame, const DualSeries& dual, const ReducedPoint& u) {
  const Vec minus_grad = -grad_L0(dual, u);
  return frame.gram() * minus_grad - u * u.dot(minus_grad);
}

namespace detail {

// Spherical flow field without the unit-norm check, for RK stages off the sphere.
inline Vec full_rhs_unchecked(const Frame& frame, const DualSeries& dual, const Vec& w) {
  const Vec u = frame.V().transpose() * w;
  const Vec pull = frame.V() * (-grad_L0(dual, u));  // -grad L(w)
  return pull - w * w.dot(pull);
}

}  // namespace detail

/// dw/dt = -(I - w w^T) grad L(w) with grad L(w) = V grad L0(V^T w).
inline Vec full_rhs(const Frame& frame, const DualSeries& dual, const Vec& w) {
  if (w.size() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "w has wrong dimension");
  require_unit(w);
  return detail::full_rhs_unchecked(frame, dual, w);
}

// ---------------------------------------------------------------------------
// Integration

namespace detail {

inline int argmax(const Vec& u) {
  Eigen::Index j = 0;
  u.maxCoeff(&j);
  return static_cast<int>(j);
}

inline Vec deltas(const ReducedPoint& u, int leader) {
  Vec d(std::max<Eigen::Index>(u.size() - 1, 0));
  Eigen::Index n = 0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (j != leader) d(n++) = u(leader) - u(j);
  }
  return d;
}

inline void check_finite(const Vec& x, double t) {
  if (!x.allFinite()) {
    throw Error(ErrorCode::NonFiniteState, "state became non-finite at t = " + std::to_string(t) +
                                               " (step size too large?)");
  }
}

// Round-off can push s2 slightly past the boundary, which is invariant for the
// exact flow; small excursions are pulled back onto it.
inline void clamp_to_domain(const Frame& frame, ReducedPoint& u, double t) {
  const double s2 = ellipsoid_s2(frame, u);
  if (s2 <= 1.0) return;
  if (s2 <= 1.0 + 1e-8) {
    u /= std::sqrt(s2);
    return;
  }
  throw Error(ErrorCode::DomainExit, "s2 = " + std::to_string(s2) + " left the domain at t = " + std::to_string(t));
}

class Recorder {
 public:
  Recorder(const Frame& frame, const DualSeries& dual, const FlowConfig& cfg, const ReducedPoint& u0)
      : frame_(frame), dual_(dual), cfg_(cfg) {
    rec_.leader = argmax(u0);
    prev_norm_ = u0.norm();
    if (prev_norm_ >= cfg.stop_align_threshold) rec_.hit_time = 0.0;
  }

  void record(double t, const ReducedPoint& u) {
    rec_.times.push_back(t);
    rec_.u_path.push_back(u);
    rec_.loss_path.push_back(loss_L0(dual_, u));
    rec_.s2_path.push_back(ellipsoid_s2(frame_, u));
    rec_.delta_path.push_back(deltas(u, rec_.leader));
  }

  // Returns true on the step where ||u|| first crosses the threshold.
  bool observe_step(double t_prev, double t, const ReducedPoint& u) {
    const double norm = u.norm();
    bool crossed = false;
    if (!rec_.hit_time && norm >= cfg_.stop_align_threshold) {
      const double frac = (cfg_.stop_align_threshold - prev_norm_) / (norm - prev_norm_);
      rec_.hit_time = t_prev + frac * (t - t_prev);
      crossed = true;
    }
    prev_norm_ = norm;
    return crossed;
  }

  TrajectoryRecord& result() { return rec_; }

 private:
  const Frame& frame_;
  const DualSeries& dual_;
  const FlowConfig& cfg_;
  TrajectoryRecord rec_;
  double prev_norm_ = 0.0;
};

// Shared stepping loop. `step(t)` advances the state by one step and returns the
// new reduced point; `rhs_norm()` is the norm of the field at the current state.
template <typename Step, typename RhsNorm, typename Current>
TrajectoryRecord run_loop(const Frame& frame, const DualSeries& dual, const FlowConfig& cfg,
                          const ReducedPoint& u0, Step&& step, RhsNorm&& rhs_norm, Current&& current) {
  cfg.validate();
  Recorder rec(frame, dual, cfg, u0);
  rec.record(0.0, u0);
  const auto n_steps = static_cast<std::size_t>(std::ceil(cfg.t_max / cfg.eta - 1e-9));
  StopReason reason = StopReason::TimeLimit;
  double t = 0.0;
  std::size_t n = 0;
  bool last_recorded = true;
  double norm = rhs_norm();
  if (norm < cfg.stop_grad_tol) reason = StopReason::Stationary;
  if (cfg.stop_at_hit && rec.result().hit_time) reason = StopReason::Hit;
  while (reason == StopReason::TimeLimit && n < n_steps) {
    const double t_prev = t;
    const ReducedPoint u = step(t_prev);
    ++n;
    t = static_cast<double>(n) * cfg.eta;
    last_recorded = false;
    if (n % cfg.record_stride == 0) {
      rec.record(t, u);
      last_recorded = true;
    }
    if (rec.observe_step(t_prev, t, u) && cfg.stop_at_hit) reason = StopReason::Hit;
    norm = rhs_norm();
    if (norm < cfg.stop_grad_tol) reason = StopReason::Stationary;
  }
  const ReducedPoint u_final = current();
  if (!last_recorded) rec.record(t, u_final);
  TrajectoryRecord out = std::move(rec.result());
  out.final_u = u_final;
  out.final_time = t;
  out.final_rhs_norm = norm;
  out.stop = reason;
  return out;
}

}  // namespace detail

/// Integrates the reduced ODE in u-space.
///
/// Projected Euler is the exact image of the full-space step
/// w <- (w + eta r)/||w + eta r||, using ||w + eta r||^2 = 1 + eta^2 g'^T (A - u u^T) g'.
inline TrajectoryRecord integrate_reduced(const Frame& frame, const DualSeries& dual, const ReducedPoint& u0,
                                          const FlowConfig& cfg) {
  if (u0.size() != frame.k()) throw Error(ErrorCode::DimensionMismatch, "u0 has wrong dimension");
  if (!in_domain(frame, u0)) throw Error(ErrorCode::DomainExit, "initial point outside the domain");
  ReducedPoint u = u0;
  Vec f = reduced_rhs(frame, dual, u);
  const double h = cfg.eta;
  auto step = [&](double t) -> ReducedPoint {
    if (cfg.integrator == Integrator::ProjectedEuler) {
      const Vec minus_grad = -grad_L0(dual, u);
      const double tangent_norm2 = std::max(0.0, minus_grad.dot(f));
      u = (u + h * f) / std::sqrt(1.0 + h * h * tangent_norm2);
    } else {
      const Vec k1 = f;
      const Vec k2 = reduced_rhs(frame, dual, u + 0.5 * h * k1);
      const Vec k3 = reduced_rhs(frame, dual, u + 0.5 * h * k2);
      const Vec k4 = reduced_rhs(frame, dual, u + h * k3);
      u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    detail::check_finite(u, t + h);
    detail::clamp_to_domain(frame, u, t + h);
    f = reduced_rhs(frame, dual, u);
    return u;
  };
  return detail::run_loop(
      frame, dual, cfg, u0, step, [&] { return f.norm(); }, [&] { return u; });
}

/// Integrates the full spherical flow in R^d; both integrators renormalize w
/// after each step. Monitors are recorded in u = V^T w.
inline TrajectoryRecord integrate_full(const Frame& frame, const DualSeries& dual, const Vec& w0,
                                       const FlowConfig& cfg) {
  if (w0.size() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "w0 has wrong dimension");
  require_unit(w0, "w0");
  Vec w = w0;
  Vec f = detail::full_rhs_unchecked(frame, dual, w);
  const double h = cfg.eta;
  auto step = [&](double t) -> ReducedPoint {
    if (cfg.integrator == Integrator::ProjectedEuler) {
      w += h * f;
    } else {
      const Vec k1 = f;
      const Vec k2 = detail::full_rhs_unchecked(frame, dual, w + 0.5 * h * k1);
      const Vec k3 = detail::full_rhs_unchecked(frame, dual, w + 0.5 * h * k2);
      const Vec k4 = detail::full_rhs_unchecked(frame, dual, w + h * k3);
      w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    detail::check_finite(w, t + h);
    w.normalize();
    f = detail::full_rhs_unchecked(frame, dual, w);
    return frame.V().transpose() * w;
  };
  TrajectoryRecord rec = detail::run_loop(
      frame, dual, cfg, frame.V().transpose() * w0, step, [&] { return f.norm(); },
      [&]() -> ReducedPoint { return frame.V().transpose() * w; });
  rec.final_w = w;
  return rec;
}

// ---------------------------------------------------------------------------
// Multi-neuron dynamics

enum class LossKind { Correlation, Mse };

inline const char* to_string(LossKind k) { return k == LossKind::Correlation ? "correlation" : "mse"; }

/// Student neurons as unit columns of a d x n matrix.
struct MultiNeuronState {
  Mat W;
  LossKind loss_kind = LossKind::Correlation;
};

/// Dual activations entering the population MSE of sum_i sigma(w_i.x)
/// against sum_j sigma*(v_j.x).
struct MseModel {
  DualSeries student_student;  // c_p = a_p^2
  DualSeries student_teacher;  // c_p = a_p b_p
  DualSeries teacher_teacher;  // c_p = b_p^2

  MseModel(const HermiteSeries& a, const HermiteSeries& b)
      : student_student(DualSeries::from_pair(a, a)),
        student_teacher(DualSeries::from_pair(a, b)),
        teacher_teacher(DualSeries::from_pair(b, b)) {}
};

inline void require_unit_columns(const Mat& W) {
  for (Eigen::Index i = 0; i < W.cols(); ++i) {
    if (std::abs(W.col(i).norm() - 1.0) > kTolUnitNorm) {
      throw Error(ErrorCode::NotUnitNorm, "neuron " + std::to_string(i + 1) + " is not unit norm");
    }
  }
}

namespace detail {

inline Mat correlation_rhs_unchecked(const Frame& frame, const DualSeries& dual, const Mat& W) {
  Mat out(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.cols(); ++i) out.col(i) = full_rhs_unchecked(frame, dual, W.col(i));
  return out;
}

inline Mat mse_rhs_unchecked(const Frame& frame, const MseModel& m, const Mat& W) {
  const Mat G = W.transpose() * W;                // student overlaps
  const Mat U = W.transpose() * frame.V();        // n x k student-teacher overlaps
  Mat out(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.cols(); ++i) {
    Vec grad = Vec::Zero(W.rows());
    for (Eigen::Index ip = 0; ip < W.cols(); ++ip) {
      if (ip == i) continue;  // self term is radial, removed by the projection
      grad += dual_deriv(m.student_student, G(i, ip)) * W.col(ip);
    }
    for (Eigen::Index j = 0; j < frame.V().cols(); ++j) {
      grad -= dual_deriv(m.student_teacher, U(i, j)) * frame.V().col(j);
    }
    const Vec w = W.col(i);
    out.col(i) = -(grad - w * w.dot(grad));
  }
  return out;
}

}  // namespace detail

/// Spherical gradient flow field of the population MSE, one column per neuron.
inline Mat mse_rhs(const Frame& frame, const MseModel& model, const Mat& W) {
  if (W.rows() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "W has wrong dimension");
  require_unit_columns(W);
  return detail::mse_rhs_unchecked(frame, model, W);
}

inline Mat mse_rhs(const Frame& frame, const HermiteSeries& a, const HermiteSeries& b, const Mat& W) {
  return mse_rhs(frame, MseModel(a, b), W);
}

/// n decoupled copies of the single-neuron correlation flow.
inline Mat correlation_rhs(const Frame& frame, const DualSeries& dual, const Mat& W) {
  if (W.rows() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "W has wrong dimension");
  require_unit_columns(W);
  return detail::correlation_rhs_unchecked(frame, dual, W);
}

/// 1/2 E[(f - f*)^2] through the dual activations; the Hermite constant terms
/// are excluded.
inline double mse_loss(const Frame& frame, const MseModel& m, const Mat& W) {
  const Mat G = W.transpose() * W;
  const Mat U = W.transpose() * frame.V();
  double s = 0.0;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    for (Eigen::Index ip = 0; ip < G.cols(); ++ip) s += 0.5 * dual_eval(m.student_student, G(i, ip));
  }
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    for (Eigen::Index j = 0; j < U.cols(); ++j) s -= dual_eval(m.student_teacher, U(i, j));
  }
  const Mat& A = frame.gram();
  for (Eigen::Index j = 0; j < A.rows(); ++j) {
    for (Eigen::Index jp = 0; jp < A.cols(); ++jp) s += 0.5 * dual_eval(m.teacher_teacher, A(j, jp));
  }
  return s;
}

/// -sum_{i,j} g(w_i . v_j).
inline double correlation_loss(const Frame& frame, const DualSeries& dual, const Mat& W) {
  const Mat U = W.transpose() * frame.V();
  double s = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) s += loss_L0(dual, U.row(i).transpose());
  return s;
}

struct MultiTrajectory {
  LossKind loss_kind = LossKind::Correlation;
  std::vector<double> times;
  std::vector<double> loss_path;
  std::vector<Mat> u_path;  // n x k overlaps W^T V per record
  Mat final_W;
  double final_time = 0.0;
  double final_rhs_norm = 0.0;
  StopReason stop = StopReason::TimeLimit;
};

/// Integrates n neurons under the chosen loss; columns are renormalized after
/// every step.
inline MultiTrajectory integrate_multi(const Frame& frame, const MseModel& model, const Mat& W0, LossKind kind,
                                       const FlowConfig& cfg) {
  cfg.validate();
  if (W0.rows() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "W0 has wrong dimension");
  require_unit_columns(W0);
  const auto field = [&](const Mat& W) -> Mat {
    return kind == LossKind::Mse ? detail::mse_rhs_unchecked(frame, model, W)
                                 : detail::correlation_rhs_unchecked(frame, model.student_teacher, W);
  };
  const auto loss = [&](const Mat& W) {
    return kind == LossKind::Mse ? mse_loss(frame, model, W) : correlation_loss(frame, model.student_teacher, W);
  };
  MultiTrajectory out;
  out.loss_kind = kind;
  Mat W = W0;
  auto record = [&](double t) {
    out.times.push_back(t);
    out.loss_path.push_back(loss(W));
    out.u_path.push_back(W.transpose() * frame.V());
  };
  record(0.0);
  Mat F = field(W);
  const double h = cfg.eta;
  const auto n_steps = static_cast<std::size_t>(std::ceil(cfg.t_max / cfg.eta - 1e-9));
  std::size_t n = 0;
  double t = 0.0;
  bool last_recorded = true;
  double norm = F.norm();
  StopReason reason = norm < cfg.stop_grad_tol ? StopReason::Stationary : StopReason::TimeLimit;
  while (reason == StopReason::TimeLimit && n < n_steps) {
    if (cfg.integrator == Integrator::ProjectedEuler) {
      W += h * F;
    } else {
      const Mat k1 = F;
      const Mat k2 = field(W + 0.5 * h * k1);
      const Mat k3 = field(W + 0.5 * h * k2);
      const Mat k4 = field(W + h * k3);
      W += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    ++n;
    t = static_cast<double>(n) * h;
    if (!W.allFinite()) throw Error(ErrorCode::NonFiniteState, "neurons became non-finite at t = " + std::to_string(t));
    W.colwise().normalize();
    F = field(W);
    norm = F.norm();
    last_recorded = false;
    if (n % cfg.record_stride == 0) {
      record(t);
      last_recorded = true;
    }
    if (norm < cfg.stop_grad_tol) reason = StopReason::Stationary;
  }
  if (!last_recorded) record(t);
  out.final_W = W;
  out.final_time = t;
  out.final_rhs_norm = norm;
  out.stop = reason;
  return out;
}

}  // namespace multiflow
