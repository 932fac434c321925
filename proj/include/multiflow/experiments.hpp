#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "multiflow/config.hpp"
#include "multiflow/csv.hpp"
#include "multiflow/error.hpp"
#include "multiflow/flow.hpp"
#include "multiflow/frames.hpp"
#include "multiflow/hermite.hpp"
#include "multiflow/landscape.hpp"
#include "multiflow/parallel.hpp"
#include "multiflow/rng.hpp"
#include "multiflow/stats.hpp"

namespace multiflow {

// ---------------------------------------------------------------------------
// Shared setup

struct Model {
  HermiteSeries student;
  HermiteSeries teacher;
  DualSeries dual;
};

inline Model build_model(const ExperimentConfig& cfg) {
  Model m;
  m.teacher = series_of(parse_activation(cfg.teacher), cfg.max_degree);
  m.student = series_of(parse_activation(cfg.student_spec()), cfg.max_degree);
  m.dual = DualSeries::from_pair(m.student, m.teacher);
  if (m.dual.is_zero()) throw Error(ErrorCode::AllCoefficientsZero, "student and teacher share no Hermite degree");
  return m;
}

/// Number of index vectors named by the frame text, independent of d.
inline int frame_k(const ExperimentConfig& cfg) {
  const auto open = cfg.frame.find('(');
  const std::string head = cfg.frame.substr(0, open);
  if (head == "explicit") return parse_frame(cfg.frame, cfg.d).k();
  if (open == std::string::npos) throw Error(ErrorCode::ParseError, "frame '" + cfg.frame + "' lacks arguments");
  const std::string args = cfg.frame.substr(open + 1);
  try {
    return std::stoi(args);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "frame '" + cfg.frame + "' has no k");
  }
}

/// Unit w in R^d with V^T w = u; the part outside span V points along a
/// random direction of the complement.
inline Vec embed(const Frame& frame, const ReducedPoint& u, Rng& rng) {
  if (!in_domain(frame, u)) throw Error(ErrorCode::DomainExit, "reduced point outside the domain");
  Vec w = frame.V() * frame.solve(u);
  const double rem = 1.0 - w.squaredNorm();
  if (rem > 0.0 && frame.d() > frame.k()) {
    Vec g = sample_sphere(frame.d(), rng);
    g -= frame.V() * frame.solve(frame.V().transpose() * g);
    w += std::sqrt(rem) * g.normalized();
  }
  return w.normalized();
}

struct InitDraw {
  Vec w0;
  ReducedPoint u0;
};

/// Initial student for the single-neuron drivers.
inline InitDraw draw_init(const ExperimentConfig& cfg, const Frame& frame, const DualSeries& dual, Rng& rng) {
  const std::string mode = cfg.resolved_init();
  InitDraw out;
  if (mode == "deterministic") {
    out.u0 = ReducedPoint::Constant(frame.k(), 1.0 / std::sqrt(static_cast<double>(frame.d())));
    out.w0 = embed(frame, out.u0, rng);
  } else if (mode == "tie") {
    if (cfg.tie_ell > frame.k()) throw Error(ErrorCode::ConfigError, "tie_ell exceeds k");
    ReducedPoint u = frame.V().transpose() * sample_sphere(frame.d(), rng);
    if (!dual.is_even()) u = u.cwiseAbs();
    std::vector<int> order(static_cast<std::size_t>(frame.k()));
    for (int j = 0; j < frame.k(); ++j) order[static_cast<std::size_t>(j)] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(u(a)) > std::abs(u(b)); });
    const double top = std::abs(u(order[0]));
    for (int m = 0; m < cfg.tie_ell; ++m) {
      const int j = order[static_cast<std::size_t>(m)];
      u(j) = u(j) < 0.0 ? -top : top;
    }
    out.u0 = u;
    out.w0 = embed(frame, u, rng);
  } else {
    out.w0 = sample_init(frame, rng, parse_init_mode(mode));
    out.u0 = frame.V().transpose() * out.w0;
  }
  return out;
}

inline TrajectoryRecord run_single(const Frame& frame, const DualSeries& dual, const InitDraw& init,
                                   const FlowConfig& flow) {
  if (flow.integrator == Integrator::Rk4) return integrate_reduced(frame, dual, init.u0, flow);
  return integrate_full(frame, dual, init.w0, flow);
}

struct ExperimentOutput {
  std::vector<Table> tables;
  std::vector<std::pair<std::string, std::string>> summary;
  std::optional<Error> failure;  // numerical failure detected after all rows were produced
};

// ---------------------------------------------------------------------------
// Trajectory table

inline Table trajectory_table(const std::string& name, const TrajectoryRecord& rec) {
  Table t;
  t.name = name;
  const Eigen::Index k = rec.u_path.empty() ? 0 : rec.u_path.front().size();
  t.columns.push_back("t");
  for (Eigen::Index j = 0; j < k; ++j) t.columns.push_back("u_" + std::to_string(j + 1));
  t.columns.push_back("loss");
  t.columns.push_back("s2");
  for (Eigen::Index j = 0; j < k; ++j) {
    if (j != rec.leader) t.columns.push_back("delta_" + std::to_string(j + 1));
  }
  t.notes.emplace_back("leader", std::to_string(rec.leader + 1));
  for (std::size_t r = 0; r < rec.times.size(); ++r) {
    std::vector<std::string> row{fmt(rec.times[r])};
    for (Eigen::Index j = 0; j < k; ++j) row.push_back(fmt(rec.u_path[r](j)));
    row.push_back(fmt(rec.loss_path[r]));
    row.push_back(fmt(rec.s2_path[r]));
    for (Eigen::Index j = 0; j < rec.delta_path[r].size(); ++j) row.push_back(fmt(rec.delta_path[r](j)));
    t.add_row(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Time sweep

struct TimeSweepRow {
  int d = 0;
  int replicate = 0;
  std::uint64_t seed = 0;
  std::optional<double> hit_time;
};

struct TimeSweepResult {
  int p_star = 0;
  std::vector<TimeSweepRow> rows;
  FitTransform transform = FitTransform::LogLog;
  std::optional<FitResult> fit;
  std::vector<int> ratio_d;
  std::vector<double> ratio;  // mean T / ln d per d
  double ratio_spread = 0.0;
  std::vector<std::string> warnings;
};

/// Hitting time of ||u|| >= stop_align_threshold across the d-grid; fits
/// log T on log d, or T on log d when p* = 2.
inline TimeSweepResult run_time_sweep(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  TimeSweepResult res;
  res.p_star = model.dual.p_star();
  res.transform = res.p_star == 2 ? FitTransform::LogX : FitTransform::LogLog;
  const std::size_t reps = static_cast<std::size_t>(cfg.replicas);
  res.rows.resize(cfg.d_grid.size() * reps);
  FlowConfig flow = cfg.flow;
  flow.stop_at_hit = true;
  parallel_for(res.rows.size(), [&](std::size_t i) {
    TimeSweepRow& row = res.rows[i];
    row.d = cfg.d_grid[i / reps];
    row.replicate = static_cast<int>(i % reps);
    row.seed = derive_seed(cfg.seed, i);
    Rng rng(row.seed);
    const Frame frame = parse_frame(cfg.frame, row.d);
    const InitDraw init = draw_init(cfg, frame, model.dual, rng);
    row.hit_time = run_single(frame, model.dual, init, flow).hit_time;
  });
  std::vector<double> xs, ys;
  for (const auto& row : res.rows) {
    if (!row.hit_time) {
      res.warnings.push_back("NoHit at d=" + std::to_string(row.d) + " replicate " + std::to_string(row.replicate));
      continue;
    }
    xs.push_back(row.d);
    ys.push_back(*row.hit_time);
  }
  if (xs.size() >= 3) res.fit = fit_slope(xs, ys, res.transform);
  else res.warnings.push_back("fewer than 3 hits; no fit");
  for (int d : cfg.d_grid) {
    double s = 0.0;
    int m = 0;
    for (const auto& row : res.rows) {
      if (row.d == d && row.hit_time) {
        s += *row.hit_time;
        ++m;
      }
    }
    if (m == 0) continue;
    res.ratio_d.push_back(d);
    res.ratio.push_back(s / m / std::log(static_cast<double>(d)));
  }
  res.ratio_spread = relative_spread(res.ratio);
  return res;
}

// ---------------------------------------------------------------------------
// Convergence suite

struct ConvergenceRow {
  int replicate = 0;
  std::uint64_t seed = 0;
  int leader = 0;
  int ell = 1;
  std::uint32_t signs = 0;  // bit j: u_j(0) < 0, tracked for even duals
  bool leader_preserved = true;
  double min_delta = 0.0;
  double terminal_norm = 0.0;
  double terminal_error = 0.0;  // sup distance to the predicted limit
  bool converged = false;
  StopReason stop = StopReason::TimeLimit;
  double final_time = 0.0;
  ReducedPoint u0;
  ReducedPoint u_final;
};

struct ConvergenceResult {
  int k = 0;
  std::vector<ConvergenceRow> rows;
  std::optional<TrajectoryRecord> first;
};

/// Summarizes a trajectory against the limit predicted from its start: with
/// signs xi = sgn(u(0)) for even duals (all +1 otherwise) and the l coordinates
/// tied at the top of xi * u(0), the limit is xi_j / sqrt(l) on the tie and 0 elsewhere.
inline ConvergenceRow summarize_convergence(const TrajectoryRecord& rec, bool even, double tol_conv) {
  ConvergenceRow row;
  const ReducedPoint& u0 = rec.u_path.front();
  const Eigen::Index k = u0.size();
  Vec xi = Vec::Ones(k);
  if (even) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (u0(j) < 0.0) {
        xi(j) = -1.0;
        row.signs |= (std::uint32_t{1} << j);
      }
    }
  }
  const Vec b0 = xi.cwiseProduct(u0);
  Eigen::Index leader = 0;
  const double top = b0.maxCoeff(&leader);
  row.leader = static_cast<int>(leader);
  row.ell = static_cast<int>((b0.array() >= top - 1e-12).count());
  row.min_delta = std::numeric_limits<double>::infinity();
  for (const auto& u : rec.u_path) {
    const Vec b = xi.cwiseProduct(u);
    Eigen::Index arg = 0;
    b.maxCoeff(&arg);
    if (arg != leader) row.leader_preserved = false;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j != leader) row.min_delta = std::min(row.min_delta, b(leader) - b(j));
    }
  }
  if (k == 1) row.min_delta = 0.0;
  const Vec bT = xi.cwiseProduct(rec.final_u);
  Vec target = Vec::Zero(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (b0(j) >= top - 1e-12) target(j) = 1.0 / std::sqrt(static_cast<double>(row.ell));
  }
  row.terminal_error = (bT - target).cwiseAbs().maxCoeff();
  row.converged = row.terminal_error <= tol_conv;
  row.terminal_norm = rec.final_u.norm();
  row.stop = rec.stop;
  row.final_time = rec.final_time;
  row.u0 = u0;
  row.u_final = rec.final_u;
  return row;
}

inline ConvergenceResult run_convergence_suite(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const Frame frame = parse_frame(cfg.frame, cfg.d);
  ConvergenceResult res;
  res.k = frame.k();
  res.rows.resize(static_cast<std::size_t>(cfg.replicas));
  std::vector<std::optional<TrajectoryRecord>> firsts(res.rows.size());
  const bool even = model.dual.is_even();
  parallel_for(res.rows.size(), [&](std::size_t r) {
    const std::uint64_t seed = derive_seed(cfg.seed, r);
    Rng rng(seed);
    const InitDraw init = draw_init(cfg, frame, model.dual, rng);
    TrajectoryRecord rec = run_single(frame, model.dual, init, cfg.flow);
    ConvergenceRow row = summarize_convergence(rec, even, cfg.tol_conv);
    row.replicate = static_cast<int>(r);
    row.seed = seed;
    res.rows[r] = std::move(row);
    if (r == 0 && cfg.trajectories) firsts[0] = std::move(rec);
  });
  res.first = std::move(firsts[0]);
  return res;
}

// ---------------------------------------------------------------------------
// Coupon collector

struct CouponResult {
  int k = 0;
  int n = 0;
  int d = 0;
  int replicas = 0;
  std::vector<int> collected;  // per replicate, number of collected targets
  std::size_t failures = 0;
  double failure_rate = 0.0;
  Interval ci;
  double bound_union = 0.0;  // k (1 - 1/k)^n
  double bound_exp = 0.0;    // k exp(-n/k)
  double bound_lower = 0.0;  // (1 - 1/k)^n
  double miss_rate = 0.0;    // uncollected targets over k * replicas
  std::vector<double> index_freq;  // pooled over neurons and replicates
  double index_se = 0.0;
  double index_max_z = 0.0;
  std::vector<std::vector<std::uint32_t>> pair_counts;  // n x k over replicates
  double pair_se = 0.0;
  double pair_max_z = 0.0;
  std::size_t pairs_outside_3se = 0;
  int spot_pairs = 0;
  int spot_ok = 0;
  double spot_min_dot = 1.0;
};

/// Collection depends on the k projected coordinates of each neuron, which are
/// iid N(0,1) before normalization for an orthonormal frame; the remaining
/// d - k coordinates enter only through a chi-squared norm term.
inline CouponResult run_coupon(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const Frame frame = parse_frame(cfg.frame, cfg.d);
  if (!frame.is_orthonormal()) throw Error(ErrorCode::NotOrthogonal, "collect requires an orthonormal frame");
  const std::string mode = cfg.resolved_init();
  if (mode != "sign-flipped" && mode != "raw") throw Error(ErrorCode::ConfigError, "collect supports init raw or sign-flipped");
  const bool flip = mode == "sign-flipped";
  CouponResult res;
  res.k = frame.k();
  res.n = cfg.resolved_n(res.k);
  res.d = frame.d();
  res.replicas = cfg.replicas;
  const int k = res.k, n = res.n;
  const std::size_t R = static_cast<std::size_t>(cfg.replicas);
  std::vector<std::vector<int>> argmaxes(R);
  std::vector<Mat> inits(R);
  parallel_for(R, [&](std::size_t r) {
    Rng rng = make_rng(cfg.seed, r);
    std::normal_distribution<double> normal;
    std::optional<std::chi_squared_distribution<double>> chi;
    if (res.d > k) chi.emplace(static_cast<double>(res.d - k));
    Mat U(k, n);
    std::vector<int> am(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Vec g(k);
      for (int j = 0; j < k; ++j) g(j) = normal(rng);
      const double rest = chi ? (*chi)(rng) : 0.0;
      Vec u = g / std::sqrt(g.squaredNorm() + rest);
      if (flip) u = u.cwiseAbs();
      Eigen::Index j = 0;
      u.maxCoeff(&j);
      am[static_cast<std::size_t>(i)] = static_cast<int>(j);
      U.col(i) = u;
    }
    argmaxes[r] = std::move(am);
    if (cfg.spot_check && r < static_cast<std::size_t>(cfg.spot_check_replicas)) inits[r] = std::move(U);
  });

  std::vector<std::uint64_t> index_counts(static_cast<std::size_t>(k), 0);
  res.pair_counts.assign(static_cast<std::size_t>(n), std::vector<std::uint32_t>(static_cast<std::size_t>(k), 0));
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<bool> hit(static_cast<std::size_t>(k), false);
    for (int i = 0; i < n; ++i) {
      const int j = argmaxes[r][static_cast<std::size_t>(i)];
      hit[static_cast<std::size_t>(j)] = true;
      ++index_counts[static_cast<std::size_t>(j)];
      ++res.pair_counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    const int c = static_cast<int>(std::count(hit.begin(), hit.end(), true));
    res.collected.push_back(c);
    if (c < k) ++res.failures;
  }
  res.failure_rate = static_cast<double>(res.failures) / static_cast<double>(R);
  std::uint64_t missed = 0;
  for (int c : res.collected) missed += static_cast<std::uint64_t>(k - c);
  res.miss_rate = static_cast<double>(missed) / (static_cast<double>(k) * static_cast<double>(R));
  res.ci = wilson_interval(res.failures, R);
  const double q = 1.0 - 1.0 / k;
  res.bound_lower = std::pow(q, n);
  res.bound_union = k * res.bound_lower;
  res.bound_exp = k * std::exp(-static_cast<double>(n) / k);

  const double p = 1.0 / k;
  const double pooled = static_cast<double>(n) * static_cast<double>(R);
  res.index_se = std::sqrt(p * (1.0 - p) / pooled);
  for (int j = 0; j < k; ++j) {
    const double f = static_cast<double>(index_counts[static_cast<std::size_t>(j)]) / pooled;
    res.index_freq.push_back(f);
    res.index_max_z = std::max(res.index_max_z, std::abs(f - p) / res.index_se);
  }
  res.pair_se = std::sqrt(p * (1.0 - p) / static_cast<double>(R));
  for (const auto& row : res.pair_counts) {
    for (std::uint32_t c : row) {
      const double z = std::abs(static_cast<double>(c) / static_cast<double>(R) - p) / res.pair_se;
      res.pair_max_z = std::max(res.pair_max_z, z);
      if (z > 3.0) ++res.pairs_outside_3se;
    }
  }

  if (cfg.spot_check) {
    const std::size_t m = std::min<std::size_t>(R, static_cast<std::size_t>(std::max(cfg.spot_check_replicas, 0)));
    std::vector<std::pair<std::size_t, int>> jobs;
    for (std::size_t r = 0; r < m; ++r) {
      for (int i = 0; i < n; ++i) jobs.emplace_back(r, i);
    }
    std::vector<double> dots(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t t) {
      const auto [r, i] = jobs[t];
      const ReducedPoint u0 = inits[r].col(i);
      const TrajectoryRecord rec = integrate_reduced(frame, model.dual, u0, cfg.flow);
      dots[t] = rec.final_u(argmaxes[r][static_cast<std::size_t>(i)]);
    });
    for (double v : dots) {
      ++res.spot_pairs;
      if (v >= 1.0 - 1e-3) ++res.spot_ok;
      res.spot_min_dot = std::min(res.spot_min_dot, v);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Beta and k sweeps

struct BetaSweepRow {
  int k = 0;
  double beta = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  double max_dot = 0.0;
  double alpha = 0.0;  // average-point dot sqrt((1 + (k-1) beta)/k)
  bool at_average = false;
  bool stationary = false;
  double final_time = 0.0;
};

struct BetaThreshold {
  int replicate = 0;
  std::optional<double> beta_f;     // onset of convergence to the average point
  double beta_below = 0.0;          // largest probed beta not at the average point
  double beta_above = 0.0;          // smallest probed beta at the average point
  double max_dot_below = 0.0;
  double max_dot_above = 0.0;
  double alpha_above = 0.0;
  std::optional<double> beta_cross;  // where max dot first falls below beta_threshold
};

struct BetaSweepResult {
  int k = 0;
  double beta_c = 0.0;
  std::vector<BetaSweepRow> rows;  // grid rows followed by bisection rows
  std::vector<BetaThreshold> thresholds;
  std::size_t non_stationary = 0;
};

/// Student start for the sweeps: fixed in R^d per replicate so the same w0 is
/// reused across beta and k. Positive-orthant draws give u >= 0 on equiangular frames.
inline Vec sweep_start(const ExperimentConfig& cfg, int d, std::uint64_t seed) {
  Rng rng(seed);
  const std::string mode = cfg.resolved_init();
  Vec w = sample_sphere(d, rng);
  if (mode == "positive-orthant") return w.cwiseAbs();
  if (mode == "raw") return w;
  throw Error(ErrorCode::ConfigError, "sweeps support init raw or positive-orthant");
}

inline bool is_at_average(const ReducedPoint& u, int k, double beta, double tol) {
  if (k < 2) return false;
  return std::abs(u.maxCoeff() - average_dot(k, beta)) <= tol && (u.maxCoeff() - u.minCoeff()) <= tol;
}

inline BetaSweepRow run_sweep_point(const ExperimentConfig& cfg, const DualSeries& dual, int k, int d, double beta,
                                    const Vec& w0) {
  const Frame frame = Frame::equiangular(k, d, beta);
  const ReducedPoint u0 = frame.V().transpose() * w0;
  const TrajectoryRecord rec = integrate_reduced(frame, dual, u0, cfg.flow);
  BetaSweepRow row;
  row.k = k;
  row.beta = beta;
  row.max_dot = rec.final_u.maxCoeff();
  row.alpha = average_dot(k, beta);
  row.at_average = is_at_average(rec.final_u, k, beta, cfg.tol_conv);
  row.stationary = rec.stop == StopReason::Stationary;
  row.final_time = rec.final_time;
  return row;
}

inline BetaSweepResult run_beta_sweep(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  BetaSweepResult res;
  res.k = frame_k(cfg);
  res.beta_c = beta_c(model.dual.p_star(), res.k);
  const int d = std::max(cfg.d, res.k + 1);
  std::vector<double> grid = cfg.beta_grid;
  std::sort(grid.begin(), grid.end());
  const std::size_t reps = static_cast<std::size_t>(cfg.replicas);
  std::vector<Vec> starts(reps);
  for (std::size_t r = 0; r < reps; ++r) starts[r] = sweep_start(cfg, d, derive_seed(cfg.seed, r));

  std::vector<BetaSweepRow> grid_rows(grid.size() * reps);
  parallel_for(grid_rows.size(), [&](std::size_t i) {
    const std::size_t r = i / grid.size();
    BetaSweepRow row = run_sweep_point(cfg, model.dual, res.k, d, grid[i % grid.size()], starts[r]);
    row.replicate = static_cast<int>(r);
    row.seed = derive_seed(cfg.seed, r);
    grid_rows[i] = row;
  });

  std::vector<std::vector<BetaSweepRow>> extra(reps);
  res.thresholds.resize(reps);
  parallel_for(reps, [&](std::size_t r) {
    const auto probe = [&](double beta) {
      BetaSweepRow row = run_sweep_point(cfg, model.dual, res.k, d, beta, starts[r]);
      row.replicate = static_cast<int>(r);
      row.seed = derive_seed(cfg.seed, r);
      extra[r].push_back(row);
      return row;
    };
    // Bisects the first grid interval where pred switches to true; returns the
    // bracketing rows (false side, true side).
    const auto refine = [&](auto pred) -> std::optional<std::pair<BetaSweepRow, BetaSweepRow>> {
      std::size_t g = 0;
      while (g < grid.size() && !pred(grid_rows[r * grid.size() + g])) ++g;
      if (g == 0 || g == grid.size()) return std::nullopt;
      BetaSweepRow lo = grid_rows[r * grid.size() + g - 1], hi = grid_rows[r * grid.size() + g];
      while (hi.beta - lo.beta > cfg.bisect_tol) {
        const BetaSweepRow mid = probe(0.5 * (lo.beta + hi.beta));
        (pred(mid) ? hi : lo) = mid;
      }
      return std::pair{lo, hi};
    };
    BetaThreshold th;
    th.replicate = static_cast<int>(r);
    if (const auto b = refine([](const BetaSweepRow& row) { return row.at_average; })) {
      th.beta_f = b->second.beta;
      th.beta_below = b->first.beta;
      th.beta_above = b->second.beta;
      th.max_dot_below = b->first.max_dot;
      th.max_dot_above = b->second.max_dot;
      th.alpha_above = b->second.alpha;
    }
    if (const auto b = refine([&](const BetaSweepRow& row) { return row.max_dot < cfg.beta_threshold; })) {
      th.beta_cross = b->second.beta;
    }
    res.thresholds[r] = th;
  });
  res.rows = std::move(grid_rows);
  for (auto& e : extra) res.rows.insert(res.rows.end(), e.begin(), e.end());
  for (const auto& row : res.rows) {
    if (!row.stationary) ++res.non_stationary;
  }
  return res;
}

struct KSweepResult {
  std::vector<BetaSweepRow> rows;  // ordered by (beta, replicate, k)
  struct Switch {
    double beta = 0.0;
    int replicate = 0;
    bool monotone = false;
    std::optional<int> switch_k;  // smallest k converging to the average point
  };
  std::vector<Switch> switches;
  std::size_t non_stationary = 0;
};

inline KSweepResult run_k_sweep(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  std::vector<int> ks = cfg.k_grid;
  std::sort(ks.begin(), ks.end());
  const int d = std::max(cfg.d, ks.back() + 1);
  const std::size_t reps = static_cast<std::size_t>(cfg.replicas);
  std::vector<Vec> starts(reps);
  for (std::size_t r = 0; r < reps; ++r) starts[r] = sweep_start(cfg, d, derive_seed(cfg.seed, r));
  KSweepResult res;
  res.rows.resize(cfg.beta_grid.size() * reps * ks.size());
  parallel_for(res.rows.size(), [&](std::size_t i) {
    const std::size_t b = i / (reps * ks.size());
    const std::size_t r = (i / ks.size()) % reps;
    const int k = ks[i % ks.size()];
    BetaSweepRow row = run_sweep_point(cfg, model.dual, k, d, cfg.beta_grid[b], starts[r]);
    row.replicate = static_cast<int>(r);
    row.seed = derive_seed(cfg.seed, r);
    res.rows[i] = row;
  });
  for (std::size_t b = 0; b < cfg.beta_grid.size(); ++b) {
    for (std::size_t r = 0; r < reps; ++r) {
      KSweepResult::Switch s;
      s.beta = cfg.beta_grid[b];
      s.replicate = static_cast<int>(r);
      const std::size_t base = (b * reps + r) * ks.size();
      std::size_t first = ks.size();
      for (std::size_t m = 0; m < ks.size(); ++m) {
        if (res.rows[base + m].at_average) {
          first = m;
          break;
        }
      }
      bool mono = first > 0 && first < ks.size();
      for (std::size_t m = first; m < ks.size(); ++m) mono = mono && res.rows[base + m].at_average;
      s.monotone = mono;
      if (first < ks.size()) s.switch_k = ks[first];
      res.switches.push_back(s);
    }
  }
  for (const auto& row : res.rows) {
    if (!row.stationary) ++res.non_stationary;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Correlation vs MSE

struct CompareRun {
  LossKind kind = LossKind::Correlation;
  MultiTrajectory traj;
  Mat final_U;                   // n x k terminal overlaps
  std::vector<int> assignment;   // argmax_j per neuron
  Vec max_dot_per_target;        // max_i w_i . v_j
  double terminal_loss = 0.0;
  double terminal_mse = 0.0;
  std::optional<double> time_to_half_loss;
};

struct CompareLossResult {
  int k = 0;
  int n = 0;
  int d = 0;
  std::uint64_t attempt = 0;
  std::uint64_t init_seed = 0;
  Mat W0;
  CompareRun correlation;
  CompareRun mse;
};

/// First recorded time at which the loss has covered half of its total decrease.
inline std::optional<double> time_to_half_loss(const MultiTrajectory& tr) {
  if (tr.loss_path.empty()) return std::nullopt;
  const double l0 = tr.loss_path.front(), lT = tr.loss_path.back();
  const double mid = l0 - 0.5 * (l0 - lT);
  for (std::size_t i = 0; i < tr.loss_path.size(); ++i) {
    if (tr.loss_path[i] <= mid) return tr.times[i];
  }
  return std::nullopt;
}

inline CompareLossResult run_compare_loss(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const Frame frame = parse_frame(cfg.frame, cfg.d);
  const MseModel mse(model.student, model.teacher);
  CompareLossResult res;
  res.k = frame.k();
  res.n = cfg.resolved_n(res.k);
  res.d = frame.d();
  const InitMode mode = parse_init_mode(cfg.resolved_init());
  const int last = res.k - 1;
  bool found = false;
  const std::uint64_t attempts = cfg.adversarial ? static_cast<std::uint64_t>(cfg.max_attempts) : 1;
  for (std::uint64_t a = 0; a < attempts && !found; ++a) {
    res.attempt = a;
    res.init_seed = derive_seed(cfg.seed, a);
    Rng rng(res.init_seed);
    res.W0.resize(res.d, res.n);
    bool collects_last = false;
    for (int i = 0; i < res.n; ++i) {
      res.W0.col(i) = sample_init(frame, rng, mode);
      const Vec u = frame.V().transpose() * res.W0.col(i);
      Eigen::Index j = 0;
      u.maxCoeff(&j);
      if (j == last) collects_last = true;
    }
    found = !cfg.adversarial || !collects_last;
  }
  if (!found) {
    throw Error(ErrorCode::RejectionBudgetExceeded,
                "no adversarial initialization within " + std::to_string(cfg.max_attempts) + " attempts");
  }
  const auto run = [&](LossKind kind) {
    CompareRun out;
    out.kind = kind;
    out.traj = integrate_multi(frame, mse, res.W0, kind, cfg.flow);
    out.final_U = out.traj.final_W.transpose() * frame.V();
    for (Eigen::Index i = 0; i < out.final_U.rows(); ++i) {
      Eigen::Index j = 0;
      out.final_U.row(i).maxCoeff(&j);
      out.assignment.push_back(static_cast<int>(j));
    }
    out.max_dot_per_target = out.final_U.colwise().maxCoeff().transpose();
    out.terminal_loss = out.traj.loss_path.back();
    out.terminal_mse = mse_loss(frame, mse, out.traj.final_W);
    out.time_to_half_loss = time_to_half_loss(out.traj);
    return out;
  };
  std::vector<CompareRun> runs(2);
  parallel_for(2, [&](std::size_t i) { runs[i] = run(i == 0 ? LossKind::Correlation : LossKind::Mse); });
  res.correlation = std::move(runs[0]);
  res.mse = std::move(runs[1]);
  return res;
}

// ---------------------------------------------------------------------------
// Phase portrait

struct PhasePortraitRow {
  double theta = 0.0;
  Eigen::Vector2d rhs;
  double rhs_tangent = 0.0;  // component along (-sin, cos)
  double loss = 0.0;
  std::string marker;
};

inline std::vector<PhasePortraitRow> run_phase_portrait(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const Frame frame = parse_frame(cfg.frame, cfg.d);
  if (frame.d() != 2 || frame.k() != 2) throw Error(ErrorCode::DimensionMismatch, "phase portrait requires d = k = 2");
  const double two_pi = 2.0 * std::numbers::pi;
  const auto angle = [&](const Vec& w) {
    double a = std::atan2(w(1), w(0));
    return a < 0.0 ? a + two_pi : a;
  };
  std::vector<std::pair<double, std::string>> angles;
  for (int i = 0; i < cfg.theta_points; ++i) angles.emplace_back(two_pi * i / cfg.theta_points, "");
  angles.emplace_back(angle(frame.V().col(0)), "v1");
  angles.emplace_back(angle(frame.V().col(1)), "v2");
  angles.emplace_back(angle(average_point(frame).w_bar), "wbar");
  std::stable_sort(angles.begin(), angles.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<PhasePortraitRow> rows;
  for (const auto& [th, marker] : angles) {
    const Vec w = Eigen::Vector2d(std::cos(th), std::sin(th));
    PhasePortraitRow row;
    row.theta = th;
    row.rhs = full_rhs(frame, model.dual, w);
    row.rhs_tangent = row.rhs.dot(Eigen::Vector2d(-std::sin(th), std::cos(th)));
    row.loss = loss_L0(model.dual, frame.V().transpose() * w);
    row.marker = marker;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Dispatch

namespace detail {

inline std::string file_stem(Experiment e) {
  std::string s = to_string(e);
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

inline std::string opt(const std::optional<double>& x) { return x ? fmt(*x) : std::string("nan"); }

}  // namespace detail

inline ExperimentOutput output_time_sweep(const TimeSweepResult& res) {
  ExperimentOutput out;
  Table t;
  t.name = "sweep_time";
  t.columns = {"d", "replicate", "seed", "hit_time", "status"};
  for (const auto& r : res.rows) {
    t.add_row({fmt(r.d), fmt(r.replicate), std::to_string(r.seed), detail::opt(r.hit_time), r.hit_time ? "hit" : "NoHit"});
  }
  out.summary.emplace_back("p_star", std::to_string(res.p_star));
  out.summary.emplace_back("fit_transform", to_string(res.transform));
  if (res.fit) {
    out.summary.emplace_back("slope", fmt(res.fit->slope));
    out.summary.emplace_back("intercept", fmt(res.fit->intercept));
    out.summary.emplace_back("slope_stderr", fmt(res.fit->stderr_slope));
    out.summary.emplace_back("fit_rows", std::to_string(res.fit->n));
  }
  out.summary.emplace_back("T_over_log_d_spread", fmt(res.ratio_spread));
  for (const auto& w : res.warnings) out.summary.emplace_back("warning", w);
  out.tables.push_back(std::move(t));
  return out;
}

inline ExperimentOutput output_convergence(const ConvergenceResult& res) {
  ExperimentOutput out;
  Table t;
  t.name = "simulate";
  t.columns = {"replicate", "seed", "leader", "ell", "signs_bitmask", "leader_preserved", "min_delta",
               "terminal_norm", "terminal_error", "converged", "stop", "final_time"};
  for (int j = 0; j < res.k; ++j) t.columns.push_back("u0_" + std::to_string(j + 1));
  for (int j = 0; j < res.k; ++j) t.columns.push_back("uT_" + std::to_string(j + 1));
  int conv = 0, kept = 0;
  for (const auto& r : res.rows) {
    std::vector<std::string> row{fmt(r.replicate), std::to_string(r.seed), fmt(r.leader + 1), fmt(r.ell),
                                 std::to_string(r.signs), fmt(r.leader_preserved), fmt(r.min_delta),
                                 fmt(r.terminal_norm), fmt(r.terminal_error), fmt(r.converged), to_string(r.stop),
                                 fmt(r.final_time)};
    for (int j = 0; j < res.k; ++j) row.push_back(fmt(r.u0(j)));
    for (int j = 0; j < res.k; ++j) row.push_back(fmt(r.u_final(j)));
    t.add_row(std::move(row));
    conv += r.converged;
    kept += r.leader_preserved;
  }
  out.summary.emplace_back("converged", std::to_string(conv) + "/" + std::to_string(res.rows.size()));
  out.summary.emplace_back("leader_preserved", std::to_string(kept) + "/" + std::to_string(res.rows.size()));
  out.tables.push_back(std::move(t));
  if (res.first) out.tables.push_back(trajectory_table("simulate_trajectory", *res.first));
  return out;
}

inline ExperimentOutput output_coupon(const CouponResult& res) {
  ExperimentOutput out;
  Table t;
  t.name = "collect";
  t.columns = {"replicate", "collected", "failure"};
  for (std::size_t r = 0; r < res.collected.size(); ++r) {
    t.add_row({fmt(r), fmt(res.collected[r]), fmt(res.collected[r] < res.k)});
  }
  Table f;
  f.name = "collect_frequency";
  f.columns = {"target", "frequency", "se", "expected"};
  for (int j = 0; j < res.k; ++j) {
    f.add_row({fmt(j + 1), fmt(res.index_freq[static_cast<std::size_t>(j)]), fmt(res.index_se), fmt(1.0 / res.k)});
  }
  out.summary = {
      {"k", fmt(res.k)},
      {"n", fmt(res.n)},
      {"failure_rate", fmt(res.failure_rate)},
      {"failure_ci_low", fmt(res.ci.lo)},
      {"failure_ci_high", fmt(res.ci.hi)},
      {"bound_union", fmt(res.bound_union)},
      {"bound_exp", fmt(res.bound_exp)},
      {"bound_lower", fmt(res.bound_lower)},
      {"miss_rate", fmt(res.miss_rate)},
      {"index_max_z", fmt(res.index_max_z)},
      {"pair_max_z", fmt(res.pair_max_z)},
      {"pairs_outside_3se", fmt(res.pairs_outside_3se)},
  };
  if (res.spot_pairs > 0) {
    out.summary.emplace_back("spot_check", std::to_string(res.spot_ok) + "/" + std::to_string(res.spot_pairs));
    out.summary.emplace_back("spot_min_dot", fmt(res.spot_min_dot));
  }
  out.tables.push_back(std::move(t));
  out.tables.push_back(std::move(f));
  return out;
}

inline Table sweep_table(const std::string& name, const std::vector<BetaSweepRow>& rows) {
  Table t;
  t.name = name;
  t.columns = {"k", "beta", "replicate", "seed", "max_dot", "average_dot", "at_average", "stationary", "final_time"};
  for (const auto& r : rows) {
    t.add_row({fmt(r.k), fmt(r.beta), fmt(r.replicate), std::to_string(r.seed), fmt(r.max_dot), fmt(r.alpha),
               fmt(r.at_average), fmt(r.stationary), fmt(r.final_time)});
  }
  return t;
}

inline ExperimentOutput output_beta_sweep(const BetaSweepResult& res) {
  ExperimentOutput out;
  out.tables.push_back(sweep_table("sweep_beta", res.rows));
  Table t;
  t.name = "sweep_beta_threshold";
  t.columns = {"replicate",     "beta_f",        "beta_below",        "beta_above", "max_dot_below",
               "max_dot_above", "average_dot_above", "beta_cross", "beta_c"};
  for (const auto& th : res.thresholds) {
    t.add_row({fmt(th.replicate), detail::opt(th.beta_f), fmt(th.beta_below), fmt(th.beta_above),
               fmt(th.max_dot_below), fmt(th.max_dot_above), fmt(th.alpha_above), detail::opt(th.beta_cross),
               fmt(res.beta_c)});
  }
  out.tables.push_back(std::move(t));
  out.summary.emplace_back("beta_c", fmt(res.beta_c));
  for (const auto& th : res.thresholds) {
    out.summary.emplace_back("beta_f[" + std::to_string(th.replicate) + "]", detail::opt(th.beta_f));
    out.summary.emplace_back("beta_cross[" + std::to_string(th.replicate) + "]", detail::opt(th.beta_cross));
  }
  out.summary.emplace_back("non_stationary", std::to_string(res.non_stationary));
  if (res.non_stationary > 0) {
    out.failure = Error(ErrorCode::NonStationary,
                        std::to_string(res.non_stationary) + " runs did not reach stationarity by t_max");
  }
  return out;
}

inline ExperimentOutput output_k_sweep(const KSweepResult& res) {
  ExperimentOutput out;
  out.tables.push_back(sweep_table("sweep_k", res.rows));
  for (const auto& s : res.switches) {
    out.summary.emplace_back("switch[beta=" + fmt(s.beta) + ",rep=" + std::to_string(s.replicate) + "]",
                             (s.switch_k ? std::to_string(*s.switch_k) : std::string("none")) +
                                 (s.monotone ? " monotone" : " non-monotone"));
  }
  out.summary.emplace_back("non_stationary", std::to_string(res.non_stationary));
  if (res.non_stationary > 0) {
    out.failure = Error(ErrorCode::NonStationary,
                        std::to_string(res.non_stationary) + " runs did not reach stationarity by t_max");
  }
  return out;
}

inline ExperimentOutput output_compare_loss(const CompareLossResult& res) {
  ExperimentOutput out;
  Table t;
  t.name = "compare_loss";
  t.columns = {"loss_kind", "neuron", "assigned_target"};
  for (int j = 0; j < res.k; ++j) t.columns.push_back("uT_" + std::to_string(j + 1));
  Table curves;
  curves.name = "compare_loss_curves";
  curves.columns = {"loss_kind", "t", "loss"};
  Table traj;
  traj.name = "compare_loss_trajectories";
  traj.columns = {"loss_kind", "t", "neuron"};
  for (int j = 0; j < res.k; ++j) traj.columns.push_back("u_" + std::to_string(j + 1));
  for (const CompareRun* run : {&res.correlation, &res.mse}) {
    const std::string kind = to_string(run->kind);
    for (int i = 0; i < res.n; ++i) {
      std::vector<std::string> row{kind, fmt(i + 1), fmt(run->assignment[static_cast<std::size_t>(i)] + 1)};
      for (int j = 0; j < res.k; ++j) row.push_back(fmt(run->final_U(i, j)));
      t.add_row(std::move(row));
    }
    for (std::size_t r = 0; r < run->traj.times.size(); ++r) {
      curves.add_row({kind, fmt(run->traj.times[r]), fmt(run->traj.loss_path[r])});
      for (int i = 0; i < res.n; ++i) {
        std::vector<std::string> row{kind, fmt(run->traj.times[r]), fmt(i + 1)};
        for (int j = 0; j < res.k; ++j) row.push_back(fmt(run->traj.u_path[r](i, j)));
        traj.add_row(std::move(row));
      }
    }
    for (int j = 0; j < res.k; ++j) {
      out.summary.emplace_back(kind + "_max_dot_v" + std::to_string(j + 1), fmt(run->max_dot_per_target(j)));
    }
    out.summary.emplace_back(kind + "_terminal_loss", fmt(run->terminal_loss));
    out.summary.emplace_back(kind + "_terminal_mse", fmt(run->terminal_mse));
    out.summary.emplace_back(kind + "_time_to_half_loss", detail::opt(run->time_to_half_loss));
  }
  out.summary.emplace_back("init_attempt", std::to_string(res.attempt));
  out.summary.emplace_back("init_seed", std::to_string(res.init_seed));
  out.tables.push_back(std::move(t));
  out.tables.push_back(std::move(curves));
  out.tables.push_back(std::move(traj));
  return out;
}

inline ExperimentOutput output_phase_portrait(const std::vector<PhasePortraitRow>& rows) {
  ExperimentOutput out;
  Table t;
  t.name = "phase_portrait";
  t.columns = {"theta", "rhs_x", "rhs_y", "rhs_tangent", "loss", "marker"};
  for (const auto& r : rows) {
    t.add_row({fmt(r.theta), fmt(r.rhs(0)), fmt(r.rhs(1)), fmt(r.rhs_tangent), fmt(r.loss), r.marker});
  }
  out.tables.push_back(std::move(t));
  return out;
}

inline Table fixed_point_table(const std::vector<FixedPoint>& points) {
  Table t;
  t.name = "fixed_points";
  t.columns = {"support_bitmask", "signs_bitmask", "ell", "family", "residual", "classification", "min_curvature",
               "max_curvature"};
  for (const auto& fp : points) {
    t.add_row({std::to_string(fp.support), std::to_string(fp.signs), fmt(fp.ell), to_string(fp.family),
               fmt(fp.residual), to_string(fp.classification), fmt(fp.min_curvature), fmt(fp.max_curvature)});
  }
  return t;
}

inline ExperimentOutput run_fixed_points(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const Frame frame = parse_frame(cfg.frame, cfg.d);
  if (!frame.is_orthonormal()) throw Error(ErrorCode::NotOrthogonal, "fixed-point enumeration needs an orthonormal frame");
  const Parity parity = model.dual.is_even() ? Parity::Even : Parity::Odd;
  auto points = enumerate_fixed_points(frame.k(), model.dual.p_star(), parity);
  classify_fixed_points(frame, model.dual, points);
  ExperimentOutput out;
  out.tables.push_back(fixed_point_table(points));
  double worst = 0.0;
  for (const auto& fp : points) worst = std::max(worst, fp.residual);
  out.summary.emplace_back("parity", to_string(parity));
  out.summary.emplace_back("in_span_points", std::to_string(points.size() - 1));
  out.summary.emplace_back("max_residual", fmt(worst));
  if (frame.k() <= 3) {
    const GridSearchReport g = grid_search_stationary(frame, model.dual, points);
    out.summary.emplace_back("grid_points", std::to_string(g.points_checked));
    out.summary.emplace_back("grid_extra_stationary", std::to_string(g.extra_stationary));
    out.summary.emplace_back("grid_min_residual_outside", fmt(g.min_residual_outside));
  }
  return out;
}

inline ExperimentOutput run_curvature(const ExperimentConfig& cfg) {
  const Model model = build_model(cfg);
  const int k = frame_k(cfg);
  ExperimentOutput out;
  Table t;
  t.name = "curvature";
  t.columns = {"k", "beta", "in_span_worst", "in_span_best", "orthogonal_complement", "verdict", "analytic",
               "beta_c", "beta_min_upper", "loss_at_average"};
  std::vector<double> grid = cfg.beta_grid;
  std::sort(grid.begin(), grid.end());
  for (double b : grid) {
    const CurvatureReport rep = classify_average(k, b, model.dual);
    t.add_row({fmt(k), fmt(b), fmt(rep.value(DirectionClass::InSpanWorst)), fmt(rep.value(DirectionClass::InSpanBest)),
               fmt(rep.value(DirectionClass::OrthogonalComplement)), to_string(rep.verdict), to_string(rep.analytic),
               fmt(rep.beta_c), fmt(rep.beta_min_upper), fmt(loss_at_average(k, b, model.dual))});
  }
  out.tables.push_back(std::move(t));
  out.summary.emplace_back("beta_c", fmt(beta_c(model.dual.p_star(), k)));
  out.summary.emplace_back("beta_min_upper", fmt(beta_min_upper(model.dual.degree(), k)));
  if (k >= 2) {
    try {
      out.summary.emplace_back("bisected_threshold", fmt(bisect_average_threshold(k, model.dual)));
    } catch (const Error&) {
      out.summary.emplace_back("bisected_threshold", "none");
    }
  }
  return out;
}

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentOutput out;
  switch (cfg.experiment) {
    case Experiment::Simulate: out = output_convergence(run_convergence_suite(cfg)); break;
    case Experiment::SweepTime: out = output_time_sweep(run_time_sweep(cfg)); break;
    case Experiment::SweepBeta: out = output_beta_sweep(run_beta_sweep(cfg)); break;
    case Experiment::SweepK: out = output_k_sweep(run_k_sweep(cfg)); break;
    case Experiment::FixedPoints: out = run_fixed_points(cfg); break;
    case Experiment::Curvature: out = run_curvature(cfg); break;
    case Experiment::Collect: out = output_coupon(run_coupon(cfg)); break;
    case Experiment::CompareLoss: out = output_compare_loss(run_compare_loss(cfg)); break;
    case Experiment::PhasePortrait: out = output_phase_portrait(run_phase_portrait(cfg)); break;
  }
  if (!out.tables.empty()) {
    auto& notes = out.tables.front().notes;
    notes.insert(notes.end(), out.summary.begin(), out.summary.end());
  }
  return out;
}

}  // namespace multiflow
