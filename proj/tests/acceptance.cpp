#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "multiflow/experiments.hpp"

using namespace multiflow;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void info(const std::string& what) { lines.push_back("info " + what); }
};

std::string num(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

std::optional<std::filesystem::path> g_out;

void save(const ExperimentOutput& out, const ExperimentConfig& cfg, const std::string& prefix) {
  if (!g_out) return;
  for (Table t : out.tables) {
    t.name = prefix + "_" + t.name;
    write_csv_file(*g_out, t, cfg.entries());
  }
}

ExperimentConfig config(Experiment e, const std::string& text) { return parse_config(text, e); }

// Time-complexity exponents.
Outcome criterion1() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const auto sweep = [&](const std::string& teacher) {
    const auto cfg = config(Experiment::SweepTime, "frame = orthogonal(2)\nteacher = " + teacher + "\n");
    TimeSweepResult res = run_time_sweep(cfg);
    save(output_time_sweep(res), cfg, teacher);
    return res;
  };
  const auto h3 = sweep("h3");
  const auto h4 = sweep("h4");
  const auto h2 = sweep("h2");
  o.check(h3.fit && std::abs(h3.fit->slope - 0.5) <= 0.10, "h3 log-log slope " + num(h3.fit ? h3.fit->slope : NAN) +
                                                              " in 0.50 +- 0.10");
  o.check(h4.fit && std::abs(h4.fit->slope - 1.0) <= 0.15, "h4 log-log slope " + num(h4.fit ? h4.fit->slope : NAN) +
                                                              " in 1.00 +- 0.15");
  o.check(h2.warnings.empty() && h2.ratio.size() == 5 && h2.ratio_spread <= 0.15,
          "h2 hit_time/log d relative spread " + num(h2.ratio_spread) + " <= 0.15");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.check(secs < 300.0, "runtime " + num(secs) + " s < 300 s");
  return o;
}

// Directional convergence.
Outcome criterion2() {
  Outcome o;
  const std::string base = "frame = orthogonal(5)\nd = 1000\nreplicas = 100\nt_max = 2000\neta = 0.01\n";
  for (const std::string teacher : {"h3", "h3 + h5"}) {
    const auto cfg = config(Experiment::Simulate, base + "teacher = " + teacher + "\ninit = positive-quadrant\n");
    const auto res = run_convergence_suite(cfg);
    save(output_convergence(res), cfg, teacher == "h3" ? "odd_h3" : "odd_h3h5");
    int kept = 0, terminal = 0, delta = 0;
    for (const auto& r : res.rows) {
      kept += r.leader_preserved;
      bool ok = r.u_final(r.leader) >= 0.999;
      for (int j = 0; j < 5; ++j) ok = ok && (j == r.leader || std::abs(r.u_final(j)) <= 1e-3);
      terminal += ok;
      delta += r.min_delta >= -1e-8;
    }
    o.check(kept == 100, teacher + ": leader preserved " + std::to_string(kept) + "/100");
    o.check(terminal == 100, teacher + ": terminal leader >= 0.999, others <= 1e-3 in " + std::to_string(terminal) + "/100");
    o.check(delta == 100, teacher + ": recorded Delta >= -1e-8 in " + std::to_string(delta) + "/100");
  }
  const auto even_case = [&](const std::string& init, int ell, const std::string& label) {
    const auto cfg = config(Experiment::Simulate,
                            base + "teacher = h4\ninit = " + init + "\ntie_ell = " + std::to_string(ell) + "\n");
    const auto res = run_convergence_suite(cfg);
    save(output_convergence(res), cfg, label);
    int good = 0;
    for (const auto& r : res.rows) {
      const double top = r.u0.cwiseAbs().maxCoeff();
      int tied = 0;
      bool ok = true;
      for (int j = 0; j < 5; ++j) {
        const bool member = std::abs(r.u0(j)) == top;
        tied += member;
        const double target = member ? std::copysign(1.0 / std::sqrt(static_cast<double>(ell)), r.u0(j)) : 0.0;
        ok = ok && std::abs(r.u_final(j) - target) <= 1e-3;
      }
      good += ok && tied == ell;
    }
    o.check(good == 100, label + ": terminal u = sgn(u(0))/sqrt(" + std::to_string(ell) + ") on the tie in " +
                             std::to_string(good) + "/100");
  };
  even_case("raw", 1, "even_h4_raw");
  even_case("tie", 1, "even_h4_tie1");
  even_case("tie", 2, "even_h4_tie2");
  return o;
}

// Fixed-point correspondence.
Outcome criterion3() {
  Outcome o;
  const Frame frame = Frame::orthogonal(3, 3);
  const DualSeries h3 = DualSeries::monomial(3);
  auto points = enumerate_fixed_points(3, 3, Parity::Odd);
  int in_span = 0;
  double worst = 0.0;
  for (const auto& fp : points) {
    if (fp.family == Family::OrthogonalComplement) continue;
    ++in_span;
    worst = std::max(worst, residual(frame, h3, fp.u_star));
  }
  o.check(in_span == 7 && worst < 1e-10, std::to_string(in_span) + " enumerated points, max residual " + num(worst));
  const auto grid = grid_search_stationary(frame, h3, points, 0.01, 1e-6, 0.02);
  o.check(grid.extra_stationary == 0, "grid search over " + std::to_string(grid.points_checked) +
                                          " points: extra stationary points " + std::to_string(grid.extra_stationary) +
                                          ", min residual outside " + num(grid.min_residual_outside));
  Rng rng = make_rng(2024, 0);
  int pure = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec w0 = sample_sphere(3, rng).cwiseAbs();
    const auto res = tensor_power_iteration(frame, 3, w0, 10000);
    pure += res.converged && res.point && res.point->family == Family::Pure;
  }
  o.check(pure == 100, "power iteration ends at a pure point in " + std::to_string(pure) + "/100");
  return o;
}

// Saddle-to-minimum threshold.
Outcome criterion4() {
  Outcome o;
  for (int p : {3, 4}) {
    for (int k : {2, 3, 5}) {
      const double b = bisect_average_threshold(k, DualSeries::monomial(p));
      const double bc = beta_c(p, k);
      o.check(std::abs(b - bc) <= 1e-6, "p*=" + std::to_string(p) + " k=" + std::to_string(k) + ": bisected " +
                                            num(b) + " vs " + num(bc));
    }
  }
  const double b23 = bisect_average_threshold(2, DualSeries::monomial(3));
  o.check(std::abs(b23 - 1.0 / 3.0) <= 1e-6, "k=2 h3 threshold " + num(b23) + " = 1/3");
  const DualSeries c34({0.0, 0.0, 1.0, 1.0});
  for (double beta : {0.05, 0.15, 0.25, 0.3, 0.33}) {
    const auto rep = classify_average(2, beta, c34);
    o.check(rep.analytic == Verdict::StrictSaddle && rep.verdict == Verdict::StrictSaddle,
            "c3=c4=1 beta=" + num(beta) + ": analytic " + to_string(rep.analytic) + ", numeric " + to_string(rep.verdict));
  }
  for (double beta : {0.51, 0.6, 0.75, 0.9}) {
    const auto rep = classify_average(2, beta, c34);
    o.check(rep.analytic == Verdict::LocalMinimum && rep.verdict == Verdict::LocalMinimum,
            "c3=c4=1 beta=" + num(beta) + ": analytic " + to_string(rep.analytic) + ", numeric " + to_string(rep.verdict));
  }
  for (double beta : {0.35, 0.4, 0.45, 0.49}) {
    const auto rep = classify_average(2, beta, c34);
    o.info("c3=c4=1 beta=" + num(beta) + ": numeric " + to_string(rep.verdict) + " (worst in-span " +
           num(rep.value(DirectionClass::InSpanWorst)) + ")");
  }
  const double bmix = bisect_average_threshold(2, c34);
  o.info("c3=c4=1 numeric threshold " + num(bmix));
  return o;
}

// Curvature closed form against finite differences.
Outcome criterion5() {
  Outcome o;
  Rng rng = make_rng(55, 0);
  std::uniform_real_distribution<double> unif(0.0, 0.95);
  std::uniform_int_distribution<int> kdist(2, 6);
  const DualSeries duals[] = {DualSeries::monomial(3), DualSeries::monomial(4), DualSeries({0.0, 0.0, 1.0, 0.0, 1.0})};
  double worst = 0.0, smallest = INFINITY;
  for (int i = 0; i < 50; ++i) {
    const int k = kdist(rng);
    const double beta = unif(rng);
    const DualSeries& c = duals[i % 3];
    const Frame f = Frame::equiangular(k, k + 1, beta);
    const Vec w = average_point(f).w_bar;
    Vec v = sample_sphere(k + 1, rng);
    v -= w * w.dot(v);
    v.normalize();
    const auto L = [&](double th) { return loss_L0(c, f.V().transpose() * (w * std::cos(th) + v * std::sin(th))); };
    const auto D = [&](double h) { return (L(h) - 2.0 * L(0.0) + L(-h)) / (h * h); };
    const double h = 1e-2;
    const double fd = (4.0 * D(h / 2) - D(h)) / 3.0;
    const double cf = curvature_at(f, c, w, v);
    worst = std::max(worst, std::abs(fd - cf) / std::abs(cf));
    smallest = std::min(smallest, std::abs(cf));
  }
  o.check(worst < 1e-6, "max relative error " + num(worst) + " over 50 (beta, k, direction) draws");
  o.info("smallest |curvature| sampled " + num(smallest));
  return o;
}

// Gradient and chain-rule identities.
Outcome criterion6() {
  Outcome o;
  Rng rng = make_rng(66, 0);
  const Frame f = Frame::equiangular(4, 12, 0.3);
  const DualSeries c({0.0, 0.3, 1.0, 0.5, 0.25});
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vec u = f.V().transpose() * sample_sphere(12, rng);
    const Vec g = grad_L0(c, u);
    Vec fd(4);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-5;
      Vec up = u, dn = u;
      up(j) += h;
      dn(j) -= h;
      fd(j) = (loss_L0(c, up) - loss_L0(c, dn)) / (2 * h);
    }
    worst = std::max(worst, (fd - g).norm() / g.norm());
  }
  o.check(worst < 1e-6, "grad_L0 vs central differences: max relative error " + num(worst));
  double chain = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec w = sample_sphere(12, rng);
    chain = std::max(chain, (f.V().transpose() * full_rhs(f, c, w) - reduced_rhs(f, c, f.V().transpose() * w))
                                .cwiseAbs()
                                .maxCoeff());
  }
  o.check(chain <= 1e-12, "V^T full_rhs - reduced_rhs over 100 draws: " + num(chain));
  FlowConfig flow;
  flow.eta = 1e-3;
  flow.t_max = 100.0;
  flow.stop_grad_tol = 0.0;
  flow.record_stride = 100;
  for (const Frame& frame : {Frame::orthogonal(3, 30), Frame::equiangular(3, 30, 0.25)}) {
    const Vec w0 = sample_init(frame, rng, InitMode::PositiveOrthant);
    const auto full = integrate_full(frame, c, w0, flow);
    const auto red = integrate_reduced(frame, c, frame.V().transpose() * w0, flow);
    double gap = full.u_path.size() == red.u_path.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(full.u_path.size(), red.u_path.size()); ++i) {
      gap = std::max(gap, (full.u_path[i] - red.u_path[i]).cwiseAbs().maxCoeff());
    }
    o.check(gap <= 1e-8, frame.describe() + ": full vs reduced over t in [0, 100]: " + num(gap));
  }
  return o;
}

// Coupon collector.
Outcome criterion7() {
  Outcome o;
  const int n20 = static_cast<int>(std::ceil(2.0 * 20 * std::log(20.0)));
  o.check(n20 == 120, "n = ceil(2 k ln k) = " + std::to_string(n20));
  const auto c20cfg = config(Experiment::Collect, "frame = orthogonal(20)\nn = 120\nreplicas = 10000\nseed = 1\n");
  const auto c20 = run_coupon(c20cfg);
  save(output_coupon(c20), c20cfg, "k20");
  o.check(c20.failure_rate <= 0.05, "k=20 n=120: failure rate " + num(c20.failure_rate) + " <= 0.05 (bound " +
                                        num(c20.bound_exp) + ")");
  const auto c50cfg = config(Experiment::Collect, "frame = orthogonal(50)\nn = 50\nreplicas = 10000\nseed = 1\n");
  const auto c50 = run_coupon(c50cfg);
  save(output_coupon(c50), c50cfg, "k50");
  o.check(c50.failure_rate >= 0.30 && c50.failure_rate <= 0.45,
          "k=50 n=50: failure rate (some target uncollected) " + num(c50.failure_rate) + " in [0.30, 0.45]");
  o.info("k=50 n=50: per-target miss rate " + num(c50.miss_rate) + ", (1-1/k)^n = " + num(c50.bound_lower));
  const auto c5cfg = config(Experiment::Collect, "frame = orthogonal(5)\nn = 1\nreplicas = 10000\nseed = 1\n");
  const auto c5 = run_coupon(c5cfg);
  save(output_coupon(c5), c5cfg, "k5");
  o.check(c5.pair_max_z <= 3.0, "k=5: per-pair frequency max |z| " + num(c5.pair_max_z) + " <= 3");
  o.info("pooled per-index max |z|: k=20 " + num(c20.index_max_z) + ", k=50 " + num(c50.index_max_z));
  return o;
}

// Bifurcation.
Outcome criterion8() {
  Outcome o;
  const auto cfg = config(Experiment::SweepBeta,
                          "frame = orthogonal(2)\nd = 3\nteacher = h3\nreplicas = 3\nbisect_tol = 0.001\neta = 0.01\n");
  const auto res = run_beta_sweep(cfg);
  save(output_beta_sweep(res), cfg, "k2_h3");
  o.check(res.non_stationary == 0, "all sweep runs stationary (" + std::to_string(res.rows.size()) + " runs)");
  const DualSeries h3 = DualSeries::monomial(3);
  for (const auto& th : res.thresholds) {
    const std::string tag = "replicate " + std::to_string(th.replicate) + ": ";
    if (!th.beta_f) {
      o.check(false, tag + "no threshold found");
      continue;
    }
    o.check(*th.beta_f >= 1.0 / 3.0 && *th.beta_f < 1.0, tag + "beta_f " + num(*th.beta_f) + " in [1/3, 1)");
    const double beta = *th.beta_f + 1e-3;
    const Vec w0 = sweep_start(cfg, 3, derive_seed(cfg.seed, static_cast<std::uint64_t>(th.replicate)));
    const auto row = run_sweep_point(cfg, h3, 2, 3, beta, w0);
    const double target = std::sqrt((1.0 + beta) / 2.0);
    o.check(std::abs(row.max_dot - target) <= 1e-3,
            tag + "max dot at beta_f + 1e-3 = " + num(row.max_dot) + " vs sqrt((1+beta)/2) = " + num(target));
    if (th.beta_cross) o.info(tag + "max dot first below 0.9 at beta " + num(*th.beta_cross));
  }
  for (const auto& row : res.rows) {
    if (row.beta == 0.0 || row.beta == 0.1) {
      o.check(row.max_dot >= 0.999, "replicate " + std::to_string(row.replicate) + " beta " + num(row.beta) +
                                        ": max dot " + num(row.max_dot) + " >= 0.999");
    }
  }
  const auto kcfg = config(Experiment::SweepK, "teacher = h3\nbeta_grid = 0.2,0.3\nreplicas = 3\neta = 0.01\n");
  const auto ks = run_k_sweep(kcfg);
  save(output_k_sweep(ks), kcfg, "h3");
  o.check(ks.non_stationary == 0, "k-sweep runs stationary");
  for (const auto& s : ks.switches) {
    o.check(s.monotone && s.switch_k.has_value(),
            "k-sweep beta " + num(s.beta) + " replicate " + std::to_string(s.replicate) + ": switch at k = " +
                (s.switch_k ? std::to_string(*s.switch_k) : std::string("none")) + (s.monotone ? " (monotone)" : ""));
  }
  return o;
}

// MSE comparison.
Outcome criterion9() {
  Outcome o;
  const auto cfg = config(Experiment::CompareLoss,
                          "frame = orthogonal(2)\nd = 50\nn = 10\nteacher = h3\nadversarial = true\nseed = 7\n"
                          "t_max = 100\neta = 0.01\n");
  const auto res = run_compare_loss(cfg);
  save(output_compare_loss(res), cfg, "adversarial");
  o.info("adversarial init: attempt " + std::to_string(res.attempt) + ", seed " + std::to_string(res.init_seed));
  const double corr = res.correlation.max_dot_per_target(1);
  const double mse = res.mse.max_dot_per_target(1);
  o.check(corr <= 0.9, "correlation loss: max_i w_i.v2 = " + num(corr) + " <= 0.9");
  o.check(mse >= 0.99, "MSE loss: max_i w_i.v2 = " + num(mse) + " >= 0.99");
  o.check(res.mse.terminal_mse <= 1e-4, "MSE terminal population loss " + num(res.mse.terminal_mse) + " <= 1e-4");
  return o;
}

// Invariant suites.
Outcome criterion10() {
  Outcome o;
  const QuadratureRule& gh = gauss_hermite_rule(kDefaultQuadratureOrder);
  double ortho = 0.0;
  for (int p = 0; p <= 16; ++p) {
    for (int q = 0; q <= 16; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < gh.nodes.size(); ++i) s += gh.weights[i] * hermite_eval(p, gh.nodes[i]) * hermite_eval(q, gh.nodes[i]);
      ortho = std::max(ortho, std::abs(s - (p == q ? 1.0 : 0.0)));
    }
  }
  o.check(ortho <= 1e-12, "Hermite orthonormality up to degree 16: " + num(ortho));
  double eig = 0.0;
  for (int k : {2, 3, 5, 10, 20}) {
    for (double beta : {0.0, 0.2, 0.5, 0.9}) {
      const Frame f = Frame::equiangular(k, k + 3, beta);
      eig = std::max({eig, std::abs(f.lambda_max() - (1.0 + (k - 1) * beta)), std::abs(f.lambda_min() - (1.0 - beta))});
    }
  }
  o.check(eig <= 1e-12, "equiangular Gram eigenvalues vs closed forms: " + num(eig));

  Rng rng = make_rng(10, 0);
  const Frame orth = Frame::orthogonal(3, 50);
  FlowConfig euler;
  euler.integrator = Integrator::ProjectedEuler;
  euler.eta = 0.1;
  euler.t_max = 0.1;
  euler.stop_grad_tol = 0.0;
  double norm_err = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Vec w = sample_init(orth, rng, InitMode::Raw);
    for (int step = 0; step < 200; ++step) {
      w = *integrate_full(orth, DualSeries::monomial(3), w, euler).final_w;
      norm_err = std::max(norm_err, std::abs(w.norm() - 1.0));
    }
  }
  o.check(norm_err <= 1e-12, "projected Euler keeps ||w|| = 1 after every step: " + num(norm_err));

  FlowConfig rk4;
  rk4.eta = 1e-3;
  rk4.t_max = 100.0;
  rk4.stop_grad_tol = 0.0;
  rk4.record_stride = 1;
  double s2_drop = 0.0, s2_over = 0.0, quadrant = 0.0;
  const Frame frames[] = {Frame::orthogonal(5, 60), Frame::equiangular(4, 60, 0.3)};
  const DualSeries duals[] = {DualSeries::monomial(3), DualSeries({0.0, 0.0, 1.0, 0.0, 1.0})};
  for (const Frame& f : frames) {
    for (const DualSeries& c : duals) {
      for (int rep = 0; rep < 3; ++rep) {
        const Vec u0 = f.V().transpose() * sample_init(f, rng, f.is_orthonormal() ? InitMode::PositiveQuadrant
                                                                                   : InitMode::PositiveOrthant);
        const auto rec = integrate_reduced(f, c, u0, rk4);
        for (std::size_t i = 0; i < rec.s2_path.size(); ++i) {
          s2_over = std::max(s2_over, rec.s2_path[i] - 1.0);
          quadrant = std::min(quadrant, rec.u_path[i].minCoeff());
          if (i > 0 && f.is_orthonormal() && rec.s2_path[i - 1] < 1.0) {
            s2_drop = std::max(s2_drop, rec.s2_path[i - 1] - rec.s2_path[i]);
          }
        }
      }
    }
  }
  o.check(s2_drop <= 1e-12, "s2 nondecreasing on orthonormal frames: max drop " + num(s2_drop));
  o.check(s2_over <= 1e-8, "s2 <= 1 + 1e-8 under rk4: max excess " + num(s2_over));
  o.check(quadrant >= 0.0, "positive quadrant invariant: min coordinate " + num(quadrant));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_out = std::filesystem::path(argv[1]);
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"time-complexity exponents", criterion1},
      {"directional convergence", criterion2},
      {"fixed-point correspondence", criterion3},
      {"saddle-to-minimum threshold", criterion4},
      {"curvature closed form vs finite differences", criterion5},
      {"gradient and chain-rule identities", criterion6},
      {"coupon collector", criterion7},
      {"bifurcation", criterion8},
      {"MSE comparison", criterion9},
      {"invariant suites", criterion10},
  };
  int failed = 0;
  int id = 0;
  for (const auto& [name, fn] : criteria) {
    ++id;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, secs);
    for (const auto& line : o.lines) std::printf("    %s\n", line.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%d criteria passed\n", id - failed, id);
  return failed == 0 ? 0 : 1;
}
