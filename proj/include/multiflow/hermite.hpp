#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "multiflow/error.hpp"

namespace multiflow {

inline constexpr int kDefaultMaxDegree = 16;
inline constexpr double kTolZero = 1e-9;
inline constexpr int kDefaultQuadratureOrder = 200;

/// Normalized probabilist's Hermite polynomial h_p(x), orthonormal under the
/// standard Gaussian weight.
inline double hermite_eval(int p, double x) {
  if (p <= 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int q = 1; q < p; ++q) {
    const double next = (x * cur - std::sqrt(static_cast<double>(q)) * prev) /
                        std::sqrt(static_cast<double>(q + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

/// Fills out[0..p_max] with h_0(x)..h_{p_max}(x).
inline void hermite_values(int p_max, double x, std::span<double> out) {
  out[0] = 1.0;
  if (p_max >= 1) out[1] = x;
  for (int q = 1; q < p_max; ++q) {
    out[q + 1] = (x * out[q] - std::sqrt(static_cast<double>(q)) * out[q - 1]) /
                 std::sqrt(static_cast<double>(q + 1));
  }
}

/// Nodes and weights for integrals against the standard Gaussian density.
/// Weights sum to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// h_n(x) and h_{n-1}(x) carried with a common power-of-two scale, plus the
// scaled Christoffel sum sum_{p<n} h_p(x)^2. The scale keeps large nodes of
// high-order rules from overflowing.
struct ScaledHermite {
  double h_n = 0.0;
  double h_nm1 = 0.0;
  double christoffel = 0.0;
  int log2_scale = 0;  // true values are stored values * 2^log2_scale
};

inline ScaledHermite scaled_hermite(int n, double x) {
  ScaledHermite r;
  double prev = 1.0;
  double cur = x;
  double sum = 1.0;
  int log2_scale = 0;
  for (int q = 1; q < n; ++q) {
    sum += cur * cur;
    const double next = (x * cur - std::sqrt(static_cast<double>(q)) * prev) /
                        std::sqrt(static_cast<double>(q + 1));
    prev = cur;
    cur = next;
    if (std::abs(cur) > 0x1p200) {
      prev = std::ldexp(prev, -200);
      cur = std::ldexp(cur, -200);
      sum = std::ldexp(sum, -400);
      log2_scale += 200;
    }
  }
  r.h_n = cur;
  r.h_nm1 = prev;
  r.christoffel = sum;
  r.log2_scale = log2_scale;
  return r;
}

inline QuadratureRule compute_gauss_hermite(int order) {
  // Golub-Welsch for starting nodes, then Newton on h_n with h_n' = sqrt(n) h_{n-1}.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
  Eigen::VectorXd sub(std::max(order - 1, 0));
  for (int i = 0; i + 1 < order; ++i) sub(i) = std::sqrt(static_cast<double>(i + 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd guesses = solver.eigenvalues();

  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const double sqrt_n = std::sqrt(static_cast<double>(order));
  for (int i = 0; i < order; ++i) {
    double x = guesses(i);
    for (int it = 0; it < 8; ++it) {
      const ScaledHermite h = scaled_hermite(order, x);
      if (h.h_nm1 == 0.0) break;
      const double step = h.h_n / (sqrt_n * h.h_nm1);
      x -= step;
      if (std::abs(step) < 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    const ScaledHermite h = scaled_hermite(order, x);
    rule.nodes[i] = x;
    rule.weights[i] = std::ldexp(1.0 / h.christoffel, -2 * h.log2_scale);
  }
  // Symmetrize: the rule is exact for odd integrands only if nodes pair up.
  for (int i = 0; i < order / 2; ++i) {
    const int j = order - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = w;
    rule.weights[j] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  return rule;
}

}  // namespace detail

/// Gauss-Hermite rule of the given order for the probabilist's weight
/// e^{-x^2/2}/sqrt(2 pi). Rules are cached per order.
inline const QuadratureRule& gauss_hermite_rule(int order) {
  static std::mutex mutex;
  static std::map<int, QuadratureRule> cache;
  if (order < 1) throw Error(ErrorCode::ConfigError, "quadrature order must be >= 1");
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, detail::compute_gauss_hermite(order)).first;
  return it->second;
}

namespace detail {

inline QuadratureRule gauss_legendre_rule(int order) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
  Eigen::VectorXd sub(std::max(order - 1, 0));
  for (int k = 1; k < order; ++k) sub(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  QuadratureRule rule;
  for (int i = 0; i < order; ++i) {
    rule.nodes.push_back(solver.eigenvalues()(i));
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights.push_back(2.0 * v0 * v0);
  }
  return rule;
}

// Gauss rule for the Gaussian density restricted to [0, inf). Recurrence
// coefficients come from the discretized Stieltjes procedure on composite
// Gauss-Legendre panels over [0, 40].
inline QuadratureRule compute_half_range_rule(int order) {
  const QuadratureRule gl = gauss_legendre_rule(24);
  constexpr double kUpper = 40.0;
  constexpr int kPanels = 160;
  constexpr double kWidth = kUpper / kPanels;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  std::vector<double> x;
  std::vector<double> w;
  for (int panel = 0; panel < kPanels; ++panel) {
    const double a = panel * kWidth;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double xi = a + 0.5 * kWidth * (gl.nodes[i] + 1.0);
      x.push_back(xi);
      w.push_back(0.5 * kWidth * gl.weights[i] * inv_sqrt_2pi * std::exp(-0.5 * xi * xi));
    }
  }
  const std::size_t m = x.size();
  // Orthonormal polynomials evaluated on the discrete points.
  std::vector<double> prev(m, 0.0);
  std::vector<double> cur(m);
  double mass = 0.0;
  for (double wi : w) mass += wi;
  for (std::size_t i = 0; i < m; ++i) cur[i] = 1.0 / std::sqrt(mass);
  Eigen::VectorXd alpha(order);
  Eigen::VectorXd beta(std::max(order - 1, 0));
  double b_prev = 0.0;
  for (int k = 0; k < order; ++k) {
    double a = 0.0;
    for (std::size_t i = 0; i < m; ++i) a += w[i] * x[i] * cur[i] * cur[i];
    alpha(k) = a;
    if (k + 1 == order) break;
    std::vector<double> next(m);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] = (x[i] - a) * cur[i] - b_prev * prev[i];
      norm2 += w[i] * next[i] * next[i];
    }
    const double b = std::sqrt(norm2);
    for (double& v : next) v /= b;
    beta(k) = b;
    b_prev = b;
    prev = std::move(cur);
    cur = std::move(next);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(alpha, beta, Eigen::ComputeEigenvectors);
  QuadratureRule rule;
  for (int i = 0; i < order; ++i) {
    rule.nodes.push_back(solver.eigenvalues()(i));
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights.push_back(mass * v0 * v0);
  }
  return rule;
}

}  // namespace detail

/// Gaussian quadrature split at the origin: a half-range Gauss rule of
/// order/2 nodes on each side. Exact for integrands that are polynomial on each
/// half-line, so activations with a kink at zero (ReLU) integrate to round-off.
inline const QuadratureRule& split_gauss_rule(int order) {
  static std::mutex mutex;
  static std::map<int, QuadratureRule> cache;
  if (order < 2) throw Error(ErrorCode::ConfigError, "split quadrature order must be >= 2");
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) {
    const QuadratureRule half = detail::compute_half_range_rule(order / 2);
    QuadratureRule rule;
    for (std::size_t i = half.nodes.size(); i-- > 0;) {
      rule.nodes.push_back(-half.nodes[i]);
      rule.weights.push_back(half.weights[i]);
    }
    for (std::size_t i = 0; i < half.nodes.size(); ++i) {
      rule.nodes.push_back(half.nodes[i]);
      rule.weights.push_back(half.weights[i]);
    }
    it = cache.emplace(order, std::move(rule)).first;
  }
  return it->second;
}

/// Truncated Hermite expansion sum_{p=1}^{P_max} a_p h_p of an activation.
/// The constant term is not stored.
class HermiteSeries {
 public:
  HermiteSeries() = default;

  /// coeffs[i] holds a_{i+1}. Entries with magnitude <= tol_zero become exact zeros.
  explicit HermiteSeries(std::vector<double> coeffs, double tol_zero = kTolZero)
      : coeffs_(std::move(coeffs)) {
    for (double& c : coeffs_) {
      if (std::abs(c) <= tol_zero) c = 0.0;
    }
    const auto first = std::find_if(coeffs_.begin(), coeffs_.end(), [](double c) { return c != 0.0; });
    if (first == coeffs_.end()) {
      throw Error(ErrorCode::AllCoefficientsZero,
                  "no Hermite coefficient up to degree " + std::to_string(coeffs_.size()) +
                      " exceeds the zero tolerance");
    }
    p_star_ = static_cast<int>(first - coeffs_.begin()) + 1;
  }

  static HermiteSeries unit(int q, int max_degree = kDefaultMaxDegree) {
    std::vector<double> c(static_cast<std::size_t>(std::max(max_degree, q)), 0.0);
    c[static_cast<std::size_t>(q - 1)] = 1.0;
    return HermiteSeries(std::move(c));
  }

  int max_degree() const { return static_cast<int>(coeffs_.size()); }
  int p_star() const { return p_star_; }

  /// a_p for p >= 1; zero beyond the truncation.
  double operator[](int p) const {
    if (p < 1 || p > max_degree()) return 0.0;
    return coeffs_[static_cast<std::size_t>(p - 1)];
  }

  std::span<const double> coefficients() const { return coeffs_; }

  double squared_norm() const {
    double s = 0.0;
    for (double c : coeffs_) s += c * c;
    return s;
  }

  bool is_even() const {
    for (int p = 1; p <= max_degree(); p += 2) {
      if ((*this)[p] != 0.0) return false;
    }
    return true;
  }

  bool is_odd() const {
    for (int p = 2; p <= max_degree(); p += 2) {
      if ((*this)[p] != 0.0) return false;
    }
    return true;
  }

 private:
  std::vector<double> coeffs_;
  int p_star_ = 0;
};

/// Coefficients c_p of the dual activation g(u) = sum_p c_p u^p.
class DualSeries {
 public:
  DualSeries() = default;

  /// c[i] holds c_{i+1}.
  explicit DualSeries(std::vector<double> c, double tol_zero = kTolZero) : c_(std::move(c)) {
    for (double& v : c_) {
      if (std::abs(v) <= tol_zero) v = 0.0;
    }
    for (std::size_t i = 0; i < c_.size(); ++i) {
      if (c_[i] != 0.0) {
        if (p_star_ == 0) p_star_ = static_cast<int>(i) + 1;
        degree_ = static_cast<int>(i) + 1;
      }
    }
  }

  /// c_p = a_p b_p.
  static DualSeries from_pair(const HermiteSeries& a, const HermiteSeries& b) {
    const int P = std::max(a.max_degree(), b.max_degree());
    std::vector<double> c(static_cast<std::size_t>(P));
    for (int p = 1; p <= P; ++p) c[static_cast<std::size_t>(p - 1)] = a[p] * b[p];
    return DualSeries(std::move(c));
  }

  /// Dual of h_q against itself, c = e_q.
  static DualSeries monomial(int q) {
    std::vector<double> c(static_cast<std::size_t>(q), 0.0);
    c.back() = 1.0;
    return DualSeries(std::move(c));
  }

  double operator[](int p) const {
    if (p < 1 || p > static_cast<int>(c_.size())) return 0.0;
    return c_[static_cast<std::size_t>(p - 1)];
  }

  std::span<const double> coefficients() const { return c_; }
  int p_star() const { return p_star_; }
  /// Largest p with c_p != 0 (the P of a polynomial target).
  int degree() const { return degree_; }
  int size() const { return static_cast<int>(c_.size()); }
  bool is_zero() const { return p_star_ == 0; }

  bool is_even() const {
    for (int p = 1; p <= degree_; p += 2) {
      if ((*this)[p] != 0.0) return false;
    }
    return true;
  }

 private:
  std::vector<double> c_;
  int p_star_ = 0;
  int degree_ = 0;
};

/// g(u) = sum_p c_p u^p by Horner's scheme.
inline double dual_eval(const DualSeries& d, double u) {
  double acc = 0.0;
  for (int p = d.degree(); p >= 1; --p) acc = acc * u + d[p];
  return acc * u;
}

/// g'(u) = sum_p p c_p u^{p-1}.
inline double dual_deriv(const DualSeries& d, double u) {
  double acc = 0.0;
  for (int p = d.degree(); p >= 1; --p) acc = acc * u + p * d[p];
  return acc;
}

/// g''(u) = sum_p p (p-1) c_p u^{p-2}.
inline double dual_deriv2(const DualSeries& d, double u) {
  double acc = 0.0;
  for (int p = d.degree(); p >= 2; --p) acc = acc * u + p * (p - 1) * d[p];
  return acc;
}

// ---------------------------------------------------------------------------
// Activations

struct PureHermite {
  int q = 1;
};

/// Finite combination sum (p, coeff) of normalized Hermite polynomials.
struct HermiteCombination {
  std::vector<std::pair<int, double>> terms;
};

struct Pointwise {
  std::string name;
  std::function<double(double)> fn;
  int quadrature_order = kDefaultQuadratureOrder;
};

class ActivationSpec {
 public:
  using Kind = std::variant<PureHermite, HermiteCombination, Pointwise>;

  ActivationSpec(Kind kind, std::string label) : kind_(std::move(kind)), label_(std::move(label)) {}

  static ActivationSpec hermite(int q) { return {PureHermite{q}, "h" + std::to_string(q)}; }

  static ActivationSpec pointwise(std::string name, std::function<double(double)> fn,
                                  int quadrature_order = kDefaultQuadratureOrder) {
    std::string label = name;
    return {Pointwise{std::move(name), std::move(fn), quadrature_order}, std::move(label)};
  }

  double operator()(double x) const {
    return std::visit(
        [x](const auto& k) -> double {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, PureHermite>) {
            return hermite_eval(k.q, x);
          } else if constexpr (std::is_same_v<T, HermiteCombination>) {
            double s = 0.0;
            for (const auto& [p, c] : k.terms) s += c * hermite_eval(p, x);
            return s;
          } else {
            return k.fn(x);
          }
        },
        kind_);
  }

  bool is_pointwise() const { return std::holds_alternative<Pointwise>(kind_); }

  /// Rule used to project this activation: split at the origin for pointwise
  /// functions, plain Gauss-Hermite for Hermite combinations.
  const QuadratureRule& quadrature_rule() const {
    return is_pointwise() ? split_gauss_rule(quadrature_order()) : gauss_hermite_rule(quadrature_order());
  }

  int quadrature_order() const {
    if (const auto* pw = std::get_if<Pointwise>(&kind_)) return pw->quadrature_order;
    return kDefaultQuadratureOrder;
  }

  const Kind& kind() const { return kind_; }
  const std::string& label() const { return label_; }

 private:
  Kind kind_;
  std::string label_;
};

/// Parses `h3`, `h3+0.5*h5`, `-2*h4`, `relu`, `erf`, `tanh`.
inline ActivationSpec parse_activation(std::string_view text) {
  std::string s;
  for (char ch : text) {
    if (!std::isspace(static_cast<unsigned char>(ch))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (s.empty()) throw Error(ErrorCode::ParseError, "empty activation");
  if (s == "relu") return ActivationSpec::pointwise("relu", [](double x) { return x > 0.0 ? x : 0.0; });
  if (s == "erf") return ActivationSpec::pointwise("erf", [](double x) { return std::erf(x); });
  if (s == "tanh") return ActivationSpec::pointwise("tanh", [](double x) { return std::tanh(x); });

  HermiteCombination comb;
  std::size_t pos = 0;
  const auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::ParseError, "activation '" + std::string(text) + "': " + why);
  };
  while (pos < s.size()) {
    double sign = 1.0;
    if (s[pos] == '+' || s[pos] == '-') {
      sign = s[pos] == '-' ? -1.0 : 1.0;
      ++pos;
    } else if (!comb.terms.empty()) {
      fail("expected '+' or '-'");
    }
    double coeff = 1.0;
    if (pos < s.size() && s[pos] != 'h') {
      std::size_t used = 0;
      try {
        coeff = std::stod(s.substr(pos), &used);
      } catch (const std::exception&) {
        fail("bad coefficient");
      }
      pos += used;
      if (pos >= s.size() || s[pos] != '*') fail("expected '*' after coefficient");
      ++pos;
    }
    if (pos >= s.size() || s[pos] != 'h') fail("expected hermite term 'h<degree>'");
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (start == pos) fail("missing degree");
    const int p = std::stoi(s.substr(start, pos - start));
    if (p < 0) fail("negative degree");
    comb.terms.emplace_back(p, sign * coeff);
  }
  if (comb.terms.size() == 1 && comb.terms[0].second == 1.0) {
    return ActivationSpec(PureHermite{comb.terms[0].first}, std::string(text));
  }
  return ActivationSpec(std::move(comb), std::string(text));
}

/// a_p = <sigma, h_p>_phi for p = 1..max_degree by Gauss-Hermite quadrature.
inline HermiteSeries extract_coefficients(const ActivationSpec& spec, int max_degree = kDefaultMaxDegree,
                                          double tol_zero = kTolZero) {
  const int order = spec.quadrature_order();
  if (order < 4 * max_degree) {
    throw Error(ErrorCode::ConfigError, "quadrature order " + std::to_string(order) +
                                            " below 4 * max_degree = " + std::to_string(4 * max_degree));
  }
  const QuadratureRule& rule = spec.quadrature_rule();
  std::vector<double> acc(static_cast<std::size_t>(max_degree + 1), 0.0);
  std::vector<double> h(static_cast<std::size_t>(max_degree + 1));
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = rule.nodes[i];
    const double fx = spec(x);
    if (!std::isfinite(fx)) {
      throw Error(ErrorCode::NonIntegrable, spec.label() + " is not finite at x = " + std::to_string(x));
    }
    if (rule.weights[i] == 0.0) continue;
    hermite_values(max_degree, x, h);
    const double wf = rule.weights[i] * fx;
    for (int p = 1; p <= max_degree; ++p) acc[static_cast<std::size_t>(p)] += wf * h[static_cast<std::size_t>(p)];
  }
  for (double v : acc) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonIntegrable, spec.label() + ": quadrature diverged");
  }
  return HermiteSeries(std::vector<double>(acc.begin() + 1, acc.end()), tol_zero);
}

/// Exact coefficients for Hermite-defined activations, quadrature otherwise.
inline HermiteSeries series_of(const ActivationSpec& spec, int max_degree = kDefaultMaxDegree) {
  if (const auto* h = std::get_if<PureHermite>(&spec.kind())) return HermiteSeries::unit(h->q, max_degree);
  if (const auto* c = std::get_if<HermiteCombination>(&spec.kind())) {
    std::vector<double> coeffs(static_cast<std::size_t>(max_degree), 0.0);
    for (const auto& [p, a] : c->terms) {
      if (p > max_degree) {
        throw Error(ErrorCode::ConfigError, "degree " + std::to_string(p) + " exceeds max_degree");
      }
      if (p >= 1) coeffs[static_cast<std::size_t>(p - 1)] += a;
    }
    return HermiteSeries(std::move(coeffs));
  }
  return extract_coefficients(spec, max_degree);
}

/// ||sigma||_phi^2 (constant term included) by the activation's quadrature rule.
inline double activation_norm_squared(const ActivationSpec& spec) {
  const QuadratureRule& rule = spec.quadrature_rule();
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double fx = spec(rule.nodes[i]);
    s += rule.weights[i] * fx * fx;
  }
  return s;
}

struct AssumptionReport {
  int p_star = 0;                       // of the product c_p = a_p b_p
  std::vector<bool> sign_agreement;     // index p-1: c_p >= 0 (true below p_star)
  bool leading_positive = false;        // c_{p*} > 0
  bool same_sign = false;               // c_p >= 0 for all p >= p*
  double series_value = 0.0;            // sum_p c_p p lambda_max^{p/2}, truncated
  double tail_ratio = 0.0;              // ratio of the last two nonzero terms; 0 for a finite series
  bool series_converges = false;
  bool passed() const { return leading_positive && same_sign && series_converges; }
};

/// Sign agreement of the Hermite coefficients and convergence of the gradient
/// series. A truncated series cannot prove convergence, so the tail is judged by
/// the ratio of the two highest-degree nonzero terms: below one passes.
inline AssumptionReport check_assumptions(const HermiteSeries& a, const HermiteSeries& b, double lambda_max) {
  const DualSeries d = DualSeries::from_pair(a, b);
  AssumptionReport r;
  r.p_star = d.p_star();
  r.sign_agreement.assign(static_cast<std::size_t>(d.size()), true);
  r.same_sign = true;
  std::vector<double> terms;
  for (int p = 1; p <= d.size(); ++p) {
    const double c = d[p];
    if (p >= d.p_star() && c < 0.0) {
      r.sign_agreement[static_cast<std::size_t>(p - 1)] = false;
      r.same_sign = false;
    }
    if (c != 0.0) {
      const double term = c * p * std::pow(lambda_max, 0.5 * p);
      r.series_value += term;
      terms.push_back(std::abs(term));
    }
  }
  r.leading_positive = !d.is_zero() && d[d.p_star()] > 0.0;
  // A series whose trailing coefficients vanish exactly is a polynomial.
  const bool finite_series = d.degree() < d.size() - 1 || terms.size() < 2;
  if (finite_series) {
    r.tail_ratio = 0.0;
  } else {
    r.tail_ratio = terms[terms.size() - 1] / terms[terms.size() - 2];
  }
  r.series_converges = std::isfinite(r.series_value) && r.tail_ratio < 1.0;
  return r;
}

}  // namespace multiflow
