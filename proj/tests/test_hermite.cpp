#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "multiflow/hermite.hpp"

using namespace multiflow;

namespace {

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Composite Simpson rule for integral of f(x) phi(x) over [a, b].
double simpson_gauss(const std::function<double(double)>& f, double a, double b, int n = 40000) {
  const double h = (b - a) / n;
  double s = f(a) * phi(a) + f(b) * phi(b);
  for (int i = 1; i < n; ++i) {
    const double x = a + i * h;
    s += (i % 2 ? 4.0 : 2.0) * f(x) * phi(x);
  }
  return s * h / 3.0;
}

double explicit_hermite(int p, double x) {
  switch (p) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return (x * x - 1.0) / std::sqrt(2.0);
    case 3: return (x * x * x - 3.0 * x) / std::sqrt(6.0);
    case 4: return (x * x * x * x - 6.0 * x * x + 3.0) / std::sqrt(24.0);
    case 5: return (std::pow(x, 5) - 10.0 * x * x * x + 15.0 * x) / std::sqrt(120.0);
  }
  return std::nan("");
}

}  // namespace

TEST(HermiteEval, MatchesExplicitPolynomials) {
  for (int p = 0; p <= 5; ++p) {
    for (double x : {-3.1, -1.0, -0.2, 0.0, 0.7, 2.5}) {
      EXPECT_NEAR(hermite_eval(p, x), explicit_hermite(p, x), 1e-12) << "p=" << p << " x=" << x;
    }
  }
}

TEST(HermiteEval, ValuesArrayAgreesWithSingleEvaluation) {
  std::vector<double> h(13);
  hermite_values(12, 1.3, h);
  for (int p = 0; p <= 12; ++p) EXPECT_NEAR(h[static_cast<std::size_t>(p)], hermite_eval(p, 1.3), 1e-12);
}

TEST(GaussHermite, WeightsSumToOneAndMomentsAreDoubleFactorials) {
  const QuadratureRule& rule = gauss_hermite_rule(200);
  double w = 0.0;
  for (double x : rule.weights) w += x;
  EXPECT_NEAR(w, 1.0, 1e-13);
  double dfact = 1.0;
  for (int m = 1; m <= 8; ++m) {
    dfact *= (2 * m - 1);
    double moment = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) moment += rule.weights[i] * std::pow(rule.nodes[i], 2 * m);
    EXPECT_NEAR(moment / dfact, 1.0, 1e-11) << "m=" << m;
  }
}

TEST(GaussHermite, OrthonormalityOfNormalizedHermite) {
  const QuadratureRule& rule = gauss_hermite_rule(200);
  double worst = 0.0;
  for (int p = 0; p <= 16; ++p) {
    for (int q = 0; q <= 16; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        s += rule.weights[i] * hermite_eval(p, rule.nodes[i]) * hermite_eval(q, rule.nodes[i]);
      }
      worst = std::max(worst, std::abs(s - (p == q ? 1.0 : 0.0)));
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(GaussHermite, OrthonormalityAgainstSimpsonOracle) {
  for (int p = 0; p <= 5; ++p) {
    for (int q = 0; q <= 5; ++q) {
      const double s = simpson_gauss([&](double x) { return explicit_hermite(p, x) * explicit_hermite(q, x); }, -14, 14);
      EXPECT_NEAR(s, p == q ? 1.0 : 0.0, 1e-10);
    }
  }
}

TEST(SplitRule, IntegratesGaussianOnBothHalves) {
  const QuadratureRule& rule = split_gauss_rule(200);
  double w = 0.0, pos = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    w += rule.weights[i];
    if (rule.nodes[i] > 0.0) pos += rule.weights[i];
    m2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
  }
  EXPECT_NEAR(w, 1.0, 1e-13);
  EXPECT_NEAR(pos, 0.5, 1e-13);
  EXPECT_NEAR(m2, 1.0, 1e-12);
}

TEST(Extraction, PureHermiteIsUnitVector) {
  for (int q = 1; q <= 6; ++q) {
    const HermiteSeries a = extract_coefficients(ActivationSpec::hermite(q), 16);
    EXPECT_EQ(a.p_star(), q);
    for (int p = 1; p <= 16; ++p) EXPECT_NEAR(a[p], p == q ? 1.0 : 0.0, 1e-12) << "q=" << q << " p=" << p;
  }
}

TEST(Extraction, ReluMatchesClosedFormAndSimpsonOracle) {
  const HermiteSeries a = extract_coefficients(parse_activation("relu"), 12);
  EXPECT_NEAR(a[1], 0.5, 1e-13);
  EXPECT_NEAR(a[2], 1.0 / std::sqrt(4.0 * std::numbers::pi), 1e-13);
  EXPECT_EQ(a[3], 0.0);
  for (int p = 1; p <= 8; ++p) {
    const double oracle = simpson_gauss([&](double x) { return x * hermite_eval(p, x); }, 0.0, 14.0);
    EXPECT_NEAR(a[p], oracle, 1e-10) << "p=" << p;
  }
  EXPECT_EQ(a.p_star(), 1);
}

TEST(Extraction, TanhAndErfAreOddWithSimpsonOracle) {
  for (const char* name : {"tanh", "erf"}) {
    const ActivationSpec spec = parse_activation(name);
    const HermiteSeries a = extract_coefficients(spec, 10);
    EXPECT_TRUE(a.is_odd()) << name;
    for (int p = 1; p <= 7; p += 2) {
      const double oracle = simpson_gauss([&](double x) { return spec(x) * hermite_eval(p, x); }, -14.0, 14.0);
      EXPECT_NEAR(a[p], oracle, 1e-10) << name << " p=" << p;
    }
  }
}

TEST(Extraction, BesselInequality) {
  for (const char* name : {"relu", "tanh", "erf"}) {
    const ActivationSpec spec = parse_activation(name);
    const HermiteSeries a = extract_coefficients(spec, 16);
    EXPECT_LE(a.squared_norm(), activation_norm_squared(spec) + 1e-12) << name;
  }
}

TEST(Extraction, OrderTooLowIsConfigError) {
  const ActivationSpec spec = ActivationSpec::pointwise("relu", [](double x) { return std::max(x, 0.0); }, 40);
  try {
    extract_coefficients(spec, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Extraction, NonFiniteActivationIsNonIntegrable) {
  const ActivationSpec spec = ActivationSpec::pointwise("bad", [](double x) { return x > 1.0 ? std::nan("") : x; });
  try {
    extract_coefficients(spec, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonIntegrable);
  }
}

TEST(HermiteSeriesInvariants, SmallEntriesZeroedAndPStar) {
  const HermiteSeries a({1e-12, 0.0, 0.7, -1e-10, 0.2});
  EXPECT_EQ(a[1], 0.0);
  EXPECT_EQ(a[4], 0.0);
  EXPECT_EQ(a.p_star(), 3);
  EXPECT_EQ(a[a.p_star()], 0.7);
  EXPECT_THROW(HermiteSeries({1e-12, 0.0}), Error);
}

TEST(DualSeriesTest, ProductCoefficientsAndDerivatives) {
  const HermiteSeries a({0.0, 0.0, 1.0, 0.5, 0.25});
  const HermiteSeries b({0.0, 0.0, 2.0, 0.0, -1.0});
  const DualSeries g = DualSeries::from_pair(a, b);
  EXPECT_EQ(g.p_star(), 3);
  EXPECT_EQ(g.degree(), 5);
  EXPECT_DOUBLE_EQ(g[3], 2.0);
  EXPECT_DOUBLE_EQ(g[4], 0.0);
  EXPECT_DOUBLE_EQ(g[5], -0.25);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double u = unif(rng);
    const double direct = 2.0 * std::pow(u, 3) - 0.25 * std::pow(u, 5);
    EXPECT_NEAR(dual_eval(g, u), direct, 1e-14);
    const double h = 1e-5;
    const double fd1 = (dual_eval(g, u + h) - dual_eval(g, u - h)) / (2 * h);
    const double fd2 = (dual_deriv(g, u + h) - dual_deriv(g, u - h)) / (2 * h);
    EXPECT_NEAR(dual_deriv(g, u), fd1, 1e-8);
    EXPECT_NEAR(dual_deriv2(g, u), fd2, 1e-8);
  }
}

TEST(DualSeriesTest, DualEqualsGaussianCorrelation) {
  // g(u) = E[sigma(x) sigma*(y)] with corr(x, y) = u, checked by 2-D quadrature.
  const ActivationSpec relu = parse_activation("relu");
  const HermiteSeries a = extract_coefficients(relu, 16);
  const HermiteSeries b = HermiteSeries::unit(3, 16);
  const DualSeries g = DualSeries::from_pair(a, b);
  const QuadratureRule& split = split_gauss_rule(200);
  const QuadratureRule& gh = gauss_hermite_rule(200);
  for (double u : {-0.6, 0.2, 0.8}) {
    double s = 0.0;
    for (std::size_t i = 0; i < split.nodes.size(); ++i) {
      for (std::size_t j = 0; j < gh.nodes.size(); ++j) {
        const double x = split.nodes[i];
        const double y = u * x + std::sqrt(1.0 - u * u) * gh.nodes[j];
        s += split.weights[i] * gh.weights[j] * relu(x) * hermite_eval(3, y);
      }
    }
    EXPECT_NEAR(dual_eval(g, u), s, 1e-10) << "u=" << u;
  }
}

TEST(Parsing, CombinationsAndErrors) {
  const HermiteSeries a = series_of(parse_activation("h3+0.5*h5"), 8);
  EXPECT_DOUBLE_EQ(a[3], 1.0);
  EXPECT_DOUBLE_EQ(a[5], 0.5);
  EXPECT_EQ(a.p_star(), 3);
  const HermiteSeries b = series_of(parse_activation("-2*h4"), 8);
  EXPECT_DOUBLE_EQ(b[4], -2.0);
  EXPECT_TRUE(std::holds_alternative<PureHermite>(parse_activation("h4").kind()));
  for (const char* bad : {"", "foo", "h", "2h3", "h3 0.5*h5"}) {
    try {
      parse_activation(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError) << bad;
    }
  }
}

TEST(Parity, EvenAndOddFlags) {
  EXPECT_TRUE(HermiteSeries::unit(4).is_even());
  EXPECT_TRUE(HermiteSeries::unit(3).is_odd());
  EXPECT_TRUE(DualSeries::monomial(4).is_even());
  EXPECT_FALSE(DualSeries::monomial(3).is_even());
  const HermiteSeries relu = extract_coefficients(parse_activation("relu"), 10);
  EXPECT_FALSE(relu.is_even());
  EXPECT_FALSE(relu.is_odd());
}

TEST(Assumptions, SignAgreementAndSeries) {
  const HermiteSeries h3 = HermiteSeries::unit(3);
  EXPECT_TRUE(check_assumptions(h3, h3, 1.0).passed());
  const HermiteSeries neg({0.0, 0.0, -1.0});
  const AssumptionReport r = check_assumptions(h3, neg, 1.0);
  EXPECT_FALSE(r.leading_positive);
  EXPECT_FALSE(r.same_sign);
  EXPECT_FALSE(r.passed());
  const HermiteSeries mixed({0.0, 0.0, 1.0, -1.0});
  const AssumptionReport m = check_assumptions(mixed, h3 /* only degree 3 survives */, 1.0);
  EXPECT_TRUE(m.passed());
  const AssumptionReport mm = check_assumptions(mixed, HermiteSeries({0.0, 0.0, 1.0, 1.0}), 1.0);
  EXPECT_FALSE(mm.same_sign);
  EXPECT_FALSE(mm.sign_agreement[3]);
}

TEST(Assumptions, ReluSelfDualSeriesDecays) {
  const HermiteSeries a = extract_coefficients(parse_activation("relu"), 16);
  const AssumptionReport r = check_assumptions(a, a, 1.0);
  EXPECT_TRUE(r.leading_positive);
  EXPECT_TRUE(r.same_sign);
  EXPECT_LT(r.tail_ratio, 1.0);
  EXPECT_TRUE(r.passed());
}
