#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "multiflow/error.hpp"
#include "multiflow/rng.hpp"

namespace multiflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Dot products u = V^T w of a unit student vector with the index vectors.
using ReducedPoint = Eigen::VectorXd;

inline constexpr double kTolUnitNorm = 1e-10;
inline constexpr double kTolDomain = 1e-10;

enum class FrameKind { Orthogonal, Equiangular, Explicit };

inline const char* to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::Orthogonal: return "orthogonal";
    case FrameKind::Equiangular: return "equiangular";
    case FrameKind::Explicit: return "explicit";
  }
  return "unknown";
}

/// Index-vector geometry. Immutable after construction; A^{-1} is held as a
/// Cholesky factorization of the Gram matrix.
class Frame {
 public:
  /// v_j = e_j in R^d.
  static Frame orthogonal(int k, int d) {
    if (k < 1) throw Error(ErrorCode::DimensionTooSmall, "k must be >= 1");
    if (d < k) throw Error(ErrorCode::DimensionTooSmall, "orthogonal frame needs d >= k");
    Mat V = Mat::Zero(d, k);
    for (int j = 0; j < k; ++j) V(j, j) = 1.0;
    return Frame(std::move(V), FrameKind::Orthogonal, 0.0);
  }

  /// Unit vectors with pairwise dot product beta. For d > k this is
  /// v_j = sqrt(beta) e_{k+1} + sqrt(1 - beta) e_j; at d = k the columns are
  /// the transposed Cholesky factor of the target Gram matrix.
  static Frame equiangular(int k, int d, double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) {
      throw Error(ErrorCode::BetaOutOfRange, "beta = " + std::to_string(beta) + " outside [0, 1)");
    }
    if (k < 1) throw Error(ErrorCode::DimensionTooSmall, "k must be >= 1");
    if (d < k) throw Error(ErrorCode::DimensionTooSmall, "equiangular frame needs d >= k");
    Mat V = Mat::Zero(d, k);
    if (beta == 0.0) {
      for (int j = 0; j < k; ++j) V(j, j) = 1.0;
    } else if (d > k) {
      const double shared = std::sqrt(beta);
      const double own = std::sqrt(1.0 - beta);
      for (int j = 0; j < k; ++j) {
        V(j, j) = own;
        V(k, j) = shared;
      }
    } else {
      const Mat target = equiangular_gram(k, beta);
      const Mat L = target.llt().matrixL();
      V.topRows(k) = L.transpose();
    }
    return Frame(std::move(V), FrameKind::Equiangular, beta);
  }

  /// Any V with unit columns. Negative off-diagonal dot products are rejected
  /// unless allowed (an even activation pair makes them harmless), in which
  /// case a warning is recorded.
  static Frame from_columns(Mat V, bool allow_negative_gram = false) {
    if (V.cols() < 1 || V.rows() < V.cols()) {
      throw Error(ErrorCode::DimensionTooSmall, "explicit frame needs d >= k >= 1");
    }
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
      if (std::abs(V.col(j).norm() - 1.0) > kTolUnitNorm) {
        throw Error(ErrorCode::NotUnitNorm, "column " + std::to_string(j + 1) + " is not unit norm");
      }
    }
    Frame f(std::move(V), FrameKind::Explicit, 0.0);
    for (int j = 0; j < f.k(); ++j) {
      for (int jj = j + 1; jj < f.k(); ++jj) {
        if (f.A_(j, jj) < 0.0) {
          const std::string msg = "v_" + std::to_string(j + 1) + " . v_" + std::to_string(jj + 1) + " = " +
                                  std::to_string(f.A_(j, jj)) + " < 0";
          if (!allow_negative_gram) throw Error(ErrorCode::NegativeGram, msg);
          f.warnings_.push_back(msg);
        }
      }
    }
    return f;
  }

  static Mat equiangular_gram(int k, double beta) {
    Mat A = Mat::Constant(k, k, beta);
    A.diagonal().setOnes();
    return A;
  }

  int k() const { return static_cast<int>(V_.cols()); }
  int d() const { return static_cast<int>(V_.rows()); }
  FrameKind kind() const { return kind_; }
  double beta() const { return beta_; }
  const Mat& V() const { return V_; }
  const Mat& gram() const { return A_; }
  const Mat& gram_inverse() const { return A_inv_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  bool is_orthonormal() const { return (A_ - Mat::Identity(k(), k())).cwiseAbs().maxCoeff() < 1e-14; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// A^{-1} x via the stored factorization.
  Vec solve(const Vec& x) const { return llt_.solve(x); }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind_) << "(k=" << k() << ",d=" << d();
    if (kind_ == FrameKind::Equiangular) os << ",beta=" << beta_;
    os << ")";
    return os.str();
  }

 private:
  Frame(Mat V, FrameKind kind, double beta) : V_(std::move(V)), kind_(kind), beta_(beta) {
    A_ = V_.transpose() * V_;
    llt_.compute(A_);
    if (llt_.info() != Eigen::Success) {
      throw Error(ErrorCode::LinearlyDependent, "index vectors are not linearly independent");
    }
    A_inv_ = llt_.solve(Mat::Identity(k(), k()));
    Eigen::SelfAdjointEigenSolver<Mat> eig(A_, Eigen::EigenvaluesOnly);
    lambda_min_ = eig.eigenvalues().minCoeff();
    lambda_max_ = eig.eigenvalues().maxCoeff();
    if (!(lambda_min_ > 0.0)) {
      throw Error(ErrorCode::LinearlyDependent, "Gram matrix is not positive definite");
    }
  }

  Mat V_;
  Mat A_;
  Mat A_inv_;
  Eigen::LLT<Mat> llt_;
  FrameKind kind_;
  double beta_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
  std::vector<std::string> warnings_;
};

inline void require_unit(const Vec& w, const char* what = "w") {
  if (!w.allFinite() || std::abs(w.norm() - 1.0) > kTolUnitNorm) {
    throw Error(ErrorCode::NotUnitNorm, std::string(what) + " has norm " + std::to_string(w.norm()));
  }
}

inline ReducedPoint project(const Frame& frame, const Vec& w) {
  if (w.size() != frame.d()) throw Error(ErrorCode::DimensionMismatch, "w has wrong dimension");
  require_unit(w);
  return frame.V().transpose() * w;
}

/// s2 = u^T A^{-1} u; the image of the unit sphere is {s2 <= 1}.
inline double ellipsoid_s2(const Frame& frame, const ReducedPoint& u) { return u.dot(frame.solve(u)); }

inline bool in_domain(const Frame& frame, const ReducedPoint& u, double tol = kTolDomain) {
  return ellipsoid_s2(frame, u) <= 1.0 + tol;
}

struct AveragePoint {
  Vec w_bar;
  ReducedPoint u_bar;
};

/// Normalized sum of the index vectors and its dot products with them.
inline AveragePoint average_point(const Frame& frame) {
  const Vec sum = frame.V().rowwise().sum();
  AveragePoint p;
  p.w_bar = sum / sum.norm();
  p.u_bar = frame.V().transpose() * p.w_bar;
  return p;
}

/// Common value of w_bar . v_j for an equiangular frame.
inline double average_dot(int k, double beta) { return std::sqrt((1.0 + (k - 1) * beta) / k); }

// ---------------------------------------------------------------------------
// Initialization

enum class InitMode {
  Raw,               // uniform on the sphere
  PositiveQuadrant,  // rejection until every u_j > 0
  SignFlipped,       // |u_j| entrywise
  PositiveOrthant,   // uniform on the sphere's positive orthant; u >= 0 when V >= 0 entrywise
};

inline const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::Raw: return "raw";
    case InitMode::PositiveQuadrant: return "positive-quadrant";
    case InitMode::SignFlipped: return "sign-flipped";
    case InitMode::PositiveOrthant: return "positive-orthant";
  }
  return "unknown";
}

inline Vec sample_sphere(int d, Rng& rng) {
  std::normal_distribution<double> normal;
  Vec g(d);
  for (int i = 0; i < d; ++i) g(i) = normal(rng);
  return g / g.norm();
}

inline constexpr std::uint64_t kDefaultRejectionBudget = 1'000'000;

/// Unit student vector in R^d drawn under `mode`. Sign flipping reflects w
/// across the hyperplanes orthogonal to the negatively correlated v_j, which
/// needs an orthonormal frame.
inline Vec sample_init(const Frame& frame, Rng& rng, InitMode mode,
                       std::uint64_t budget = kDefaultRejectionBudget) {
  switch (mode) {
    case InitMode::Raw:
      return sample_sphere(frame.d(), rng);
    case InitMode::PositiveOrthant:
      return sample_sphere(frame.d(), rng).cwiseAbs();
    case InitMode::PositiveQuadrant:
      for (std::uint64_t draw = 0; draw < budget; ++draw) {
        Vec w = sample_sphere(frame.d(), rng);
        if ((frame.V().transpose() * w).minCoeff() > 0.0) return w;
      }
      throw Error(ErrorCode::RejectionBudgetExceeded,
                  "no all-positive draw within " + std::to_string(budget) + " samples");
    case InitMode::SignFlipped: {
      if (!frame.is_orthonormal()) {
        throw Error(ErrorCode::NotOrthogonal, "sign-flipped full-space init needs an orthonormal frame");
      }
      Vec w = sample_sphere(frame.d(), rng);
      const Vec u = frame.V().transpose() * w;
      for (int j = 0; j < frame.k(); ++j) {
        if (u(j) < 0.0) w -= 2.0 * u(j) * frame.V().col(j);
      }
      return w;
    }
  }
  return sample_sphere(frame.d(), rng);
}

inline ReducedPoint sample_reduced_init(const Frame& frame, Rng& rng, InitMode mode,
                                        std::uint64_t budget = kDefaultRejectionBudget) {
  if (mode == InitMode::SignFlipped) {
    return (frame.V().transpose() * sample_sphere(frame.d(), rng)).cwiseAbs();
  }
  return frame.V().transpose() * sample_init(frame, rng, mode, budget);
}

// ---------------------------------------------------------------------------
// Text form: orthogonal(k), equiangular(k,beta), explicit(path.csv)

/// Reads d rows x k columns of comma-separated numbers; '#' lines are skipped.
inline Mat read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, path + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::ParseError, path + ": ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::ParseError, path + ": empty matrix");
  Mat V(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return V;
}

/// Builds a frame from its text form. `d` is ignored for explicit frames.
inline Frame parse_frame(std::string_view text, int d, bool allow_negative_gram = false) {
  std::string s;
  for (char c : text) {
    if (c != ' ' && c != '\t') s += c;
  }
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') {
    throw Error(ErrorCode::ParseError, "frame '" + std::string(text) + "': expected name(args)");
  }
  const std::string name = s.substr(0, open);
  const std::string args = s.substr(open + 1, s.size() - open - 2);
  std::vector<std::string> parts;
  std::stringstream ss(args);
  std::string part;
  while (std::getline(ss, part, ',')) parts.push_back(part);
  try {
    if (name == "orthogonal" && parts.size() == 1) return Frame::orthogonal(std::stoi(parts[0]), d);
    if (name == "equiangular" && parts.size() == 2) {
      return Frame::equiangular(std::stoi(parts[0]), d, std::stod(parts[1]));
    }
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::ParseError, "frame '" + std::string(text) + "': bad number");
  }
  if (name == "explicit" && !args.empty()) return Frame::from_columns(read_matrix_csv(args), allow_negative_gram);
  throw Error(ErrorCode::ParseError, "frame '" + std::string(text) + "' not understood");
}

}  // namespace multiflow
