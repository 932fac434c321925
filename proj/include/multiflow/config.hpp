#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "multiflow/error.hpp"
#include "multiflow/flow.hpp"
#include "multiflow/frames.hpp"

namespace multiflow {

enum class Experiment {
  Simulate,
  SweepTime,
  SweepBeta,
  SweepK,
  FixedPoints,
  Curvature,
  Collect,
  CompareLoss,
  PhasePortrait,
};

inline constexpr std::pair<Experiment, const char*> kExperimentNames[] = {
    {Experiment::Simulate, "simulate"},          {Experiment::SweepTime, "sweep-time"},
    {Experiment::SweepBeta, "sweep-beta"},       {Experiment::SweepK, "sweep-k"},
    {Experiment::FixedPoints, "fixed-points"},   {Experiment::Curvature, "curvature"},
    {Experiment::Collect, "collect"},            {Experiment::CompareLoss, "compare-loss"},
    {Experiment::PhasePortrait, "phase-portrait"},
};

inline const char* to_string(Experiment e) {
  for (const auto& [id, name] : kExperimentNames) {
    if (id == e) return name;
  }
  return "unknown";
}

inline Experiment parse_experiment(std::string_view s) {
  for (const auto& [id, name] : kExperimentNames) {
    if (s == name) return id;
  }
  throw Error(ErrorCode::ConfigError, "unknown experiment '" + std::string(s) + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) out += fmt_double(xs[i]);
    else out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace detail

/// Typed view of the flat key=value config file.
struct ExperimentConfig {
  Experiment experiment = Experiment::Simulate;

  std::string frame = "orthogonal(2)";
  int d = 1000;
  std::string teacher = "h3";
  std::string student;  // empty: same as teacher
  int max_degree = kDefaultMaxDegree;

  FlowConfig flow;
  std::string init = "auto";  // auto | raw | positive-quadrant | sign-flipped | positive-orthant | deterministic | tie
  int tie_ell = 2;

  std::uint64_t seed = 0;
  int replicas = 1;

  std::vector<int> d_grid{256, 512, 1024, 2048, 4096};
  std::vector<double> beta_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<int> k_grid{2, 3, 4, 5, 6, 8, 10, 12, 16, 20};

  int n = 10;
  double gamma = 0.0;  // > 0: n = ceil(gamma * k)

  double tol_conv = 1e-3;
  double beta_threshold = 0.9;
  double bisect_tol = 1e-3;
  bool spot_check = false;
  int spot_check_replicas = 5;
  bool adversarial = false;
  int max_attempts = 100000;
  int theta_points = 360;
  bool trajectories = true;

  /// Applies one key=value assignment; unknown keys and bad values throw ConfigError.
  void set(const std::string& key, const std::string& value);

  /// Every key with its resolved value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  std::string student_spec() const { return student.empty() ? teacher : student; }

  /// Per-experiment default when init = auto.
  std::string resolved_init() const {
    if (init != "auto") return init;
    switch (experiment) {
      case Experiment::SweepTime: return "deterministic";
      case Experiment::SweepBeta:
      case Experiment::SweepK: return "positive-orthant";
      case Experiment::Collect:
      case Experiment::CompareLoss: return "sign-flipped";
      default: return "positive-quadrant";
    }
  }

  int resolved_n(int k) const { return gamma > 0.0 ? static_cast<int>(std::ceil(gamma * k)) : n; }

  void validate() const;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || !std::isfinite(x)) {
    throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + v + "'");
  }
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end) throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  const auto ints = [&] {
    std::vector<int> out;
    for (const auto& s : split_list(value)) out.push_back(static_cast<int>(parse_int(key, s)));
    return out;
  };
  const auto doubles = [&] {
    std::vector<double> out;
    for (const auto& s : split_list(value)) out.push_back(parse_double(key, s));
    return out;
  };
  if (key == "experiment") experiment = parse_experiment(value);
  else if (key == "frame") frame = value;
  else if (key == "d") d = static_cast<int>(parse_int(key, value));
  else if (key == "teacher") teacher = value;
  else if (key == "student") student = value;
  else if (key == "max_degree") max_degree = static_cast<int>(parse_int(key, value));
  else if (key == "eta") flow.eta = parse_double(key, value);
  else if (key == "integrator") {
    if (value == "rk4") flow.integrator = Integrator::Rk4;
    else if (value == "projected-euler" || value == "euler") flow.integrator = Integrator::ProjectedEuler;
    else throw Error(ErrorCode::ConfigError, "integrator: expected rk4 or projected-euler");
  } else if (key == "t_max") flow.t_max = parse_double(key, value);
  else if (key == "stop_grad_tol") flow.stop_grad_tol = parse_double(key, value);
  else if (key == "stop_align_threshold") flow.stop_align_threshold = parse_double(key, value);
  else if (key == "record_stride") {
    const long long s = parse_int(key, value);
    if (s < 1) throw Error(ErrorCode::ConfigError, "record_stride must be >= 1");
    flow.record_stride = static_cast<std::size_t>(s);
  } else if (key == "init") init = value;
  else if (key == "tie_ell") tie_ell = static_cast<int>(parse_int(key, value));
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "replicas") replicas = static_cast<int>(parse_int(key, value));
  else if (key == "d_grid") d_grid = ints();
  else if (key == "beta_grid") beta_grid = doubles();
  else if (key == "k_grid") k_grid = ints();
  else if (key == "n") n = static_cast<int>(parse_int(key, value));
  else if (key == "gamma") gamma = parse_double(key, value);
  else if (key == "tol_conv") tol_conv = parse_double(key, value);
  else if (key == "beta_threshold") beta_threshold = parse_double(key, value);
  else if (key == "bisect_tol") bisect_tol = parse_double(key, value);
  else if (key == "spot_check") spot_check = parse_bool(key, value);
  else if (key == "spot_check_replicas") spot_check_replicas = static_cast<int>(parse_int(key, value));
  else if (key == "adversarial") adversarial = parse_bool(key, value);
  else if (key == "max_attempts") max_attempts = static_cast<int>(parse_int(key, value));
  else if (key == "theta_points") theta_points = static_cast<int>(parse_int(key, value));
  else if (key == "trajectories") trajectories = parse_bool(key, value);
  else throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  using detail::fmt_double;
  using detail::join;
  return {
      {"experiment", to_string(experiment)},
      {"frame", frame},
      {"d", std::to_string(d)},
      {"teacher", teacher},
      {"student", student_spec()},
      {"max_degree", std::to_string(max_degree)},
      {"eta", fmt_double(flow.eta)},
      {"integrator", to_string(flow.integrator)},
      {"t_max", fmt_double(flow.t_max)},
      {"stop_grad_tol", fmt_double(flow.stop_grad_tol)},
      {"stop_align_threshold", fmt_double(flow.stop_align_threshold)},
      {"record_stride", std::to_string(flow.record_stride)},
      {"init", resolved_init()},
      {"tie_ell", std::to_string(tie_ell)},
      {"seed", std::to_string(seed)},
      {"replicas", std::to_string(replicas)},
      {"d_grid", join(d_grid)},
      {"beta_grid", join(beta_grid)},
      {"k_grid", join(k_grid)},
      {"n", std::to_string(n)},
      {"gamma", fmt_double(gamma)},
      {"tol_conv", fmt_double(tol_conv)},
      {"beta_threshold", fmt_double(beta_threshold)},
      {"bisect_tol", fmt_double(bisect_tol)},
      {"spot_check", spot_check ? "true" : "false"},
      {"spot_check_replicas", std::to_string(spot_check_replicas)},
      {"adversarial", adversarial ? "true" : "false"},
      {"max_attempts", std::to_string(max_attempts)},
      {"theta_points", std::to_string(theta_points)},
      {"trajectories", trajectories ? "true" : "false"},
  };
}

inline void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  try {
    flow.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (d < 1) fail("d must be >= 1");
  if (replicas < 1) fail("replicas must be >= 1");
  if (n < 1) fail("n must be >= 1");
  if (gamma < 0.0) fail("gamma must be >= 0");
  if (max_degree < 1) fail("max_degree must be >= 1");
  if (!(tol_conv > 0.0 && tol_conv < 1.0)) fail("tol_conv must lie in (0, 1)");
  if (!(bisect_tol > 0.0)) fail("bisect_tol must be > 0");
  if (theta_points < 4) fail("theta_points must be >= 4");
  if (tie_ell < 1) fail("tie_ell must be >= 1");
  if (experiment == Experiment::SweepTime && d_grid.empty()) fail("d_grid must be nonempty");
  if (experiment == Experiment::SweepBeta && beta_grid.empty()) fail("beta_grid must be nonempty");
  if (experiment == Experiment::SweepK && k_grid.empty()) fail("k_grid must be nonempty");
  for (int x : d_grid) {
    if (x < 1) fail("d_grid entries must be >= 1");
  }
  for (double b : beta_grid) {
    if (!(b >= 0.0 && b < 1.0)) fail("beta_grid entries must lie in [0, 1)");
  }
  for (int x : k_grid) {
    if (x < 1) fail("k_grid entries must be >= 1");
  }
  static const char* kModes[] = {"auto", "raw", "positive-quadrant", "sign-flipped", "positive-orthant", "deterministic",
                                 "tie"};
  bool ok = false;
  for (const char* m : kModes) ok = ok || init == m;
  if (!ok) fail("unknown init mode '" + init + "'");
}

/// Parses `key = value` lines; '#' starts a comment.
inline ExperimentConfig parse_config(std::string_view text, std::optional<Experiment> experiment = std::nullopt) {
  ExperimentConfig cfg;
  if (experiment) cfg.experiment = *experiment;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key == "experiment" && experiment) {
      if (parse_experiment(value) != *experiment) {
        throw Error(ErrorCode::ConfigError, "config experiment '" + value + "' does not match the command line");
      }
      continue;
    }
    cfg.set(key, value);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, std::optional<Experiment> experiment = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), experiment);
}

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "raw") return InitMode::Raw;
  if (s == "positive-quadrant") return InitMode::PositiveQuadrant;
  if (s == "sign-flipped") return InitMode::SignFlipped;
  if (s == "positive-orthant") return InitMode::PositiveOrthant;
  throw Error(ErrorCode::ConfigError, "init mode '" + s + "' is not a sampling mode");
}

}  // namespace multiflow
