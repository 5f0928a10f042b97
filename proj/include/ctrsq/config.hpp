#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctrsq/error.hpp"
#include "ctrsq/portfolio.hpp"

namespace ctrsq {

/// Flat `key = value` file, `#` comments, one key per line.
inline std::map<std::string, std::string> parse_key_values(std::istream& in,
                                                           const std::string& origin = "config") {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (out.contains(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d))
    throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return u;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty item in list '" + v + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

enum class InitMode { optimal, perturbed, explicit_values };

struct ExperimentConfig {
  portfolio::MarketParams market{};
  std::size_t steps = 1000;

  std::size_t train_episodes = 20000;
  double temperature = 0.05;
  double lr_theta = 5e-3;
  double lr_psi = 5e-3;
  double lr_decay_episodes = 5000.0;
  std::vector<double> theta_rate_scale{2.0, 0.02, 1.0};
  std::vector<double> psi_rate_scale{20.0, 200.0, 0.02, 10.0, 4.0};
  InitMode init = InitMode::perturbed;
  double init_perturbation = 0.2;
  std::vector<double> theta0;
  std::vector<double> psi0;
  bool normalized_q = false;
  double divergence_bound = 1e6;

  std::size_t eval_episodes = 10000;
  std::vector<std::string> eval_policies{"baseline", "oracle", "trained"};
  double baseline_action = 0.5;
  std::string trained_params;  // final-parameters CSV; empty means train in-process

  std::vector<std::string> sweep_parameters;  // empty means all eight
  std::vector<double> sweep_offsets{-0.1, -0.05, 0.0, 0.05, 0.1};
  std::size_t sweep_episodes = 10000;
  bool sweep_normalized_q = false;

  std::size_t diag_episodes = 10000;
  double diag_z_threshold = 3.0;
  bool diag_defects = false;
  std::size_t diag_points = 100;

  std::uint64_t seed = 0;
  unsigned threads = 1;

  TimeGrid grid() const { return TimeGrid(0.0, market.T, steps); }

  void validate() const {
    try {
      market.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    if (steps == 0) throw ConfigError("grid.K must be positive");
    if (train_episodes == 0) throw ConfigError("train.episodes must be positive");
    if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
    if (!(lr_theta >= 0.0) || !(lr_psi >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (!(lr_decay_episodes >= 0.0)) throw ConfigError("train.lr_decay_episodes must be >= 0");
    if (theta_rate_scale.size() != 3) throw ConfigError("train.theta_rate_scale needs 3 values");
    if (psi_rate_scale.size() != 5) throw ConfigError("train.psi_rate_scale needs 5 values");
    for (double v : theta_rate_scale)
      if (!(v >= 0.0)) throw ConfigError("train.theta_rate_scale entries must be >= 0");
    for (double v : psi_rate_scale)
      if (!(v >= 0.0)) throw ConfigError("train.psi_rate_scale entries must be >= 0");
    if (!(init_perturbation >= 0.0)) throw ConfigError("train.init_perturbation must be >= 0");
    if (init == InitMode::explicit_values && (theta0.size() != 3 || psi0.size() != 5))
      throw ConfigError("train.init = explicit needs train.theta0 (3 values) and train.psi0 (5 values)");
    if (!(divergence_bound > 0.0)) throw ConfigError("train.divergence_bound must be > 0");
    if (eval_episodes < 2) throw ConfigError("evaluate.episodes must be >= 2");
    for (const auto& p : eval_policies)
      if (p != "baseline" && p != "oracle" && p != "trained" && p != "lifted")
        throw ConfigError("evaluate.policies: unknown policy '" + p + "'");
    for (const auto& p : sweep_parameters) {
      try {
        portfolio::parameter_index(p);
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("sweep.parameters: ") + e.what());
      }
    }
    if (sweep_offsets.empty()) throw ConfigError("sweep.offsets must not be empty");
    if (sweep_episodes < 2) throw ConfigError("sweep.episodes must be >= 2");
    if (diag_episodes < 2) throw ConfigError("diagnose.episodes must be >= 2");
    if (!(diag_z_threshold > 0.0)) throw ConfigError("diagnose.z_threshold must be > 0");
    if (diag_points == 0) throw ConfigError("diagnose.points must be positive");
    if (threads == 0) throw ConfigError("threads must be >= 1");
  }
};

inline ExperimentConfig config_from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto num = [](double& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); };
  };
  auto count = [](std::size_t& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = static_cast<std::size_t>(parse_uint(k, v));
    };
  };
  auto flag = [](bool& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_bool(k, v); };
  };
  auto nums = [](std::vector<double>& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_doubles(k, v); };
  };
  auto words = [](std::vector<std::string>& field) -> Setter {
    return [&field](const std::string&, const std::string& v) { field = split_list(v); };
  };

  const std::map<std::string, Setter> setters{
      {"market.r1", num(c.market.r1)},
      {"market.r2", num(c.market.r2)},
      {"market.sigma1", num(c.market.sigma1)},
      {"market.sigma2", num(c.market.sigma2)},
      {"market.alpha", num(c.market.alpha)},
      {"market.x0", num(c.market.x0)},
      {"grid.T", num(c.market.T)},
      {"grid.K", count(c.steps)},
      {"train.episodes", count(c.train_episodes)},
      {"train.temperature", num(c.temperature)},
      {"train.lr_theta", num(c.lr_theta)},
      {"train.lr_psi", num(c.lr_psi)},
      {"train.lr_decay_episodes", num(c.lr_decay_episodes)},
      {"train.theta_rate_scale", nums(c.theta_rate_scale)},
      {"train.psi_rate_scale", nums(c.psi_rate_scale)},
      {"train.init",
       [&c](const std::string& k, const std::string& v) {
         if (v == "optimal") c.init = InitMode::optimal;
         else if (v == "perturbed") c.init = InitMode::perturbed;
         else if (v == "explicit") c.init = InitMode::explicit_values;
         else throw ConfigError("'" + k + "' expects optimal, perturbed or explicit, got '" + v + "'");
       }},
      {"train.init_perturbation", num(c.init_perturbation)},
      {"train.theta0", nums(c.theta0)},
      {"train.psi0", nums(c.psi0)},
      {"train.normalized_q", flag(c.normalized_q)},
      {"train.divergence_bound", num(c.divergence_bound)},
      {"evaluate.episodes", count(c.eval_episodes)},
      {"evaluate.policies", words(c.eval_policies)},
      {"evaluate.baseline_action", num(c.baseline_action)},
      {"evaluate.trained_params",
       [&c](const std::string&, const std::string& v) { c.trained_params = v; }},
      {"sweep.parameters", words(c.sweep_parameters)},
      {"sweep.offsets", nums(c.sweep_offsets)},
      {"sweep.episodes", count(c.sweep_episodes)},
      {"sweep.normalized_q", flag(c.sweep_normalized_q)},
      {"diagnose.episodes", count(c.diag_episodes)},
      {"diagnose.z_threshold", num(c.diag_z_threshold)},
      {"diagnose.defects", flag(c.diag_defects)},
      {"diagnose.points", count(c.diag_points)},
      {"seed", [&c](const std::string& k, const std::string& v) { c.seed = parse_uint(k, v); }},
      {"threads",
       [&c](const std::string& k, const std::string& v) {
         c.threads = static_cast<unsigned>(parse_uint(k, v));
       }},
  };

  for (const auto& [k, v] : kv) {
    const auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(k, v);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return config_from_map(parse_key_values(in, path));
}

}  // namespace ctrsq
