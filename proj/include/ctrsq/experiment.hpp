#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/config.hpp"
#include "ctrsq/csv.hpp"
#include "ctrsq/diagnostics.hpp"
#include "ctrsq/meta.hpp"
#include "ctrsq/oce.hpp"
#include "ctrsq/portfolio.hpp"
#include "ctrsq/qlearning.hpp"

namespace ctrsq::experiment {

/// Output of one command: named CSV tables plus human-readable lines.
struct CommandResult {
  std::vector<std::pair<std::string, CsvTable>> files;
  std::vector<std::string> messages;
  bool diagnostic_failure = false;

  const CsvTable& file(const std::string& name) const {
    for (const auto& [n, t] : files)
      if (n == name) return t;
    throw InvalidArgument("CommandResult: no file '" + name + "'");
  }
};

inline std::vector<std::string> all_parameter_names() {
  const auto& n = portfolio::parameter_names();
  return {n.begin(), n.end()};
}

inline std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct ParameterSet {
  std::vector<double> theta;
  std::vector<double> psi;
};

inline ParameterSet oracle_parameters(const ExperimentConfig& cfg) {
  const auto star = portfolio::optimal_params(cfg.market);
  return {star.theta.vec(), star.psi.vec()};
}

/// Initial (theta, psi) for training. The perturbed mode scales each
/// component by 1 + p or 1 - p, the sign drawn from the init substream.
inline ParameterSet initial_parameters(const ExperimentConfig& cfg) {
  if (cfg.init == InitMode::explicit_values) return {cfg.theta0, cfg.psi0};
  auto p = oracle_parameters(cfg);
  if (cfg.init == InitMode::optimal) return p;
  Rng r = RandomStream(cfg.seed).derive(StreamTag::init).engine();
  for (auto& v : p.theta) v *= (r() & 1) ? 1.0 + cfg.init_perturbation : 1.0 - cfg.init_perturbation;
  for (auto& v : p.psi) v *= (r() & 1) ? 1.0 + cfg.init_perturbation : 1.0 - cfg.init_perturbation;
  return p;
}

inline TrainingConfig training_config(const ExperimentConfig& cfg) {
  TrainingConfig t;
  t.episodes = cfg.train_episodes;
  t.grid = cfg.grid();
  t.lr_theta = {cfg.lr_theta, cfg.lr_decay_episodes};
  t.lr_psi = {cfg.lr_psi, cfg.lr_decay_episodes};
  t.theta_rate_scale = cfg.theta_rate_scale;
  t.psi_rate_scale = cfg.psi_rate_scale;
  t.temperature = cfg.temperature;
  const auto init = initial_parameters(cfg);
  t.theta0 = init.theta;
  t.psi0 = init.psi;
  t.x0 = {cfg.market.x0};
  t.divergence_bound = cfg.divergence_bound;
  t.normalized_q = cfg.normalized_q;
  return t;
}

inline TrainingLog run_training(const ExperimentConfig& cfg) {
  const auto& m = cfg.market;
  return train(portfolio::mv_environment(m), *portfolio::theta_value_family(m.alpha, m.T),
               portfolio::psi_q_family(m.alpha, m.T), training_config(cfg), RandomStream(cfg.seed));
}

/// b* for a theta vector; a value function that is not concave in the budget
/// is reported as a divergence of the run that produced it.
inline double budget_for(const ExperimentConfig& cfg, const std::vector<double>& theta,
                         std::size_t episode = 0) {
  const auto& m = cfg.market;
  const std::vector<double> x0{m.x0};
  try {
    return optimal_budget(bind_value(portfolio::theta_value_family(m.alpha, m.T), theta), 0.0, x0);
  } catch (const UnboundedObjective& e) {
    throw DivergenceError(std::string("no finite optimal budget for the learned value function: ") +
                              e.what(),
                          episode);
  }
}

// ---------------------------------------------------------------------------
// oracle

inline CommandResult cmd_oracle(const ExperimentConfig& cfg) {
  const auto& m = cfg.market;
  const auto mc = portfolio::market_constants(m);
  const auto star = oracle_parameters(cfg);
  const std::vector<double> x0{m.x0};
  const auto jstar = bind_value(portfolio::theta_value_family(m.alpha, m.T), star.theta);
  const double b = optimal_budget(jstar, 0.0, x0);

  std::vector<std::string> header{"Px", "Pxx", "Pnl"};
  for (const auto& n : all_parameter_names()) header.push_back(n);
  header.push_back("b_star");
  header.push_back("optimal_value");
  CsvTable constants("oracle_constants/1", header);
  {
    auto row = constants.row();
    row << mc.Px << mc.Pxx << mc.Pnl;
    for (double v : concat(star.theta, star.psi)) row << v;
    row << b << optimal_value(jstar, 0.0, x0, b);
  }

  CsvTable table("oracle_table/1", {"t", "x", "b0", "b1", "a_star", "J_star", "q_minus", "q_plus"});
  for (double t : {0.0, 0.25, 0.5, 0.75, 0.95})
    for (double x : {0.5, 1.0, 1.5, 2.0}) {
      const double b0 = -b;
      const double a = portfolio::optimal_control(t, x, b0, 1.0, m);
      table.row() << t << x << b0 << 1.0 << a << portfolio::optimal_value(t, x, b0, 1.0, m)
                  << portfolio::optimal_q(t, x, b0, 1.0, a - 0.5, m)
                  << portfolio::optimal_q(t, x, b0, 1.0, a + 0.5, m);
    }

  CommandResult out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "Px=%.6f Pxx=%.6f Pnl=%.6f b*=%.6f", mc.Px, mc.Pxx, mc.Pnl, b);
  out.messages.emplace_back(buf);
  out.files.emplace_back("oracle_constants.csv", std::move(constants));
  out.files.emplace_back("oracle_table.csv", std::move(table));
  return out;
}

// ---------------------------------------------------------------------------
// train

inline CsvTable training_log_table(const TrainingLog& log) {
  std::vector<std::string> header{"episode"};
  header.insert(header.end(), log.theta_names.begin(), log.theta_names.end());
  header.insert(header.end(), log.psi_names.begin(), log.psi_names.end());
  for (const char* c : {"delta_norm_theta", "delta_norm_psi", "terminal_payoff"}) header.emplace_back(c);
  CsvTable t("training_log/1", header);
  {
    auto row = t.row();
    row << std::size_t{0};
    for (double v : concat(log.theta0, log.psi0)) row << v;
    row << 0.0 << 0.0 << 0.0;
  }
  for (const auto& r : log.records) {
    auto row = t.row();
    row << r.episode;
    for (double v : concat(r.theta, r.psi)) row << v;
    row << r.delta_norm_theta << r.delta_norm_psi << r.terminal_payoff;
  }
  return t;
}

inline CsvTable final_params_table(const ExperimentConfig& cfg, const ParameterSet& p) {
  const auto star = oracle_parameters(cfg);
  const auto names = all_parameter_names();
  const auto value = concat(p.theta, p.psi);
  const auto opt = concat(star.theta, star.psi);
  CsvTable t("final_params/1", {"parameter", "value", "optimal", "relative_error"});
  for (std::size_t i = 0; i < names.size(); ++i)
    t.row() << names[i] << value[i] << opt[i] << (value[i] - opt[i]) / std::abs(opt[i]);
  return t;
}

/// Reads a final-parameters CSV back into (theta, psi).
inline ParameterSet read_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file '" + path + "'");
  std::map<std::string, double> values;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (header) {
      if (cells.size() < 2 || cells[0] != "parameter" || cells[1] != "value")
        throw ConfigError(path + ": expected a 'parameter,value' header");
      header = false;
      continue;
    }
    if (cells.size() < 2) throw ConfigError(path + ": short row '" + line + "'");
    values[cells[0]] = parse_double(cells[0], cells[1]);
  }
  ParameterSet p;
  const auto names = all_parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto it = values.find(names[i]);
    if (it == values.end()) throw ConfigError(path + ": missing parameter '" + names[i] + "'");
    (i < 3 ? p.theta : p.psi).push_back(it->second);
  }
  return p;
}

struct TrainOutcome {
  TrainingLog log;
  CommandResult result;
};

inline TrainOutcome train_with_outputs(const ExperimentConfig& cfg) {
  TrainOutcome o{run_training(cfg), {}};
  const ParameterSet fin{o.log.final_theta(), o.log.final_psi()};
  o.result.files.emplace_back("training_log.csv", training_log_table(o.log));
  o.result.files.emplace_back("final_params.csv", final_params_table(cfg, fin));
  const auto star = oracle_parameters(cfg);
  const auto names = all_parameter_names();
  const auto v = concat(fin.theta, fin.psi);
  const auto s = concat(star.theta, star.psi);
  for (std::size_t i = 0; i < names.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %+.6f  optimal %+.6f  rel.err %+.3f", names[i].c_str(), v[i],
                  s[i], (v[i] - s[i]) / std::abs(s[i]));
    o.result.messages.emplace_back(buf);
  }
  return o;
}

inline CommandResult cmd_train(const ExperimentConfig& cfg) { return train_with_outputs(cfg).result; }

// ---------------------------------------------------------------------------
// evaluate

struct PolicyRow {
  std::string policy;
  double b_star;  // NaN for policies that are not lifted
  portfolio::EvaluationResult result;
};

/// mv - [(x0 + mean) - (alpha/2) (N-1)/N std^2]; zero up to rounding.
inline double mv_identity_residual(const portfolio::EvaluationResult& r, const portfolio::MarketParams& m) {
  const double n = static_cast<double>(r.episodes);
  return r.mv_objective -
         ((m.x0 + r.mean_return) - 0.5 * m.alpha * r.std_return * r.std_return * (n - 1.0) / n);
}

/// Every policy sees the same Brownian paths (episode i on the same substream).
inline std::vector<PolicyRow> evaluate_policies(const ExperimentConfig& cfg,
                                                const std::optional<ParameterSet>& trained) {
  const auto& m = cfg.market;
  const auto grid = cfg.grid();
  const RandomStream stream = RandomStream(cfg.seed).derive(StreamTag::evaluation);
  const auto env = portfolio::mv_environment(m);
  const auto qfam = portfolio::psi_q_family(m.alpha, m.T);
  const auto star = oracle_parameters(cfg);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<PolicyRow> rows;
  for (const auto& name : cfg.eval_policies) {
    if (name == "baseline") {
      rows.push_back({name, nan,
                      portfolio::evaluate_policy(ConstantPolicy{{cfg.baseline_action}}, m, grid,
                                                 cfg.eval_episodes, stream, cfg.threads)});
    } else if (name == "oracle") {
      const double b = budget_for(cfg, star.theta);
      rows.push_back({name, b,
                      portfolio::evaluate_policy(
                          lift_policy(portfolio::OptimalControlPolicy{m}, b, env.reward, 0.0), m, grid,
                          cfg.eval_episodes, stream, cfg.threads)});
    } else if (name == "lifted") {
      const double b = budget_for(cfg, star.theta);
      const GibbsPolicy gp(qfam, star.psi, cfg.temperature);
      rows.push_back({name, b,
                      portfolio::evaluate_policy(lift_policy(gp, b, env.reward, 0.0), m, grid,
                                                 cfg.eval_episodes, stream, cfg.threads)});
    } else if (name == "trained") {
      if (!trained) throw InvalidArgument("evaluate_policies: trained parameters required");
      const double b = budget_for(cfg, trained->theta, cfg.train_episodes);
      const GibbsPolicy gp = [&] {
        try {
          return GibbsPolicy(qfam, trained->psi, cfg.temperature);
        } catch (const InvalidArgument& e) {
          throw DivergenceError(std::string("trained q parameters are unusable: ") + e.what(),
                                cfg.train_episodes);
        }
      }();
      try {
        rows.push_back({name, b,
                        portfolio::evaluate_policy(lift_policy(gp, b, env.reward, 0.0), m, grid,
                                                   cfg.eval_episodes, stream, cfg.threads)});
      } catch (const NotNormalizable& e) {
        throw DivergenceError(std::string("trained policy is not normalizable: ") + e.what(),
                              cfg.train_episodes);
      }
    }
  }
  return rows;
}

inline CommandResult cmd_evaluate(const ExperimentConfig& cfg) {
  CommandResult out;
  std::optional<ParameterSet> trained;
  const bool wants_trained =
      std::find(cfg.eval_policies.begin(), cfg.eval_policies.end(), "trained") != cfg.eval_policies.end();
  if (wants_trained) {
    if (!cfg.trained_params.empty()) {
      trained = read_params(cfg.trained_params);
    } else {
      auto t = train_with_outputs(cfg);
      trained = ParameterSet{t.log.final_theta(), t.log.final_psi()};
      for (auto& f : t.result.files) out.files.push_back(std::move(f));
    }
  }
  const auto rows = evaluate_policies(cfg, trained);

  CsvTable summary("evaluation/1", {"policy", "episodes", "b_star", "mean_return", "std_return",
                                    "mv_objective", "mv_identity_residual"});
  CsvTable curves("curves/1", {"policy", "t", "mean_return", "mv_objective"});
  for (const auto& r : rows) {
    summary.row() << r.policy << r.result.episodes << r.b_star << r.result.mean_return
                  << r.result.std_return << r.result.mv_objective
                  << mv_identity_residual(r.result, cfg.market);
    for (std::size_t k = 0; k < r.result.times.size(); ++k)
      curves.row() << r.policy << r.result.times[k] << r.result.curve_mean_return[k]
                   << r.result.curve_mv[k];
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-8s mean return %.4f  std %.4f  MV %.4f", r.policy.c_str(),
                  r.result.mean_return, r.result.std_return, r.result.mv_objective);
    out.messages.emplace_back(buf);
  }
  out.files.emplace_back("evaluation.csv", std::move(summary));
  out.files.emplace_back("curves.csv", std::move(curves));
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  std::string parameter;
  double offset;  // relative to |p*|
  portfolio::SweepPoint point;
};

/// Offsets are relative to |p*|. All runs share the sweep substream, and the
/// zero-offset run is shared by every parameter.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  const auto& m = cfg.market;
  const auto grid = cfg.grid();
  const RandomStream stream = RandomStream(cfg.seed).derive(StreamTag::sweep);
  portfolio::SweepOptions opt;
  opt.temperature = cfg.temperature;
  opt.normalized_q = cfg.sweep_normalized_q;
  opt.threads = cfg.threads;
  const auto star = oracle_parameters(cfg);
  const auto params = cfg.sweep_parameters.empty() ? all_parameter_names() : cfg.sweep_parameters;

  auto moments = [&](const std::vector<std::array<double, 8>>& rows, std::size_t id) {
    Moments mom;
    for (const auto& r : rows) mom.add(r[id]);
    return mom;
  };

  std::optional<std::vector<std::array<double, 8>>> zero;
  std::vector<SweepRow> out;
  for (const auto& name : params) {
    const std::size_t id = portfolio::parameter_index(name);
    for (double rel : cfg.sweep_offsets) {
      auto theta = star.theta;
      auto psi = star.psi;
      double& target = id < 3 ? theta[id] : psi[id - 3];
      const double delta = rel * std::abs(target);
      target += delta;
      std::vector<std::array<double, 8>> fresh;
      const std::vector<std::array<double, 8>>* rows = nullptr;
      if (rel == 0.0) {
        if (!zero) zero = portfolio::episode_updates(m, grid, theta, psi, cfg.sweep_episodes, stream, opt);
        rows = &*zero;
      } else {
        fresh = portfolio::episode_updates(m, grid, theta, psi, cfg.sweep_episodes, stream, opt);
        rows = &fresh;
      }
      const Moments mom = moments(*rows, id);
      out.push_back({name, rel, {delta, target, mom.mean(), mom.standard_error()}});
    }
  }
  return out;
}

inline CommandResult cmd_sweep(const ExperimentConfig& cfg) {
  CommandResult out;
  CsvTable t("sweep/1", {"parameter", "offset", "delta", "value", "mean_update", "stderr", "z"});
  for (const auto& r : run_sweep(cfg)) {
    t.row() << r.parameter << r.offset << r.point.offset << r.point.value << r.point.mean
            << r.point.stderr_mean << r.point.z();
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-10s offset %+.3f  mean %+.4e  se %.2e  z %+.2f", r.parameter.c_str(),
                  r.offset, r.point.mean, r.point.stderr_mean, r.point.z());
    out.messages.emplace_back(buf);
  }
  out.files.emplace_back("sweep.csv", std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnosticRow {
  std::string test;
  double estimate;
  double stderr_estimate;  // 0 for deterministic checks
  std::optional<double> z;
  double tolerance;  // z threshold for MC rows, absolute bound otherwise
  bool pass;
};

inline DerivativeOracle analytic_derivatives(const portfolio::MarketParams& m) {
  return [m](const AugmentedPoint& p) {
    const auto j = portfolio::optimal_value_jet(p.t, p.x[0], p.b0, p.b1, m);
    ValueDerivatives d;
    d.value = j.value;
    d.dt = j.dt;
    d.dx = {j.dx};
    d.dxx = Matrix(1, 1);
    d.dxx(0, 0) = j.dxx;
    d.db0 = j.db0;
    d.db1 = j.db1;
    return d;
  };
}

/// Uniform points with t in [0, 0.99 T], x in [0.2, 3], b0 in [-3, 0], b1 in [0.5, 2].
inline std::vector<StatePoint> random_state_points(const ExperimentConfig& cfg, std::size_t n) {
  Rng r = RandomStream(cfg.seed).derive(1, static_cast<std::uint64_t>(StreamTag::init)).engine();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<StatePoint> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 0.99 * cfg.market.T * u(r);
    const double x = 0.2 + 2.8 * u(r);
    const double b0 = -3.0 * u(r);
    const double b1 = 0.5 + 1.5 * u(r);
    pts.push_back({t, {x}, b0, b1});
  }
  return pts;
}

/// Closed-form J* with c1 scaled by `c1_factor`.
inline AugmentedValue closed_form_value(const portfolio::MarketParams& m, double c1_factor = 1.0) {
  return [m, c1_factor](const AugmentedPoint& p) {
    const auto c = portfolio::c_coefficients(p.t, p.b0, p.b1, m);
    const double x = p.x[0];
    return c.c0 + c1_factor * c.c1 * x + c.c2 * x * x;
  };
}

inline AugmentedActionValue closed_form_q(const portfolio::MarketParams& m, double shift = 0.0) {
  return [m, shift](const AugmentedPoint& p, double a) {
    return portfolio::optimal_q(p.t, p.x[0], p.b0, p.b1, a, m) + shift;
  };
}

/// Max relative residual of the c-coefficient ODEs against central differences in t.
inline double c_ode_residual(const portfolio::MarketParams& m, const std::vector<StatePoint>& pts) {
  const auto mc = portfolio::market_constants(m);
  double worst = 0.0;
  for (const auto& p : pts) {
    const double h = 1e-5;
    const auto up = portfolio::c_coefficients(p.t + h, p.b0, p.b1, mc, m.alpha, m.T);
    const auto dn = portfolio::c_coefficients(p.t - h, p.b0, p.b1, mc, m.alpha, m.T);
    const auto rhs = portfolio::c_coefficients_dt(p.t, p.b0, p.b1, mc, m.alpha, m.T);
    const double fd[3] = {(up.c0 - dn.c0) / (2 * h), (up.c1 - dn.c1) / (2 * h), (up.c2 - dn.c2) / (2 * h)};
    const double an[3] = {rhs.c0, rhs.c1, rhs.c2};
    for (int i = 0; i < 3; ++i)
      worst = std::max(worst, std::abs(fd[i] - an[i]) / std::max(1.0, std::abs(an[i])));
  }
  return worst;
}

inline std::vector<DiagnosticRow> run_diagnostics(const ExperimentConfig& cfg) {
  const auto& m = cfg.market;
  const auto grid = cfg.grid();
  const auto env = portfolio::mv_environment(m);
  const auto star = oracle_parameters(cfg);
  const auto qfam = portfolio::psi_q_family(m.alpha, m.T);
  const auto jfam = portfolio::theta_value_family(m.alpha, m.T);
  const double zt = cfg.diag_z_threshold;
  const RandomStream root = RandomStream(cfg.seed).derive(StreamTag::evaluation);
  std::vector<DiagnosticRow> rows;

  const double b = budget_for(cfg, star.theta);
  const StatePoint start{0.0, {m.x0}, -b, 1.0};
  const auto jstar = closed_form_value(m);
  const auto qstar = closed_form_q(m);
  const GibbsPolicy gibbs(qfam, star.psi, cfg.temperature);
  const double a_base = cfg.baseline_action;
  auto baseline = [a_base](const AugmentedStepContext&, Rng&, std::span<double> a) { a[0] = a_base; };

  auto martingale = [&](const AugmentedValue& j, const AugmentedActionValue& q,
                        std::uint64_t sub, bool gibbs_behavior) {
    const auto tests = default_test_functions(j);
    const RandomStream s = root.derive(sub, static_cast<std::uint64_t>(StreamTag::evaluation));
    return gibbs_behavior
               ? martingale_residual(j, q, gibbs, env, grid, start, cfg.diag_episodes, s, tests, cfg.threads)
               : martingale_residual(j, q, baseline, env, grid, start, cfg.diag_episodes, s, tests,
                                     cfg.threads);
  };

  for (const bool g : {true, false}) {
    const std::string behavior = g ? "gibbs" : "baseline";
    const auto rep = martingale(jstar, qstar, g ? 1 : 2, g);
    for (const auto& s : rep.stats)
      rows.push_back({"martingale:" + behavior + ":" + s.name, s.mean, s.stderr_mean, s.z, zt,
                      std::abs(s.z) < zt});
  }

  if (cfg.diag_defects) {
    const double detect = std::max(5.0, zt);
    struct Defect {
      const char* name;
      AugmentedValue j;
      AugmentedActionValue q;
    };
    const Defect defects[] = {{"q_plus_0.1", jstar, closed_form_q(m, 0.1)},
                              {"c1_times_1.01", closed_form_value(m, 1.01), qstar}};
    // The Gibbs behavior policy explores with action std near 1.4, which buries
    // small drifts in noise; defects are run under the baseline behavior.
    for (const auto& d : defects) {
      const auto rep = martingale(d.j, d.q, 2, false);
      const MartingaleStat* worst = &rep.stats.front();
      for (const auto& s : rep.stats)
        if (std::abs(s.z) > std::abs(worst->z)) worst = &s;
      rows.push_back({std::string("defect:") + d.name + ":baseline:" + worst->name, worst->mean,
                      worst->stderr_mean, worst->z, detect, std::abs(worst->z) > detect});
    }
  }

  const auto pts = random_state_points(cfg, cfg.diag_points);
  const auto derivs = analytic_derivatives(m);
  {
    double worst = 0.0;
    bool singular = false;
    for (const auto& r : hjb_residual(derivs, env, pts)) {
      singular = singular || r.singular;
      if (!r.singular) worst = std::max(worst, std::abs(r.residual));
    }
    rows.push_back({"hjb:sup_analytic", worst, 0.0, std::nullopt, 1e-8, !singular && worst <= 1e-8});
  }
  {
    const auto mc = portfolio::market_constants(m);
    double worst = 0.0;
    for (const auto& p : pts) {
      const auto j = portfolio::optimal_value_jet(p.t, p.x[0], p.b0, p.b1, m);
      worst = std::max(worst, std::abs(portfolio::hjb_residual_closed_form(j, p.x[0], mc)));
    }
    rows.push_back({"hjb:closed_form", worst, 0.0, std::nullopt, 1e-8, worst <= 1e-8});
  }
  {
    const double r = c_ode_residual(m, pts);
    rows.push_back({"c_ode:relative", r, 0.0, std::nullopt, 1e-6, r <= 1e-6});
  }
  {
    double worst = 0.0;
    for (const auto& sp : pts) {
      const AugmentedPoint p = sp.view();
      const auto f = derivs(p);
      const double as = portfolio::optimal_control(p.t, p.x[0], p.b0, p.b1, m);
      for (double a : {as - 0.5, as, as + 0.5, 0.0, 1.0}) {
        const double av[1] = {a};
        worst = std::max(worst, std::abs(augmented_generator(env, f, p, av) - qstar(p, a)));
      }
    }
    rows.push_back({"generator_identity", worst, 0.0, std::nullopt, 1e-8, worst <= 1e-8});
  }
  {
    std::vector<std::pair<StatePoint, double>> qpts;
    for (const auto& p : pts) qpts.emplace_back(p, 0.3 + p.x[0] * 0.1);
    const double gt = gradient_check(*jfam, star.theta, pts, 1e-6);
    const double gq = gradient_check(*qfam, star.psi, qpts, 1e-6);
    rows.push_back({"gradient:theta", gt, 0.0, std::nullopt, 1e-5, gt <= 1e-5});
    rows.push_back({"gradient:psi", gq, 0.0, std::nullopt, 1e-5, gq <= 1e-5});
  }
  {
    const StatePoint mid{0.5 * m.T, {m.x0}, -b, 1.0};
    const double as = portfolio::optimal_control(mid.t, mid.x[0], mid.b0, mid.b1, m);
    const std::vector<double> dts{0.04 * m.T, 0.02 * m.T, 0.01 * m.T};
    // Largest step not above the training step that divides every dt.
    const double sim_step = dts.back() / std::ceil(dts.back() * static_cast<double>(cfg.steps) / m.T - 1e-9);
    std::uint64_t sub = 10;
    for (const auto& [label, a] :
         {std::pair<const char*, double>{"a_star_minus_0.5", as - 0.5}, {"a_star", as}, {"a_star_plus_0.5", as + 0.5}}) {
      const auto rep = qdt_expansion_check(jstar, derivs, qstar, a, env, mid, dts, sim_step,
                                           cfg.diag_episodes, root.derive(sub++, 0), cfg.threads);
      const double z = rep.stderr_limit > 0.0 ? (rep.limit - rep.q_value) / rep.stderr_limit : 0.0;
      rows.push_back({std::string("qdt:") + label, rep.limit - rep.q_value, rep.stderr_limit, z, rep.tolerance,
                      rep.pass});
    }
  }
  return rows;
}

inline CommandResult cmd_diagnose(const ExperimentConfig& cfg) {
  CommandResult out;
  CsvTable t("diagnostics/1", {"test", "estimate", "stderr", "z", "tolerance", "pass"});
  for (const auto& r : run_diagnostics(cfg)) {
    auto row = t.row();
    row << r.test << r.estimate << r.stderr_estimate;
    if (r.z) row << *r.z;
    else row << "";
    row << r.tolerance << r.pass;
    if (!r.pass) out.diagnostic_failure = true;
    char buf[240];
    std::snprintf(buf, sizeof buf, "%-4s %-44s %+.4e  se %.2e%s", r.pass ? "ok" : "FAIL", r.test.c_str(),
                  r.estimate, r.stderr_estimate, r.z ? ("  z " + std::to_string(*r.z)).c_str() : "");
    out.messages.emplace_back(buf);
  }
  out.files.emplace_back("diagnostics.csv", std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// oce

inline std::vector<double> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sample file '" + path + "'");
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t");
    out.push_back(parse_double("sample", line.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("sample file '" + path + "' has no values");
  return out;
}

inline OceEstimate cmd_oce(const std::string& utility, const std::vector<double>& samples) {
  return oce_estimate(UtilityFunction::parse(utility), samples);
}

}  // namespace ctrsq::experiment
