#pragma once

// Command-line harness: scenario parsing, run orchestration, and CSV/JSON
// emission. All numeric output uses fixed formatting so identical inputs
// produce byte-identical file bodies; wall-clock timestamps appear only in
// '#' comment lines.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cvrmpc/errors.hpp"
#include "cvrmpc/mpc.hpp"
#include "cvrmpc/oracle.hpp"

namespace cvrmpc {

struct Scenario {
  std::string feeder;
  std::string profiles;
  std::string objective = "energy";
  int window = 8;
  double price_b = 0.0;
  std::string solver = "builtin";
  std::string out_dir;
  bool oracle = false;
};

// Reduced tap sets keep full-day receding-horizon runs tractable for the
// builtin solver; the single-step Volt-VAr table uses the full 33 positions.
constexpr int kDayRunTapPositions = 5;
constexpr int kTableTapPositions = 0;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Infeasible: return 1;
    case ErrorKind::Input: return 2;
    case ErrorKind::SolverLimit: return 3;
  }
  return 2;
}

inline const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Input: return "input";
    case ErrorKind::SolverLimit: return "solver_limit";
  }
  return "input";
}

namespace detail {

inline milp::MilpOptions solver_options() {
  milp::MilpOptions opts;
  if (const char* env = std::getenv("CVR_MPC_NODE_LIMIT")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw input_error("CVR_MPC_NODE_LIMIT must be a positive integer, got '" +
                        std::string(env) + "'");
    opts.node_limit = v;
  }
  return opts;
}

inline std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v == 0.0 ? 0.0 : v);  // no negative zero
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open for writing: " + path.string());
  return os;
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw input_error("cannot create output directory: " + dir);
  return p;
}

inline void write_timestamp_header(std::ostream& os, const std::string& command) {
  std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  os << "# cvr-mpc " << command << " generated " << buf << "\n";
}

inline void emit_error_json(const Error& e) {
  nlohmann::json j;
  j["error"]["kind"] = kind_name(e.kind());
  j["error"]["message"] = e.what();
  std::cout << j.dump() << "\n";
}

struct LoadedScenario {
  FeederBundle bundle;
  TopologyReport topo;
  Profiles profiles;
};

inline LoadedScenario load_scenario(const Scenario& sc) {
  LoadedScenario ls{load_feeder(sc.feeder), {}, load_profiles(sc.profiles)};
  ls.topo = validate_radial(ls.bundle.feeder);
  return ls;
}

inline void write_run_csv(std::ostream& os, const DeviceFleet& fleet, const SimulationResult& res,
                          const std::string& command) {
  write_timestamp_header(os, command);
  os << "step,p_t_kw,p_s_kw,cost_cents,soc,v_min,v_max,p_cd_kw";
  for (size_t r = 0; r < fleet.regulators.size(); ++r) os << ",tap_" << r;
  for (size_t c = 0; c < fleet.capacitors.size(); ++c) os << ",cap_" << c;
  for (size_t g = 0; g < fleet.dgs.size(); ++g) os << ",q_dg_" << g << "_pu";
  os << ",objective,nodes,pivots\n";
  for (const StepRecord& rec : res.records) {
    os << rec.step << "," << num(rec.p_t_kw) << "," << num(rec.p_s_kw) << ","
       << num(rec.cost_cents) << "," << num(rec.soc) << "," << num(rec.v_min) << ","
       << num(rec.v_max) << "," << num(rec.action.p_cd);
    for (int tap : rec.action.tap) os << "," << tap;
    for (int cap : rec.action.cap) os << "," << cap;
    for (double q : rec.action.q_dg) os << "," << num(q);
    os << "," << num(rec.objective) << "," << rec.nodes << "," << rec.pivots << "\n";
  }
}

inline nlohmann::json summary_json(const Scenario& sc, const SimulationResult& res) {
  nlohmann::json j;
  j["objective"] = sc.objective;
  j["window"] = sc.window;
  j["price_b_c_per_kwh"] = sc.price_b;
  j["steps"] = res.records.size();
  j["total_kwh"] = res.total_kwh;
  j["total_cost_cents"] = res.total_cost_cents;
  j["total_discharge_kwh"] = res.total_discharge_kwh;
  j["min_voltage_pu"] = res.min_voltage;
  j["completed"] = res.completed;
  if (!res.completed) {
    j["failed_step"] = res.failed_step;
    j["failure"] = res.failure;
  }
  return j;
}

inline int cmd_run(const Scenario& sc) {
  LoadedScenario ls = load_scenario(sc);
  Objective obj = parse_objective(sc.objective);
  if (sc.window < 1) throw input_error("window must be >= 1");
  auto out = prepare_out_dir(sc.out_dir);

  if (sc.solver == "export") {
    // Dump the first-window model in LP interchange format for an external
    // solver instead of running the day.
    HorizonProblem hp = build_horizon_problem(
        ls.bundle.feeder, ls.topo, ls.bundle.fleet, ls.profiles, obj, 0,
        std::min(sc.window, ls.profiles.steps),
        ls.bundle.fleet.battery ? ls.bundle.fleet.battery->soc0 : 0.0, sc.price_b,
        kDayRunTapPositions);
    milp::export_interchange(hp.model, (out / "model_window0.lp").string());
    return 0;
  }

  milp::MilpOptions opts = solver_options();
  SimulationResult res = run_day(ls.bundle.feeder, ls.topo, ls.bundle.fleet, ls.profiles, obj,
                                 sc.window, sc.price_b, kDayRunTapPositions, opts);
  {
    auto os = open_out(out / "run_steps.csv");
    write_run_csv(os, ls.bundle.fleet, res, "run");
  }
  {
    auto os = open_out(out / "run_summary.json");
    os << summary_json(sc, res).dump(2) << "\n";
  }
  if (!res.completed) throw Error(res.failure_kind, res.failure);

  if (sc.oracle) {
    int W = std::min(sc.window, ls.profiles.steps);
    OracleResult oracle = brute_force_schedule(
        ls.bundle.feeder, ls.topo, ls.bundle.fleet, ls.profiles, obj, 0, W,
        ls.bundle.fleet.battery ? ls.bundle.fleet.battery->soc0 : 0.0, sc.price_b,
        {kDayRunTapPositions, 1000000});
    double milp_obj = res.records.front().objective;
    double rel = std::abs(oracle.objective - milp_obj) / std::max(1.0, std::abs(milp_obj));
    nlohmann::json j;
    j["window"] = W;
    j["objective_milp"] = milp_obj;
    j["objective_oracle"] = oracle.objective;
    j["relative_error"] = rel;
    j["combinations"] = oracle.combinations;
    j["certified"] = rel <= 1e-6;
    auto os = open_out(out / "oracle_certification.json");
    os << j.dump(2) << "\n";
    if (rel > 1e-6)
      throw infeasible_error("oracle certification failed: relative error " + std::to_string(rel));
  }
  return 0;
}

inline int cmd_sweep_price_b(const Scenario& sc, const std::vector<double>& values_in) {
  LoadedScenario ls = load_scenario(sc);
  if (sc.window < 1) throw input_error("window must be >= 1");
  if (values_in.empty()) throw input_error("sweep requires at least one price_b value");
  std::vector<double> values;
  for (double v : values_in) {
    if (std::find(values.begin(), values.end(), v) != values.end()) {
      std::cerr << "warning: duplicate price_b value " << v << " ignored\n";
      continue;
    }
    values.push_back(v);
  }
  milp::MilpOptions opts = solver_options();
  auto out = prepare_out_dir(sc.out_dir);

  struct Row {
    double price_b;
    SimulationResult res;
  };
  std::vector<Row> rows;
  int first_failure = 0;
  // The depreciation sweep is a revenue-objective experiment by definition.
  for (double pb : values) {
    SimulationResult res = run_day(ls.bundle.feeder, ls.topo, ls.bundle.fleet, ls.profiles,
                                   Objective::Revenue, sc.window, pb, kDayRunTapPositions, opts);
    if (!res.completed && first_failure == 0) first_failure = exit_code(res.failure_kind);
    rows.push_back({pb, std::move(res)});
  }
  {
    auto os = open_out(out / "sweep_price_b.csv");
    write_timestamp_header(os, "sweep-price-b");
    os << "price_b_c_per_kwh,completed,total_discharge_kwh,total_kwh,total_cost_cents\n";
    for (const Row& r : rows)
      os << num(r.price_b, 2) << "," << (r.res.completed ? 1 : 0) << ","
         << num(r.res.total_discharge_kwh) << "," << num(r.res.total_kwh) << ","
         << num(r.res.total_cost_cents) << "\n";
  }
  if (first_failure != 0) {
    for (const Row& r : rows)
      if (!r.res.completed) throw Error(r.res.failure_kind, r.res.failure);
  }
  // Battery wear pricing must not increase utilization.
  std::vector<Row*> sorted;
  for (Row& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const Row* a, const Row* b) { return a->price_b < b->price_b; });
  for (size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->res.total_discharge_kwh > sorted[i - 1]->res.total_discharge_kwh + 1e-6)
      throw infeasible_error("discharge not monotone non-increasing in price_b (" +
                             num(sorted[i - 1]->price_b, 2) + " -> " +
                             num(sorted[i]->price_b, 2) + ")");
  return 0;
}

inline int cmd_validate_pf(const Scenario& sc, int steps) {
  LoadedScenario ls = load_scenario(sc);
  const Feeder& f = ls.bundle.feeder;
  if (steps <= 0 || steps > ls.profiles.steps) steps = ls.profiles.steps;
  auto out = prepare_out_dir(sc.out_dir);
  auto os = open_out(out / "pf_errors.csv");
  write_timestamp_header(os, "validate-pf");
  os << "step,load_mult,converged,max_err_pu,mean_err_pu,sweep_iterations\n";
  double worst = 0.0;
  bool all_converged = true;
  for (int t = 0; t < steps; ++t) {
    std::vector<Injection> inj = constant_power_injections(f, ls.profiles.load_mult[t]);
    for (const DgSpec& dg : ls.bundle.fleet.dgs)
      inj[f.index_of(dg.bus)].p_const -= ls.profiles.pv_at(dg.p_profile, t) / f.s_base_kva;
    os << t << "," << num(ls.profiles.load_mult[t]);
    try {
      PfComparison cmp = compare_pf(f, ls.topo, inj);
      worst = std::max(worst, cmp.max_error);
      os << ",1," << num(cmp.max_error, 8) << "," << num(cmp.mean_error, 8) << ","
         << cmp.sweep_iterations << "\n";
    } catch (const Error&) {
      all_converged = false;
      os << ",0,nan,nan,0\n";
    }
  }
  nlohmann::json j;
  j["steps"] = steps;
  j["max_err_pu"] = worst;
  j["all_converged"] = all_converged;
  auto js = open_out(out / "pf_summary.json");
  js << j.dump(2) << "\n";
  return 0;
}

inline int cmd_voltvar_table(const Scenario& sc) {
  LoadedScenario ls = load_scenario(sc);
  const DeviceFleet& fleet = ls.bundle.fleet;
  auto out = prepare_out_dir(sc.out_dir);
  auto os = open_out(out / "voltvar_table.csv");
  write_timestamp_header(os, "voltvar-table");
  os << "loading,step,load_mult,objective";
  for (size_t r = 0; r < fleet.regulators.size(); ++r) os << ",tap_" << r;
  for (size_t c = 0; c < fleet.capacitors.size(); ++c) os << ",cap_" << c;
  for (size_t g = 0; g < fleet.dgs.size(); ++g) os << ",q_dg_" << g << "_pu";
  os << "\n";
  if (fleet.regulators.empty() && fleet.capacitors.empty() && fleet.dgs.empty()) return 0;

  int t_min = 0, t_max = 0;
  for (int t = 1; t < ls.profiles.steps; ++t) {
    if (ls.profiles.load_mult[t] < ls.profiles.load_mult[t_min]) t_min = t;
    if (ls.profiles.load_mult[t] > ls.profiles.load_mult[t_max]) t_max = t;
  }
  milp::MilpOptions opts = solver_options();
  double soc0 = fleet.battery ? fleet.battery->soc0 : 0.0;
  for (auto [label, t] : {std::pair{"min", t_min}, std::pair{"max", t_max}}) {
    ControlAction actions[2];
    const char* names[2] = {"energy", "revenue"};
    for (int k = 0; k < 2; ++k) {
      Objective obj = k == 0 ? Objective::Energy : Objective::Revenue;
      MpcStepResult step = mpc_step(ls.bundle.feeder, ls.topo, fleet, ls.profiles, obj, t, 1,
                                    soc0, sc.price_b, kTableTapPositions, opts);
      actions[k] = step.action;
      os << label << "," << t << "," << num(ls.profiles.load_mult[t]) << "," << names[k];
      for (int tap : step.action.tap) os << "," << tap;
      for (int cap : step.action.cap) os << "," << cap;
      for (double q : step.action.q_dg) os << "," << num(q);
      os << "\n";
    }
    bool same = actions[0].tap == actions[1].tap && actions[0].cap == actions[1].cap;
    for (size_t g = 0; same && g < actions[0].q_dg.size(); ++g)
      same = std::abs(actions[0].q_dg[g] - actions[1].q_dg[g]) <= 1e-6;
    if (!same)
      throw infeasible_error(std::string("energy and revenue control settings differ at ") +
                             label + " loading (step " + std::to_string(t) + ")");
  }
  return 0;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Volt-VAr / CVR receding-horizon controller"};
  app.require_subcommand(1);

  Scenario sc;
  std::vector<double> sweep_values{0.0, 20.0, 60.0};
  int validate_steps = -1;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--feeder", sc.feeder, "feeder JSON file")->required();
    cmd->add_option("--profiles", sc.profiles, "day profiles CSV")->required();
    if (needs_out) cmd->add_option("--out", sc.out_dir, "output directory")->required();
  };

  CLI::App* run = app.add_subcommand("run", "simulate one day of receding-horizon control");
  add_common(run, true);
  run->add_option("--objective", sc.objective, "energy|revenue")->default_val("energy");
  run->add_option("--window", sc.window, "horizon length in steps")->default_val(8);
  run->add_option("--price-b", sc.price_b, "battery depreciation, cents/kWh")->default_val(0.0);
  run->add_option("--solver", sc.solver, "builtin|export")
      ->check(CLI::IsMember({"builtin", "export"}))
      ->default_val("builtin");
  run->add_flag("--oracle", sc.oracle, "certify the first window by brute force");

  CLI::App* sweep =
      app.add_subcommand("sweep-price-b", "revenue-objective day runs across depreciation costs");
  add_common(sweep, true);
  sweep->add_option("--window", sc.window, "horizon length in steps")->default_val(8);
  sweep->add_option("--values", sweep_values, "price_b values, cents/kWh")
      ->delimiter(',')
      ->default_str("0,20,60");

  CLI::App* validate =
      app.add_subcommand("validate-pf", "linear vs nonlinear power-flow error report");
  add_common(validate, true);
  validate->add_option("--steps", validate_steps, "number of profile steps (default: all)");

  CLI::App* table =
      app.add_subcommand("voltvar-table", "single-step control table at min/max loading");
  add_common(table, true);
  table->add_option("--price-b", sc.price_b, "battery depreciation, cents/kWh")->default_val(0.0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    detail::emit_error_json(input_error(e.what()));
    return 2;
  }

  try {
    if (run->parsed()) return detail::cmd_run(sc);
    if (sweep->parsed()) return detail::cmd_sweep_price_b(sc, sweep_values);
    if (validate->parsed()) return detail::cmd_validate_pf(sc, validate_steps);
    return detail::cmd_voltvar_table(sc);
  } catch (const Error& e) {
    detail::emit_error_json(e);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    detail::emit_error_json(input_error(e.what()));
    return 2;
  }
}

}  // namespace cvrmpc
