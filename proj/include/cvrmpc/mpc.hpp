#pragma once

// Receding-horizon controller: assembles the multi-period scheduling MILP
// (either objective), extracts first-step controls, applies them to the
// nonlinear plant, advances SOC, and loops over the day. The controller sees
// the linear model; the plant is the backward/forward sweep.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cvrmpc/bess.hpp"
#include "cvrmpc/devices.hpp"
#include "cvrmpc/errors.hpp"
#include "cvrmpc/feeder.hpp"
#include "cvrmpc/milp.hpp"
#include "cvrmpc/powerflow.hpp"

namespace cvrmpc {

enum class Objective { Energy, Revenue };

inline Objective parse_objective(const std::string& s) {
  if (s == "energy") return Objective::Energy;
  if (s == "revenue") return Objective::Revenue;
  throw input_error("unknown objective '" + s + "' (expected energy|revenue)");
}

// Day-ahead series: load multiplier, tariff (cents/kWh) and per-DG active
// generation (kW), keyed by profile column name.
struct Profiles {
  int steps = 96;
  double tau = 0.25;  // hours per interval
  std::vector<double> load_mult;
  std::vector<double> price;
  std::map<std::string, std::vector<double>> pv;

  double pv_at(const std::string& column, int t) const {
    auto it = pv.find(column);
    if (it == pv.end()) throw input_error("profiles: missing pv column '" + column + "'");
    return it->second[static_cast<size_t>(t)];
  }
  double max_price() const { return *std::max_element(price.begin(), price.end()); }
};

inline Profiles load_profiles(const std::string& path, double tau = 0.25) {
  std::ifstream is(path);
  if (!is) throw input_error("cannot open profiles file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw input_error("profiles file is empty: " + path);
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  if (cols.size() < 3 || cols[0] != "step" || cols[1] != "load_mult" ||
      cols[2] != "price_c_per_kwh")
    throw input_error("profiles: header must start with step,load_mult,price_c_per_kwh");
  Profiles p;
  p.tau = tau;
  for (size_t k = 3; k < cols.size(); ++k) p.pv[cols[k]] = {};
  int row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t pos = 0;
        vals.push_back(std::stod(cell, &pos));
        if (pos != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw input_error("profiles: non-numeric cell '" + cell + "' at row " +
                          std::to_string(row));
      }
    }
    if (vals.size() != cols.size())
      throw input_error("profiles: row " + std::to_string(row) + " has " +
                        std::to_string(vals.size()) + " cells, expected " +
                        std::to_string(cols.size()));
    if (static_cast<int>(std::lround(vals[0])) != row)
      throw input_error("profiles: step column must count 0..n-1 (row " + std::to_string(row) +
                        ")");
    if (vals[1] < 0) throw input_error("profiles: negative load multiplier at row " +
                                       std::to_string(row));
    if (vals[2] < 0) throw input_error("profiles: negative price at row " + std::to_string(row));
    p.load_mult.push_back(vals[1]);
    p.price.push_back(vals[2]);
    for (size_t k = 3; k < cols.size(); ++k) p.pv[cols[k]].push_back(vals[k]);
    ++row;
  }
  if (row == 0) throw input_error("profiles: no data rows in " + path);
  p.steps = row;
  return p;
}

// One time-step's applied controls.
struct ControlAction {
  std::vector<int> tap;      // per regulator
  std::vector<int> cap;      // 0/1 per capacitor
  std::vector<double> q_dg;  // pu per DG
  double p_cd = 0.0;         // kW, + charge / - discharge
};

// Handle map for one assembled horizon model.
struct HorizonVars {
  std::vector<StepVars> pf;                    // per window offset
  std::vector<std::vector<RegulatorVars>> reg;  // [t][r]
  std::vector<std::vector<int>> cap_u;          // [t][c]
  std::vector<int> p_t_kw;                      // P_T variable per t
  BessVars bess;                                // empty when no battery
  std::vector<Regulator> regulators;            // tap sets in use
};

struct HorizonProblem {
  milp::Model model;
  HorizonVars vars;
  int start = 0;
  int window = 0;
  bool has_battery = false;
  bool bigm = false;
};

// kPositions <= 0 keeps the full 33-tap sets.
inline HorizonProblem build_horizon_problem(const Feeder& f, const TopologyReport& topo,
                                            const DeviceFleet& fleet, const Profiles& profiles,
                                            Objective obj, int m, int W, double soc_m,
                                            double price_b, int tap_positions = 0) {
  if (W < 1) throw input_error("window length must be >= 1");
  if (m < 0 || m + W > profiles.steps)
    throw input_error("profile window [" + std::to_string(m) + "," + std::to_string(m + W - 1) +
                      "] out of range for " + std::to_string(profiles.steps) + " steps");
  HorizonProblem hp;
  hp.start = m;
  hp.window = W;
  hp.has_battery = fleet.battery.has_value();
  hp.bigm = hp.has_battery && obj == Objective::Revenue;
  milp::Model& mdl = hp.model;
  const int n = static_cast<int>(f.buses.size());
  const int ne = static_cast<int>(f.edges.size());
  const int root = f.substation_index();

  for (const RegulatorSpec& rs : fleet.regulators)
    hp.vars.regulators.push_back(Regulator::from_spec(rs, tap_positions));
  if (hp.has_battery) {
    fleet.battery->validate();
    hp.vars.bess = add_bess_variables(mdl, *fleet.battery, W, hp.bigm);
    emit_bess_constraints(mdl, *fleet.battery, hp.vars.bess, soc_m, hp.bigm);
  }

  std::vector<milp::Term> objective;
  for (int t = 0; t < W; ++t) {
    const int abs_t = m + t;
    const double mult = profiles.load_mult[abs_t];
    const std::string ts = "_t" + std::to_string(t);
    StepVars sv;
    sv.v.resize(n);
    sv.P.resize(ne);
    sv.Q.resize(ne);
    sv.p_load.assign(n, -1);
    sv.q_load.assign(n, -1);
    for (int b = 0; b < n; ++b) {
      double lb = (b == root) ? f.v0 : kVminSq;
      double ub = (b == root) ? f.v0 : kVmaxSq;
      sv.v[b] = mdl.add_variable("v_b" + std::to_string(f.buses[b].id) + ts, lb, ub,
                                 milp::VarType::Continuous);
    }
    for (int e = 0; e < ne; ++e) {
      std::string es = "_e" + std::to_string(e) + ts;
      sv.P[e] = mdl.add_variable("P" + es, -milp::kInf, milp::kInf, milp::VarType::Continuous);
      sv.Q[e] = mdl.add_variable("Q" + es, -milp::kInf, milp::kInf, milp::VarType::Continuous);
    }
    FixedGeneration gen;
    gen.p_dg.assign(n, 0.0);
    std::vector<std::pair<double, double>> qdg_bounds;
    for (const DgSpec& dg : fleet.dgs) {
      double p_kw = profiles.pv_at(dg.p_profile, abs_t);
      double p_pu = p_kw / f.s_base_kva;
      gen.p_dg[f.index_of(dg.bus)] += p_pu;
      qdg_bounds.push_back(inverter_q_bounds(dg.s_rated, p_pu));
    }
    for (size_t g = 0; g < fleet.dgs.size(); ++g)
      sv.q_dg.push_back(mdl.add_variable("q_dg_b" + std::to_string(fleet.dgs[g].bus) + ts,
                                         qdg_bounds[g].first, qdg_bounds[g].second,
                                         milp::VarType::Continuous));
    for (size_t c = 0; c < fleet.capacitors.size(); ++c)
      sv.q_cap.push_back(mdl.add_variable("q_cap_b" + std::to_string(fleet.capacitors[c].bus) + ts,
                                          0.0, fleet.capacitors[c].q_rated * kVmaxSq,
                                          milp::VarType::Continuous));
    for (int b = 0; b < n; ++b) {
      const Bus& bus = f.buses[b];
      if (bus.p0 == 0.0 && bus.q0 == 0.0) continue;
      std::string bs = "_b" + std::to_string(bus.id) + ts;
      sv.p_load[b] =
          mdl.add_variable("p_load" + bs, -milp::kInf, milp::kInf, milp::VarType::Continuous);
      sv.q_load[b] =
          mdl.add_variable("q_load" + bs, -milp::kInf, milp::kInf, milp::VarType::Continuous);
      emit_cvr_load_constraints(mdl, sv.v[b], sv.p_load[b], sv.q_load[b], mult * bus.p0,
                                mult * bus.q0, bus.cvr_p, bus.cvr_q);
    }
    sv.p_sub = mdl.add_variable("p_sub" + ts, -milp::kInf, milp::kInf, milp::VarType::Continuous);
    emit_linear_pf(mdl, f, topo, fleet, sv, gen);

    std::vector<RegulatorVars> rvs;
    for (size_t r = 0; r < hp.vars.regulators.size(); ++r) {
      const Regulator& reg = hp.vars.regulators[r];
      const Edge& ed = f.edges[reg.edge];
      rvs.push_back(emit_regulator_constraints(mdl, reg, sv.v[f.index_of(ed.from)],
                                               sv.v[f.index_of(ed.to)],
                                               "r" + std::to_string(r) + ts));
    }
    std::vector<int> caps;
    for (size_t c = 0; c < fleet.capacitors.size(); ++c) {
      int u = mdl.add_variable("u_cap_b" + std::to_string(fleet.capacitors[c].bus) + ts, 0, 1,
                               milp::VarType::Binary);
      emit_capacitor_constraints(mdl, fleet.capacitors[c].q_rated,
                                 sv.v[f.index_of(fleet.capacitors[c].bus)], u, sv.q_cap[c]);
      caps.push_back(u);
    }

    // P_T(t) = s_base * P_s(t) + p_cd(t), all in kW.
    int p_t = mdl.add_variable("p_total" + ts, -milp::kInf, milp::kInf, milp::VarType::Continuous);
    std::vector<milp::Term> couple{{p_t, 1.0}, {sv.p_sub, -f.s_base_kva}};
    if (hp.has_battery) couple.emplace_back(hp.vars.bess.steps[t].p_cd, -1.0);
    mdl.add_constraint(std::move(couple), milp::Sense::Equal, 0.0);

    if (obj == Objective::Energy) {
      objective.emplace_back(p_t, 1.0);
    } else {
      objective.emplace_back(p_t, profiles.price[abs_t] * profiles.tau);
      if (hp.bigm) objective.emplace_back(hp.vars.bess.steps[t].p_d, price_b * profiles.tau);
    }
    if (hp.has_battery) objective.emplace_back(hp.vars.bess.steps[t].c_abs, 1e-6);

    hp.vars.pf.push_back(std::move(sv));
    hp.vars.reg.push_back(std::move(rvs));
    hp.vars.cap_u.push_back(std::move(caps));
    hp.vars.p_t_kw.push_back(p_t);
  }
  mdl.set_objective(std::move(objective));
  return hp;
}

// Controls at window offset k of a solved horizon problem.
inline ControlAction extract_action(const HorizonProblem& hp, const milp::Solution& sol, int k) {
  if (k < 0 || k >= hp.window) throw input_error("action index outside window");
  ControlAction a;
  for (size_t r = 0; r < hp.vars.regulators.size(); ++r) {
    const RegulatorVars& rv = hp.vars.reg[k][r];
    int best = 0;
    for (size_t j = 1; j < rv.u.size(); ++j)
      if (sol.x[rv.u[j]] > sol.x[rv.u[best]]) best = static_cast<int>(j);
    a.tap.push_back(hp.vars.regulators[r].taps[best]);
  }
  for (int u : hp.vars.cap_u[k]) a.cap.push_back(sol.x[u] > 0.5 ? 1 : 0);
  for (int q : hp.vars.pf[k].q_dg) a.q_dg.push_back(sol.x[q]);
  if (hp.has_battery) a.p_cd = sol.x[hp.vars.bess.steps[k].p_cd];
  return a;
}

struct MpcStepResult {
  ControlAction action;
  milp::Solution solution;
  HorizonProblem problem;
};

inline MpcStepResult mpc_step(const Feeder& f, const TopologyReport& topo,
                              const DeviceFleet& fleet, const Profiles& profiles, Objective obj,
                              int m, int W, double soc_m, double price_b, int tap_positions = 0,
                              const milp::MilpOptions& opts = {}) {
  MpcStepResult out;
  out.problem =
      build_horizon_problem(f, topo, fleet, profiles, obj, m, W, soc_m, price_b, tap_positions);
  out.solution = milp::solve_milp(out.problem.model, opts);
  if (out.solution.status == milp::SolveStatus::Infeasible)
    throw infeasible_error("horizon problem infeasible at step " + std::to_string(m));
  if (out.solution.status != milp::SolveStatus::Optimal)
    throw limit_error("solver limit reached at step " + std::to_string(m));
  out.action = extract_action(out.problem, out.solution, 0);
  return out;
}

struct PlantMeasurement {
  NodalSolution state;  // nonlinear solution, squared voltages
  double p_s_kw = 0.0;  // substation active injection
  double v_min = 0.0;   // pu magnitudes across buses
  double v_max = 0.0;
  int sweep_iterations = 0;
};

// Nonlinear plant with taps/caps/q_DG fixed to the commanded action and loads
// realized at the given multiplier. pv_kw holds realized DG output per fleet
// DG.
inline PlantMeasurement apply_to_plant(const Feeder& f, const TopologyReport& topo,
                                       const DeviceFleet& fleet, const ControlAction& action,
                                       double load_mult, const std::vector<double>& pv_kw) {
  if (action.tap.size() != fleet.regulators.size() ||
      action.cap.size() != fleet.capacitors.size() || action.q_dg.size() != fleet.dgs.size() ||
      pv_kw.size() != fleet.dgs.size())
    throw input_error("control action does not match the device fleet");
  std::vector<Injection> inj(f.buses.size());
  for (size_t b = 0; b < f.buses.size(); ++b) {
    const Bus& bus = f.buses[b];
    inj[b].p_const = load_mult * bus.p0;
    inj[b].q_const = load_mult * bus.q0;
    inj[b].p_slope = bus.cvr_p * 0.5 * load_mult * bus.p0;
    inj[b].q_slope = bus.cvr_q * 0.5 * load_mult * bus.q0;
  }
  for (size_t g = 0; g < fleet.dgs.size(); ++g) {
    int b = f.index_of(fleet.dgs[g].bus);
    double p_pu = pv_kw[g] / f.s_base_kva;
    inverter_q_bounds(fleet.dgs[g].s_rated, p_pu);  // validates rating
    inj[b].p_const -= p_pu;
    inj[b].q_const -= action.q_dg[g];
  }
  for (size_t c = 0; c < fleet.capacitors.size(); ++c) {
    if (!action.cap[c]) continue;
    int b = f.index_of(fleet.capacitors[c].bus);
    // q_C = q_rated * v, affine around v = 1
    inj[b].q_const -= fleet.capacitors[c].q_rated;
    inj[b].q_slope -= fleet.capacitors[c].q_rated;
  }
  std::vector<double> ratio(f.edges.size(), 1.0);
  for (size_t r = 0; r < fleet.regulators.size(); ++r) {
    const RegulatorSpec& rs = fleet.regulators[r];
    if (action.tap[r] < rs.tap_min || action.tap[r] > rs.tap_max)
      throw input_error("tap " + std::to_string(action.tap[r]) + " outside bounds");
    double a = 1.0 + rs.step * action.tap[r];
    ratio[rs.edge] = a * a;
  }
  SweepResult sw = solve_nonlinear_sweep(f, topo, inj, 1e-10, 100, &ratio);
  if (!sw.converged) throw infeasible_error("plant power flow did not converge");
  PlantMeasurement meas;
  meas.state = sw.solution;
  meas.sweep_iterations = sw.iterations;
  const int root = f.substation_index();
  double p_s = inj[root].p(sw.solution.v[root]);
  for (int ce : topo.child_edges[root]) p_s += sw.solution.P[ce];
  meas.p_s_kw = p_s * f.s_base_kva;
  meas.v_min = std::sqrt(*std::min_element(sw.solution.v.begin(), sw.solution.v.end()));
  meas.v_max = std::sqrt(*std::max_element(sw.solution.v.begin(), sw.solution.v.end()));
  return meas;
}

struct StepRecord {
  int step = 0;
  double p_t_kw = 0.0;   // P_T = P_s + p_cd (Eq. 43 accounting)
  double p_s_kw = 0.0;   // realized plant substation power
  double cost_cents = 0.0;
  double soc = 0.0;      // SOC after the step
  double v_min = 0.0;
  double v_max = 0.0;
  double objective = 0.0;  // window objective value
  long nodes = 0;
  long pivots = 0;
  ControlAction action;
};

struct SimulationResult {
  std::vector<StepRecord> records;
  double total_kwh = 0.0;
  double total_cost_cents = 0.0;
  double total_discharge_kwh = 0.0;
  double min_voltage = 2.0;
  bool completed = true;
  int failed_step = -1;
  std::string failure;
  ErrorKind failure_kind = ErrorKind::Input;
};

inline SimulationResult run_day(const Feeder& f, const TopologyReport& topo,
                                const DeviceFleet& fleet, const Profiles& profiles, Objective obj,
                                int W, double price_b, int tap_positions = 0,
                                const milp::MilpOptions& opts = {}) {
  SimulationResult res;
  double soc = fleet.battery ? fleet.battery->soc0 : 0.0;
  for (int t = 0; t < profiles.steps; ++t) {
    int Wt = std::min(W, profiles.steps - t);  // shrinking horizon at day end
    MpcStepResult step;
    try {
      step = mpc_step(f, topo, fleet, profiles, obj, t, Wt, soc, price_b, tap_positions, opts);
    } catch (const Error& e) {
      res.completed = false;
      res.failed_step = t;
      res.failure = e.what();
      res.failure_kind = e.kind();
      return res;
    }
    std::vector<double> pv_kw;
    for (const DgSpec& dg : fleet.dgs) pv_kw.push_back(profiles.pv_at(dg.p_profile, t));
    PlantMeasurement meas;
    try {
      meas = apply_to_plant(f, topo, fleet, step.action, profiles.load_mult[t], pv_kw);
    } catch (const Error& e) {
      res.completed = false;
      res.failed_step = t;
      res.failure = e.what();
      res.failure_kind = e.kind();
      return res;
    }
    if (fleet.battery) soc = soc_update(soc, step.action.p_cd, *fleet.battery);
    StepRecord rec;
    rec.step = t;
    rec.p_s_kw = meas.p_s_kw;
    rec.p_t_kw = meas.p_s_kw + step.action.p_cd;
    rec.cost_cents = profiles.price[t] * rec.p_t_kw * profiles.tau;
    rec.soc = soc;
    rec.v_min = meas.v_min;
    rec.v_max = meas.v_max;
    rec.objective = step.solution.objective;
    rec.nodes = step.solution.stats.nodes_explored;
    rec.pivots = step.solution.stats.lp_pivots;
    rec.action = step.action;
    res.total_kwh += rec.p_t_kw * profiles.tau;
    res.total_cost_cents += rec.cost_cents;
    res.total_discharge_kwh += std::max(0.0, -step.action.p_cd) * profiles.tau;
    res.min_voltage = std::min(res.min_voltage, rec.v_min);
    res.records.push_back(std::move(rec));
  }
  return res;
}

}  // namespace cvrmpc
