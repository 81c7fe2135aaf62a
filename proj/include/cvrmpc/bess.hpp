#pragma once

// Battery storage: SOC dynamics, operating limits, and the exact
// big-M mixed-integer encoding of the discharge-power magnitude.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cvrmpc/errors.hpp"
#include "cvrmpc/milp.hpp"

namespace cvrmpc {

struct BessParams {
  double q_bat = 300.0;   // capacity, kWh
  double c_r = 100.0;     // max charge rate, kW
  double d_r = 100.0;     // max discharge rate, kW
  double eta = 0.0;       // per-step energy decay rate
  double rho = 1.0;       // round-trip efficiency
  double e_minus = 0.25;  // SOC lower bound, fraction
  double e_plus = 1.0;    // SOC upper bound, fraction
  double soc0 = 0.25;     // initial SOC, fraction
  double tau = 0.25;      // sampling interval, hours

  void validate() const {
    if (!(q_bat > 0 && c_r > 0 && d_r > 0)) throw input_error("battery: capacity and rates must be positive");
    if (!(eta >= 0 && eta < 1)) throw input_error("battery: eta must be in [0,1)");
    if (!(rho > 0 && rho <= 1)) throw input_error("battery: rho must be in (0,1]");
    if (!(0 <= e_minus && e_minus <= soc0 && soc0 <= e_plus && e_plus <= 1))
      throw input_error("battery: need 0 <= e_minus <= soc0 <= e_plus <= 1");
    if (!(tau > 0)) throw input_error("battery: tau must be positive");
  }
};

// One-step SOC transition. p_cd > 0 charges, p_cd < 0 discharges.
inline double soc_update(double soc, double p_cd_kw, const BessParams& p) {
  return (1.0 - p.eta) * soc + p.rho * p_cd_kw * p.tau / p.q_bat;
}

inline double bess_big_m(const BessParams& p) { return 10.0 * std::max(p.c_r, p.d_r); }

constexpr double kBessEpsilonKw = 1e-3;

// Per-step variable handles inside a scheduling model. p_d/delta/beta exist
// only when the big-M block is requested; c_abs backs the minimal-cycling
// tie-break term |p_cd|.
struct BessStepVars {
  int p_cd = -1;
  int p_d = -1;
  int soc = -1;
  int delta = -1;
  int beta = -1;
  int c_abs = -1;
};

struct BessVars {
  std::vector<BessStepVars> steps;
};

inline BessVars add_bess_variables(milp::Model& m, const BessParams& p, int window,
                                   bool include_bigm, const std::string& prefix = "bess") {
  BessVars out;
  out.steps.resize(window);
  for (int t = 0; t < window; ++t) {
    BessStepVars& v = out.steps[t];
    std::string s = prefix + "_t" + std::to_string(t);
    v.p_cd = m.add_variable("p_cd_" + s, -p.d_r, p.c_r, milp::VarType::Continuous);
    v.soc = m.add_variable("soc_" + s, p.e_minus, p.e_plus, milp::VarType::Continuous);
    v.c_abs = m.add_variable("p_abs_" + s, 0.0, std::max(p.c_r, p.d_r), milp::VarType::Continuous);
    if (include_bigm) {
      v.p_d = m.add_variable("p_d_" + s, 0.0, p.d_r, milp::VarType::Continuous);
      v.delta = m.add_variable("delta_" + s, 0, 1, milp::VarType::Binary);
      v.beta = m.add_variable("beta_" + s, 0, 1, milp::VarType::Binary);
    }
  }
  return out;
}

// SOC recursion + bounds, and (optionally) the big-M rows tying p_d to
// max(0, -p_cd). soc_start is the measured SOC entering the window.
inline void emit_bess_constraints(milp::Model& m, const BessParams& p, const BessVars& vars,
                                  double soc_start, bool include_bigm,
                                  double big_m = -1.0, double eps = kBessEpsilonKw) {
  if (big_m <= 0) big_m = bess_big_m(p);
  const double k = p.rho * p.tau / p.q_bat;
  const int W = static_cast<int>(vars.steps.size());
  for (int t = 0; t < W; ++t) {
    const BessStepVars& v = vars.steps[t];
    if (t == 0) {
      m.add_constraint({{v.soc, 1.0}, {v.p_cd, -k}}, milp::Sense::Equal,
                       (1.0 - p.eta) * soc_start);
    } else {
      m.add_constraint({{v.soc, 1.0}, {vars.steps[t - 1].soc, -(1.0 - p.eta)}, {v.p_cd, -k}},
                       milp::Sense::Equal, 0.0);
    }
    // |p_cd| envelope for the tie-break term.
    m.add_constraint({{v.c_abs, 1.0}, {v.p_cd, -1.0}}, milp::Sense::GreaterEqual, 0.0);
    m.add_constraint({{v.c_abs, 1.0}, {v.p_cd, 1.0}}, milp::Sense::GreaterEqual, 0.0);

    if (!include_bigm) continue;
    const double M = big_m;
    // Valid for every integer point (p_d = max(0, -p_cd) implies p_d >= -p_cd)
    // and tightens the relaxation: without it a fractional delta lets the LP
    // discharge while dodging the depreciation term, which blows up the tree.
    m.add_constraint({{v.p_d, 1.0}, {v.p_cd, 1.0}}, milp::Sense::GreaterEqual, 0.0);
    // delta = 1 iff the battery discharges (-p_cd >= eps).
    m.add_constraint({{v.p_cd, -1.0}, {v.delta, -M}}, milp::Sense::GreaterEqual, eps - M);
    m.add_constraint({{v.p_cd, -1.0}, {v.delta, -M}}, milp::Sense::LessEqual, 0.0);
    // p_d collapses to zero when delta = 0.
    m.add_constraint({{v.p_d, 1.0}, {v.delta, -M}}, milp::Sense::LessEqual, 0.0);
    m.add_constraint({{v.p_d, 1.0}, {v.delta, M}}, milp::Sense::GreaterEqual, 0.0);
    // |p_cd| <= p_d + M(1-delta)
    m.add_constraint({{v.p_cd, 1.0}, {v.p_d, -1.0}, {v.delta, M}}, milp::Sense::LessEqual, M);
    m.add_constraint({{v.p_cd, -1.0}, {v.p_d, -1.0}, {v.delta, M}}, milp::Sense::LessEqual, M);
    // |p_cd| >= p_d - M(1-delta), split with the auxiliary binary beta.
    m.add_constraint({{v.p_cd, 1.0}, {v.p_d, -1.0}, {v.delta, -M}, {v.beta, M}},
                     milp::Sense::GreaterEqual, -M);
    m.add_constraint({{v.p_cd, -1.0}, {v.p_d, -1.0}, {v.delta, -M}, {v.beta, -M}},
                     milp::Sense::GreaterEqual, -2.0 * M);
  }
}

}  // namespace cvrmpc
