#pragma once

// Constraint blocks for voltage regulators, switched capacitor banks, smart
// inverters and CVR (voltage-dependent) loads. The binary-times-voltage
// products are linearized exactly with four McCormick bounds over the ANSI
// voltage box, so every integer-feasible point satisfies the physical product
// equation with no approximation error.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cvrmpc/errors.hpp"
#include "cvrmpc/feeder.hpp"
#include "cvrmpc/milp.hpp"
#include "cvrmpc/powerflow.hpp"

namespace cvrmpc {

struct Regulator {
  int edge = 0;
  double step = 0.00625;
  std::vector<int> taps;  // ordered tap positions

  // positions == 0 keeps the full tap set; otherwise an evenly spaced subset
  // including both endpoints (used to keep the builtin solver and the
  // brute-force oracle tractable).
  static Regulator from_spec(const RegulatorSpec& spec, int positions = 0) {
    Regulator r;
    r.edge = spec.edge;
    r.step = spec.step;
    if (positions <= 0 || positions > spec.tap_max - spec.tap_min + 1) {
      for (int t = spec.tap_min; t <= spec.tap_max; ++t) r.taps.push_back(t);
    } else if (positions == 1) {
      r.taps.push_back(0);
    } else {
      double span = spec.tap_max - spec.tap_min;
      for (int i = 0; i < positions; ++i) {
        int t = spec.tap_min + static_cast<int>(std::lround(span * i / (positions - 1)));
        if (r.taps.empty() || r.taps.back() != t) r.taps.push_back(t);
      }
    }
    return r;
  }

  // Squared turns ratio B_t = (1 + step*t)^2.
  double ratio_sq(int tap) const {
    double a = 1.0 + step * tap;
    return a * a;
  }
};

// (tap, A) pairs with A the squared voltage ratio.
inline std::vector<std::pair<int, double>> tap_ratio_table(const Regulator& reg) {
  if (reg.taps.empty()) throw input_error("regulator with empty tap set");
  std::vector<std::pair<int, double>> out;
  out.reserve(reg.taps.size());
  for (int t : reg.taps) out.emplace_back(t, reg.ratio_sq(t));
  return out;
}

struct RegulatorVars {
  std::vector<int> u;  // one-hot tap binaries
  std::vector<int> w;  // w_k = u_k * v_i auxiliaries
};

// One-hot tap selection plus v_j = sum_k B_k w_k with w_k = u_k*v_i enforced
// by the four-bound scheme over [kVminSq, kVmaxSq].
inline RegulatorVars emit_regulator_constraints(milp::Model& m, const Regulator& reg, int v_i,
                                                int v_j, const std::string& prefix) {
  RegulatorVars rv;
  const int K = static_cast<int>(reg.taps.size());
  std::vector<milp::Term> onehot;
  std::vector<milp::Term> ratio{{v_j, 1.0}};
  for (int k = 0; k < K; ++k) {
    std::string s = prefix + "_k" + std::to_string(reg.taps[k]);
    int u = m.add_variable("u_tap_" + s, 0, 1, milp::VarType::Binary);
    int w = m.add_variable("w_tap_" + s, 0.0, kVmaxSq, milp::VarType::Continuous);
    rv.u.push_back(u);
    rv.w.push_back(w);
    onehot.emplace_back(u, 1.0);
    ratio.emplace_back(w, -reg.ratio_sq(reg.taps[k]));
    m.add_constraint({{w, 1.0}, {u, -kVmaxSq}}, milp::Sense::LessEqual, 0.0);
    m.add_constraint({{w, 1.0}, {u, -kVminSq}}, milp::Sense::GreaterEqual, 0.0);
    m.add_constraint({{w, 1.0}, {v_i, -1.0}, {u, -kVminSq}}, milp::Sense::LessEqual, -kVminSq);
    m.add_constraint({{w, 1.0}, {v_i, -1.0}, {u, -kVmaxSq}}, milp::Sense::GreaterEqual, -kVmaxSq);
  }
  m.add_constraint(std::move(onehot), milp::Sense::Equal, 1.0);
  m.add_constraint(std::move(ratio), milp::Sense::Equal, 0.0);
  return rv;
}

// q_C = u * q_rated * v, linearized with the same four-bound scheme scaled by
// the capacitor rating.
inline void emit_capacitor_constraints(milp::Model& m, double q_rated, int v, int u, int q_c) {
  m.add_constraint({{q_c, 1.0}, {u, -q_rated * kVmaxSq}}, milp::Sense::LessEqual, 0.0);
  m.add_constraint({{q_c, 1.0}, {u, -q_rated * kVminSq}}, milp::Sense::GreaterEqual, 0.0);
  m.add_constraint({{q_c, 1.0}, {v, -q_rated}, {u, -q_rated * kVminSq}}, milp::Sense::LessEqual,
                   -q_rated * kVminSq);
  m.add_constraint({{q_c, 1.0}, {v, -q_rated}, {u, -q_rated * kVmaxSq}}, milp::Sense::GreaterEqual,
                   -q_rated * kVmaxSq);
}

// Reactive capability of a smart inverter at active output p_t.
inline std::pair<double, double> inverter_q_bounds(double s_rated, double p_t) {
  if (p_t < 0) throw input_error("inverter active power must be nonnegative");
  if (p_t > s_rated)
    throw input_error("infeasible profile: DG active power " + std::to_string(p_t) +
                      " exceeds inverter rating " + std::to_string(s_rated));
  double q = std::sqrt(s_rated * s_rated - p_t * p_t);
  return {-q, q};
}

// CVR load model evaluated numerically (V0 = 1 pu).
inline std::pair<double, double> cvr_load_eval(double p0, double q0, double cvr_p, double cvr_q,
                                               double v) {
  double p = p0 + cvr_p * 0.5 * p0 * (v - 1.0);
  double q = q0 + cvr_q * 0.5 * q0 * (v - 1.0);
  return {p, q};
}

// p_L and q_L as affine functions of the squared voltage.
inline void emit_cvr_load_constraints(milp::Model& m, int v, int p_l, int q_l, double p0,
                                      double q0, double cvr_p, double cvr_q) {
  m.add_constraint({{p_l, 1.0}, {v, -cvr_p * 0.5 * p0}}, milp::Sense::Equal,
                   p0 * (1.0 - cvr_p * 0.5));
  m.add_constraint({{q_l, 1.0}, {v, -cvr_q * 0.5 * q0}}, milp::Sense::Equal,
                   q0 * (1.0 - cvr_q * 0.5));
}

}  // namespace cvrmpc
