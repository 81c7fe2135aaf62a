#pragma once

// Independent brute-force verifier: enumerates every discrete control
// combination of a horizon problem (tap one-hots, capacitor states, and the
// battery indicator pattern when the big-M block is active), solves the
// residual LP for each, and returns the best. Both objectives are affine in
// p_cd once the indicators are fixed, so the battery power itself is never
// discretized.

#include <cmath>
#include <string>
#include <vector>

#include "cvrmpc/errors.hpp"
#include "cvrmpc/milp.hpp"
#include "cvrmpc/mpc.hpp"

namespace cvrmpc {

struct EnumerationSpec {
  int tap_positions = 5;            // reduced tap set per regulator
  long combination_limit = 1000000;  // refuse larger enumerations
};

struct OracleResult {
  milp::SolveStatus status = milp::SolveStatus::Infeasible;
  double objective = 0.0;
  std::vector<double> x;                 // solution of the winning residual LP
  std::vector<std::vector<int>> taps;    // [t][r] winning tap
  std::vector<std::vector<int>> caps;    // [t][c] winning state
  long combinations = 0;
  long lps_solved = 0;
};

namespace detail {

// One enumeration digit: the binaries it controls and how a digit value maps
// onto them (one-hot for tap groups, identity for single binaries).
struct OracleSlot {
  std::vector<int> vars;
  int radix = 0;
  bool one_hot = false;
};

}  // namespace detail

inline OracleResult brute_force_schedule(const Feeder& f, const TopologyReport& topo,
                                         const DeviceFleet& fleet, const Profiles& profiles,
                                         Objective obj, int m, int W, double soc_m,
                                         double price_b, const EnumerationSpec& spec = {}) {
  HorizonProblem hp = build_horizon_problem(f, topo, fleet, profiles, obj, m, W, soc_m, price_b,
                                            spec.tap_positions);

  std::vector<detail::OracleSlot> slots;
  long count = 1;
  auto push = [&](detail::OracleSlot s) {
    if (count > spec.combination_limit / s.radix)
      throw limit_error("oracle: combination count exceeds limit of " +
                        std::to_string(spec.combination_limit));
    count *= s.radix;
    slots.push_back(std::move(s));
  };
  for (int t = 0; t < W; ++t) {
    for (const RegulatorVars& rv : hp.vars.reg[t])
      push({rv.u, static_cast<int>(rv.u.size()), true});
    for (int u : hp.vars.cap_u[t]) push({{u}, 2, false});
    if (hp.bigm) {
      push({{hp.vars.bess.steps[t].delta}, 2, false});
      push({{hp.vars.bess.steps[t].beta}, 2, false});
    }
  }

  milp::LpEngine engine(hp.model);
  milp::Basis basis;
  bool have_basis = false;
  OracleResult out;
  out.combinations = count;

  std::vector<int> digit(slots.size(), 0);
  for (long it = 0; it < count; ++it) {
    engine.reset_bounds();
    for (size_t s = 0; s < slots.size(); ++s) {
      const detail::OracleSlot& sl = slots[s];
      if (sl.one_hot) {
        for (int j = 0; j < sl.radix; ++j) {
          double v = j == digit[s] ? 1.0 : 0.0;
          engine.set_bounds(sl.vars[j], v, v);
        }
      } else {
        engine.set_bounds(sl.vars[0], digit[s], digit[s]);
      }
    }
    milp::Basis next;
    milp::Solution lp = engine.solve(have_basis ? &basis : nullptr, &next);
    ++out.lps_solved;
    if (lp.status == milp::SolveStatus::Optimal) {
      basis = std::move(next);
      have_basis = true;
      // Strict comparison keeps the earliest (lexicographically smallest)
      // control combination on ties.
      if (out.status != milp::SolveStatus::Optimal || lp.objective < out.objective) {
        out.status = milp::SolveStatus::Optimal;
        out.objective = lp.objective;
        out.x = lp.x;
      }
    }
    // Odometer with the first slot most significant: lexicographic order.
    for (int s = static_cast<int>(slots.size()) - 1; s >= 0; --s) {
      if (++digit[s] < slots[s].radix) break;
      digit[s] = 0;
    }
  }

  if (out.status == milp::SolveStatus::Optimal) {
    milp::Solution sol;
    sol.x = out.x;
    for (int t = 0; t < W; ++t) {
      std::vector<int> taps, caps;
      for (size_t r = 0; r < hp.vars.regulators.size(); ++r) {
        const RegulatorVars& rv = hp.vars.reg[t][r];
        int bestj = 0;
        for (size_t j = 1; j < rv.u.size(); ++j)
          if (sol.x[rv.u[j]] > sol.x[rv.u[bestj]]) bestj = static_cast<int>(j);
        taps.push_back(hp.vars.regulators[r].taps[bestj]);
      }
      for (int u : hp.vars.cap_u[t]) caps.push_back(sol.x[u] > 0.5 ? 1 : 0);
      out.taps.push_back(std::move(taps));
      out.caps.push_back(std::move(caps));
    }
  }
  return out;
}

}  // namespace cvrmpc
