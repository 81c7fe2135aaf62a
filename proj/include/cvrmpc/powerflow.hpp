#pragma once

// Linearized branch-flow constraint generation plus two standalone solvers:
// a direct linear solver (one flow pass, one voltage pass) and a nonlinear
// backward/forward sweep that keeps the current-magnitude loss terms. The
// sweep doubles as the plant model and as the linearization-accuracy oracle.

#include <cmath>
#include <string>
#include <vector>

#include "cvrmpc/errors.hpp"
#include "cvrmpc/feeder.hpp"
#include "cvrmpc/milp.hpp"

namespace cvrmpc {

// ANSI band in squared per-unit voltage.
constexpr double kVminSq = 0.9025;   // 0.95^2
constexpr double kVmaxSq = 1.1025;   // 1.05^2

struct NodalSolution {
  std::vector<double> v;  // per bus index, pu^2
  std::vector<double> P;  // per edge, pu (sending end)
  std::vector<double> Q;  // per edge, pu
  std::vector<double> l;  // per edge, pu^2 (zero for the linear solver)
};

// Net nodal consumption, affine in the squared voltage:
//   p(v) = p_const + p_slope * (v - 1),  q(v) = q_const + q_slope * (v - 1).
// CVR loads set slope = cvr/2 * p0; switched capacitors subtract q_rated and
// carry slope -q_rated; fixed DG output enters p_const/q_const negatively.
struct Injection {
  double p_const = 0.0;
  double q_const = 0.0;
  double p_slope = 0.0;
  double q_slope = 0.0;

  double p(double v) const { return p_const + p_slope * (v - 1.0); }
  double q(double v) const { return q_const + q_slope * (v - 1.0); }
};

inline std::vector<Injection> constant_power_injections(const Feeder& f, double mult = 1.0) {
  std::vector<Injection> inj(f.buses.size());
  for (size_t i = 0; i < f.buses.size(); ++i) {
    inj[i].p_const = mult * f.buses[i].p0;
    inj[i].q_const = mult * f.buses[i].q0;
  }
  return inj;
}

// Exact solution of the lossless linear model: flows by upstream
// accumulation, voltages by a downstream pass. Injections are fixed numbers
// (evaluated at v = 1), so l is identically zero.
// edge_ratio_sq: optional per-edge squared tap ratio (regulator edges), 1.0
// for lines.
inline NodalSolution solve_linear(const Feeder& f, const TopologyReport& topo,
                                  const std::vector<Injection>& inj,
                                  const std::vector<double>* edge_ratio_sq = nullptr) {
  const int n = static_cast<int>(f.buses.size());
  const int ne = static_cast<int>(f.edges.size());
  NodalSolution s;
  s.v.assign(n, f.v0);
  s.P.assign(ne, 0.0);
  s.Q.assign(ne, 0.0);
  s.l.assign(ne, 0.0);
  // Backward: accumulate fixed injections from the leaves.
  for (int k = n - 1; k >= 1; --k) {
    int b = topo.order[k];
    int e = topo.parent_edge[b];
    s.P[e] = inj[b].p(1.0);
    s.Q[e] = inj[b].q(1.0);
    for (int ce : topo.child_edges[b]) {
      s.P[e] += s.P[ce];
      s.Q[e] += s.Q[ce];
    }
  }
  // Forward: voltage drop per line, ratio per regulator edge.
  for (int k = 1; k < n; ++k) {
    int b = topo.order[k];
    int e = topo.parent_edge[b];
    int parent = topo.parent[b];
    const Edge& ed = f.edges[e];
    if (ed.kind == EdgeKind::Regulator) {
      double ratio = edge_ratio_sq ? (*edge_ratio_sq)[e] : 1.0;
      s.v[b] = ratio * s.v[parent];
    } else {
      s.v[b] = s.v[parent] - 2.0 * (ed.r * s.P[e] + ed.x * s.Q[e]);
    }
  }
  return s;
}

struct SweepResult {
  NodalSolution solution;
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_trace;  // max |dv| per iteration
};

// Backward/forward sweep on the full branch-flow equations. Voltage-dependent
// injections are re-evaluated every iteration, so the plant model is
// self-consistent under CVR loads and switched capacitors.
inline SweepResult solve_nonlinear_sweep(const Feeder& f, const TopologyReport& topo,
                                         const std::vector<Injection>& inj, double tol = 1e-8,
                                         int max_iter = 100,
                                         const std::vector<double>* edge_ratio_sq = nullptr) {
  if (!(tol > 0)) throw input_error("sweep tolerance must be positive");
  const int n = static_cast<int>(f.buses.size());
  const int ne = static_cast<int>(f.edges.size());
  SweepResult out;
  NodalSolution& s = out.solution;
  s.v.assign(n, f.v0);  // flat start
  s.P.assign(ne, 0.0);
  s.Q.assign(ne, 0.0);
  s.l.assign(ne, 0.0);
  for (int it = 0; it < max_iter; ++it) {
    // Backward: sending-end flows (each edge carries its own loss at the
    // current l estimate; child flows already include theirs).
    for (int k = n - 1; k >= 1; --k) {
      int b = topo.order[k];
      int e = topo.parent_edge[b];
      s.P[e] = inj[b].p(s.v[b]) + f.edges[e].r * s.l[e];
      s.Q[e] = inj[b].q(s.v[b]) + f.edges[e].x * s.l[e];
      for (int ce : topo.child_edges[b]) {
        s.P[e] += s.P[ce];
        s.Q[e] += s.Q[ce];
      }
    }
    // Forward: voltages, then current magnitudes from the sending end.
    double dv_max = 0.0;
    for (int k = 1; k < n; ++k) {
      int b = topo.order[k];
      int e = topo.parent_edge[b];
      int parent = topo.parent[b];
      const Edge& ed = f.edges[e];
      double v_new;
      if (ed.kind == EdgeKind::Regulator) {
        double ratio = edge_ratio_sq ? (*edge_ratio_sq)[e] : 1.0;
        v_new = ratio * s.v[parent];
        s.l[e] = 0.0;
      } else {
        s.l[e] = (s.P[e] * s.P[e] + s.Q[e] * s.Q[e]) / s.v[parent];
        v_new = s.v[parent] - 2.0 * (ed.r * s.P[e] + ed.x * s.Q[e]) +
                (ed.r * ed.r + ed.x * ed.x) * s.l[e];
      }
      dv_max = std::max(dv_max, std::abs(v_new - s.v[b]));
      s.v[b] = v_new;
    }
    out.residual_trace.push_back(dv_max);
    out.iterations = it + 1;
    if (dv_max < tol) {
      out.converged = true;
      break;
    }
    for (double v : s.v)
      if (!(v > 0.0) || !std::isfinite(v)) return out;  // diverging: collapse
  }
  return out;
}

struct PfComparison {
  double max_error = 0.0;   // max |sqrt(v_lin) - sqrt(v_nl)|, pu
  double mean_error = 0.0;
  int sweep_iterations = 0;
};

inline PfComparison compare_pf(const Feeder& f, const TopologyReport& topo,
                               const std::vector<Injection>& inj, double tol = 1e-10,
                               const std::vector<double>* edge_ratio_sq = nullptr) {
  NodalSolution lin = solve_linear(f, topo, inj, edge_ratio_sq);
  SweepResult nl = solve_nonlinear_sweep(f, topo, inj, tol, 100, edge_ratio_sq);
  if (!nl.converged)
    throw infeasible_error("nonlinear sweep did not converge after " +
                           std::to_string(nl.iterations) + " iterations");
  PfComparison cmp;
  cmp.sweep_iterations = nl.iterations;
  double sum = 0.0;
  for (size_t i = 0; i < f.buses.size(); ++i) {
    double err = std::abs(std::sqrt(lin.v[i]) - std::sqrt(nl.solution.v[i]));
    cmp.max_error = std::max(cmp.max_error, err);
    sum += err;
  }
  cmp.mean_error = sum / static_cast<double>(f.buses.size());
  return cmp;
}

// ---------------------------------------------------------------------------
// Symbolic constraint generation for the scheduling MILP.
// ---------------------------------------------------------------------------

// Variable handles for one time step of the horizon model. Devices append
// their own binaries/auxiliaries.
struct StepVars {
  std::vector<int> v;       // per bus index
  std::vector<int> P, Q;    // per edge index
  std::vector<int> p_load;  // per bus index, -1 when the bus has no load
  std::vector<int> q_load;
  std::vector<int> q_dg;    // per fleet DG
  std::vector<int> q_cap;   // per fleet capacitor
  int p_sub = -1;           // substation injection, pu
};

// Fixed active/reactive DG output per bus index (pu), subtracted as negative
// load in the nodal balances.
struct FixedGeneration {
  std::vector<double> p_dg;  // per bus index
};

// Emits, per non-root bus, the active and reactive nodal balances and, per
// line edge, the voltage-drop equality (regulator edges are handled by the
// devices module). The substation voltage variable is pinned to v0 through
// its bounds, and p_sub (when allocated) is tied to the root outflows.
inline void emit_linear_pf(milp::Model& m, const Feeder& f, const TopologyReport& topo,
                           const DeviceFleet& fleet, const StepVars& sv,
                           const FixedGeneration& gen) {
  const int n = static_cast<int>(f.buses.size());
  const int root = f.substation_index();
  for (int bi = 0; bi < n; ++bi) {
    if (bi == root) continue;
    int e = topo.parent_edge[bi];
    // P_ij - sum_k P_jk - p_L,j = -p_DG,j
    // Q_ij - sum_k Q_jk - q_L,j + q_DG,j + q_C,j = 0
    std::vector<milp::Term> pbal{{sv.P[e], 1.0}};
    std::vector<milp::Term> qbal{{sv.Q[e], 1.0}};
    for (int ce : topo.child_edges[bi]) {
      pbal.emplace_back(sv.P[ce], -1.0);
      qbal.emplace_back(sv.Q[ce], -1.0);
    }
    if (sv.p_load[bi] >= 0) pbal.emplace_back(sv.p_load[bi], -1.0);
    if (sv.q_load[bi] >= 0) qbal.emplace_back(sv.q_load[bi], -1.0);
    for (size_t g = 0; g < fleet.dgs.size(); ++g)
      if (f.index_of(fleet.dgs[g].bus) == bi) qbal.emplace_back(sv.q_dg[g], 1.0);
    for (size_t c = 0; c < fleet.capacitors.size(); ++c)
      if (f.index_of(fleet.capacitors[c].bus) == bi) qbal.emplace_back(sv.q_cap[c], 1.0);
    m.add_constraint(std::move(pbal), milp::Sense::Equal, -gen.p_dg[bi]);
    m.add_constraint(std::move(qbal), milp::Sense::Equal, 0.0);
  }
  // Voltage-drop equalities for line edges.
  for (size_t e = 0; e < f.edges.size(); ++e) {
    const Edge& ed = f.edges[e];
    if (ed.kind == EdgeKind::Regulator) continue;
    int pi = f.index_of(ed.from);
    int ci = f.index_of(ed.to);
    m.add_constraint({{sv.v[ci], 1.0},
                      {sv.v[pi], -1.0},
                      {sv.P[e], 2.0 * ed.r},
                      {sv.Q[e], 2.0 * ed.x}},
                     milp::Sense::Equal, 0.0);
  }
  if (sv.p_sub >= 0) {
    std::vector<milp::Term> t{{sv.p_sub, 1.0}};
    for (int ce : topo.child_edges[root]) t.emplace_back(sv.P[ce], -1.0);
    if (sv.p_load[root] >= 0) t.emplace_back(sv.p_load[root], -1.0);
    m.add_constraint(std::move(t), milp::Sense::Equal, -gen.p_dg[root]);
  }
}

}  // namespace cvrmpc
