#pragma once

// Solver-agnostic MILP container, a bounded-variable two-phase primal simplex,
// a deterministic best-bound branch-and-bound, and an LP-format exporter.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cvrmpc/errors.hpp"

namespace cvrmpc::milp {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Centralized numerical tolerances.
constexpr double kFeasTol = 1e-7;
constexpr double kIntTol = 1e-6;
constexpr double kGapTol = 1e-9;  // relative objective gap

enum class VarType { Continuous, Binary };
enum class Sense { LessEqual, Equal, GreaterEqual };

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit, NodeLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterationLimit: return "iteration-limit";
    case SolveStatus::NodeLimit: return "node-limit";
  }
  return "?";
}

struct Variable {
  std::string name;
  double lb = 0.0;
  double ub = kInf;
  VarType type = VarType::Continuous;
};

using Term = std::pair<int, double>;  // (variable handle, coefficient)

struct Constraint {
  std::vector<Term> terms;  // merged, sorted by handle
  Sense sense = Sense::LessEqual;
  double rhs = 0.0;
};

struct SolverStats {
  long nodes_explored = 0;
  long lp_pivots = 0;
};

struct Solution {
  SolveStatus status = SolveStatus::Infeasible;
  double objective = 0.0;
  double dual_bound = 0.0;  // LP dual objective at termination (LP solves)
  std::vector<double> x;
  SolverStats stats;
};

class Model {
 public:
  int add_variable(const std::string& name, double lb, double ub, VarType type) {
    if (names_.count(name)) throw input_error("duplicate variable name: " + name);
    if (type == VarType::Binary && (lb < 0.0 || ub > 1.0))
      throw input_error("binary variable with bounds outside [0,1]: " + name);
    if (lb > ub) throw input_error("variable lb > ub: " + name);
    if (type == VarType::Binary && (!std::isfinite(lb) || !std::isfinite(ub)))
      throw input_error("binary variable with non-finite bound: " + name);
    int h = static_cast<int>(vars_.size());
    vars_.push_back(Variable{name, lb, ub, type});
    names_.emplace(name, h);
    return h;
  }

  int add_constraint(std::vector<Term> terms, Sense sense, double rhs) {
    int h = static_cast<int>(cons_.size());
    cons_.push_back(Constraint{merge(std::move(terms)), sense, rhs});
    return h;
  }

  void set_objective(std::vector<Term> terms) { obj_ = merge(std::move(terms)); }

  void add_objective_term(int var, double coef) {
    check(var);
    std::vector<Term> t = obj_;
    t.emplace_back(var, coef);
    obj_ = merge(std::move(t));
  }

  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<Constraint>& constraints() const { return cons_; }
  const std::vector<Term>& objective() const { return obj_; }

  Variable& var(int h) {
    check(h);
    return vars_[h];
  }
  const Variable& var(int h) const {
    check(h);
    return vars_[h];
  }

  void set_bounds(int h, double lb, double ub) {
    check(h);
    vars_[h].lb = lb;
    vars_[h].ub = ub;
  }

  int num_variables() const { return static_cast<int>(vars_.size()); }
  int num_constraints() const { return static_cast<int>(cons_.size()); }

 private:
  void check(int h) const {
    if (h < 0 || h >= static_cast<int>(vars_.size())) throw input_error("unknown variable handle");
  }

  std::vector<Term> merge(std::vector<Term> terms) const {
    std::map<int, double> acc;
    for (const auto& [v, c] : terms) {
      check(v);
      acc[v] += c;
    }
    std::vector<Term> out;
    out.reserve(acc.size());
    for (const auto& [v, c] : acc)
      if (c != 0.0) out.emplace_back(v, c);
    return out;
  }

  std::vector<Variable> vars_;
  std::vector<Constraint> cons_;
  std::vector<Term> obj_;
  std::unordered_map<std::string, int> names_;
};

// ---------------------------------------------------------------------------
// Bounded-variable primal simplex over A x + s = b with per-column bounds.
// Dantzig pricing with lowest-index tie-break, Bland's rule as anti-cycling
// fallback. Dense basis inverse with pivot updates and periodic
// refactorization.
// ---------------------------------------------------------------------------

struct Basis {
  std::vector<int> basic;          // per row: basic column
  std::vector<std::uint8_t> stat;  // per column: VStat
};

class LpEngine {
 public:
  enum VStat : std::uint8_t { AtLower = 0, AtUpper = 1, Free = 2, Basic = 3 };

  explicit LpEngine(const Model& model) {
    n_ = model.num_variables();
    m_ = model.num_constraints();
    total_ = n_ + m_;
    lb0_.assign(total_, 0.0);
    ub0_.assign(total_, 0.0);
    cost_.assign(total_, 0.0);
    cols_.resize(total_);
    for (int j = 0; j < n_; ++j) {
      lb0_[j] = model.variables()[j].lb;
      ub0_[j] = model.variables()[j].ub;
    }
    for (const auto& [v, c] : model.objective()) cost_[v] = c;
    b_.assign(m_, 0.0);
    for (int i = 0; i < m_; ++i) {
      const Constraint& con = model.constraints()[i];
      for (const auto& [v, c] : con.terms) cols_[v].emplace_back(i, c);
      b_[i] = con.rhs;
      int s = n_ + i;
      cols_[s].emplace_back(i, 1.0);
      switch (con.sense) {
        case Sense::LessEqual: lb0_[s] = 0.0; ub0_[s] = kInf; break;
        case Sense::GreaterEqual: lb0_[s] = -kInf; ub0_[s] = 0.0; break;
        case Sense::Equal: lb0_[s] = 0.0; ub0_[s] = 0.0; break;
      }
    }
    lb_ = lb0_;
    ub_ = ub0_;
  }

  // Bound overrides for branch-and-bound; reset_bounds() restores the model.
  void reset_bounds() {
    std::copy(lb0_.begin(), lb0_.begin() + n_, lb_.begin());
    std::copy(ub0_.begin(), ub0_.begin() + n_, ub_.begin());
  }
  void set_bounds(int j, double lb, double ub) {
    lb_[j] = lb;
    ub_[j] = ub;
  }
  double lower(int j) const { return lb_[j]; }
  double upper(int j) const { return ub_[j]; }

  int num_structural() const { return n_; }

  Solution solve(const Basis* warm = nullptr, Basis* out_basis = nullptr) {
    init_basis(warm);
    Solution sol;
    sol.stats.lp_pivots = 0;
    SolveStatus st = phase1(sol.stats.lp_pivots);
    if (st == SolveStatus::Optimal) st = phase2(sol.stats.lp_pivots);
    sol.status = st;
    if (st == SolveStatus::Optimal) {
      sol.x.assign(n_, 0.0);
      for (int j = 0; j < n_; ++j) sol.x[j] = value(j);
      sol.objective = 0.0;
      for (int j = 0; j < n_; ++j) sol.objective += cost_[j] * sol.x[j];
      sol.dual_bound = dual_objective();
      if (out_basis) {
        out_basis->basic = basis_;
        out_basis->stat = stat_;
      }
    }
    return sol;
  }

 private:
  double value(int j) const {
    switch (stat_[j]) {
      case AtLower: return lb_[j];
      case AtUpper: return ub_[j];
      case Free: return 0.0;
      default: return xb_[row_of_[j]];
    }
  }

  void init_basis(const Basis* warm) {
    bool warm_ok = false;
    if (warm && static_cast<int>(warm->basic.size()) == m_ &&
        static_cast<int>(warm->stat.size()) == total_) {
      // binv_ tracks basis_ through every pivot, so when the caller hands the
      // basis we already hold (typical parent->child B&B visits) the old
      // factorization stays valid and the dense refactorization is skipped.
      bool reused = binv_ready_ && (warm->basic == basis_ || update_basis_to(warm->basic));
      basis_ = warm->basic;
      stat_ = warm->stat;
      row_of_.assign(total_, -1);
      for (int i = 0; i < m_; ++i) row_of_[basis_[i]] = i;
      warm_ok = reused || factorize();
      if (warm_ok) {
        // Clamp nonbasic statuses against (possibly tightened) bounds.
        for (int j = 0; j < total_; ++j) {
          if (stat_[j] == Basic && row_of_[j] < 0) stat_[j] = AtLower;  // stale
          if (stat_[j] == Basic) continue;
          if (stat_[j] == Free && (std::isfinite(lb_[j]) || std::isfinite(ub_[j])))
            stat_[j] = std::isfinite(lb_[j]) ? AtLower : AtUpper;
          if (stat_[j] == AtLower && !std::isfinite(lb_[j])) stat_[j] = std::isfinite(ub_[j]) ? AtUpper : Free;
          if (stat_[j] == AtUpper && !std::isfinite(ub_[j])) stat_[j] = std::isfinite(lb_[j]) ? AtLower : Free;
        }
      }
    }
    if (!warm_ok) {
      basis_.assign(m_, -1);
      stat_.assign(total_, AtLower);
      row_of_.assign(total_, -1);
      for (int i = 0; i < m_; ++i) {
        basis_[i] = n_ + i;
        row_of_[n_ + i] = i;
      }
      for (int j = 0; j < total_; ++j) {
        if (row_of_[j] >= 0) {
          stat_[j] = Basic;
          continue;
        }
        if (std::isfinite(lb_[j]) && std::isfinite(ub_[j]))
          stat_[j] = (std::abs(lb_[j]) <= std::abs(ub_[j])) ? AtLower : AtUpper;
        else if (std::isfinite(lb_[j]))
          stat_[j] = AtLower;
        else if (std::isfinite(ub_[j]))
          stat_[j] = AtUpper;
        else
          stat_[j] = Free;
      }
      binv_ = Eigen::MatrixXd::Identity(m_, m_);
      pivots_since_refactor_ = 0;
    }
    binv_ready_ = true;
    if (pivots_since_refactor_ >= 200) factorize();  // cap drift across reuses
    compute_xb();
  }

  // Reshape binv_ from the currently factored basis_ to `target` with
  // product-form column replacements. Bails out on small pivots or when the
  // bases differ too much (full refactorization is cheaper/safer then).
  bool update_basis_to(const std::vector<int>& target) {
    std::vector<int> rows;
    for (int i = 0; i < m_; ++i)
      if (basis_[i] != target[i]) rows.push_back(i);
    if (rows.empty()) return true;
    if (static_cast<int>(rows.size()) > std::max(8, m_ / 8)) return false;
    Eigen::VectorXd d(m_);
    for (int i : rows) {
      int q = target[i];
      if (q < 0 || q >= total_) return false;
      d.setZero();
      for (const auto& [r, c] : cols_[q]) d += c * binv_.col(r);
      double piv = d[i];
      if (std::abs(piv) < 1e-9) return false;
      Eigen::RowVectorXd brow = binv_.row(i) / piv;
      for (int r2 = 0; r2 < m_; ++r2) {
        if (r2 == i) continue;
        double f = d[r2];
        if (f != 0.0) binv_.row(r2) -= f * brow;
      }
      binv_.row(i) = brow;
      basis_[i] = q;
      ++pivots_since_refactor_;
    }
    return true;
  }

  bool factorize() {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < 0) return false;
      for (const auto& [r, c] : cols_[basis_[i]]) B(r, i) = c;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    double mind = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(mind > 1e-12)) return false;
    binv_ = lu.inverse();
    pivots_since_refactor_ = 0;
    return true;
  }

  void compute_xb() {
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b_.data(), m_);
    for (int j = 0; j < total_; ++j) {
      if (stat_[j] == Basic) continue;
      double v = value(j);
      if (v == 0.0) continue;
      for (const auto& [r, c] : cols_[j]) rhs[r] -= c * v;
    }
    xb_ = binv_ * rhs;
  }

  double dual_objective() const {
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = cost_[basis_[i]];
    Eigen::VectorXd y = binv_.transpose() * cb;
    double d = 0.0;
    for (int i = 0; i < m_; ++i) d += y[i] * b_[i];
    for (int j = 0; j < total_; ++j) {
      if (stat_[j] == Basic || stat_[j] == Free) continue;
      double rc = cost_[j];
      for (const auto& [r, c] : cols_[j]) rc -= y[r] * c;
      d += rc * value(j);
    }
    return d;
  }

  // One simplex phase. phase1 == true minimizes total bound violation of the
  // basic variables, recomputing the piecewise-linear costs every iteration.
  SolveStatus run_phase(bool phase1_mode, long& pivots) {
    constexpr double kDualTol = 1e-9;
    constexpr double kPivTol = 1e-10;
    constexpr long kIterLimit = 200000;
    constexpr long kBlandAfter = 8000;
    long iter = 0;
    Eigen::VectorXd cb(m_), y(m_), d(m_);
    for (;;) {
      if (++iter > kIterLimit) return SolveStatus::IterationLimit;
      bool bland = iter > kBlandAfter;

      // Phase-1 costs from current violations.
      double infeas = 0.0;
      if (phase1_mode) {
        for (int i = 0; i < m_; ++i) {
          int k = basis_[i];
          cb[i] = 0.0;
          if (xb_[i] > ub_[k] + kFeasTol) {
            cb[i] = 1.0;
            infeas += xb_[i] - ub_[k];
          } else if (xb_[i] < lb_[k] - kFeasTol) {
            cb[i] = -1.0;
            infeas += lb_[k] - xb_[i];
          }
        }
        if (infeas <= kFeasTol) return SolveStatus::Optimal;  // primal feasible
      } else {
        for (int i = 0; i < m_; ++i) cb[i] = cost_[basis_[i]];
      }
      y.noalias() = binv_.transpose() * cb;

      // Pricing: eligible nonbasic with best reduced cost.
      int q = -1, dir = 0;
      double best = 0.0;
      for (int j = 0; j < total_; ++j) {
        if (stat_[j] == Basic) continue;
        if (lb_[j] == ub_[j]) continue;  // fixed
        double rc = phase1_mode ? 0.0 : cost_[j];
        for (const auto& [r, c] : cols_[j]) rc -= y[r] * c;
        int cand_dir = 0;
        if ((stat_[j] == AtLower || stat_[j] == Free) && rc < -kDualTol) cand_dir = +1;
        else if ((stat_[j] == AtUpper || stat_[j] == Free) && rc > kDualTol) cand_dir = -1;
        if (!cand_dir) continue;
        double score = std::abs(rc);
        if (bland) {
          q = j;
          dir = cand_dir;
          break;
        }
        if (score > best + 1e-12) {
          best = score;
          q = j;
          dir = cand_dir;
        }
      }
      if (q < 0) {
        if (phase1_mode) return SolveStatus::Infeasible;  // infeasible remains
        return SolveStatus::Optimal;
      }

      // Direction through the basis.
      d.setZero();
      for (const auto& [r, c] : cols_[q]) d += c * binv_.col(r);
      // Basic variable i changes by -dir*d[i] per unit increase of x_q along dir.

      // Ratio test: first event wins; ties at lowest row index; prefer a
      // usable pivot magnitude among near-ties.
      double theta = kInf;
      int row = -1;
      int leave_to = AtLower;
      for (int i = 0; i < m_; ++i) {
        double delta = -dir * d[i];
        if (std::abs(delta) <= kPivTol) continue;
        int k = basis_[i];
        double t = kInf;
        int to = AtLower;
        bool above = xb_[i] > ub_[k] + kFeasTol;
        bool below = xb_[i] < lb_[k] - kFeasTol;
        if (delta > 0) {
          if (below) {
            t = (lb_[k] - xb_[i]) / delta;  // crossing into feasibility
            to = AtLower;
          } else if (above) {
            // already beyond ub and worsening: no blocking event
          } else if (std::isfinite(ub_[k])) {
            t = (ub_[k] - xb_[i]) / delta;
            to = AtUpper;
          }
        } else {
          if (above) {
            t = (ub_[k] - xb_[i]) / delta;
            to = AtUpper;
          } else if (below) {
            // already beyond lb and worsening: no blocking event
          } else if (std::isfinite(lb_[k])) {
            t = (lb_[k] - xb_[i]) / delta;
            to = AtLower;
          }
        }
        if (!std::isfinite(t)) continue;
        if (t < -1e-12) t = 0.0;
        if (t < theta - 1e-9 ||
            (t < theta + 1e-9 && row >= 0 && std::abs(delta) > std::abs(-dir * d[row]) * 1e3)) {
          theta = std::max(t, 0.0);
          row = i;
          leave_to = to;
        }
      }
      double own_range = (std::isfinite(lb_[q]) && std::isfinite(ub_[q])) ? ub_[q] - lb_[q] : kInf;

      if (!std::isfinite(theta) && !std::isfinite(own_range)) {
        if (phase1_mode) continue;  // cannot happen: phase-1 cost bounded below
        return SolveStatus::Unbounded;
      }

      ++pivots;
      if (own_range <= theta) {
        // Bound flip: no basis change.
        for (int i = 0; i < m_; ++i) xb_[i] += -dir * d[i] * own_range;
        stat_[q] = (stat_[q] == AtLower) ? AtUpper : AtLower;
        continue;
      }

      // Pivot: q enters at row `row`.
      double enter_val = value(q) + dir * theta;
      for (int i = 0; i < m_; ++i) xb_[i] += -dir * d[i] * theta;
      int leave = basis_[row];
      stat_[leave] = static_cast<std::uint8_t>(leave_to);
      row_of_[leave] = -1;
      basis_[row] = q;
      row_of_[q] = row;
      stat_[q] = Basic;
      // Snap the leaving variable exactly onto its bound.
      xb_[row] = enter_val;

      double piv = d[row];
      Eigen::RowVectorXd brow = binv_.row(row) / piv;
      for (int i = 0; i < m_; ++i) {
        if (i == row) continue;
        double f = d[i];
        if (f != 0.0) binv_.row(i) -= f * brow;
      }
      binv_.row(row) = brow;

      if (++pivots_since_refactor_ >= 200) {
        if (!factorize()) return SolveStatus::IterationLimit;  // numerically stuck
        compute_xb();
      }
    }
  }

  SolveStatus phase1(long& pivots) { return run_phase(true, pivots); }
  SolveStatus phase2(long& pivots) { return run_phase(false, pivots); }

  int n_ = 0, m_ = 0, total_ = 0;
  std::vector<std::vector<Term>> cols_;  // per column: (row, coef)
  std::vector<double> lb0_, ub0_, lb_, ub_, cost_, b_;
  std::vector<int> basis_, row_of_;
  std::vector<std::uint8_t> stat_;
  Eigen::MatrixXd binv_;
  Eigen::VectorXd xb_;
  int pivots_since_refactor_ = 0;
  bool binv_ready_ = false;
};

struct MilpOptions {
  long node_limit = 1000000;
  std::ostream* stats_stream = nullptr;  // JSON-lines solver statistics
};

inline Solution solve_lp(const Model& model) {
  LpEngine engine(model);
  return engine.solve();
}

namespace detail {

// One-hot groups: equality rows sum(u_k) = 1 with unit coefficients over
// binaries. Used for branching and for bound propagation after fixing.
struct OneHotGroups {
  std::vector<std::vector<int>> groups;
  std::vector<int> group_of;  // per variable, -1 if none

  static OneHotGroups detect(const Model& model) {
    OneHotGroups g;
    g.group_of.assign(model.num_variables(), -1);
    for (const Constraint& con : model.constraints()) {
      if (con.sense != Sense::Equal || con.rhs != 1.0 || con.terms.size() < 2) continue;
      bool ok = true;
      for (const auto& [v, c] : con.terms) {
        if (c != 1.0 || model.variables()[v].type != VarType::Binary || g.group_of[v] >= 0) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      int gi = static_cast<int>(g.groups.size());
      std::vector<int> members;
      for (const auto& [v, c] : con.terms) {
        members.push_back(v);
        g.group_of[v] = gi;
      }
      g.groups.push_back(std::move(members));
    }
    return g;
  }
};

struct BBNode {
  double bound;
  long id;
  std::vector<std::pair<int, double>> fixes;  // (var, value in {0,1})
  Basis basis;
};

struct BBNodeOrder {
  bool operator()(const BBNode& a, const BBNode& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;  // min-heap on bound
    return a.id < b.id;  // dive (newest first) across equal-bound plateaus
  }
};

}  // namespace detail

inline Solution solve_milp(const Model& model, const MilpOptions& opts = {}) {
  std::vector<int> binaries;
  for (int j = 0; j < model.num_variables(); ++j)
    if (model.variables()[j].type == VarType::Binary) binaries.push_back(j);

  LpEngine engine(model);
  detail::OneHotGroups onehot = detail::OneHotGroups::detect(model);

  Solution best;
  best.status = SolveStatus::Infeasible;
  bool have_incumbent = false;
  SolverStats stats;

  auto gap = [](double v) { return kGapTol * std::max(1.0, std::abs(v)); };

  // Propagate one-hot implications of a fix list (in place, to fixpoint).
  auto propagate = [&](std::vector<std::pair<int, double>>& fixes) {
    std::unordered_map<int, double> fixed;
    for (auto& [v, val] : fixes) fixed[v] = val;
    bool changed = true;
    while (changed) {
      changed = false;
      for (size_t gi = 0; gi < onehot.groups.size(); ++gi) {
        const auto& members = onehot.groups[gi];
        int ones = 0, free_count = 0, last_free = -1;
        for (int v : members) {
          auto it = fixed.find(v);
          if (it == fixed.end()) {
            ++free_count;
            last_free = v;
          } else if (it->second > 0.5) {
            ++ones;
          }
        }
        if (ones == 1) {
          for (int v : members)
            if (!fixed.count(v)) {
              fixed[v] = 0.0;
              fixes.emplace_back(v, 0.0);
              changed = true;
            }
        } else if (ones == 0 && free_count == 1) {
          fixed[last_free] = 1.0;
          fixes.emplace_back(last_free, 1.0);
          changed = true;
        }
      }
    }
  };

  SolveStatus final_status = SolveStatus::Infeasible;
  bool limit_hit = false;

  // Per-row variable columns, for the rounding heuristic.
  std::vector<std::vector<std::pair<int, double>>> var_rows(model.num_variables());
  for (int i = 0; i < model.num_constraints(); ++i)
    for (const auto& [v, co] : model.constraints()[i].terms) var_rows[v].emplace_back(i, co);

  auto row_ok = [&](int i, double activity) {
    const Constraint& c = model.constraints()[i];
    double viol = c.sense == Sense::LessEqual      ? activity - c.rhs
                  : c.sense == Sense::GreaterEqual ? c.rhs - activity
                                                   : std::abs(activity - c.rhs);
    return viol <= kFeasTol * std::max(1.0, std::abs(c.rhs));
  };

  std::vector<double> obj_coef(model.num_variables(), 0.0);
  for (const auto& [v, co] : model.objective()) obj_coef[v] += co;

  // Rounding heuristic: when the one-hot (structural) binaries are already
  // integral, the remaining fractional binaries are typically cost-free
  // indicators (big-M blocks). Round them one at a time, choosing per
  // variable the value whose own rows stay satisfied; variables the greedy
  // pass cannot place are retried by enumerating the small connected
  // component of binaries they share rows with (indicator pairs constrain
  // each other, so single-variable flips can dead-end). A success yields an
  // incumbent at the node bound, which collapses equal-bound plateaus.
  // Returns -1 after a full attempt, or a binary it could not place — its
  // rows genuinely conflict with both integer values at this LP point, which
  // makes it the branching candidate most likely to move the bound.
  auto try_rounding = [&](const Solution& lp) -> int {
    std::vector<int> frac;
    for (int v : binaries) {
      double fr = lp.x[v] - std::floor(lp.x[v]);
      if (fr > kIntTol && fr < 1.0 - kIntTol) {
        if (onehot.group_of[v] >= 0) return -1;  // structural; leave to branching
        frac.push_back(v);
      }
    }
    if (frac.empty()) return -1;
    std::vector<double> x = lp.x;
    std::vector<double> act(model.num_constraints(), 0.0);
    for (int i = 0; i < model.num_constraints(); ++i)
      for (const auto& [v, co] : model.constraints()[i].terms) act[i] += co * x[v];
    std::vector<int> stuck;
    for (int v : frac) {
      double keep = x[v];
      bool placed = false;
      for (double val : {std::round(keep), 1.0 - std::round(keep)}) {
        bool ok = true;
        for (const auto& [i, co] : var_rows[v])
          if (!row_ok(i, act[i] + co * (val - keep))) {
            ok = false;
            break;
          }
        if (ok) {
          for (const auto& [i, co] : var_rows[v]) act[i] += co * (val - keep);
          x[v] = val;
          placed = true;
          break;
        }
      }
      if (!placed) stuck.push_back(v);
    }
    constexpr int kCompCap = 12;
    std::vector<char> in_comp(model.num_variables(), 0);
    for (int v0 : stuck) {
      double fr0 = x[v0] - std::floor(x[v0]);
      if (fr0 <= kIntTol || fr0 >= 1.0 - kIntTol) continue;  // fixed by an earlier component
      // Connected component of non-structural binaries reachable through
      // shared rows, plus the union of those rows.
      std::vector<int> comp{v0};
      std::vector<int> rows;
      std::vector<char> row_seen(model.num_constraints(), 0);
      in_comp[v0] = 1;
      for (size_t qi = 0; qi < comp.size() && comp.size() <= kCompCap; ++qi) {
        for (const auto& [i, co] : var_rows[comp[qi]]) {
          if (row_seen[i]) continue;
          row_seen[i] = 1;
          rows.push_back(i);
          for (const auto& [u, cu] : model.constraints()[i].terms)
            if (!in_comp[u] && model.variables()[u].type == VarType::Binary &&
                onehot.group_of[u] < 0) {
              in_comp[u] = 1;
              comp.push_back(u);
            }
        }
      }
      for (int u : comp) in_comp[u] = 0;
      if (comp.size() > kCompCap) return v0;
      // Per row, the component's coefficient pattern.
      std::vector<std::vector<std::pair<int, double>>> row_terms(rows.size());
      for (size_t ri = 0; ri < rows.size(); ++ri)
        for (const auto& [u, cu] : model.constraints()[rows[ri]].terms)
          for (size_t ci = 0; ci < comp.size(); ++ci)
            if (comp[ci] == u) row_terms[ri].emplace_back(static_cast<int>(ci), cu);
      int best_mask = -1;
      double best_delta = kInf;
      for (int mask = 0; mask < (1 << comp.size()); ++mask) {
        bool ok = true;
        for (size_t ri = 0; ri < rows.size() && ok; ++ri) {
          double a = act[rows[ri]];
          for (const auto& [ci, cu] : row_terms[ri]) a += cu * (((mask >> ci) & 1) - x[comp[ci]]);
          ok = row_ok(rows[ri], a);
        }
        if (!ok) continue;
        double d = 0.0;
        for (size_t ci = 0; ci < comp.size(); ++ci)
          d += obj_coef[comp[ci]] * (((mask >> ci) & 1) - x[comp[ci]]);
        if (d < best_delta) {
          best_delta = d;
          best_mask = mask;
        }
      }
      if (best_mask < 0) return v0;
      for (size_t ci = 0; ci < comp.size(); ++ci) {
        double val = (best_mask >> ci) & 1;
        for (const auto& [i, co] : var_rows[comp[ci]]) act[i] += co * (val - x[comp[ci]]);
        x[comp[ci]] = val;
      }
    }
    for (int i = 0; i < model.num_constraints(); ++i)
      if (!row_ok(i, act[i])) return frac.front();
    double obj = 0.0;
    for (int v = 0; v < model.num_variables(); ++v) obj += obj_coef[v] * x[v];
    if (!have_incumbent || obj < best.objective) {
      best.status = SolveStatus::Optimal;
      best.objective = obj;
      best.x = std::move(x);
      have_incumbent = true;
      final_status = SolveStatus::Optimal;
    }
    return -1;
  };

  std::priority_queue<detail::BBNode, std::vector<detail::BBNode>, detail::BBNodeOrder> open;
  long next_id = 0;
  open.push(detail::BBNode{-kInf, next_id++, {}, Basis{}});

  while (!open.empty()) {
    detail::BBNode node = std::move(const_cast<detail::BBNode&>(open.top()));
    open.pop();
    if (have_incumbent && node.bound >= best.objective - gap(best.objective)) continue;
    if (stats.nodes_explored >= opts.node_limit) {
      limit_hit = true;
      break;
    }
    ++stats.nodes_explored;

    engine.reset_bounds();
    for (auto& [v, val] : node.fixes) engine.set_bounds(v, val, val);

    Basis out_basis;
    Solution lp = engine.solve(node.fixes.empty() ? nullptr : &node.basis, &out_basis);
    stats.lp_pivots += lp.stats.lp_pivots;
    if (lp.status == SolveStatus::Unbounded) {
      best.status = SolveStatus::Unbounded;
      best.stats = stats;
      return best;
    }
    if (lp.status == SolveStatus::IterationLimit) {
      limit_hit = true;
      break;
    }
    if (lp.status != SolveStatus::Optimal) continue;  // infeasible node
    if (have_incumbent && lp.objective >= best.objective - gap(best.objective)) continue;

    // Lowest-index fractional binary, preferring one-hot members: fixing a
    // structural (tap/cap) binary moves the LP bound, while free indicator
    // binaries split into two children with identical bounds.
    int frac = -1, frac_any = -1;
    for (int v : binaries) {
      double x = lp.x[v];
      if (std::min(x - std::floor(x), std::ceil(x) - x) > kIntTol &&
          std::abs(x - std::round(x)) > kIntTol) {
        if (frac_any < 0) frac_any = v;
        if (onehot.group_of[v] >= 0) {
          frac = v;
          break;
        }
      }
    }
    if (frac < 0) frac = frac_any;
    if (frac < 0) {
      // Integer feasible within tolerance; keep LP values so that the
      // reported solution satisfies every constraint as solved.
      best.status = SolveStatus::Optimal;
      best.objective = lp.objective;
      best.dual_bound = lp.dual_bound;
      best.x = lp.x;
      have_incumbent = true;
      final_status = SolveStatus::Optimal;
      continue;
    }

    int hint = try_rounding(lp);
    if (frac < 0 || onehot.group_of[frac] < 0) {
      // No structural binary is fractional: branch on the indicator the
      // heuristic could not round (both of its values conflict with the LP
      // point, so fixing it forces the continuous variables to move), not on
      // the lowest-index one, whose children often repeat this node's bound.
      if (hint >= 0) frac = hint;
    }
    if (have_incumbent && lp.objective >= best.objective - gap(best.objective)) continue;

    // Branch variable: within a one-hot group, take the largest-value member
    // (lowest index on ties) and explore the 1-branch first; otherwise branch
    // the fractional binary itself, 0-branch first.
    int bv = frac;
    bool one_first = false;
    if (onehot.group_of[frac] >= 0) {
      const auto& members = onehot.groups[onehot.group_of[frac]];
      double bestval = -1.0;
      for (int v : members) {
        bool is_fixed = false;
        for (auto& [fv, fval] : node.fixes)
          if (fv == v) {
            is_fixed = true;
            break;
          }
        if (is_fixed) continue;
        if (lp.x[v] > bestval + 1e-12) {
          bestval = lp.x[v];
          bv = v;
        }
      }
      one_first = true;
    }

    // The equal-bound tie-break explores the newest node first, so push the
    // preferred branch second.
    for (int pass = 0; pass < 2; ++pass) {
      double val = (pass == 1) == one_first ? 1.0 : 0.0;
      detail::BBNode child;
      child.bound = lp.objective;
      child.id = next_id++;
      child.fixes = node.fixes;
      child.fixes.emplace_back(bv, val);
      propagate(child.fixes);
      child.basis = out_basis;
      open.push(std::move(child));
    }
  }

  best.stats = stats;
  if (limit_hit && !have_incumbent) {
    best.status = SolveStatus::NodeLimit;
  } else if (limit_hit) {
    best.status = SolveStatus::NodeLimit;  // incumbent present but not proven
  } else if (!have_incumbent) {
    best.status = final_status;  // Infeasible
  }

  if (opts.stats_stream) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"event\":\"solve_milp\",\"status\":\"%s\",\"objective\":%.12g,"
                  "\"nodes\":%ld,\"lp_pivots\":%ld}\n",
                  to_string(best.status), have_incumbent ? best.objective : 0.0,
                  stats.nodes_explored, stats.lp_pivots);
    (*opts.stats_stream) << buf;
  }
  return best;
}

// ---------------------------------------------------------------------------
// LP interchange format (CPLEX LP). Ordering follows variable/constraint
// handles, so output is bit-reproducible.
// ---------------------------------------------------------------------------

inline std::string format_coef(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_terms(std::ostream& os, const Model& model, const std::vector<Term>& terms) {
  bool first = true;
  for (const auto& [v, c] : terms) {
    double a = c;
    if (first) {
      if (a < 0) os << "- ";
      first = false;
    } else {
      os << (a < 0 ? " - " : " + ");
    }
    os << format_coef(std::abs(a)) << " " << model.variables()[v].name;
  }
  if (first) os << "0 " << (model.num_variables() ? model.variables()[0].name : "x");
}

inline void export_interchange(const Model& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open for writing: " + path);
  os << "\\ cvr-mpc model export\n";
  os << "Minimize\n obj: ";
  write_terms(os, model, model.objective());
  os << "\nSubject To\n";
  for (int i = 0; i < model.num_constraints(); ++i) {
    const Constraint& con = model.constraints()[i];
    os << " c" << i << ": ";
    write_terms(os, model, con.terms);
    switch (con.sense) {
      case Sense::LessEqual: os << " <= "; break;
      case Sense::Equal: os << " = "; break;
      case Sense::GreaterEqual: os << " >= "; break;
    }
    os << format_coef(con.rhs) << "\n";
  }
  os << "Bounds\n";
  for (const Variable& v : model.variables()) {
    if (!std::isfinite(v.lb) && !std::isfinite(v.ub)) {
      os << " " << v.name << " free\n";
      continue;
    }
    os << " " << (std::isfinite(v.lb) ? format_coef(v.lb) : std::string("-infinity")) << " <= "
       << v.name << " <= " << (std::isfinite(v.ub) ? format_coef(v.ub) : std::string("+infinity"))
       << "\n";
  }
  bool any_bin = false;
  for (const Variable& v : model.variables())
    if (v.type == VarType::Binary) {
      if (!any_bin) os << "Binaries\n";
      any_bin = true;
      os << " " << v.name << "\n";
    }
  os << "End\n";
  if (!os) throw input_error("write failure: " + path);
}

}  // namespace cvrmpc::milp
