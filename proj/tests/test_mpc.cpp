#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "cvrmpc/mpc.hpp"

using namespace cvrmpc;
using Catch::Matchers::WithinAbs;

namespace {

std::string fixture(const std::string& name) { return std::string(CVR_FIXTURE_DIR) + "/" + name; }

Profiles flat_profile(int steps, double mult, double price) {
  Profiles p;
  p.steps = steps;
  p.load_mult.assign(steps, mult);
  p.price.assign(steps, price);
  return p;
}

Profiles head(const Profiles& src, int steps) {
  Profiles p;
  p.steps = steps;
  p.tau = src.tau;
  p.load_mult.assign(src.load_mult.begin(), src.load_mult.begin() + steps);
  p.price.assign(src.price.begin(), src.price.begin() + steps);
  for (const auto& [k, v] : src.pv) p.pv[k] = std::vector<double>(v.begin(), v.begin() + steps);
  return p;
}

}  // namespace

TEST_CASE("bundled profiles file loads and validates") {
  Profiles p = load_profiles(fixture("profiles_96.csv"));
  REQUIRE(p.steps == 96);
  CHECK(p.tau == 0.25);
  CHECK(p.max_price() == 50.0);
  CHECK(p.pv.count("pv_3") == 1);
  CHECK(p.pv.count("pv_7") == 1);
  CHECK(p.pv_at("pv_3", 0) == 0.0);
  CHECK(p.pv_at("pv_3", 48) == 100.0);  // solar noon
  for (double m : p.load_mult) CHECK(m > 0.0);
  CHECK_THROWS_AS(p.pv_at("pv_nonexistent", 0), Error);
}

TEST_CASE("malformed profiles are rejected with input errors") {
  auto write = [](const std::string& name, const std::string& body) {
    std::ofstream os(name);
    os << body;
    return name;
  };
  SECTION("wrong header") {
    auto f = write("bad_hdr.csv", "time,load,price\n0,1,1\n");
    CHECK_THROWS_AS(load_profiles(f), Error);
    std::remove(f.c_str());
  }
  SECTION("non-numeric cell") {
    auto f = write("bad_cell.csv", "step,load_mult,price_c_per_kwh\n0,abc,1\n");
    CHECK_THROWS_WITH(load_profiles(f), Catch::Matchers::ContainsSubstring("abc"));
    std::remove(f.c_str());
  }
  SECTION("step column out of order") {
    auto f = write("bad_step.csv", "step,load_mult,price_c_per_kwh\n0,1,1\n2,1,1\n");
    CHECK_THROWS_AS(load_profiles(f), Error);
    std::remove(f.c_str());
  }
  SECTION("ragged row") {
    auto f = write("bad_row.csv", "step,load_mult,price_c_per_kwh\n0,1\n");
    CHECK_THROWS_AS(load_profiles(f), Error);
    std::remove(f.c_str());
  }
  SECTION("negative price") {
    auto f = write("bad_price.csv", "step,load_mult,price_c_per_kwh\n0,1,-5\n");
    CHECK_THROWS_AS(load_profiles(f), Error);
    std::remove(f.c_str());
  }
}

TEST_CASE("W=1 on the bare 2-bus feeder reduces to the CVR load fixed point") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  const Feeder& f = bundle.feeder;
  auto topo = validate_radial(f);
  Profiles p = flat_profile(1, 1.0, 10.0);
  auto hp = build_horizon_problem(f, topo, bundle.fleet, p, Objective::Energy, 0, 1, 0.0, 0.0);
  auto sol = milp::solve_lp(hp.model);  // no binaries at all
  REQUIRE(sol.status == milp::SolveStatus::Optimal);
  // hand fixed point: d = -2(r p0 + x q0) / (1 + 2(r sp + x sq))
  const Bus& b1 = f.buses[f.index_of(1)];
  double r = f.edges[0].r, x = f.edges[0].x;
  double sp = b1.cvr_p * 0.5 * b1.p0, sq = b1.cvr_q * 0.5 * b1.q0;
  double d = -2.0 * (r * b1.p0 + x * b1.q0) / (1.0 + 2.0 * (r * sp + x * sq));
  double p_l = b1.p0 + sp * d;
  CHECK_THAT(sol.x[hp.vars.pf[0].v[f.index_of(1)]], WithinAbs(1.0 + d, 1e-9));
  CHECK_THAT(sol.objective, WithinAbs(f.s_base_kva * p_l, 1e-6));
  CHECK_THAT(sol.x[hp.vars.p_t_kw[0]], WithinAbs(f.s_base_kva * p_l, 1e-6));
}

TEST_CASE("W=1 energy objective leaves the battery idle under the tie-break") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  auto topo = validate_radial(bundle.feeder);
  Profiles p = flat_profile(1, 1.0, 10.0);
  p.pv["pv_3"] = {50.0};
  auto step = mpc_step(bundle.feeder, topo, bundle.fleet, p, Objective::Energy, 0, 1,
                       bundle.fleet.battery->soc0, 0.0, 5);
  CHECK_THAT(step.action.p_cd, WithinAbs(0.0, 1e-5));
}

TEST_CASE("W=2 price spread: charge cheap, discharge expensive") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  DeviceFleet fleet = bundle.fleet;
  fleet.battery = BessParams{};  // 300 kWh, 100 kW, soc0 = 0.25
  auto topo = validate_radial(bundle.feeder);
  Profiles p = flat_profile(2, 1.0, 10.0);
  p.price = {10.0, 60.0};
  auto hp = build_horizon_problem(bundle.feeder, topo, fleet, p, Objective::Revenue, 0, 2,
                                  fleet.battery->soc0, 0.0);
  auto sol = milp::solve_milp(hp.model);
  REQUIRE(sol.status == milp::SolveStatus::Optimal);
  ControlAction a0 = extract_action(hp, sol, 0);
  ControlAction a1 = extract_action(hp, sol, 1);
  CHECK_THAT(a0.p_cd, WithinAbs(100.0, 1e-5));   // rate-limited charge
  CHECK_THAT(a1.p_cd, WithinAbs(-100.0, 1e-5));  // SOC-limited discharge back to E-
}

TEST_CASE("consecutive mpc_steps track the first window's trajectory under perfect forecast") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  DeviceFleet fleet = bundle.fleet;
  fleet.battery = BessParams{};
  auto topo = validate_radial(bundle.feeder);
  Profiles p = flat_profile(2, 1.0, 10.0);
  p.price = {10.0, 60.0};
  auto first = mpc_step(bundle.feeder, topo, fleet, p, Objective::Revenue, 0, 2,
                        fleet.battery->soc0, 0.0);
  ControlAction planned = extract_action(first.problem, first.solution, 1);
  double soc1 = soc_update(fleet.battery->soc0, first.action.p_cd, *fleet.battery);
  auto second =
      mpc_step(bundle.feeder, topo, fleet, p, Objective::Revenue, 1, 1, soc1, 0.0);
  CHECK_THAT(second.action.p_cd, WithinAbs(planned.p_cd, 1e-5));
}

TEST_CASE("apply_to_plant: neutral devices and zero load give a flat feeder") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  auto topo = validate_radial(bundle.feeder);
  ControlAction a;
  a.tap = {0};
  a.cap = {0};
  a.q_dg = {0.0};
  auto meas = apply_to_plant(bundle.feeder, topo, bundle.fleet, a, 0.0, {0.0});
  CHECK_THAT(meas.p_s_kw, WithinAbs(0.0, 1e-9));
  CHECK_THAT(meas.v_min, WithinAbs(1.0, 1e-12));
  CHECK_THAT(meas.v_max, WithinAbs(1.0, 1e-12));
}

TEST_CASE("apply_to_plant rejects mismatched actions and out-of-range taps") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  auto topo = validate_radial(bundle.feeder);
  ControlAction bad;  // empty action vs 1-reg/1-cap/1-dg fleet
  CHECK_THROWS_AS(apply_to_plant(bundle.feeder, topo, bundle.fleet, bad, 1.0, {}), Error);
  ControlAction oob;
  oob.tap = {40};
  oob.cap = {0};
  oob.q_dg = {0.0};
  CHECK_THROWS_AS(apply_to_plant(bundle.feeder, topo, bundle.fleet, oob, 1.0, {0.0}), Error);
}

TEST_CASE("run_day aborts with partial results on an infeasible window") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  auto topo = validate_radial(bundle.feeder);
  Profiles p = flat_profile(4, 30.0, 10.0);  // voltage floor unreachable
  auto res = run_day(bundle.feeder, topo, bundle.fleet, p, Objective::Energy, 2, 0.0);
  CHECK(!res.completed);
  CHECK(res.failed_step == 0);
  CHECK(res.records.empty());
  CHECK(!res.failure.empty());
}

TEST_CASE("short 4-bus run: Eq. 43 identity, SOC bounds, voltage band") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  auto topo = validate_radial(bundle.feeder);
  Profiles day = load_profiles(fixture("profiles_96.csv"));
  Profiles p = head(day, 8);
  auto res = run_day(bundle.feeder, topo, bundle.fleet, p, Objective::Energy, 2, 0.0, 5);
  REQUIRE(res.completed);
  REQUIRE(res.records.size() == 8);
  const BessParams& bat = *bundle.fleet.battery;
  for (const auto& r : res.records) {
    CHECK_THAT(r.p_t_kw, WithinAbs(r.p_s_kw + r.action.p_cd, 1e-12));
    CHECK(r.soc >= bat.e_minus - 1e-9);
    CHECK(r.soc <= bat.e_plus + 1e-9);
    CHECK(r.v_min >= 0.95 - 0.005);  // model-feasible; plant within linearization slack
    CHECK(r.v_max <= 1.05 + 0.005);
  }
}

TEST_CASE("full-day dominance on the 4-bus fixture (directional Table I pattern)") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  auto topo = validate_radial(bundle.feeder);
  Profiles day = load_profiles(fixture("profiles_96.csv"));
  auto energy = run_day(bundle.feeder, topo, bundle.fleet, day, Objective::Energy, 2, 0.0, 5);
  auto revenue = run_day(bundle.feeder, topo, bundle.fleet, day, Objective::Revenue, 2, 0.0, 5);
  REQUIRE(energy.completed);
  REQUIRE(revenue.completed);
  CHECK(revenue.total_cost_cents <= energy.total_cost_cents + 1e-6);
  CHECK(energy.total_kwh <= revenue.total_kwh + 1e-6);
}

TEST_CASE("out-of-range windows and bad objectives are input errors") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  auto topo = validate_radial(bundle.feeder);
  Profiles p = flat_profile(4, 1.0, 10.0);
  CHECK_THROWS_AS(build_horizon_problem(bundle.feeder, topo, bundle.fleet, p, Objective::Energy,
                                        3, 2, 0.0, 0.0),
                  Error);
  CHECK_THROWS_AS(build_horizon_problem(bundle.feeder, topo, bundle.fleet, p, Objective::Energy,
                                        0, 0, 0.0, 0.0),
                  Error);
  CHECK(parse_objective("energy") == Objective::Energy);
  CHECK(parse_objective("revenue") == Objective::Revenue);
  CHECK_THROWS_AS(parse_objective("profit"), Error);
}
