#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <random>

#include "cvrmpc/feeder.hpp"

using namespace cvrmpc;

namespace {

std::string fixture(const std::string& name) { return std::string(CVR_FIXTURE_DIR) + "/" + name; }

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = name;
  std::ofstream os(path);
  os << content;
  return path;
}

}  // namespace

TEST_CASE("minimal 2-bus feeder loads and validates") {
  auto bundle = load_feeder(fixture("feeder_2bus.json"));
  const Feeder& f = bundle.feeder;
  REQUIRE(f.buses.size() == 2);
  REQUIRE(f.edges.size() == 1);
  CHECK(f.buses[f.substation_index()].id == 0);
  int i1 = f.index_of(1);
  CHECK_THAT(f.buses[i1].p0, Catch::Matchers::WithinAbs(0.1, 1e-15));
  CHECK_THAT(f.buses[i1].q0, Catch::Matchers::WithinAbs(0.05, 1e-15));
  CHECK(bundle.fleet.regulators.empty());
  CHECK(!bundle.fleet.battery.has_value());
}

TEST_CASE("4-bus fixture carries one regulator, capacitor, dg and battery") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  CHECK(bundle.fleet.regulators.size() == 1);
  CHECK(bundle.fleet.capacitors.size() == 1);
  CHECK(bundle.fleet.dgs.size() == 1);
  REQUIRE(bundle.fleet.battery.has_value());
  CHECK(bundle.fleet.battery->q_bat == 300.0);
  CHECK(bundle.feeder.edges[bundle.fleet.regulators[0].edge].kind == EdgeKind::Regulator);
  CHECK_THAT(bundle.fleet.capacitors[0].q_rated, Catch::Matchers::WithinAbs(0.3, 1e-15));
  CHECK_THAT(bundle.fleet.dgs[0].s_rated, Catch::Matchers::WithinAbs(0.115, 1e-15));
}

TEST_CASE("cycle is rejected as non-radial") {
  std::string path = write_temp("cycle.json", R"({
    "base": {"s_base_kva": 1000, "v_base_kv": 4.16},
    "buses": [{"id":0,"kind":"substation"},{"id":1,"kind":"load"},{"id":2,"kind":"load"}],
    "edges": [{"from":0,"to":1,"r_pu":0.01,"x_pu":0.01},
              {"from":1,"to":2,"r_pu":0.01,"x_pu":0.01},
              {"from":2,"to":0,"r_pu":0.01,"x_pu":0.01}]
  })");
  CHECK_THROWS_AS(load_feeder(path), Error);
  std::remove(path.c_str());
}

TEST_CASE("validate_radial: single edge, star and chain orders") {
  Feeder f;
  f.buses = {{0, BusKind::Substation, 0, 0, 0, 0}, {1, BusKind::Load, 0.1, 0.05, 0, 0}};
  f.edges = {{0, 1, 0.01, 0.02, EdgeKind::Line}};
  f.build_index();
  auto rep = validate_radial(f);
  CHECK(rep.parent[f.index_of(1)] == f.index_of(0));
  CHECK(rep.order == std::vector<int>{0, 1});

  Feeder star;
  star.buses = {{0, BusKind::Substation, 0, 0, 0, 0},
                {1, BusKind::Load, 0.1, 0, 0, 0},
                {2, BusKind::Load, 0.1, 0, 0, 0},
                {3, BusKind::Load, 0.1, 0, 0, 0}};
  star.edges = {{0, 1, 0.01, 0.01, EdgeKind::Line},
                {0, 2, 0.01, 0.01, EdgeKind::Line},
                {0, 3, 0.01, 0.01, EdgeKind::Line}};
  star.build_index();
  auto srep = validate_radial(star);
  CHECK(srep.order[0] == star.substation_index());
  CHECK(srep.order.size() == 4);

  Feeder chain;
  chain.buses = {{0, BusKind::Substation, 0, 0, 0, 0},
                 {1, BusKind::Load, 0.1, 0, 0, 0},
                 {2, BusKind::Load, 0.1, 0, 0, 0},
                 {3, BusKind::Load, 0.1, 0, 0, 0}};
  chain.edges = {{0, 1, 0.01, 0.01, EdgeKind::Line},
                 {1, 2, 0.01, 0.01, EdgeKind::Line},
                 {2, 3, 0.01, 0.01, EdgeKind::Line}};
  chain.build_index();
  auto crep = validate_radial(chain);
  CHECK(crep.order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("validation failures carry the offending element") {
  SECTION("duplicate bus ids") {
    Feeder f;
    f.buses = {{0, BusKind::Substation, 0, 0, 0, 0}, {0, BusKind::Load, 0, 0, 0, 0}};
    CHECK_THROWS_WITH(f.build_index(), Catch::Matchers::ContainsSubstring("duplicate bus id 0"));
  }
  SECTION("two substations") {
    Feeder f;
    f.buses = {{0, BusKind::Substation, 0, 0, 0, 0}, {1, BusKind::Substation, 0, 0, 0, 0}};
    CHECK_THROWS_AS(f.build_index(), Error);
  }
  SECTION("multiple parents") {
    Feeder f;
    f.buses = {{0, BusKind::Substation, 0, 0, 0, 0},
               {1, BusKind::Load, 0, 0, 0, 0},
               {2, BusKind::Load, 0, 0, 0, 0}};
    f.edges = {{0, 1, 0.01, 0.01, EdgeKind::Line},
               {0, 2, 0.01, 0.01, EdgeKind::Line},
               {1, 2, 0.01, 0.01, EdgeKind::Line}};
    f.build_index();
    CHECK_THROWS_AS(validate_radial(f), Error);
  }
  SECTION("dangling capacitor reference") {
    std::string path = write_temp("dangling.json", R"({
      "base": {"s_base_kva": 1000, "v_base_kv": 4.16},
      "buses": [{"id":0,"kind":"substation"},{"id":1,"kind":"load","p0_kw":10}],
      "edges": [{"from":0,"to":1,"r_pu":0.01,"x_pu":0.01}],
      "devices": {"capacitors": [{"bus": 9, "q_rated_kvar": 100}]}
    })");
    CHECK_THROWS_WITH(load_feeder(path), Catch::Matchers::ContainsSubstring("9"));
    std::remove(path.c_str());
  }
  SECTION("regulator edge with impedance") {
    std::string path = write_temp("regimp.json", R"({
      "base": {"s_base_kva": 1000, "v_base_kv": 4.16},
      "buses": [{"id":0,"kind":"substation"},{"id":1,"kind":"load","p0_kw":10}],
      "edges": [{"from":0,"to":1,"r_pu":0.01,"x_pu":0.01,"kind":"regulator"}]
    })");
    CHECK_THROWS_WITH(load_feeder(path), Catch::Matchers::ContainsSubstring("zero impedance"));
    std::remove(path.c_str());
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_feeder("does_not_exist.json"), Error);
  }
}

TEST_CASE("round-trip: save then reload is field-for-field identical") {
  auto bundle = load_feeder(fixture("feeder_4bus.json"));
  save_feeder(bundle, "rt_feeder.json");
  auto again = load_feeder("rt_feeder.json");
  REQUIRE(again.feeder.buses.size() == bundle.feeder.buses.size());
  for (size_t i = 0; i < bundle.feeder.buses.size(); ++i) {
    CHECK(again.feeder.buses[i].id == bundle.feeder.buses[i].id);
    CHECK(again.feeder.buses[i].kind == bundle.feeder.buses[i].kind);
    CHECK(again.feeder.buses[i].p0 == bundle.feeder.buses[i].p0);
    CHECK(again.feeder.buses[i].q0 == bundle.feeder.buses[i].q0);
    CHECK(again.feeder.buses[i].cvr_p == bundle.feeder.buses[i].cvr_p);
    CHECK(again.feeder.buses[i].cvr_q == bundle.feeder.buses[i].cvr_q);
  }
  REQUIRE(again.feeder.edges.size() == bundle.feeder.edges.size());
  for (size_t e = 0; e < bundle.feeder.edges.size(); ++e) {
    CHECK(again.feeder.edges[e].r == bundle.feeder.edges[e].r);
    CHECK(again.feeder.edges[e].x == bundle.feeder.edges[e].x);
    CHECK(again.feeder.edges[e].kind == bundle.feeder.edges[e].kind);
  }
  CHECK(again.fleet.regulators.size() == bundle.fleet.regulators.size());
  CHECK(again.fleet.battery->soc0 == bundle.fleet.battery->soc0);
  std::remove("rt_feeder.json");
}

TEST_CASE("kW and per-unit load entry agree to 1e-12") {
  std::string kw = write_temp("units_kw.json", R"({
    "base": {"s_base_kva": 2000, "v_base_kv": 4.16},
    "buses": [{"id":0,"kind":"substation"},{"id":1,"kind":"load","p0_kw":123.4,"q0_kvar":56.7}],
    "edges": [{"from":0,"to":1,"r_pu":0.01,"x_pu":0.01}]
  })");
  std::string pu = write_temp("units_pu.json", R"({
    "base": {"s_base_kva": 2000, "v_base_kv": 4.16},
    "buses": [{"id":0,"kind":"substation"},{"id":1,"kind":"load","p0_pu":0.0617,"q0_pu":0.02835}],
    "edges": [{"from":0,"to":1,"r_pu":0.01,"x_pu":0.01}]
  })");
  auto a = load_feeder(kw);
  auto b = load_feeder(pu);
  CHECK_THAT(a.feeder.buses[1].p0, Catch::Matchers::WithinAbs(b.feeder.buses[1].p0, 1e-12));
  CHECK_THAT(a.feeder.buses[1].q0, Catch::Matchers::WithinAbs(b.feeder.buses[1].q0, 1e-12));
  std::remove(kw.c_str());
  std::remove(pu.c_str());
}

TEST_CASE("property: random trees validate, |edges| = |buses|-1, all reachable") {
  std::mt19937 rng(424242);
  for (int trial = 0; trial < 25; ++trial) {
    int n = 2 + static_cast<int>(rng() % 30);
    Feeder f;
    f.buses.push_back({0, BusKind::Substation, 0, 0, 0, 0});
    for (int i = 1; i < n; ++i)
      f.buses.push_back({i, BusKind::Load, 0.01 * (rng() % 10), 0.005 * (rng() % 10), 0.6, 3.0});
    for (int i = 1; i < n; ++i) {
      int parent = static_cast<int>(rng() % i);
      f.edges.push_back({parent, i, 0.01, 0.02, EdgeKind::Line});
    }
    f.build_index();
    auto rep = validate_radial(f);
    CHECK(static_cast<int>(f.edges.size()) == n - 1);
    CHECK(static_cast<int>(rep.order.size()) == n);
    for (int i = 1; i < n; ++i) CHECK(rep.parent[i] >= 0);
  }
}
