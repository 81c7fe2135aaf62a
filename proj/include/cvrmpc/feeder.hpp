#pragma once

// Radial feeder data model: parsing, validation, per-unit normalization.
// Immutable after load; everything downstream consumes this representation.

#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvrmpc/bess.hpp"
#include "cvrmpc/errors.hpp"

namespace cvrmpc {

enum class BusKind { Substation, Load, Junction };
enum class EdgeKind { Line, Regulator };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::Load;
  double p0 = 0.0;     // peak active load, pu
  double q0 = 0.0;     // peak reactive load, pu
  double cvr_p = 0.0;  // CVR coefficient, active
  double cvr_q = 0.0;  // CVR coefficient, reactive
};

struct Edge {
  int from = 0;  // parent bus id
  int to = 0;    // child bus id
  double r = 0.0;
  double x = 0.0;
  EdgeKind kind = EdgeKind::Line;
};

struct Feeder {
  std::vector<Bus> buses;
  std::vector<Edge> edges;
  double s_base_kva = 1000.0;
  double v_base_kv = 4.16;
  double v0 = 1.0;  // substation voltage magnitude squared, pu^2

  int index_of(int bus_id) const {
    auto it = index_.find(bus_id);
    if (it == index_.end()) throw input_error("unknown bus id " + std::to_string(bus_id));
    return it->second;
  }
  int substation_index() const { return substation_; }

  void build_index() {
    index_.clear();
    substation_ = -1;
    for (size_t i = 0; i < buses.size(); ++i) {
      if (!index_.emplace(buses[i].id, static_cast<int>(i)).second)
        throw input_error("duplicate bus id " + std::to_string(buses[i].id));
      if (buses[i].kind == BusKind::Substation) {
        if (substation_ >= 0) throw input_error("more than one substation bus");
        substation_ = static_cast<int>(i);
      }
    }
    if (substation_ < 0) throw input_error("no substation bus");
  }

 private:
  std::unordered_map<int, int> index_;
  int substation_ = -1;
};

struct RegulatorSpec {
  int edge = 0;  // index into feeder.edges, must be a regulator edge
  int tap_min = -16;
  int tap_max = 16;
  double step = 0.00625;
};

struct CapacitorSpec {
  int bus = 0;
  double q_rated = 0.0;  // pu
};

struct DgSpec {
  int bus = 0;
  double s_rated = 0.0;      // pu
  std::string p_profile;     // column name in the profiles file
};

struct DeviceFleet {
  std::vector<RegulatorSpec> regulators;
  std::vector<CapacitorSpec> capacitors;
  std::vector<DgSpec> dgs;
  std::optional<BessParams> battery;  // sited at the substation bus
};

struct FeederBundle {
  Feeder feeder;
  DeviceFleet fleet;
};

// Parent map and root-first order over bus indices (not ids).
struct TopologyReport {
  std::vector<int> parent;       // parent bus index, -1 at root
  std::vector<int> parent_edge;  // edge index into feeder.edges, -1 at root
  std::vector<int> order;        // BFS order from the substation
  std::vector<std::vector<int>> child_edges;  // per bus index: outgoing edge indices
};

inline TopologyReport validate_radial(const Feeder& feeder) {
  const int n = static_cast<int>(feeder.buses.size());
  if (static_cast<int>(feeder.edges.size()) != n - 1)
    throw input_error("non-radial topology: expected " + std::to_string(n - 1) + " edges, got " +
                      std::to_string(feeder.edges.size()));
  TopologyReport rep;
  rep.parent.assign(n, -1);
  rep.parent_edge.assign(n, -1);
  rep.child_edges.assign(n, {});
  for (size_t e = 0; e < feeder.edges.size(); ++e) {
    const Edge& ed = feeder.edges[e];
    int pi = feeder.index_of(ed.from);
    int ci = feeder.index_of(ed.to);
    if (ci == feeder.substation_index())
      throw input_error("edge into the substation bus " + std::to_string(ed.to));
    if (rep.parent[ci] != -1)
      throw input_error("bus " + std::to_string(ed.to) + " has multiple parents");
    rep.parent[ci] = pi;
    rep.parent_edge[ci] = static_cast<int>(e);
    rep.child_edges[pi].push_back(static_cast<int>(e));
  }
  // BFS from the root; anything unreached is a disconnected component or cycle.
  rep.order.clear();
  rep.order.push_back(feeder.substation_index());
  for (size_t head = 0; head < rep.order.size(); ++head) {
    int b = rep.order[head];
    for (int e : rep.child_edges[b]) rep.order.push_back(feeder.index_of(feeder.edges[e].to));
  }
  if (static_cast<int>(rep.order.size()) != n) {
    for (int i = 0; i < n; ++i) {
      if (rep.parent[i] < 0 && i != feeder.substation_index())
        throw input_error("bus " + std::to_string(feeder.buses[i].id) +
                          " has no parent (multiple roots or disconnected)");
    }
    throw input_error("cycle detected: not all buses reachable from the substation");
  }
  return rep;
}

namespace detail {

inline BusKind parse_bus_kind(const std::string& s) {
  if (s == "substation") return BusKind::Substation;
  if (s == "load") return BusKind::Load;
  if (s == "junction") return BusKind::Junction;
  throw input_error("unknown bus kind '" + s + "'");
}
inline const char* bus_kind_name(BusKind k) {
  switch (k) {
    case BusKind::Substation: return "substation";
    case BusKind::Load: return "load";
    default: return "junction";
  }
}
inline EdgeKind parse_edge_kind(const std::string& s) {
  if (s == "line") return EdgeKind::Line;
  if (s == "regulator") return EdgeKind::Regulator;
  throw input_error("unknown edge kind '" + s + "'");
}

}  // namespace detail

inline FeederBundle load_feeder(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("cannot open feeder file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw input_error("feeder parse failure in " + path + ": " + e.what());
  }

  FeederBundle out;
  Feeder& f = out.feeder;
  try {
    const auto& base = j.at("base");
    f.s_base_kva = base.at("s_base_kva").get<double>();
    f.v_base_kv = base.at("v_base_kv").get<double>();
    f.v0 = base.value("v0_pu", 1.0);
    if (!(f.s_base_kva > 0) || !(f.v_base_kv > 0)) throw input_error("base quantities must be positive");
    if (f.v0 < 0.9025 || f.v0 > 1.1025)
      throw input_error("substation v0 outside [0.9025, 1.1025] pu^2");
    const double z_base = f.v_base_kv * f.v_base_kv * 1000.0 / f.s_base_kva;  // ohm

    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.kind = detail::parse_bus_kind(jb.at("kind").get<std::string>());
      if (jb.contains("p0_pu")) b.p0 = jb["p0_pu"].get<double>();
      else b.p0 = jb.value("p0_kw", 0.0) / f.s_base_kva;
      if (jb.contains("q0_pu")) b.q0 = jb["q0_pu"].get<double>();
      else b.q0 = jb.value("q0_kvar", 0.0) / f.s_base_kva;
      b.cvr_p = jb.value("cvr_p", 0.0);
      b.cvr_q = jb.value("cvr_q", 0.0);
      if (b.p0 < 0 || b.q0 < 0)
        throw input_error("bus " + std::to_string(b.id) + ": negative load");
      if (b.cvr_p < 0 || b.cvr_q < 0)
        throw input_error("bus " + std::to_string(b.id) + ": negative CVR coefficient");
      f.buses.push_back(b);
    }
    f.build_index();

    for (const auto& je : j.at("edges")) {
      Edge e;
      e.from = je.at("from").get<int>();
      e.to = je.at("to").get<int>();
      if (je.contains("r_pu")) e.r = je["r_pu"].get<double>();
      else e.r = je.value("r_ohm", 0.0) / z_base;
      if (je.contains("x_pu")) e.x = je["x_pu"].get<double>();
      else e.x = je.value("x_ohm", 0.0) / z_base;
      e.kind = detail::parse_edge_kind(je.value("kind", std::string("line")));
      if (e.r < 0 || e.x < 0)
        throw input_error("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                          ": negative impedance");
      if (e.kind == EdgeKind::Regulator && (e.r != 0.0 || e.x != 0.0))
        throw input_error("regulator edge " + std::to_string(e.from) + "->" +
                          std::to_string(e.to) + " must have zero impedance");
      f.index_of(e.from);
      f.index_of(e.to);
      f.edges.push_back(e);
    }

    validate_radial(f);

    if (j.contains("devices")) {
      const auto& jd = j["devices"];
      for (const auto& jr : jd.value("regulators", nlohmann::json::array())) {
        RegulatorSpec r;
        r.edge = jr.at("edge").get<int>();
        r.tap_min = jr.value("tap_min", -16);
        r.tap_max = jr.value("tap_max", 16);
        r.step = jr.value("step", 0.00625);
        if (r.edge < 0 || r.edge >= static_cast<int>(f.edges.size()))
          throw input_error("regulator references unknown edge " + std::to_string(r.edge));
        if (f.edges[r.edge].kind != EdgeKind::Regulator)
          throw input_error("regulator references non-regulator edge " + std::to_string(r.edge));
        if (r.tap_min >= r.tap_max || r.step <= 0) throw input_error("bad regulator tap range");
        out.fleet.regulators.push_back(r);
      }
      for (const auto& jc : jd.value("capacitors", nlohmann::json::array())) {
        CapacitorSpec c;
        c.bus = jc.at("bus").get<int>();
        if (jc.contains("q_rated_pu")) c.q_rated = jc["q_rated_pu"].get<double>();
        else c.q_rated = jc.at("q_rated_kvar").get<double>() / f.s_base_kva;
        f.index_of(c.bus);  // dangling reference check
        if (!(c.q_rated > 0)) throw input_error("capacitor at bus " + std::to_string(c.bus) +
                                                ": q_rated must be positive");
        out.fleet.capacitors.push_back(c);
      }
      for (const auto& jg : jd.value("dgs", nlohmann::json::array())) {
        DgSpec g;
        g.bus = jg.at("bus").get<int>();
        if (jg.contains("s_rated_pu")) g.s_rated = jg["s_rated_pu"].get<double>();
        else g.s_rated = jg.at("s_rated_kva").get<double>() / f.s_base_kva;
        g.p_profile = jg.value("p_profile", "pv_" + std::to_string(g.bus));
        f.index_of(g.bus);
        if (!(g.s_rated > 0)) throw input_error("dg at bus " + std::to_string(g.bus) +
                                                ": s_rated must be positive");
        out.fleet.dgs.push_back(g);
      }
      if (jd.contains("battery") && !jd["battery"].is_null()) {
        const auto& jb = jd["battery"];
        BessParams b;
        b.q_bat = jb.at("q_bat_kwh").get<double>();
        b.c_r = jb.at("c_r_kw").get<double>();
        b.d_r = jb.at("d_r_kw").get<double>();
        b.eta = jb.value("eta", 0.0);
        b.rho = jb.value("rho", 1.0);
        b.e_minus = jb.value("e_minus", 0.25);
        b.e_plus = jb.value("e_plus", 1.0);
        b.soc0 = jb.value("soc0", b.e_minus);
        b.tau = jb.value("tau_h", 0.25);
        b.validate();
        out.fleet.battery = b;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw input_error("feeder file " + path + ": " + e.what());
  }
  return out;
}

inline nlohmann::json feeder_to_json(const FeederBundle& bundle) {
  const Feeder& f = bundle.feeder;
  nlohmann::json j;
  j["base"] = {{"s_base_kva", f.s_base_kva}, {"v_base_kv", f.v_base_kv}, {"v0_pu", f.v0}};
  j["buses"] = nlohmann::json::array();
  for (const Bus& b : f.buses)
    j["buses"].push_back({{"id", b.id},
                          {"kind", detail::bus_kind_name(b.kind)},
                          {"p0_pu", b.p0},
                          {"q0_pu", b.q0},
                          {"cvr_p", b.cvr_p},
                          {"cvr_q", b.cvr_q}});
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : f.edges)
    j["edges"].push_back({{"from", e.from},
                          {"to", e.to},
                          {"r_pu", e.r},
                          {"x_pu", e.x},
                          {"kind", e.kind == EdgeKind::Regulator ? "regulator" : "line"}});
  nlohmann::json jd;
  jd["regulators"] = nlohmann::json::array();
  for (const RegulatorSpec& r : bundle.fleet.regulators)
    jd["regulators"].push_back(
        {{"edge", r.edge}, {"tap_min", r.tap_min}, {"tap_max", r.tap_max}, {"step", r.step}});
  jd["capacitors"] = nlohmann::json::array();
  for (const CapacitorSpec& c : bundle.fleet.capacitors)
    jd["capacitors"].push_back({{"bus", c.bus}, {"q_rated_pu", c.q_rated}});
  jd["dgs"] = nlohmann::json::array();
  for (const DgSpec& g : bundle.fleet.dgs)
    jd["dgs"].push_back({{"bus", g.bus}, {"s_rated_pu", g.s_rated}, {"p_profile", g.p_profile}});
  if (bundle.fleet.battery) {
    const BessParams& b = *bundle.fleet.battery;
    jd["battery"] = {{"q_bat_kwh", b.q_bat}, {"c_r_kw", b.c_r},   {"d_r_kw", b.d_r},
                     {"eta", b.eta},         {"rho", b.rho},      {"e_minus", b.e_minus},
                     {"e_plus", b.e_plus},   {"soc0", b.soc0},    {"tau_h", b.tau}};
  }
  j["devices"] = jd;
  return j;
}

inline void save_feeder(const FeederBundle& bundle, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open for writing: " + path);
  os << feeder_to_json(bundle).dump(2) << "\n";
}

}  // namespace cvrmpc
