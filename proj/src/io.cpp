#include "dgform/io.hpp"

#include "dgform/error.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace dgform {

using nlohmann::json;

namespace {

std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) bad("unknown key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(std::string("field \"") + key + "\": " + e.what());
  }
}

Point3 point3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) bad(what + " must be [x, y, z]");
  for (const auto& v : j)
    if (!v.is_number()) bad(what + " must hold numbers");
  return Point3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json to_json(const Point3& p) { return json::array({p.x(), p.y(), p.z()}); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

Box box_from_json(const json& j) {
  check_keys(j, "box", {"min", "max"});
  Box b{point3(j.at("min"), "box min"), point3(j.at("max"), "box max")};
  if (!((b.max - b.min).array() > 0.0).all()) bad("box max must exceed min on every axis");
  return b;
}

json poly_matrix(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

PiecewisePoly poly_from_json(const json& j, int dim) {
  const auto durations = j.at("durations").get<std::vector<double>>();
  const auto rows = j.at("coefficients").get<std::vector<std::vector<double>>>();
  if (durations.empty() || rows.size() % durations.size() != 0) bad("coefficient rows do not match the pieces");
  Eigen::MatrixXd c(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != dim) bad("coefficient row has the wrong width");
    for (int k = 0; k < dim; ++k) c(r, k) = rows[r][k];
  }
  return PiecewisePoly(Eigen::Map<const Eigen::VectorXd>(durations.data(), durations.size()), c);
}

void read_paas(const json& j, PaasConfig& c) {
  check_keys(j, "config.paas", {"seed", "lloyd_iterations", "lloyd_tolerance", "sample_divisor"});
  read(j, "seed", c.seed);
  read(j, "lloyd_iterations", c.lloyd.max_iterations);
  read(j, "lloyd_tolerance", c.lloyd.tolerance);
  read(j, "sample_divisor", c.lloyd.sample_divisor);
}

void read_search(const json& j, SearchConfig& c) {
  check_keys(j, "config.search", {"w_r", "w_alpha", "w_o", "w_e", "alpha_min", "alpha_max", "r_max",
                                  "primitive_length", "c_o_max", "max_steps", "radius_factors", "alpha_candidates",
                                  "alpha_ramp"});
  read(j, "w_r", c.weights.w_r);
  read(j, "w_alpha", c.weights.w_alpha);
  read(j, "w_o", c.weights.w_o);
  read(j, "w_e", c.weights.w_e);
  read(j, "alpha_min", c.alpha_min);
  read(j, "alpha_max", c.alpha_max);
  read(j, "r_max", c.r_max);
  read(j, "primitive_length", c.primitive_length);
  read(j, "c_o_max", c.c_o_max);
  read(j, "max_steps", c.max_steps);
  read(j, "radius_factors", c.radius_factors);
  read(j, "alpha_candidates", c.alpha_candidates);
  read(j, "alpha_ramp", c.alpha_ramp);
}

void read_dvs(const json& j, DvsOptConfig& c) {
  check_keys(j, "config.dvs", {"v_max", "a_max", "time_weight", "penalty_weight", "anchor_weight",
                               "shape_anchor_weight", "r_floor_ratio", "alpha_min", "alpha_max", "n_theta", "n_phi", "samples_per_piece",
                               "initial_speed_ratio", "max_iterations"});
  read(j, "v_max", c.v_max);
  read(j, "a_max", c.a_max);
  read(j, "time_weight", c.time_weight);
  read(j, "penalty_weight", c.penalty_weight);
  read(j, "anchor_weight", c.anchor_weight);
  read(j, "shape_anchor_weight", c.shape_anchor_weight);
  read(j, "r_floor_ratio", c.r_floor_ratio);
  read(j, "alpha_min", c.alpha_min);
  read(j, "alpha_max", c.alpha_max);
  read(j, "n_theta", c.n_theta);
  read(j, "n_phi", c.n_phi);
  read(j, "samples_per_piece", c.samples_per_piece);
  read(j, "initial_speed_ratio", c.initial_speed_ratio);
  read(j, "max_iterations", c.lbfgs.max_iterations);
}

void read_agent(const json& j, AgentOptConfig& c) {
  check_keys(j, "config.agent", {"horizon", "pieces", "ref_dt", "samples_per_piece", "v_max", "a_max", "clearance",
                                 "downwash", "effort_weight", "formation_weight", "obstacle_weight", "swarm_weight",
                                 "dynamics_weight", "time_weight", "neighbor_radius", "swarm_margin",
                                 "max_iterations"});
  read(j, "horizon", c.horizon);
  read(j, "pieces", c.pieces);
  read(j, "ref_dt", c.ref_dt);
  read(j, "samples_per_piece", c.samples_per_piece);
  read(j, "v_max", c.v_max);
  read(j, "a_max", c.a_max);
  read(j, "clearance", c.clearance);
  read(j, "downwash", c.downwash);
  read(j, "effort_weight", c.effort_weight);
  read(j, "formation_weight", c.formation_weight);
  read(j, "obstacle_weight", c.obstacle_weight);
  read(j, "swarm_weight", c.swarm_weight);
  read(j, "dynamics_weight", c.dynamics_weight);
  read(j, "time_weight", c.time_weight);
  read(j, "neighbor_radius", c.neighbor_radius);
  read(j, "swarm_margin", c.swarm_margin);
  read(j, "max_iterations", c.lbfgs.max_iterations);
}

SimConfig config_from_json(const json& j) {
  check_keys(j, "config", {"seed", "duration", "dt", "plan_every", "settle_time", "e_dist_threshold",
                           "recovery_threshold", "goal_tolerance", "map_resolution", "comm_delay", "tracking_lag",
                           "threads", "sequential_agents", "stop_on_collision", "spawn_jitter", "mode",
                           "agent_radius", "margin", "paas", "search", "dvs", "agent"});
  SimConfig c;
  read(j, "seed", c.seed);
  read(j, "duration", c.duration);
  read(j, "dt", c.dt);
  read(j, "plan_every", c.plan_every);
  read(j, "settle_time", c.settle_time);
  read(j, "e_dist_threshold", c.e_dist_threshold);
  read(j, "recovery_threshold", c.recovery_threshold);
  read(j, "goal_tolerance", c.goal_tolerance);
  read(j, "map_resolution", c.map_resolution);
  read(j, "comm_delay", c.comm_delay);
  read(j, "tracking_lag", c.tracking_lag);
  read(j, "threads", c.threads);
  read(j, "sequential_agents", c.sequential_agents);
  read(j, "stop_on_collision", c.stop_on_collision);
  read(j, "spawn_jitter", c.spawn_jitter);
  read(j, "agent_radius", c.paas.agent_radius);
  read(j, "margin", c.paas.margin);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "full") {
      c.mode = GuidanceMode::kFull;
    } else if (m == "rigid-vrb") {
      c.mode = GuidanceMode::kRigid;
    } else {
      bad("mode must be \"full\" or \"rigid-vrb\"");
    }
  }
  if (j.contains("paas")) read_paas(j.at("paas"), c.paas);
  if (j.contains("search")) read_search(j.at("search"), c.search);
  if (j.contains("dvs")) read_dvs(j.at("dvs"), c.dvs);
  if (j.contains("agent")) read_agent(j.at("agent"), c.agent);
  return c;
}

}  // namespace

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte);
    std::ostringstream msg;
    msg << origin << ": line " << line << ", column " << col << ": " << e.what();
    throw Error(ErrorCode::kInvalidInput, msg.str());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidInput, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path.string());
}

FormationShape shape_from_json(const json& j) {
  check_keys(j, "shape", {"name", "dz", "layers"});
  FormationShape shape;
  read(j, "dz", shape.dz);
  if (!j.contains("layers") || !j.at("layers").is_array()) bad("shape needs a layers array");
  for (const auto& layer : j.at("layers")) {
    check_keys(layer, "shape layer", {"z", "vertices"});
    std::vector<Vec2> v;
    for (const auto& p : layer.at("vertices")) {
      if (!p.is_array() || p.size() != 2) bad("vertices must be [x, y] pairs");
      v.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    shape.layers.push_back(Polygon2::make(std::move(v), layer.value("z", 0.0)));
  }
  shape.validate();
  return shape;
}

json shape_to_json(const FormationShape& shape, const std::string& name) {
  json j;
  if (!name.empty()) j["name"] = name;
  j["dz"] = shape.dz;
  j["layers"] = json::array();
  for (const auto& layer : shape.layers) {
    json v = json::array();
    for (const auto& p : layer.vertices) v.push_back({p.x(), p.y()});
    j["layers"].push_back({{"z", layer.z}, {"vertices", v}});
  }
  return j;
}

SimEvent event_from_json(const json& j) {
  check_keys(j, "event", {"time", "kind", "positions", "ids", "point"});
  SimEvent ev;
  read(j, "time", ev.time);
  const std::string kind = j.value("kind", "");
  if (kind == "join") {
    ev.kind = EventKind::kJoin;
    for (const auto& p : j.at("positions")) ev.positions.push_back(point3(p, "join position"));
  } else if (kind == "leave") {
    ev.kind = EventKind::kLeave;
    ev.ids = j.at("ids").get<std::vector<int>>();
  } else if (kind == "goal") {
    ev.kind = EventKind::kGoal;
    ev.point = point3(j.at("point"), "goal point");
  } else {
    bad("event kind must be join, leave or goal");
  }
  return ev;
}

json event_to_json(const SimEvent& ev) {
  json j{{"time", ev.time}, {"kind", to_string(ev.kind)}};
  switch (ev.kind) {
    case EventKind::kJoin: {
      json p = json::array();
      for (const auto& q : ev.positions) p.push_back(to_json(q));
      j["positions"] = p;
      break;
    }
    case EventKind::kLeave: j["ids"] = ev.ids; break;
    case EventKind::kGoal: j["point"] = to_json(ev.point); break;
  }
  return j;
}

Scenario scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "scenario", {"name", "shape", "agents", "spawn", "dvs", "bounds", "boxes", "goal", "gap", "events",
                             "config", "description"});
  Scenario s;
  read(j, "name", s.name);
  if (!j.contains("shape")) bad("scenario needs a shape");
  const json& shape = j.at("shape");
  s.shape = shape.is_string() ? shape_from_json(read_json_file(base_dir / shape.get<std::string>()))
                              : shape_from_json(shape);
  if (j.contains("agents")) {
    for (const auto& p : j.at("agents")) s.agents.push_back(point3(p, "agent position"));
  }
  read(j, "spawn", s.spawn_count);
  if (j.contains("dvs")) {
    const json& d = j.at("dvs");
    check_keys(d, "dvs", {"position", "radius"});
    if (d.contains("position")) s.dvs_start = point3(d.at("position"), "dvs position");
    read(d, "radius", s.dvs_radius);
  }
  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    check_keys(b, "bounds", {"min", "max"});
    s.bounds = Bounds{point3(b.at("min"), "bounds min"), point3(b.at("max"), "bounds max")};
  }
  if (j.contains("boxes")) {
    for (const auto& b : j.at("boxes")) s.boxes.push_back(box_from_json(b));
  }
  s.goal = j.contains("goal") ? point3(j.at("goal"), "goal") : s.dvs_start;
  if (j.contains("gap")) {
    const json& g = j.at("gap");
    check_keys(g, "gap", {"center", "width", "start_offset", "end_offset", "wall_thickness"});
    GapSpec gap;
    gap.center = point3(g.at("center"), "gap center");
    read(g, "width", gap.width);
    read(g, "start_offset", gap.start_offset);
    read(g, "end_offset", gap.end_offset);
    read(g, "wall_thickness", gap.wall_thickness);
    s.gap = gap;
  }
  if (j.contains("events")) {
    for (const auto& e : j.at("events")) s.events.push_back(event_from_json(e));
  }
  if (j.contains("config")) s.config = config_from_json(j.at("config"));
  if (s.gap && s.gap->wall_thickness > 0.0) {
    const auto walls = gap_walls(s.gap->center, s.gap->width, s.gap->wall_thickness, s.bounds);
    s.boxes.insert(s.boxes.end(), walls.begin(), walls.end());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_json_file(path), path.parent_path());
}

json plan_to_json(const FormationPlan& plan) {
  json targets = json::array();
  for (const auto& t : plan.relative_targets) targets.push_back(to_json(t));
  return {{"relative_targets", targets},     {"target_layer", plan.target_layer},
          {"assignment", plan.assignment},   {"layer_counts", plan.layer_counts},
          {"l_min", plan.l_min},             {"l_s", plan.l_s},
          {"safety_radius", plan.safety_radius}, {"base_radius", plan.base_radius},
          {"assignment_cost", plan.assignment_cost}, {"under_allocated", plan.under_allocated}};
}

json trajectory_to_json(const DvsTrajectory& traj) {
  json j;
  j["stamp"] = traj.stamp;
  j["base_radius"] = traj.base_radius;
  j["durations"] = std::vector<double>(traj.backbone.durations().data(),
                                       traj.backbone.durations().data() + traj.backbone.pieces());
  j["coefficients"] = poly_matrix(traj.backbone.coefficients());
  return j;
}

DvsTrajectory dvs_trajectory_from_json(const json& j) {
  DvsTrajectory t;
  t.stamp = j.at("stamp").get<double>();
  t.base_radius = j.at("base_radius").get<double>();
  t.backbone = poly_from_json(j, kDvsDim);
  return t;
}

json trajectory_to_json(const AgentTrajectory& traj) {
  json j;
  j["agent_id"] = traj.agent_id;
  j["epoch"] = traj.epoch;
  j["stamp"] = traj.stamp;
  j["durations"] = std::vector<double>(traj.backbone.durations().data(),
                                       traj.backbone.durations().data() + traj.backbone.pieces());
  j["coefficients"] = poly_matrix(traj.backbone.coefficients());
  return j;
}

AgentTrajectory agent_trajectory_from_json(const json& j) {
  AgentTrajectory t;
  t.agent_id = j.at("agent_id").get<int>();
  t.epoch = j.value("epoch", 0);
  t.stamp = j.at("stamp").get<double>();
  t.backbone = poly_from_json(j, 3);
  return t;
}

json verdict_to_json(const Verdict& v) {
  return {{"success", v.success},
          {"collision", v.collision},
          {"first_collision_time", number_or_null(v.first_collision_time)},
          {"reached", v.reached},
          {"settled", v.settled},
          {"flight_time", number_or_null(v.flight_time)},
          {"max_e_dist", v.max_e_dist},
          {"final_e_dist", v.final_e_dist},
          {"min_pair", number_or_null(v.min_pair)},
          {"min_clearance", number_or_null(v.min_clearance)},
          {"max_alpha", v.max_alpha},
          {"guidance_failures", v.guidance_failures},
          {"emergency_stops", v.emergency_stops},
          {"final_agents", v.final_agents},
          {"end_time", v.end_time}};
}

json summary_to_json(const Scenario& scenario, const RunResult& result) {
  json events = json::array();
  for (const auto& e : result.log.events) {
    events.push_back({{"time", e.time},
                      {"kind", to_string(e.kind)},
                      {"accepted", e.accepted},
                      {"reason", e.reason},
                      {"roster_before", e.roster_before},
                      {"roster_after", e.roster_after},
                      {"scale_before", e.scale_before},
                      {"scale_after", e.scale_after},
                      {"recovery_time", number_or_null(e.recovery_time >= 0.0 ? e.recovery_time : NAN)}});
  }
  return {{"scenario", scenario.name},
          {"seed", scenario.config.seed},
          {"mode", scenario.config.mode == GuidanceMode::kRigid ? "rigid-vrb" : "full"},
          {"ticks", result.log.ticks.size()},
          {"verdict", verdict_to_json(result.verdict)},
          {"events", events}};
}

void write_tick_csv(const SimLog& log, std::ostream& out) {
  out << "tick,time,agents,e_dist,min_pair,min_clearance,dvs_x,dvs_y,dvs_z,dvs_r,dvs_alpha,planned,"
         "agent_iterations,emergency_stops,guidance_failed,events,plan_ms\n";
  out << std::setprecision(12);
  for (const auto& r : log.ticks) {
    out << r.tick << ',' << r.time << ',' << r.ids.size() << ',' << r.e_dist << ',' << r.min_pair << ','
        << r.min_clearance << ',' << r.dvs.position.x() << ',' << r.dvs.position.y() << ',' << r.dvs.position.z()
        << ',' << r.dvs.radius << ',' << r.dvs.alpha << ',' << (r.planned ? 1 : 0) << ',' << r.agent_iterations
        << ',' << r.emergency_stops << ',' << (r.guidance_failed ? 1 : 0) << ',' << r.events << ','
        << std::setprecision(4) << r.plan_ms << std::setprecision(12) << '\n';
  }
}

void write_agent_csv(const SimLog& log, std::ostream& out) {
  out << "tick,time,id,x,y,z,vx,vy,vz\n";
  out << std::setprecision(12);
  for (const auto& r : log.ticks) {
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      const auto& p = r.positions[i];
      const auto& v = r.velocities[i];
      out << r.tick << ',' << r.time << ',' << r.ids[i] << ',' << p.x() << ',' << p.y() << ',' << p.z() << ','
          << v.x() << ',' << v.y() << ',' << v.z() << '\n';
    }
  }
}

}  // namespace dgform
