#include "dgform/sim.hpp"

#include "dgform/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace dgform {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

DvsTrajectory hold_trajectory(const DvsState& s, double base_radius, double stamp) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * kMincoOrder, kDvsDim);
  c.row(0) << s.position.x(), s.position.y(), s.position.z(), s.radius, s.alpha;
  DvsTrajectory t;
  t.backbone = PiecewisePoly(Eigen::VectorXd::Constant(1, 1.0), c);
  t.base_radius = base_radius;
  t.stamp = stamp;
  return t;
}

bool inside_bounds(const Bounds& b, const Point3& p) {
  return (p.array() >= b.min.array()).all() && (p.array() <= b.max.array()).all();
}

// Inside the deformed ellipsoid with semi-axes (alpha r, r / alpha, r).
bool inside_structure(const DvsState& s, const Point3& p) {
  const Eigen::Vector3d d = p - s.position;
  const double x = d.x() / (s.alpha * s.radius), y = d.y() * s.alpha / s.radius, z = d.z() / s.radius;
  return x * x + y * y + z * z <= 1.0;
}

}  // namespace

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kJoin: return "join";
    case EventKind::kLeave: return "leave";
    case EventKind::kGoal: return "goal";
  }
  return "unknown";
}

void Scenario::validate() const {
  shape.validate();
  if (agents.empty() && spawn_count < 1) throw Error(ErrorCode::kInvalidConfig, "scenario has no agents");
  if (!agents.empty() && spawn_count > 0) {
    throw Error(ErrorCode::kInvalidConfig, "give either explicit agents or a spawn count");
  }
  if (!((bounds.max - bounds.min).array() > 0.0).all()) throw Error(ErrorCode::kInvalidConfig, "empty bounds");
  if (!(config.dt > 0.0) || config.plan_every < 1) throw Error(ErrorCode::kInvalidConfig, "bad tick settings");
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].time < events[i - 1].time) {
      throw Error(ErrorCode::kInvalidConfig, "event times must be non-decreasing");
    }
  }
  const double l_s = 2.0 * config.paas.margin * config.paas.agent_radius;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (min_box_clearance(std::span<const Point3>(&agents[i], 1), boxes) < config.paas.agent_radius) {
      throw Error(ErrorCode::kInvalidConfig, "agent " + std::to_string(i) + " starts in collision");
    }
    for (std::size_t j = i + 1; j < agents.size(); ++j) {
      if ((agents[i] - agents[j]).norm() < l_s - 1e-9) {
        throw Error(ErrorCode::kInvalidConfig, "agents " + std::to_string(i) + " and " + std::to_string(j) +
                                                   " start closer than the safety distance");
      }
    }
  }
}

std::vector<Box> gap_walls(const Point3& center, double width, double thickness, const Bounds& bounds,
                           bool across_y) {
  if (!(width > 0.0) || !(thickness > 0.0)) throw Error(ErrorCode::kInvalidConfig, "gap width and thickness must be positive");
  const int n = across_y ? 0 : 1;  // wall normal
  const int l = across_y ? 1 : 0;  // lateral axis holding the opening
  Box lo{bounds.min, bounds.max};
  lo.min[n] = center[n] - 0.5 * thickness;
  lo.max[n] = center[n] + 0.5 * thickness;
  Box hi = lo;
  lo.max[l] = center[l] - 0.5 * width;
  hi.min[l] = center[l] + 0.5 * width;
  if (!(lo.max[l] > lo.min[l]) || !(hi.max[l] > hi.min[l])) {
    throw Error(ErrorCode::kInvalidConfig, "gap opening does not fit inside the arena");
  }
  return {lo, hi};
}

double formation_error(std::span<const Point3> positions, std::span<const Point3> desired) {
  if (positions.size() != desired.size()) throw Error(ErrorCode::kInvalidInput, "size mismatch");
  if (positions.empty()) return 0.0;
  Point3 pc = Point3::Zero(), dc = Point3::Zero();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    pc += positions[i];
    dc += desired[i];
  }
  const double n = static_cast<double>(positions.size());
  pc /= n;
  dc /= n;
  double sum = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) sum += ((positions[i] - pc) - (desired[i] - dc)).norm();
  return sum / n;
}

double formation_error(std::span<const Point3> positions, const DvsState& dvs, const FormationPlan& plan) {
  if (plan.assignment.size() != positions.size()) throw Error(ErrorCode::kNoAssignment, "plan does not cover agents");
  std::vector<Point3> desired;
  desired.reserve(positions.size());
  for (int t : plan.assignment) desired.push_back(desired_position(dvs, plan.relative_targets.at(t), plan.base_radius));
  return formation_error(positions, desired);
}

double min_pair_distance(std::span<const Point3> positions) {
  double best = kInf;
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j) best = std::min(best, (positions[i] - positions[j]).norm());
  return best;
}

double min_box_clearance(std::span<const Point3> positions, std::span<const Box> boxes) {
  double best = kInf;
  for (const auto& p : positions)
    for (const auto& b : boxes) best = std::min(best, box_signed_distance(b, p));
  return best;
}

Simulator::Simulator(Scenario scenario) : scenario_(std::move(scenario)) { initialize(); }

void Simulator::rebuild_maps() {
  grid_ = build_grid(scenario_.boxes, scenario_.bounds, scenario_.config.map_resolution);
  esdf_ = esdf_from_grid(grid_);
}

void Simulator::initialize() {
  scenario_.validate();
  std::stable_sort(scenario_.events.begin(), scenario_.events.end(),
                   [](const SimEvent& a, const SimEvent& b) { return a.time < b.time; });
  rebuild_maps();
  goal_ = scenario_.goal;
  const SimConfig& cfg = scenario_.config;
  PaasConfig paas = cfg.paas;
  paas.seed = cfg.paas.seed + cfg.seed;

  const double r0 = scenario_.dvs_radius > 0.0 ? scenario_.dvs_radius : shape_frame(scenario_.shape).horizontal_radius;
  DvsState dvs{scenario_.dvs_start, r0, 1.0};

  std::vector<Point3> positions = scenario_.agents;
  if (scenario_.spawn_count > 0) {
    positions.assign(scenario_.spawn_count, scenario_.dvs_start);
  }
  // First pass fixes the safety radius, the second lays targets out at it.
  FormationPlan first = run_paas(scenario_.shape, positions, dvs, paas);
  dvs.radius = first.safety_radius;
  if (scenario_.spawn_count > 0) {
    FormationPlan layout = run_paas(scenario_.shape, positions, dvs, paas);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (int i = 0; i < scenario_.spawn_count; ++i) {
      positions[i] = desired_position(dvs, layout.relative_targets[i], layout.base_radius);
      if (cfg.spawn_jitter > 0.0) {
        positions[i] += cfg.spawn_jitter * Point3(jitter(rng), jitter(rng), jitter(rng));
      }
    }
  }
  plan_ = run_paas(scenario_.shape, positions, dvs, paas);

  agents_.clear();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    AgentState a;
    a.id = next_id_++;
    a.position = positions[i];
    agents_.push_back(a);
    target_of_[a.id] = plan_.assignment[i];
  }
  dvs_traj_ = hold_trajectory(dvs, plan_.base_radius, 0.0);
  guidance_dirty_ = true;
}

DvsState Simulator::dvs_state() const { return dvs_traj_.state_at(clock()); }

std::vector<Point3> Simulator::desired_positions() const {
  const DvsState s = dvs_state();
  std::vector<Point3> out;
  out.reserve(agents_.size());
  for (const auto& a : agents_) {
    const auto it = target_of_.find(a.id);
    if (it == target_of_.end()) {
      out.push_back(Point3::Constant(std::numeric_limits<double>::quiet_NaN()));
    } else {
      out.push_back(desired_position(s, plan_.relative_targets[it->second], plan_.base_radius));
    }
  }
  return out;
}

double Simulator::e_dist() const {
  const auto desired = desired_positions();
  std::vector<Point3> p, d;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    if (std::isnan(desired[i].x())) continue;
    p.push_back(agents_[i].position);
    d.push_back(desired[i]);
  }
  return formation_error(p, d);
}

std::string Simulator::validate_event(const SimEvent& ev) const {
  const double ra = scenario_.config.paas.agent_radius;
  switch (ev.kind) {
    case EventKind::kJoin: {
      if (ev.positions.empty()) return "join without positions";
      const DvsState s = dvs_state();
      for (std::size_t i = 0; i < ev.positions.size(); ++i) {
        const Point3& p = ev.positions[i];
        if (!p.allFinite() || !inside_bounds(scenario_.bounds, p)) return "join position outside the arena";
        if (inside_structure(s, p)) return "join position inside the current structure";
        if (min_box_clearance(std::span<const Point3>(&p, 1), scenario_.boxes) < ra) {
          return "join position collides with an obstacle";
        }
        for (const auto& a : agents_) {
          if ((a.position - p).norm() < 2.0 * ra) return "join position collides with an agent";
        }
        for (std::size_t j = 0; j < i; ++j) {
          if ((ev.positions[j] - p).norm() < 2.0 * ra) return "join positions collide with each other";
        }
      }
      return "";
    }
    case EventKind::kLeave: {
      if (ev.ids.empty()) return "leave without ids";
      std::set<int> seen;
      for (int id : ev.ids) {
        if (!seen.insert(id).second) return "duplicate agent id";
        const bool known =
            std::any_of(agents_.begin(), agents_.end(), [&](const AgentState& a) { return a.id == id; });
        if (!known) return "unknown agent";
      }
      if (seen.size() >= agents_.size()) return "leave would empty the swarm";
      return "";
    }
    case EventKind::kGoal: {
      if (!ev.point.allFinite() || !inside_bounds(scenario_.bounds, ev.point)) return "goal outside the arena";
      if (grid_.occupied_at(ev.point)) return "goal inside an obstacle";
      return "";
    }
  }
  return "unknown event";
}

CommandAck Simulator::apply_event(SimEvent ev) {
  ev.time = clock();
  EventOutcome out;
  out.time = ev.time;
  out.kind = ev.kind;
  out.roster_before = static_cast<int>(agents_.size());
  out.reason = validate_event(ev);
  out.accepted = out.reason.empty();
  std::ostringstream marker;
  marker << (pending_markers_.empty() ? "" : " ") << (out.accepted ? "" : "rejected-") << to_string(ev.kind);
  if (out.accepted) {
    switch (ev.kind) {
      case EventKind::kJoin:
        for (const auto& p : ev.positions) {
          AgentState a;
          a.id = next_id_++;
          a.position = p;
          agents_.push_back(a);
        }
        plan_dirty_ = true;
        break;
      case EventKind::kLeave:
        for (int id : ev.ids) {
          agents_.erase(std::remove_if(agents_.begin(), agents_.end(), [&](const AgentState& a) { return a.id == id; }),
                        agents_.end());
          target_of_.erase(id);
          trajectories_.erase(id);
          previous_trajectories_.erase(id);
        }
        plan_dirty_ = true;
        break;
      case EventKind::kGoal:
        goal_ = ev.point;
        guidance_dirty_ = true;
        break;
    }
    settled_ = false;
    settle_since_ = -1.0;
  }
  out.roster_after = static_cast<int>(agents_.size());
  out.scale_before = out.scale_after = dvs_state().radius;
  pending_markers_ += marker.str();
  log_.events.push_back(out);
  if (out.accepted && ev.kind != EventKind::kGoal) pending_event_index_ = static_cast<int>(log_.events.size()) - 1;
  return {out.accepted, out.reason};
}

CommandAck Simulator::add_boxes(const std::vector<Box>& boxes) {
  for (const auto& b : boxes) {
    if (!((b.max - b.min).array() > 0.0).all()) return {false, "empty box"};
  }
  std::vector<Point3> pos;
  for (const auto& a : agents_) pos.push_back(a.position);
  if (min_box_clearance(pos, boxes) < scenario_.config.paas.agent_radius) return {false, "box overlaps an agent"};
  scenario_.boxes.insert(scenario_.boxes.end(), boxes.begin(), boxes.end());
  rebuild_maps();
  guidance_dirty_ = true;
  pending_markers_ += pending_markers_.empty() ? "boxes" : " boxes";
  return {true, ""};
}

void Simulator::apply_due_events() {
  while (next_event_ < scenario_.events.size() && scenario_.events[next_event_].time <= clock() + 1e-9) {
    apply_event(scenario_.events[next_event_]);
    ++next_event_;
  }
}

void Simulator::run_paas_now() {
  const DvsState s = dvs_state();
  std::vector<Point3> pos;
  for (const auto& a : agents_) pos.push_back(a.position);
  PaasConfig paas = scenario_.config.paas;
  paas.seed = scenario_.config.paas.seed + scenario_.config.seed;
  plan_ = run_paas(scenario_.shape, pos, s, paas);
  target_of_.clear();
  for (std::size_t i = 0; i < agents_.size(); ++i) target_of_[agents_[i].id] = plan_.assignment[i];
  if (pending_event_index_ >= 0) {
    log_.events[pending_event_index_].scale_before = s.radius;
    log_.events[pending_event_index_].scale_after = plan_.safety_radius;
    pending_event_index_ = -1;
  }
  // Targets are now expressed at the current radius; guidance is rebuilt next.
  dvs_traj_.base_radius = plan_.base_radius;
  plan_dirty_ = false;
  guidance_dirty_ = true;
}

void Simulator::replan_guidance(TickRecord& rec) {
  const double t = clock();
  const SimConfig& cfg = scenario_.config;
  const bool rigid = cfg.mode == GuidanceMode::kRigid;
  const DvsState start = dvs_state();
  Eigen::MatrixXd head(3, kDvsDim);
  for (int d = 0; d < 3; ++d) head.row(d) = dvs_traj_.eval(t, d).transpose();
  if (t >= dvs_traj_.end_time()) head.bottomRows(2).setZero();

  SearchConfig sc = cfg.search;
  sc.r_safe = rigid ? start.radius : plan_.safety_radius;
  sc.rigid = rigid;
  DvsOptConfig oc = cfg.dvs;
  oc.freeze_shape = rigid;
  try {
    DvsPath path = search_path(start, goal_, grid_, sc);
    if (!rigid) ramp_deformation(path, grid_, sc.alpha_ramp);
    dvs_traj_ = optimize_dvs(path, head, plan_.base_radius, sc.r_safe, oc, t).trajectory;
    guidance_dirty_ = false;
  } catch (const Error& e) {
    last_guidance_error_ = e.what();
    ++guidance_failures_;
    rec.guidance_failed = true;
    dvs_traj_ = hold_trajectory(start, plan_.base_radius, t);
  }
}

void Simulator::plan_agents(TickRecord& rec) {
  const SimConfig& cfg = scenario_.config;
  const double t = clock();
  std::vector<AgentTrajectory> visible;
  std::map<int, std::size_t> slot;
  for (const auto& a : agents_) {
    auto it = trajectories_.find(a.id);
    if (it == trajectories_.end()) continue;
    if (it->second.stamp + cfg.comm_delay <= t + 1e-12) {
      slot[a.id] = visible.size();
      visible.push_back(it->second);
    } else if (auto prev = previous_trajectories_.find(a.id); prev != previous_trajectories_.end()) {
      slot[a.id] = visible.size();
      visible.push_back(prev->second);
    }
  }

  const int n = static_cast<int>(agents_.size());
  std::vector<AgentOptResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](int i) {
    try {
      const AgentState& a = agents_[i];
      AgentProblem pb;
      pb.agent_id = a.id;
      pb.t_now = t;
      pb.head.resize(3, 3);
      pb.head.row(0) = a.position.transpose();
      pb.head.row(1) = a.velocity.transpose();
      pb.head.row(2) = a.acceleration.transpose();
      const auto target = target_of_.find(a.id);
      if (target != target_of_.end()) {
        FormationPlan single;
        single.relative_targets = {plan_.relative_targets[target->second]};
        single.assignment = {0};
        single.base_radius = plan_.base_radius;
        pb.reference = build_formation_ref(dvs_traj_, single, 0, t, cfg.agent.horizon, cfg.agent.ref_dt);
      } else {
        const int count = static_cast<int>(std::lround(cfg.agent.horizon / cfg.agent.ref_dt));
        for (int j = 0; j <= count; ++j) {
          pb.reference.times.push_back(t + j * cfg.agent.ref_dt);
          pb.reference.positions.push_back(a.position);
        }
      }
      pb.esdf = &esdf_;
      pb.neighbors = visible;
      pb.d_safe = plan_.l_s + cfg.agent.swarm_margin;
      const auto warm = trajectories_.find(a.id);
      pb.warm_start = warm == trajectories_.end() ? nullptr : &warm->second;
      results[i] = optimize_agent(pb, cfg.agent);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, n));
  if (cfg.sequential_agents && cfg.comm_delay <= 0.0) {
    // Each agent sees the plans already made earlier in this cycle.
    for (int i = 0; i < n; ++i) {
      work(i);
      if (errors[i]) continue;
      AgentTrajectory fresh = results[i].trajectory;
      fresh.agent_id = agents_[i].id;
      if (auto s = slot.find(agents_[i].id); s != slot.end()) {
        visible[s->second] = std::move(fresh);
      } else {
        slot[agents_[i].id] = visible.size();
        visible.push_back(std::move(fresh));
      }
    }
  } else if (threads == 1) {
    for (int i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (int i = 0; i < n; ++i) {
    const int id = agents_[i].id;
    if (auto it = trajectories_.find(id); it != trajectories_.end()) previous_trajectories_[id] = it->second;
    results[i].trajectory.agent_id = id;
    trajectories_[id] = results[i].trajectory;
    rec.agent_iterations += results[i].iterations;
    if (results[i].emergency_stop) ++rec.emergency_stops;
  }
  emergency_stops_ += rec.emergency_stops;
}

void Simulator::plan_cycle(TickRecord& rec) {
  rec.planned = true;
  if (plan_dirty_) run_paas_now();
  if (guidance_dirty_) replan_guidance(rec);
  plan_agents(rec);
}

void Simulator::advance() {
  ++tick_;
  const double t = clock();
  const double dt = scenario_.config.dt;
  const double lag = scenario_.config.tracking_lag;
  for (auto& a : agents_) {
    const auto it = trajectories_.find(a.id);
    if (it == trajectories_.end()) continue;
    const AgentTrajectory& tr = it->second;
    if (lag <= 0.0) {
      a.position = tr.position(t);
      a.velocity = tr.derivative(t, 1);
      a.acceleration = tr.derivative(t, 2);
    } else {
      const double beta = 1.0 - std::exp(-dt / lag);
      const Point3 next = a.position + beta * (tr.position(t) - a.position);
      const Eigen::Vector3d v = (next - a.position) / dt;
      a.acceleration = (v - a.velocity) / dt;
      a.velocity = v;
      a.position = next;
    }
  }
}

void Simulator::update_progress(const TickRecord& rec) {
  const SimConfig& cfg = scenario_.config;
  const double ra = cfg.paas.agent_radius;
  if (!collided_ && (rec.min_pair < 2.0 * ra || rec.min_clearance < ra)) {
    collided_ = true;
    first_collision_ = rec.time;
  }
  const DvsState& s = rec.dvs;
  bool at_point;
  if (scenario_.gap) {
    const GapSpec& g = *scenario_.gap;
    if (start_time_ < 0.0 && s.position.x() >= g.center.x() - g.start_offset - 1e-9) start_time_ = rec.time;
    at_point = s.position.x() >= g.center.x() + g.end_offset - cfg.goal_tolerance;
  } else {
    if (start_time_ < 0.0) start_time_ = 0.0;
    at_point = (s.position - goal_).norm() <= cfg.goal_tolerance;
  }
  const bool all_assigned = target_of_.size() == agents_.size();
  const bool calm = at_point && all_assigned && !plan_dirty_ && !guidance_dirty_ && rec.e_dist < cfg.e_dist_threshold;
  if (calm) {
    if (settle_since_ < 0.0) settle_since_ = rec.time;
    if (rec.time - settle_since_ >= cfg.settle_time - 1e-9) {
      settled_ = true;
      reach_time_ = settle_since_;
    }
  } else {
    settle_since_ = -1.0;
    settled_ = false;
  }
}

void Simulator::step() {
  const auto wall0 = std::chrono::steady_clock::now();
  TickRecord rec;
  rec.tick = tick_;
  rec.time = clock();
  apply_due_events();
  if (tick_ % scenario_.config.plan_every == 0) plan_cycle(rec);
  rec.plan_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0).count();
  rec.events = std::move(pending_markers_);
  pending_markers_.clear();
  for (const auto& a : agents_) {
    rec.ids.push_back(a.id);
    rec.positions.push_back(a.position);
    rec.velocities.push_back(a.velocity);
  }
  rec.dvs = dvs_state();
  rec.e_dist = e_dist();
  rec.min_pair = min_pair_distance(rec.positions);
  rec.min_clearance = min_box_clearance(rec.positions, scenario_.boxes);
  update_progress(rec);
  log_.ticks.push_back(std::move(rec));
  advance();
}

bool Simulator::finished() const {
  if (clock() >= scenario_.config.duration - 1e-9) return true;
  if (collided_ && scenario_.config.stop_on_collision) return true;
  return settled_ && next_event_ >= scenario_.events.size();
}

Verdict Simulator::verdict() const {
  Verdict v;
  v.collision = collided_;
  v.first_collision_time = first_collision_;
  v.settled = settled_;
  v.reached = reach_time_ >= 0.0;
  if (v.reached && start_time_ >= 0.0) v.flight_time = reach_time_ - start_time_;
  v.min_pair = kInf;
  v.min_clearance = kInf;
  for (const auto& r : log_.ticks) {
    v.max_e_dist = std::max(v.max_e_dist, r.e_dist);
    v.min_pair = std::min(v.min_pair, r.min_pair);
    v.min_clearance = std::min(v.min_clearance, r.min_clearance);
    v.max_alpha = std::max(v.max_alpha, r.dvs.alpha);
  }
  if (!log_.ticks.empty()) {
    v.final_e_dist = log_.ticks.back().e_dist;
    v.end_time = log_.ticks.back().time;
  }
  v.guidance_failures = guidance_failures_;
  v.emergency_stops = emergency_stops_;
  v.final_agents = static_cast<int>(agents_.size());
  v.success = !collided_ && settled_;
  return v;
}

namespace {

void annotate_recovery(SimLog& log, double threshold, double dt) {
  for (std::size_t k = 0; k < log.events.size(); ++k) {
    EventOutcome& ev = log.events[k];
    if (!ev.accepted || ev.kind == EventKind::kGoal) continue;
    double window_end = kInf;
    for (std::size_t j = k + 1; j < log.events.size(); ++j) {
      if (log.events[j].accepted && log.events[j].kind != EventKind::kGoal && log.events[j].time > ev.time) {
        window_end = log.events[j].time;
        break;
      }
    }
    double last_high = -1.0, last_tick = -1.0;
    for (const auto& r : log.ticks) {
      if (r.time < ev.time - 1e-9 || r.time >= window_end - 1e-9) continue;
      last_tick = r.time;
      if (r.e_dist >= threshold) last_high = r.time;
    }
    if (last_tick < 0.0 || last_high >= last_tick) {
      ev.recovery_time = -1.0;
    } else {
      ev.recovery_time = last_high < 0.0 ? 0.0 : last_high + dt - ev.time;
    }
  }
}

}  // namespace

RunResult run(const Scenario& scenario) {
  Simulator sim(scenario);
  while (!sim.finished()) sim.step();
  RunResult out;
  out.verdict = sim.verdict();
  out.log = sim.log();
  annotate_recovery(out.log, scenario.config.recovery_threshold, scenario.config.dt);
  return out;
}

bool recheck_collision(const SimLog& log, std::span<const Box> boxes, double agent_radius) {
  for (const auto& r : log.ticks) {
    if (min_pair_distance(r.positions) < 2.0 * agent_radius) return true;
    if (min_box_clearance(r.positions, boxes) < agent_radius) return true;
  }
  return false;
}

bool logs_identical(const SimLog& a, const SimLog& b) {
  if (a.ticks.size() != b.ticks.size() || a.events.size() != b.events.size()) return false;
  for (std::size_t k = 0; k < a.ticks.size(); ++k) {
    const TickRecord& x = a.ticks[k];
    const TickRecord& y = b.ticks[k];
    if (x.tick != y.tick || x.time != y.time || x.ids != y.ids || x.positions != y.positions ||
        x.velocities != y.velocities || x.events != y.events || x.planned != y.planned ||
        x.agent_iterations != y.agent_iterations || x.emergency_stops != y.emergency_stops ||
        x.guidance_failed != y.guidance_failed || x.dvs.position != y.dvs.position ||
        x.dvs.radius != y.dvs.radius || x.dvs.alpha != y.dvs.alpha) {
      return false;
    }
    // NaN-free by construction; compare the metrics bitwise through ==.
    if (!(x.e_dist == y.e_dist && x.min_pair == y.min_pair && x.min_clearance == y.min_clearance)) return false;
  }
  for (std::size_t k = 0; k < a.events.size(); ++k) {
    const EventOutcome& x = a.events[k];
    const EventOutcome& y = b.events[k];
    if (x.time != y.time || x.kind != y.kind || x.accepted != y.accepted || x.reason != y.reason ||
        x.roster_before != y.roster_before || x.roster_after != y.roster_after || x.scale_before != y.scale_before ||
        x.scale_after != y.scale_after || x.recovery_time != y.recovery_time) {
      return false;
    }
  }
  return true;
}

}  // namespace dgform
