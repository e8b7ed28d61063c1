#pragma once

#include "dgform/agent_trajopt.hpp"
#include "dgform/dvs_search.hpp"
#include "dgform/dvs_trajopt.hpp"
#include "dgform/geometry.hpp"
#include "dgform/paas.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dgform {

enum class EventKind { kJoin, kLeave, kGoal };

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::kGoal;
  std::vector<Point3> positions;  // join
  std::vector<int> ids;           // leave
  Point3 point = Point3::Zero();  // goal
};

const char* to_string(EventKind kind);

enum class GuidanceMode { kFull, kRigid };

struct SimConfig {
  double dt = 0.02;
  int plan_every = 10;
  double duration = 60.0;  // hard stop, seconds of sim time
  // End the run at the first collision; the verdict cannot recover from one.
  bool stop_on_collision = false;
  double settle_time = 1.0;
  double e_dist_threshold = 0.05;
  double recovery_threshold = 0.1;
  double goal_tolerance = 0.1;
  double map_resolution = 0.1;
  double comm_delay = 0.0;
  // First-order tracking lag time constant; 0 means exact kinematic execution.
  double tracking_lag = 0.0;
  int threads = 0;  // 0 picks the hardware concurrency
  // Plan agents one after another in roster order, each against the plans
  // already published this cycle, instead of all against the last cycle.
  bool sequential_agents = true;
  std::uint64_t seed = 0;
  // Standard deviation of the seeded perturbation applied to spawned agents.
  double spawn_jitter = 0.0;
  GuidanceMode mode = GuidanceMode::kFull;
  PaasConfig paas;
  SearchConfig search;
  DvsOptConfig dvs;
  AgentOptConfig agent;
};

// Optional traversal convention: timing starts when the structure passes
// start_offset before the gap center and ends at end_offset after it.
struct GapSpec {
  Point3 center = Point3::Zero();
  double width = 0.0;
  double start_offset = 7.0;
  double end_offset = 7.0;
  // Non-zero: the scenario loader builds the two walls itself.
  double wall_thickness = 0.0;
};

// Two full-height walls leaving an opening of `width` centered on `center`.
// With across_y the walls are normal to x (traversal along x); otherwise
// they are normal to y. The walls extend to the arena bounds.
std::vector<Box> gap_walls(const Point3& center, double width, double thickness, const Bounds& bounds,
                           bool across_y = true);

struct Scenario {
  std::string name;
  FormationShape shape;
  // Either explicit positions or a formation spawn around dvs_start.
  std::vector<Point3> agents;
  int spawn_count = 0;
  Point3 dvs_start = Point3::Zero();
  double dvs_radius = 0.0;  // 0 -> horizontal radius of the shape
  std::vector<Box> boxes;
  Bounds bounds{Point3(-10, -10, 0), Point3(10, 10, 4)};
  Point3 goal = Point3::Zero();
  std::optional<GapSpec> gap;
  std::vector<SimEvent> events;
  SimConfig config;

  // Throws kInvalidConfig on inconsistent input.
  void validate() const;
};

struct AgentState {
  int id = 0;
  Point3 position = Point3::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
};

struct TickRecord {
  int tick = 0;
  double time = 0.0;
  std::vector<int> ids;
  std::vector<Point3> positions;
  std::vector<Eigen::Vector3d> velocities;
  double e_dist = 0.0;
  double min_pair = 0.0;
  double min_clearance = 0.0;
  DvsState dvs;
  bool planned = false;
  int agent_iterations = 0;
  int emergency_stops = 0;
  bool guidance_failed = false;
  std::string events;
  double plan_ms = 0.0;  // wall time, excluded from determinism checks
};

struct EventOutcome {
  double time = 0.0;
  EventKind kind = EventKind::kGoal;
  bool accepted = false;
  std::string reason;
  int roster_before = 0;
  int roster_after = 0;
  double scale_before = 0.0;  // DVS radius before and after the PAAS it triggered
  double scale_after = 0.0;
  double recovery_time = -1.0;  // seconds until e_dist stays below the recovery threshold
};

struct Verdict {
  bool success = false;
  bool collision = false;
  double first_collision_time = -1.0;
  bool reached = false;
  bool settled = false;
  double flight_time = -1.0;
  double max_e_dist = 0.0;
  double final_e_dist = 0.0;
  double min_pair = 0.0;
  double min_clearance = 0.0;
  double max_alpha = 1.0;
  int guidance_failures = 0;
  int emergency_stops = 0;
  int final_agents = 0;
  double end_time = 0.0;
};

struct SimLog {
  std::vector<TickRecord> ticks;
  std::vector<EventOutcome> events;
};

// Translation-invariant mean residual between actual and desired positions.
double formation_error(std::span<const Point3> positions, std::span<const Point3> desired);
double formation_error(std::span<const Point3> positions, const DvsState& dvs, const FormationPlan& plan);

// Smallest pairwise distance and smallest clearance to any box.
double min_pair_distance(std::span<const Point3> positions);
double min_box_clearance(std::span<const Point3> positions, std::span<const Box> boxes);

struct CommandAck {
  bool accepted = false;
  std::string reason;
};

class Simulator {
 public:
  explicit Simulator(Scenario scenario);

  // Advance one physics tick. Due events and queued commands are applied
  // first, then planning runs if this is a planning tick.
  void step();
  bool finished() const;

  // Validate and apply an event at the current tick boundary.
  CommandAck apply_event(SimEvent event);
  // Add obstacle boxes and rebuild the maps; guidance replans next cycle.
  CommandAck add_boxes(const std::vector<Box>& boxes);

  double clock() const { return tick_ * scenario_.config.dt; }
  int tick() const { return tick_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  const DvsTrajectory& dvs() const { return dvs_traj_; }
  DvsState dvs_state() const;
  const FormationPlan& plan() const { return plan_; }
  const Point3& goal() const { return goal_; }
  // Desired world position of every agent in roster order (NaN if unassigned).
  std::vector<Point3> desired_positions() const;
  double e_dist() const;
  const Scenario& scenario() const { return scenario_; }
  const SimLog& log() const { return log_; }
  Verdict verdict() const;
  // Message of the most recent guidance failure, empty if none occurred.
  const std::string& last_guidance_error() const { return last_guidance_error_; }

 private:
  void initialize();
  void rebuild_maps();
  void apply_due_events();
  void plan_cycle(TickRecord& rec);
  void run_paas_now();
  void replan_guidance(TickRecord& rec);
  void plan_agents(TickRecord& rec);
  void advance();
  void record(TickRecord rec);
  void update_progress(const TickRecord& rec);
  std::string validate_event(const SimEvent& event) const;

  Scenario scenario_;
  OccupancyGrid grid_;
  Esdf esdf_;
  int tick_ = 0;
  int next_id_ = 0;
  std::size_t next_event_ = 0;
  std::vector<AgentState> agents_;
  std::map<int, int> target_of_;  // agent id -> plan target
  std::map<int, AgentTrajectory> trajectories_;
  std::map<int, AgentTrajectory> previous_trajectories_;
  FormationPlan plan_;
  DvsTrajectory dvs_traj_;
  Point3 goal_;
  bool plan_dirty_ = false;
  bool guidance_dirty_ = true;
  int pending_event_index_ = -1;
  std::string pending_markers_;
  SimLog log_;

  // progress bookkeeping
  bool collided_ = false;
  double first_collision_ = -1.0;
  double start_time_ = -1.0;
  double reach_time_ = -1.0;
  double settle_since_ = -1.0;
  bool settled_ = false;
  int guidance_failures_ = 0;
  std::string last_guidance_error_;
  int emergency_stops_ = 0;
};

struct RunResult {
  SimLog log;
  Verdict verdict;
};

RunResult run(const Scenario& scenario);

// Recompute the collision verdict from logged positions only.
bool recheck_collision(const SimLog& log, std::span<const Box> boxes, double agent_radius);

// True when both logs hold identical per-tick data, ignoring wall-clock columns.
bool logs_identical(const SimLog& a, const SimLog& b);

}  // namespace dgform
