#pragma once

#include "dgform/agent_trajopt.hpp"
#include "dgform/dvs_trajopt.hpp"
#include "dgform/paas.hpp"
#include "dgform/sim.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

namespace dgform {

// Parse JSON text; syntax errors become kInvalidInput with "line L, column C".
nlohmann::json parse_json(const std::string& text, const std::string& origin = "<input>");
nlohmann::json read_json_file(const std::filesystem::path& path);

// {"name": ..., "dz": ..., "layers": [{"z": ..., "vertices": [[x, y], ...]}]}
FormationShape shape_from_json(const nlohmann::json& j);
nlohmann::json shape_to_json(const FormationShape& shape, const std::string& name = "");

// Relative paths inside the scenario (the shape file) resolve against base_dir.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
Scenario load_scenario(const std::filesystem::path& path);

SimEvent event_from_json(const nlohmann::json& j);
nlohmann::json event_to_json(const SimEvent& event);

nlohmann::json plan_to_json(const FormationPlan& plan);

// {"stamp", "base_radius", "durations": [...], "coefficients": [[...] per row]}
// where row piece * 6 + k holds the t^k coefficients of x, y, z, r, alpha.
nlohmann::json trajectory_to_json(const DvsTrajectory& traj);
DvsTrajectory dvs_trajectory_from_json(const nlohmann::json& j);
// Same layout with three columns plus "agent_id" and "epoch".
nlohmann::json trajectory_to_json(const AgentTrajectory& traj);
AgentTrajectory agent_trajectory_from_json(const nlohmann::json& j);

nlohmann::json verdict_to_json(const Verdict& v);
// Summary document written next to the CSV logs.
nlohmann::json summary_to_json(const Scenario& scenario, const RunResult& result);

// One row per tick: tick,time,agents,e_dist,min_pair,min_clearance,dvs_x,dvs_y,
// dvs_z,dvs_r,dvs_alpha,planned,agent_iterations,emergency_stops,
// guidance_failed,events,plan_ms.
void write_tick_csv(const SimLog& log, std::ostream& out);
// Long format: tick,time,id,x,y,z,vx,vy,vz.
void write_agent_csv(const SimLog& log, std::ostream& out);

}  // namespace dgform
