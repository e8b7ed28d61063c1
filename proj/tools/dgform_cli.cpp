// Command-line entry points: run scenarios, time PAAS, host the sim service.
//
// Exit codes: 0 success, 1 a run failed or a runtime error occurred,
// 2 the scenario or shape could not be parsed, 3 the service port is busy.

#include "dgform/error.hpp"
#include "dgform/io.hpp"
#include "dgform/paas.hpp"
#include "dgform/service.hpp"
#include "dgform/sim.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace dgform;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitParse = 2;
constexpr int kExitPortBusy = 3;

struct RunOptions {
  std::string scenario;
  std::uint64_t seed = 0;
  int repeat = 1;
  std::string mode;
  std::string out;
  int jobs = 1;
  bool quiet = false;
};

void write_outputs(const fs::path& dir, const Scenario& sc, const RunResult& res) {
  fs::create_directories(dir);
  std::ofstream ticks(dir / "ticks.csv");
  write_tick_csv(res.log, ticks);
  std::ofstream agents(dir / "agents.csv");
  write_agent_csv(res.log, agents);
  std::ofstream summary(dir / "summary.json");
  summary << summary_to_json(sc, res).dump(2) << '\n';
}

int run_paas_only(const Scenario& sc, const RunOptions& opt) {
  std::vector<Point3> pos = sc.agents;
  if (pos.empty()) pos.assign(sc.spawn_count, sc.dvs_start);
  const double r0 = sc.dvs_radius > 0.0 ? sc.dvs_radius : shape_frame(sc.shape).horizontal_radius;
  PaasConfig cfg = sc.config.paas;
  cfg.seed += opt.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const FormationPlan plan = run_paas(sc.shape, pos, DvsState{sc.dvs_start, r0, 1.0}, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json j = plan_to_json(plan);
  j["seconds"] = secs;
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    std::ofstream(fs::path(opt.out) / "plan.json") << j.dump(2) << '\n';
  }
  if (!opt.quiet) std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_run(const RunOptions& opt) {
  Scenario base;
  try {
    base = load_scenario(opt.scenario);
    if (opt.mode == "rigid-vrb") base.config.mode = GuidanceMode::kRigid;
    if (opt.mode == "full") base.config.mode = GuidanceMode::kFull;
  } catch (const Error& e) {
    std::cerr << "dgform: " << e.what() << '\n';
    return kExitParse;
  }
  if (opt.mode == "paas-only") return run_paas_only(base, opt);

  std::vector<RunResult> results(opt.repeat);
  std::vector<std::string> failures(opt.repeat);
  std::mutex print_mutex;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < opt.repeat; k = next++) {
      Scenario sc = base;
      sc.config.seed = opt.seed + static_cast<std::uint64_t>(k);
      if (opt.jobs > 1) sc.config.threads = 1;
      try {
        results[k] = run(sc);
        if (!opt.out.empty()) {
          std::ostringstream name;
          name << (sc.name.empty() ? "run" : sc.name) << "_seed" << sc.config.seed;
          write_outputs(fs::path(opt.out) / name.str(), sc, results[k]);
        }
      } catch (const std::exception& e) {
        failures[k] = e.what();
      }
      if (!opt.quiet) {
        std::lock_guard<std::mutex> lock(print_mutex);
        const Verdict& v = results[k].verdict;
        std::cout << "seed " << sc.config.seed << ": ";
        if (!failures[k].empty()) {
          std::cout << "error " << failures[k] << '\n';
        } else {
          std::cout << (v.success ? "success" : "FAIL") << " t_f " << v.flight_time << " max_e_dist "
                    << v.max_e_dist << " final_e_dist " << v.final_e_dist << " min_pair " << v.min_pair
                    << " min_clearance " << v.min_clearance << " max_alpha " << v.max_alpha << " collision "
                    << v.collision << " guidance_failures " << v.guidance_failures << " end " << v.end_time
                    << '\n';
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::max(1, opt.jobs); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int ok = 0;
  double tf_sum = 0.0, tf_min = 1e300, tf_max = -1e300;
  for (int k = 0; k < opt.repeat; ++k) {
    if (!failures[k].empty() || !results[k].verdict.success) continue;
    ++ok;
    const double tf = results[k].verdict.flight_time;
    tf_sum += tf;
    tf_min = std::min(tf_min, tf);
    tf_max = std::max(tf_max, tf);
  }
  const char* mode = base.config.mode == GuidanceMode::kRigid ? "rigid-vrb" : "full";
  std::cout << "scenario,mode,runs,success_rate,t_f_mean,t_f_min,t_f_max\n";
  std::cout << (base.name.empty() ? opt.scenario : base.name) << ',' << mode << ',' << opt.repeat << ','
            << std::setprecision(4) << 100.0 * ok / opt.repeat << ',';
  if (ok > 0) {
    std::cout << tf_sum / ok << ',' << tf_min << ',' << tf_max << '\n';
  } else {
    std::cout << "N/A,N/A,N/A\n";
  }
  return ok == opt.repeat ? 0 : kExitFailed;
}

struct BenchOptions {
  std::vector<std::string> shapes;
  std::vector<int> counts{10, 20, 40, 60, 80, 100};
  int repeat = 20;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_bench_paas(const BenchOptions& opt) {
  std::ostringstream csv;
  csv << "shape,n,repeats,mean_s,max_s\n";
  for (const auto& path : opt.shapes) {
    FormationShape shape;
    try {
      shape = shape_from_json(read_json_file(path));
    } catch (const Error& e) {
      std::cerr << "dgform: " << e.what() << '\n';
      return kExitParse;
    }
    const std::string name = fs::path(path).stem().string();
    const ShapeFrame frame = shape_frame(shape);
    double prev_mean = 0.0;
    for (int n : opt.counts) {
      // Agents start spread on a line outside the shape so the assignment is non-trivial.
      std::vector<Point3> agents;
      for (int i = 0; i < n; ++i) agents.emplace_back(-3.0 * frame.horizontal_radius, 0.3 * i, 0.0);
      PaasConfig cfg;
      double sum = 0.0, worst = 0.0;
      for (int k = 0; k < opt.repeat; ++k) {
        cfg.seed = opt.seed + k;
        const auto t0 = std::chrono::steady_clock::now();
        const FormationPlan plan = run_paas(shape, agents, DvsState{Point3::Zero(), frame.horizontal_radius, 1.0}, cfg);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (plan.assignment.size() != static_cast<std::size_t>(n)) return kExitFailed;
        sum += s;
        worst = std::max(worst, s);
      }
      const double mean = sum / opt.repeat;
      csv << name << ',' << n << ',' << opt.repeat << ',' << std::setprecision(6) << mean << ',' << worst << '\n';
      if (mean < prev_mean) {
        std::cerr << "warning: mean time for " << name << " decreased at n = " << n << '\n';
      }
      prev_mean = mean;
    }
  }
  std::cout << csv.str();
  if (!opt.out.empty()) {
    fs::create_directories(fs::path(opt.out).parent_path().empty() ? "." : fs::path(opt.out).parent_path());
    std::ofstream(opt.out) << csv.str();
  }
  return 0;
}

struct ServeOptions {
  std::string scenario;
  int port = 7878;
  std::uint64_t seed = 0;
  std::string out;
  int decimation = 5;
};

SimService* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->request_stop();
}

int cmd_serve(const ServeOptions& opt) {
  Scenario sc;
  try {
    sc = load_scenario(opt.scenario);
    sc.config.seed = opt.seed;
  } catch (const Error& e) {
    std::cerr << "dgform: " << e.what() << '\n';
    return kExitParse;
  }
  ServiceConfig cfg;
  cfg.port = opt.port;
  cfg.decimation = opt.decimation;
  SimService service(sc, cfg);
  try {
    service.bind();
  } catch (const Error& e) {
    std::cerr << "dgform: " << e.what() << '\n';
    return kExitPortBusy;
  }
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on port " << service.port() << std::endl;
  service.run();
  g_service = nullptr;
  if (!opt.out.empty()) {
    RunResult res;
    res.log = service.simulator().log();
    res.verdict = service.simulator().verdict();
    write_outputs(opt.out, service.simulator().scenario(), res);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable formation planner and simulator"};
  app.require_subcommand(1);

  RunOptions run_opt;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario one or more times");
  run_cmd->add_option("--scenario", run_opt.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run_opt.seed, "First seed");
  run_cmd->add_option("--repeat", run_opt.repeat, "Runs with seeds seed..seed+repeat-1")->check(CLI::PositiveNumber);
  run_cmd->add_option("--mode", run_opt.mode, "full | rigid-vrb | paas-only (default: scenario setting)")
      ->check(CLI::IsMember({"full", "rigid-vrb", "paas-only"}));
  run_cmd->add_option("--out", run_opt.out, "Output directory for CSV and JSON logs");
  run_cmd->add_option("--jobs", run_opt.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--quiet", run_opt.quiet, "Only print the summary table");

  BenchOptions bench_opt;
  auto* bench_cmd = app.add_subcommand("bench-paas", "Time PAAS per shape and swarm size");
  bench_cmd->add_option("--shape", bench_opt.shapes, "Shape JSON files")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--n", bench_opt.counts, "Swarm sizes");
  bench_cmd->add_option("--repeat", bench_opt.repeat, "Repeats per case")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench_opt.seed, "First Lloyd seed");
  bench_cmd->add_option("--out", bench_opt.out, "CSV output file");

  ServeOptions serve_opt;
  auto* serve_cmd = app.add_subcommand("serve", "Host a paused simulation over the sim-service protocol");
  serve_cmd->add_option("--scenario", serve_opt.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", serve_opt.port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--seed", serve_opt.seed, "Seed");
  serve_cmd->add_option("--out", serve_opt.out, "Directory for the final log");
  serve_cmd->add_option("--decimation", serve_opt.decimation, "Ticks per snapshot")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitParse;
  }

  try {
    if (*run_cmd) return cmd_run(run_opt);
    if (*bench_cmd) return cmd_bench_paas(bench_opt);
    if (*serve_cmd) return cmd_serve(serve_opt);
  } catch (const std::exception& e) {
    std::cerr << "dgform: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitFailed;
}
