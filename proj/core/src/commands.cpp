#include "tdvio/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tdvio/dataset.hpp"
#include "tdvio/errors.hpp"

namespace tdvio {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kAlignment = "se3_umeyama_no_scale";

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

const char* to_string(CompensationJacobian m) {
  return m == CompensationJacobian::kFull ? "full" : "linearization_constant";
}

CompensationJacobian parse_jacobian_mode(const std::string& s) {
  if (s == "full") return CompensationJacobian::kFull;
  if (s == "linearization_constant" || s == "constant") return CompensationJacobian::kLinearizationConstant;
  throw InvalidArgument("unknown jacobian mode '" + s + "' (full|linearization_constant)");
}

Vec3 read_vec3(const json& j, const std::string& key) {
  if (j.is_number()) return Vec3::Constant(j.get<double>());
  if (j.is_array() && j.size() == 3) return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  throw DataError(key + " must be a number or a 3-array");
}

template <typename T>
void take(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

void check_keys(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw DataError("unknown key '" + k + "' in " + where);
  }
}

void write_trace_csv(const std::vector<TdTracePoint>& trace, const std::string& path) {
  std::string s = "t_s,td_ms,cost\n";
  for (const TdTracePoint& p : trace) {
    s += format_double(p.t_s) + "," + format_double(p.td_ms) + "," + format_double(p.cost) + "\n";
  }
  write_file_atomic(path, s);
}

std::vector<GroundTruthRecord> trajectory_records(const std::vector<TrajectorySample>& traj) {
  std::vector<GroundTruthRecord> out;
  out.reserve(traj.size());
  for (const TrajectorySample& s : traj) {
    GroundTruthRecord r;
    r.t_ns = std::llround(s.t * 1e9);
    r.p = s.p;
    r.q = s.q;
    r.v = s.v;
    out.push_back(r);
  }
  return out;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InvalidArgument*>(&e)) return kExitUsage;
  if (dynamic_cast<const EstimatorDiverged*>(&e) || dynamic_cast<const SolverDiverged*>(&e) ||
      dynamic_cast<const SingularBlock*>(&e)) {
    return kExitDiverged;
  }
  return kExitData;
}

void apply_estimator_json(const std::string& text, EstimatorConfig& c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config must be a JSON object");
  check_keys(j,
             {"window_size", "parameterization", "calibrate_td", "init_td_ms", "pixel_noise_px",
              "huber_threshold", "min_inverse_depth", "outlier_threshold", "default_depth",
              "min_parallax_deg", "jacobian_mode", "imu_noise", "solver", "prior_sigma"},
             "config");
  try {
    take(j, "window_size", c.window_size);
    if (j.contains("parameterization")) {
      c.parameterization = parse_parameterization(j.at("parameterization").get<std::string>());
    }
    take(j, "calibrate_td", c.calibrate_td);
    if (j.contains("init_td_ms")) c.init_td = j.at("init_td_ms").get<double>() * 1e-3;
    take(j, "pixel_noise_px", c.pixel_noise_px);
    take(j, "huber_threshold", c.huber_threshold);
    take(j, "min_inverse_depth", c.min_inverse_depth);
    take(j, "outlier_threshold", c.outlier_threshold);
    take(j, "default_depth", c.default_depth);
    take(j, "min_parallax_deg", c.min_parallax_deg);
    if (j.contains("jacobian_mode")) c.jacobian_mode = parse_jacobian_mode(j.at("jacobian_mode").get<std::string>());
    if (j.contains("imu_noise")) {
      const json& n = j.at("imu_noise");
      check_keys(n, {"accel_noise_density", "gyro_noise_density", "accel_random_walk", "gyro_random_walk"},
                 "imu_noise");
      take(n, "accel_noise_density", c.imu_noise.accel_noise_density);
      take(n, "gyro_noise_density", c.imu_noise.gyro_noise_density);
      take(n, "accel_random_walk", c.imu_noise.accel_random_walk);
      take(n, "gyro_random_walk", c.imu_noise.gyro_random_walk);
    }
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      check_keys(s, {"max_iters", "lambda_init", "grad_tol", "cost_tol"}, "solver");
      take(s, "max_iters", c.solver.max_iters);
      take(s, "lambda_init", c.solver.lambda_init);
      take(s, "grad_tol", c.solver.grad_tol);
      take(s, "cost_tol", c.solver.cost_tol);
    }
    if (j.contains("prior_sigma")) {
      const json& p = j.at("prior_sigma");
      check_keys(p, {"theta", "p", "v", "ba", "bg"}, "prior_sigma");
      if (p.contains("theta")) c.prior_sigma_theta = read_vec3(p.at("theta"), "prior_sigma.theta");
      if (p.contains("p")) c.prior_sigma_p = read_vec3(p.at("p"), "prior_sigma.p");
      if (p.contains("v")) c.prior_sigma_v = read_vec3(p.at("v"), "prior_sigma.v");
      if (p.contains("ba")) c.prior_sigma_ba = read_vec3(p.at("ba"), "prior_sigma.ba");
      if (p.contains("bg")) c.prior_sigma_bg = read_vec3(p.at("bg"), "prior_sigma.bg");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out, std::ostream& err) {
  try {
    SimScenario scn;
    if (!o.config.empty()) scn = scenario_from_json(read_file(o.config));
    if (o.scenario) scn.trajectory.kind = parse_trajectory_kind(*o.scenario);
    if (o.offset_ms) scn.true_td = *o.offset_ms * 1e-3;
    if (o.imu_noise && !*o.imu_noise) {
      const double px = scn.noise.pixel_sigma;
      const std::uint64_t seed = scn.noise.seed;
      scn.noise = NoiseSpec::zero();
      scn.noise.pixel_sigma = px;
      scn.noise.seed = seed;
    }
    if (o.pixel_noise) scn.noise.pixel_sigma = *o.pixel_noise;
    if (o.seed) {
      scn.noise.seed = *o.seed;
      scn.trajectory.seed = *o.seed;
    }
    if (o.duration) scn.trajectory.duration = *o.duration;
    scn.validate();

    ensure_dir(o.out);
    const SimData data = simulate(scn);
    write_dataset(data, scn, o.out);
    out << "wrote " << data.imu.size() << " IMU samples and " << data.frames.size() << " frames to "
        << o.out << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "simulate: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int cmd_run(const RunOptionsCli& o, std::ostream& out, std::ostream& err) {
  try {
    const LoadedDataset ds = read_dataset(o.dataset);
    RunOptions ro;
    if (ds.has_scenario) {
      ro.config = estimator_config_for(ds.scenario);
    }
    if (!o.config.empty()) apply_estimator_json(read_file(o.config), ro.config);
    if (o.init_td_ms) ro.config.init_td = *o.init_td_ms * 1e-3;
    if (o.calibrate_td) ro.config.calibrate_td = *o.calibrate_td;
    if (o.window_size) ro.config.window_size = *o.window_size;
    if (o.parameterization) ro.config.parameterization = parse_parameterization(*o.parameterization);
    if (o.jacobian_mode) ro.config.jacobian_mode = parse_jacobian_mode(*o.jacobian_mode);
    if (o.init_velocity_sigma < 0.0) throw InvalidArgument("--init-velocity-sigma must be non-negative");
    ro.config.validate();
    if (o.init_velocity_sigma > 0.0) {
      std::mt19937_64 rng(o.seed);
      std::normal_distribution<double> n(0.0, o.init_velocity_sigma);
      ro.velocity_perturbation = Vec3(n(rng), n(rng), n(rng));
    }

    const RunResult r = run_estimator(ds.data, ro);

    ensure_dir(o.out);
    write_trace_csv(r.td_trace, join(o.out, "td_trace.csv"));
    write_groundtruth_csv(trajectory_records(r.trajectory), join(o.out, "est_trajectory.csv"));

    json rep;
    rep["schema_version"] = 1;
    rep["dataset"] = o.dataset;
    rep["frames_processed"] = r.frames_processed;
    rep["calibrate_td"] = ro.config.calibrate_td;
    rep["init_td_ms"] = ro.config.init_td * 1e3;
    rep["final_td_ms"] = r.final_td_ms;
    if (ds.has_scenario) {
      rep["true_td_ms"] = ds.scenario.true_td * 1e3;
      rep["td_error_ms"] = r.final_td_ms - ds.scenario.true_td * 1e3;
    }
    rep["window_size"] = ro.config.window_size;
    rep["parameterization"] = to_string(ro.config.parameterization);
    rep["jacobian_mode"] = to_string(ro.config.jacobian_mode);
    rep["seed"] = o.seed;
    rep["init_velocity_sigma"] = o.init_velocity_sigma;
    rep["ate_cm"] = r.ate_cm ? json(*r.ate_cm) : json(nullptr);
    rep["ate_alignment"] = kAlignment;
    rep["dropped_factors"] = r.dropped_factors;
    rep["outliers_removed"] = r.outliers_removed;
    json costs = json::array();
    for (const TdTracePoint& p : r.td_trace) costs.push_back(p.cost);
    rep["per_frame_cost"] = costs;
    rep["wall_time_s"] = r.wall_time_s;
    write_file_atomic(join(o.out, "report.json"), rep.dump(2) + "\n");

    out << "frames " << r.frames_processed << ", final td " << r.final_td_ms << " ms";
    if (r.ate_cm) out << ", ATE " << *r.ate_cm << " cm";
    out << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "run: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const auto est = read_groundtruth_csv(o.est);
    const auto gt = read_groundtruth_csv(o.gt);
    const double ate = rmse_ate(to_records(est), to_records(gt));
    json j;
    j["ate_cm"] = ate;
    j["ate_alignment"] = kAlignment;
    j["estimates"] = est.size();
    const std::string text = j.dump(2) + "\n";
    if (!o.out.empty()) write_file_atomic(o.out, text);
    out << text;
    return kExitOk;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int cmd_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.jobs < 1) throw InvalidArgument("--jobs must be at least 1");
    if (o.offsets_ms.empty() || o.seeds.empty()) throw InvalidArgument("sweep needs offsets and seeds");
    SweepSpec spec;
    spec.base.trajectory.kind = parse_trajectory_kind(o.scenario);
    spec.base.trajectory.duration = o.duration;
    spec.base.noise.pixel_sigma = o.pixel_noise;
    spec.offsets_ms = o.offsets_ms;
    spec.seeds = o.seeds;
    spec.init_td_ms = o.init_td_ms;
    spec.jobs = o.jobs;
    for (double off : o.offsets_ms) {
      SimScenario probe = spec.base;
      probe.true_td = off * 1e-3;
      probe.validate();
    }
    if (!o.config.empty()) {
      EstimatorConfig c = estimator_config_for(spec.base);
      apply_estimator_json(read_file(o.config), c);
      c.validate();
      spec.config = c;
    }

    const std::vector<SweepCell> cells = run_sweep(spec);
    ensure_dir(o.out);

    std::string table = "scenario,offset_ms,seed,calibrate_td,estimated_td_ms,td_error_ms,ate_cm,error\n";
    struct Acc {
      int n = 0;
      int failed = 0;
      double td = 0.0;
      double abs_err = 0.0;
      double ate = 0.0;
      int n_ate = 0;
    };
    std::map<std::pair<double, bool>, Acc> acc;
    int failed = 0;
    for (const SweepCell& c : cells) {
      Acc& a = acc[{c.offset_ms, c.calibrate}];
      table += o.scenario + "," + format_double(c.offset_ms) + "," + std::to_string(c.seed) + "," +
               (c.calibrate ? "on" : "off") + ",";
      if (c.estimated_td_ms) {
        table += format_double(*c.estimated_td_ms) + "," + format_double(*c.estimated_td_ms - c.offset_ms);
        ++a.n;
        a.td += *c.estimated_td_ms;
        a.abs_err += std::abs(*c.estimated_td_ms - c.offset_ms);
      } else {
        table += ",";
      }
      table += ",";
      if (c.ate_cm) {
        table += format_double(*c.ate_cm);
        a.ate += *c.ate_cm;
        ++a.n_ate;
      }
      // Error text is free-form; keep it in one CSV field.
      std::string msg = c.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      table += "," + msg + "\n";
      if (!c.error.empty()) {
        ++a.failed;
        ++failed;
      }
    }
    write_file_atomic(join(o.out, "sweep.csv"), table);

    std::string summary =
        "offset_ms,calibrate_td,runs,failed,mean_estimated_td_ms,mean_abs_td_error_ms,mean_ate_cm\n";
    std::ostringstream pretty;
    pretty << "offset_ms  calibrate  mean_td_ms  mean_|err|_ms  mean_ate_cm  failed\n";
    for (const auto& [key, a] : acc) {
      const auto mean = [](double s, int n) { return n > 0 ? s / n : std::nan(""); };
      summary += format_double(key.first) + "," + (key.second ? "on" : "off") + "," +
                 std::to_string(a.n + a.failed) + "," + std::to_string(a.failed) + "," +
                 format_double(mean(a.td, a.n)) + "," + format_double(mean(a.abs_err, a.n)) + "," +
                 format_double(mean(a.ate, a.n_ate)) + "\n";
      char line[160];
      std::snprintf(line, sizeof line, "%9.1f  %9s  %10.3f  %13.3f  %11.3f  %6d\n", key.first,
                    key.second ? "on" : "off", mean(a.td, a.n), mean(a.abs_err, a.n),
                    mean(a.ate, a.n_ate), a.failed);
      pretty << line;
    }
    write_file_atomic(join(o.out, "summary.csv"), summary);
    out << pretty.str();
    if (failed > 0) {
      err << "sweep: " << failed << " of " << cells.size() << " runs failed (see sweep.csv)\n";
      return kExitDiverged;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "sweep: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

int tdvio_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual-inertial odometry with online camera-IMU time-offset calibration"};
  app.require_subcommand(1);

  SimulateOptions sim;
  double sim_offset = 0.0, sim_px = 0.0, sim_duration = 0.0;
  std::uint64_t sim_seed = 0;
  std::string sim_scenario, sim_imu_noise;
  auto* s = app.add_subcommand("simulate", "Generate a synthetic dataset");
  s->add_option("--out", sim.out, "Output directory")->required();
  auto* s_scn = s->add_option("--scenario", sim_scenario, "sinusoid3d | circle | waypoint_spline");
  auto* s_off = s->add_option("--offset-ms", sim_offset, "True camera-IMU offset in ms (|td| < 500)");
  auto* s_px = s->add_option("--pixel-noise", sim_px, "Pixel noise sigma");
  auto* s_seed = s->add_option("--seed", sim_seed, "Noise and landmark seed");
  auto* s_dur = s->add_option("--duration", sim_duration, "Trajectory length in s");
  auto* s_imu = s->add_option("--imu-noise", sim_imu_noise, "on | off")->check(CLI::IsMember({"on", "off"}));
  s->add_option("--config", sim.config, "Scenario JSON (scenario.json schema)");

  RunOptionsCli run;
  double run_init = 0.0;
  int run_window = 0;
  std::string run_cal, run_param, run_jac;
  auto* r = app.add_subcommand("run", "Run the estimator on a dataset");
  r->add_option("--dataset", run.dataset, "Dataset directory")->required();
  r->add_option("--out", run.out, "Output directory")->required();
  auto* r_init = r->add_option("--init-td-ms", run_init, "Initial offset estimate in ms");
  auto* r_cal = r->add_option("--calibrate-td", run_cal, "on | off")->check(CLI::IsMember({"on", "off"}));
  auto* r_win = r->add_option("--window-size", run_window, "Key states in the window");
  auto* r_par = r->add_option("--parameterization", run_param, "invdepth | xyz")
                    ->check(CLI::IsMember({"invdepth", "xyz"}));
  auto* r_jac = r->add_option("--jacobian-mode", run_jac, "linearization_constant | full")
                    ->check(CLI::IsMember({"linearization_constant", "constant", "full"}));
  r->add_option("--init-velocity-sigma", run.init_velocity_sigma, "Bootstrap velocity perturbation, m/s");
  r->add_option("--seed", run.seed, "Seed for the bootstrap perturbation");
  r->add_option("--config", run.config, "Estimator settings JSON");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Absolute trajectory error of an estimate");
  e->add_option("--est", ev.est, "Estimated trajectory CSV")->required();
  e->add_option("--gt", ev.gt, "Ground-truth CSV")->required();
  e->add_option("--out", ev.out, "Write the result JSON here as well");

  SweepOptions sw;
  auto* w = app.add_subcommand("sweep", "Offset x seed x calibrate on/off grid");
  w->add_option("--out", sw.out, "Output directory")->required();
  w->add_option("--scenario", sw.scenario, "Trajectory kind");
  w->add_option("--offsets-ms", sw.offsets_ms, "Injected offsets")->delimiter(',');
  w->add_option("--seeds", sw.seeds, "Seeds")->delimiter(',');
  w->add_option("--init-td-ms", sw.init_td_ms, "Initial offset estimate");
  w->add_option("--duration", sw.duration, "Trajectory length in s");
  w->add_option("--pixel-noise", sw.pixel_noise, "Pixel noise sigma");
  w->add_option("--jobs", sw.jobs, "Parallel runs");
  w->add_option("--config", sw.config, "Estimator settings JSON");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (s->parsed()) {
    if (*s_scn) sim.scenario = sim_scenario;
    if (*s_off) sim.offset_ms = sim_offset;
    if (*s_px) sim.pixel_noise = sim_px;
    if (*s_seed) sim.seed = sim_seed;
    if (*s_dur) sim.duration = sim_duration;
    if (*s_imu) sim.imu_noise = sim_imu_noise == "on";
    return cmd_simulate(sim, out, err);
  }
  if (r->parsed()) {
    if (*r_init) run.init_td_ms = run_init;
    if (*r_cal) run.calibrate_td = run_cal == "on";
    if (*r_win) run.window_size = run_window;
    if (*r_par) run.parameterization = run_param;
    if (*r_jac) run.jacobian_mode = run_jac;
    return cmd_run(run, out, err);
  }
  if (e->parsed()) return cmd_eval(ev, out, err);
  if (w->parsed()) return cmd_sweep(sw, out, err);
  return kExitUsage;
}

}  // namespace tdvio
