#pragma once

// Run manifests and the end-to-end experiment pipeline behind the CLI.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lyapnav/demogen.hpp"
#include "lyapnav/evaluate.hpp"
#include "lyapnav/lyapnet.hpp"
#include "lyapnav/policy.hpp"

namespace lyapnav {

inline constexpr int kManifestFormat = 1;
inline constexpr int kExperimentFormat = 1;

// ------------------------------------------------------------- config JSON

inline json solver_config_to_json(const SolverConfig& c) {
  return json{{"n_steps", c.n_steps},     {"dt", c.dt},
              {"max_iters", c.max_iters}, {"penalty", c.penalty},
              {"margin", c.margin},       {"clearance_tol", c.clearance_tol},
              {"max_restarts", c.max_restarts}, {"cell", c.cell},
              {"lbfgs_memory", c.lbfgs_memory}};
}

inline SolverConfig solver_config_from_json(const json& j, SolverConfig c = {}) {
  c.n_steps = j.value("n_steps", c.n_steps);
  c.dt = j.value("dt", c.dt);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.penalty = j.value("penalty", c.penalty);
  c.margin = j.value("margin", c.margin);
  c.clearance_tol = j.value("clearance_tol", c.clearance_tol);
  c.max_restarts = j.value("max_restarts", c.max_restarts);
  c.cell = j.value("cell", c.cell);
  c.lbfgs_memory = j.value("lbfgs_memory", c.lbfgs_memory);
  return c;
}

inline json policy_config_to_json(const PolicyConfig& c) {
  return json{{"xdot_max", c.xdot_max},
              {"dt", c.dt},
              {"goal_tolerance", c.goal_tolerance},
              {"max_steps", c.max_steps},
              {"modulation_enabled", c.modulation_enabled}};
}

inline PolicyConfig policy_config_from_json(const json& j, PolicyConfig c) {
  c.xdot_max = j.value("xdot_max", c.xdot_max);
  c.dt = j.value("dt", c.dt);
  c.goal_tolerance = j.value("goal_tolerance", c.goal_tolerance);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.modulation_enabled = j.value("modulation_enabled", c.modulation_enabled);
  return c;
}

// ---------------------------------------------------------------- manifest

struct ManifestFile {
  std::string path;
  std::string format;  // e.g. "dataset/1"
};

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_hash;
  json seeds = json::object();
  std::vector<ManifestFile> inputs;
  std::vector<ManifestFile> outputs;
  std::string started_at;
  double wall_clock_s = 0.0;
  std::string status = "ok";
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json manifest_to_json(const RunManifest& m) {
  auto files = [](const std::vector<ManifestFile>& fs) {
    json out = json::array();
    for (const auto& f : fs) out.push_back({{"path", f.path}, {"format", f.format}});
    return out;
  };
  return json{{"kind", "manifest"},
              {"format", kManifestFormat},
              {"command", m.command},
              {"argv", m.argv},
              {"config_hash", m.config_hash},
              {"seeds", m.seeds},
              {"inputs", files(m.inputs)},
              {"outputs", files(m.outputs)},
              {"formats",
               {{"scene", kSceneFormat},
                {"dataset", kDatasetFormat},
                {"model", kModelFormat},
                {"report", kReportFormat},
                {"experiment", kExperimentFormat}}},
              {"started_at", m.started_at},
              {"wall_clock_s", m.wall_clock_s},
              {"status", m.status}};
}

/// Appends one line to <dir>/manifest.jsonl. Existing lines are never rewritten.
inline std::filesystem::path append_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  std::filesystem::create_directories(dir.empty() ? "." : dir);
  const auto path = (dir.empty() ? std::filesystem::path(".") : dir) / "manifest.jsonl";
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot append to " + path.string());
  out << manifest_to_json(m).dump() << "\n";
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
  return path;
}

// -------------------------------------------------------------- experiment

struct ExperimentConfig {
  std::string name;
  std::string scene;
  std::vector<int> grid;
  double validation_fraction = 0.2;
  SolverConfig solver;
  TrainConfig train;
  /// Empty: no field export.
  std::vector<int> field_grid;
  int perturbation_trials = 20;
  double perturbation_fraction = 0.1;
};

inline ExperimentConfig experiment_from_json(const json& j) {
  try {
    if (j.value("format", 0) != kExperimentFormat) fail(ErrorCode::invalid_argument, "unsupported experiment format");
    ExperimentConfig c;
    c.name = j.at("name").get<std::string>();
    c.scene = j.at("scene").get<std::string>();
    c.grid = j.at("grid").get<std::vector<int>>();
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.field_grid = j.value("field_grid", c.field_grid);
    c.perturbation_trials = j.value("perturbation_trials", c.perturbation_trials);
    c.perturbation_fraction = j.value("perturbation_fraction", c.perturbation_fraction);
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed experiment config: ") + e.what());
  }
}

inline json experiment_to_json(const ExperimentConfig& c) {
  return json{{"format", kExperimentFormat},
              {"name", c.name},
              {"scene", c.scene},
              {"grid", c.grid},
              {"validation_fraction", c.validation_fraction},
              {"solver", solver_config_to_json(c.solver)},
              {"train", train_config_to_json(c.train)},
              {"field_grid", c.field_grid},
              {"perturbation_trials", c.perturbation_trials},
              {"perturbation_fraction", c.perturbation_fraction}};
}

/// Preset name or path to an experiment JSON file.
inline ExperimentConfig resolve_experiment(const std::string& path_or_name) {
  if (std::filesystem::exists(path_or_name)) return experiment_from_json(read_json_file(path_or_name));
  const auto text = preset_text("experiments", path_or_name);
  if (!text) fail(ErrorCode::not_found, "unknown experiment preset '" + path_or_name + "'");
  return experiment_from_json(json::parse(*text));
}

struct StageSeeds {
  std::uint64_t root = 0;
  std::uint64_t demos = 0;
  std::uint64_t train = 0;
  std::uint64_t perturb = 0;
};

inline StageSeeds stage_seeds(std::uint64_t root) {
  return {root, derive_seed(root, "demos"), derive_seed(root, "train"), derive_seed(root, "perturb")};
}

inline json seeds_to_json(const StageSeeds& s) {
  return json{{"root", s.root}, {"demos", s.demos}, {"train", s.train}, {"perturb", s.perturb}};
}

struct ExperimentResult {
  Scene scene;
  Dataset dataset;
  TrainResult training;
  Comparison comparison;
  std::vector<PerturbationTrial> perturbations;
  std::vector<VTrace> vtraces;
  json report;
  std::vector<ManifestFile> outputs;

  bool certified() const { return training.status == "certified"; }
};

/// Full pipeline: demonstrations, training, evaluation against the
/// baseline, perturbation trials and exports into out_dir. Does not write
/// the manifest; the caller owns that.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                       const std::filesystem::path& out_dir) {
  ExperimentResult r;
  const StageSeeds seeds = stage_seeds(seed);
  r.scene = resolve_scene(cfg.scene);
  r.dataset = generate_dataset(r.scene, grid_starts(r.scene, cfg.grid), cfg.solver, seeds.demos,
                               cfg.validation_fraction);
  TrainConfig tc = cfg.train;
  tc.seed = seeds.train;
  r.training = train(r.dataset, r.scene, tc);
  const PolicyConfig pc = default_policy_config(r.scene);
  r.comparison = compare(r.training.model, r.scene, r.dataset, pc, tc.epsilon);
  if (cfg.perturbation_trials > 0) {
    r.perturbations = perturbation_trials(r.scene, r.training.model, r.dataset, pc, cfg.perturbation_trials,
                                          seeds.perturb, cfg.perturbation_fraction);
  }
  std::vector<std::vector<Vec>> trajectories;
  for (const auto& ro : r.comparison.model.rollouts) trajectories.push_back(ro.states);
  r.vtraces = v_trace_report(ActionSource{&r.training.model}, trajectories, r.scene.goal);

  std::size_t recovered = 0;
  json trials = json::array();
  for (const auto& t : r.perturbations) {
    recovered += t.result.status == "reached";
    trials.push_back({{"demo", t.demo},
                      {"step", t.step},
                      {"delta", detail::vec_to_json(t.delta)},
                      {"status", t.result.status},
                      {"steps", t.result.steps},
                      {"min_sd", t.result.min_sd()}});
  }
  std::size_t monotone = 0;
  double worst_final = 0.0;
  for (const auto& t : r.vtraces) {
    monotone += t.monotone;
    worst_final = std::max(worst_final, t.final_value);
  }
  r.report = comparison_to_json(r.comparison);
  r.report["experiment"] = cfg.name;
  r.report["training"] = {{"status", r.training.status},
                          {"epochs_run", r.training.epochs_run},
                          {"certificate", stability_to_json(r.training.certificate)}};
  r.report["dataset"] = {{"demos", r.dataset.demos.size()},
                         {"infeasible", r.dataset.infeasible.size()},
                         {"validation", r.dataset.split(true).size()}};
  r.report["policy"] = policy_config_to_json(pc);
  r.report["vtrace"] = {{"traces", r.vtraces.size()}, {"monotone", monotone}, {"max_final", worst_final}};
  r.report["perturbation"] = {{"trials", r.perturbations.size()}, {"reached", recovered}, {"records", trials}};

  auto emit = [&](const std::string& file, const std::string& format, const std::string& text) {
    write_text_file(out_dir / file, text);
    r.outputs.push_back({(out_dir / file).string(), format});
  };
  emit("dataset.jsonl", "dataset/" + std::to_string(kDatasetFormat), dataset_to_jsonl(r.dataset));
  emit("model.json", "model/" + std::to_string(kModelFormat), model_to_json(r.training.model).dump() + "\n");
  emit("history.json", "history/1", history_to_json(r.training.history).dump() + "\n");
  emit("report.json", "report/" + std::to_string(kReportFormat), r.report.dump(2) + "\n");
  emit("rollouts.csv", "rollouts-csv/1", rollouts_csv(r.comparison.model.rollouts, r.scene.dim));
  emit("vtrace.csv", "vtrace-csv/1", vtraces_csv(r.vtraces));
  if (!cfg.field_grid.empty()) {
    emit("field.csv", "field-csv/1", field_csv(r.scene, ActionSource{&r.training.model}, cfg.field_grid, pc));
  }
  return r;
}

}  // namespace lyapnav
