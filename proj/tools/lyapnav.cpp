// lyapnav: demonstrations, training, rollouts, evaluation and exports.
//
// Exit status: 0 on success, 1 when a stage fails (JSON error on stderr),
// 2 on a usage error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lyapnav/run.hpp"

namespace fs = std::filesystem;
using namespace lyapnav;

namespace {

struct StageFailure {
  std::string code;
  std::string message;
};

class Session {
 public:
  Session(std::string command, int argc, char** argv) : start_(std::chrono::steady_clock::now()) {
    manifest_.command = std::move(command);
    for (int i = 0; i < argc; ++i) manifest_.argv.emplace_back(argv[i]);
    manifest_.started_at = utc_timestamp(std::chrono::system_clock::now());
  }

  RunManifest& manifest() { return manifest_; }

  void input(const std::string& path, const std::string& format) { manifest_.inputs.push_back({path, format}); }

  void output(const fs::path& path, const std::string& format, const std::string& text) {
    write_text_file(path, text);
    manifest_.outputs.push_back({path.string(), format});
  }

  void config(const json& effective) { manifest_.config_hash = hex64(fnv1a(effective.dump())); }

  void finish(const fs::path& dir) {
    manifest_.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    append_manifest(dir, manifest_);
  }

 private:
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

fs::path dir_of(const std::string& out) {
  const fs::path p(out);
  return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

std::string scene_source(const std::string& arg) {
  return fs::exists(arg) ? arg : "preset:" + arg;
}

Vec to_vec(const std::vector<double>& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

void print_error(const std::string& command, const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"command", command}, {"message", message}}.dump() << "\n";
}

// ---------------------------------------------------------------- commands

struct GenDemosArgs {
  std::string scene, out;
  std::vector<int> grid;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  int steps = 0;
  int max_iters = SolverConfig{}.max_iters;
};

int gen_demos(const GenDemosArgs& a, Session& s) {
  const Scene scene = resolve_scene(a.scene);
  s.input(scene_source(a.scene), "scene/" + std::to_string(kSceneFormat));
  SolverConfig cfg;
  cfg.n_steps = a.steps;
  cfg.max_iters = a.max_iters;
  s.config({{"scene", scene.name}, {"grid", a.grid}, {"validation_fraction", a.validation_fraction},
            {"solver", solver_config_to_json(cfg)}});
  s.manifest().seeds = {{"root", a.seed}};
  const Dataset ds = generate_dataset(scene, grid_starts(scene, a.grid), cfg, a.seed, a.validation_fraction);
  s.output(a.out, "dataset/" + std::to_string(kDatasetFormat), dataset_to_jsonl(ds));
  std::cout << json{{"demos", ds.demos.size()}, {"infeasible", ds.infeasible.size()}, {"out", a.out}}.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, scene, out, history;
  std::vector<int> arch;
  int epochs = TrainConfig{}.epochs;
  int extra_epochs = 0;
  int batch = TrainConfig{}.batch_size;
  std::uint64_t seed = 0;
  double lr = TrainConfig{}.learning_rate;
  double lambda = TrainConfig{}.lambda1;
  double decrease_margin = TrainConfig{}.decrease_margin;
};

int train_cmd(const TrainArgs& a, Session& s) {
  const Scene scene = resolve_scene(a.scene);
  s.input(scene_source(a.scene), "scene/" + std::to_string(kSceneFormat));
  const Dataset ds = load_dataset(a.data, scene.dim);
  s.input(a.data, "dataset/" + std::to_string(kDatasetFormat));
  TrainConfig cfg;
  cfg.layer_sizes = a.arch;
  cfg.epochs = a.epochs;
  cfg.max_extra_epochs = a.extra_epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.learning_rate = a.lr;
  cfg.lambda1 = cfg.lambda2 = a.lambda;
  cfg.decrease_margin = a.decrease_margin;
  s.config(train_config_to_json(cfg));
  s.manifest().seeds = {{"root", a.seed}, {"init", derive_seed(a.seed, "init")}, {"shuffle", derive_seed(a.seed, "shuffle")}};
  const TrainResult res = train(ds, scene, cfg);
  s.output(a.out, "model/" + std::to_string(kModelFormat), model_to_json(res.model).dump() + "\n");
  if (!a.history.empty()) s.output(a.history, "history/1", history_to_json(res.history).dump() + "\n");
  s.manifest().status = res.status;
  std::cout << json{{"status", res.status}, {"epochs_run", res.epochs_run},
                    {"certificate", stability_to_json(res.certificate)}}.dump() << "\n";
  if (!res.certificate.certified()) throw StageFailure{"invalid_lyapunov_function",
                                                       "training ended with constraint violations on training states"};
  return 0;
}

struct SourceArgs {
  std::string model;
  bool baseline = false;
};

struct Source {
  std::optional<LyapunovModel> model;
  ActionSource src() const { return ActionSource{model ? &*model : nullptr}; }
};

Source load_source(const SourceArgs& a, const Scene& scene, Session& s) {
  Source out;
  if (a.baseline) return out;
  out.model = load_model(a.model);
  s.input(a.model, "model/" + std::to_string(kModelFormat));
  if (out.model->dim() != scene.dim) fail(ErrorCode::invalid_argument, "model dimension does not match the scene");
  if ((out.model->goal - scene.goal).norm() > 1e-12) fail(ErrorCode::invalid_argument, "model goal differs from the scene goal");
  return out;
}

struct RolloutArgs {
  std::string scene, data, out, vtrace;
  SourceArgs source;
  std::vector<double> start;
  int max_steps = PolicyConfig{}.max_steps;
  bool no_modulation = false;
};

int rollout_cmd(const RolloutArgs& a, Session& s) {
  const Scene scene = resolve_scene(a.scene);
  s.input(scene_source(a.scene), "scene/" + std::to_string(kSceneFormat));
  const Source src = load_source(a.source, scene, s);
  PolicyConfig cfg = default_policy_config(scene);
  cfg.max_steps = a.max_steps;
  cfg.modulation_enabled = !a.no_modulation;
  s.config({{"policy", policy_config_to_json(cfg)}, {"source", src.src().name()}});
  std::vector<Vec> starts;
  if (!a.start.empty()) {
    if (static_cast<int>(a.start.size()) != scene.dim) fail(ErrorCode::invalid_argument, "--start needs one value per axis");
    starts.push_back(to_vec(a.start));
  } else {
    const Dataset ds = load_dataset(a.data, scene.dim);
    s.input(a.data, "dataset/" + std::to_string(kDatasetFormat));
    for (const auto& d : ds.demos) starts.push_back(d.start());
  }
  std::vector<RolloutResult> results;
  std::vector<std::vector<Vec>> trajectories;
  std::size_t reached = 0;
  for (const auto& x0 : starts) {
    results.push_back(rollout(scene, src.src(), x0, cfg));
    reached += results.back().status == "reached";
    trajectories.push_back(results.back().states);
  }
  s.output(a.out, "rollouts-csv/1", rollouts_csv(results, scene.dim));
  if (!a.vtrace.empty()) {
    s.output(a.vtrace, "vtrace-csv/1", vtraces_csv(v_trace_report(src.src(), trajectories, scene.goal)));
  }
  std::cout << json{{"rollouts", results.size()}, {"reached", reached}, {"out", a.out}}.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string scene, data, out;
  SourceArgs source;
  double epsilon = TrainConfig{}.epsilon;
};

int eval_cmd(const EvalArgs& a, Session& s) {
  const Scene scene = resolve_scene(a.scene);
  s.input(scene_source(a.scene), "scene/" + std::to_string(kSceneFormat));
  const Dataset ds = load_dataset(a.data, scene.dim);
  s.input(a.data, "dataset/" + std::to_string(kDatasetFormat));
  const PolicyConfig cfg = default_policy_config(scene);
  s.config({{"policy", policy_config_to_json(cfg)}, {"epsilon", a.epsilon}, {"baseline", a.source.baseline}});
  const LyapunovModel model = load_model(a.source.model);
  s.input(a.source.model, "model/" + std::to_string(kModelFormat));
  json report;
  if (a.source.baseline) {
    const Comparison c = compare(model, scene, ds, cfg, a.epsilon);
    report = comparison_to_json(c);
    std::cout << json{{"mse_model", c.model.mse_unit()}, {"mse_baseline", c.baseline.mse_unit()},
                      {"model_better", c.model_better}}.dump() << "\n";
  } else {
    const EvalReport r = evaluate(ActionSource{&model}, scene, ds, cfg, a.epsilon);
    report = {{"format", kReportFormat}, {"model", report_to_json(r)}};
    std::cout << json{{"mse_model", r.mse_unit()}, {"reach_rate", r.reach_rate}}.dump() << "\n";
  }
  s.output(a.out, "report/" + std::to_string(kReportFormat), report.dump(2) + "\n");
  return 0;
}

struct FieldArgs {
  std::string scene, out;
  SourceArgs source;
  std::vector<int> grid;
  bool no_modulation = false;
};

int export_field(const FieldArgs& a, Session& s) {
  const Scene scene = resolve_scene(a.scene);
  s.input(scene_source(a.scene), "scene/" + std::to_string(kSceneFormat));
  const Source src = load_source(a.source, scene, s);
  PolicyConfig cfg = default_policy_config(scene);
  cfg.modulation_enabled = !a.no_modulation;
  s.config({{"policy", policy_config_to_json(cfg)}, {"grid", a.grid}, {"source", src.src().name()}});
  s.output(a.out, "field-csv/1", field_csv(scene, src.src(), a.grid, cfg));
  return 0;
}

struct ExperimentArgs {
  std::string preset, config, out_dir;
  std::uint64_t seed = 0;
  int epochs = -1;
  std::vector<int> grid;
};

int experiment(const ExperimentArgs& a, Session& s) {
  std::string source = a.preset;
  if (!a.config.empty()) {
    source = a.config;
  } else if (const char* env = std::getenv("LYAPNAV_EXPERIMENT_CONFIG"); env && *env) {
    source = env;
  }
  ExperimentConfig cfg = resolve_experiment(source);
  if (a.epochs >= 0) cfg.train.epochs = a.epochs;
  if (!a.grid.empty()) cfg.grid = a.grid;
  s.input(fs::exists(source) ? source : "preset:" + source, "experiment/" + std::to_string(kExperimentFormat));
  s.config(experiment_to_json(cfg));
  s.manifest().seeds = seeds_to_json(stage_seeds(a.seed));
  const fs::path dir = a.out_dir.empty() ? fs::path("runs") / (cfg.name + "-seed" + std::to_string(a.seed)) : fs::path(a.out_dir);
  const ExperimentResult r = run_experiment(cfg, a.seed, dir);
  s.manifest().outputs = r.outputs;
  s.manifest().status = r.training.status;
  std::cout << json{{"experiment", cfg.name},
                    {"status", r.training.status},
                    {"demos", r.dataset.demos.size()},
                    {"mse_model", r.comparison.model.mse_unit()},
                    {"mse_baseline", r.comparison.baseline.mse_unit()},
                    {"reach_rate", r.comparison.model.reach_rate},
                    {"collision_count", r.comparison.model.collision_count},
                    {"out_dir", dir.string()}}.dump() << "\n";
  if (!r.certified()) throw StageFailure{"invalid_lyapunov_function",
                                         "training ended with constraint violations on training states"};
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lyapunov-certified navigation policies from demonstrations"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDemosArgs gd;
  auto* c_gen = app.add_subcommand("gen-demos", "Optimize one demonstration per grid start");
  c_gen->add_option("--scene", gd.scene, "Scene file or preset name")->required();
  c_gen->add_option("--grid", gd.grid, "Starts per axis, e.g. 11,9")->required()->delimiter(',');
  c_gen->add_option("--seed", gd.seed, "Root seed");
  c_gen->add_option("--out", gd.out, "Dataset file (JSON lines)")->required();
  c_gen->add_option("--val-fraction", gd.validation_fraction, "Validation share")->check(CLI::Range(0.0, 0.99));
  c_gen->add_option("--steps", gd.steps, "Steps per demonstration (0: by dimension)")->check(CLI::NonNegativeNumber);
  c_gen->add_option("--max-iters", gd.max_iters, "Solver iterations per attempt")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Fit a certified Lyapunov network to a dataset");
  c_train->add_option("--data", tr.data, "Dataset file")->required();
  c_train->add_option("--scene", tr.scene, "Scene file or preset name")->required();
  c_train->add_option("--arch", tr.arch, "Layer sizes, e.g. 2,128,128,128,1")->delimiter(',');
  c_train->add_option("--epochs", tr.epochs)->check(CLI::NonNegativeNumber);
  c_train->add_option("--extra-epochs", tr.extra_epochs, "Further epochs allowed while uncertified")
      ->check(CLI::NonNegativeNumber);
  c_train->add_option("--batch", tr.batch, "Demonstrations per step")->check(CLI::PositiveNumber);
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  c_train->add_option("--lambda", tr.lambda, "Initial constraint multipliers")->check(CLI::NonNegativeNumber);
  c_train->add_option("--decrease-margin", tr.decrease_margin)->check(CLI::NonNegativeNumber);
  c_train->add_option("--out", tr.out, "Model file")->required();
  c_train->add_option("--history", tr.history, "Per-epoch history JSON");

  auto add_source = [](CLI::App* c, SourceArgs& sa) {
    auto* m = c->add_option("--model", sa.model, "Model file");
    auto* b = c->add_flag("--baseline", sa.baseline, "Use the quadratic candidate");
    m->excludes(b);
  };

  RolloutArgs ro;
  auto* c_roll = app.add_subcommand("rollout", "Closed-loop rollouts with obstacle modulation");
  c_roll->add_option("--scene", ro.scene, "Scene file or preset name")->required();
  add_source(c_roll, ro.source);
  auto* ro_data = c_roll->add_option("--data", ro.data, "Roll out from every demonstration start");
  auto* ro_start = c_roll->add_option("--start", ro.start, "Single start, e.g. 8,8")->delimiter(',');
  ro_data->excludes(ro_start);
  c_roll->add_option("--max-steps", ro.max_steps)->check(CLI::PositiveNumber);
  c_roll->add_flag("--no-modulation", ro.no_modulation);
  c_roll->add_option("--out", ro.out, "Rollout CSV")->required();
  c_roll->add_option("--vtrace", ro.vtrace, "Normalized V trace CSV");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Unit-vector MSE, reach rate, collisions and certificate");
  c_eval->add_option("--model", ev.source.model, "Model file")->required();
  c_eval->add_option("--scene", ev.scene, "Scene file or preset name")->required();
  c_eval->add_option("--data", ev.data, "Dataset file")->required();
  c_eval->add_flag("--baseline", ev.source.baseline, "Also evaluate the quadratic candidate and compare");
  c_eval->add_option("--epsilon", ev.epsilon)->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--out", ev.out, "Report JSON")->required();

  FieldArgs fd;
  auto* c_field = app.add_subcommand("export-field", "V and nominal/modulated velocities on a grid");
  c_field->add_option("--scene", fd.scene, "Scene file or preset name")->required();
  add_source(c_field, fd.source);
  c_field->add_option("--grid", fd.grid, "Points per axis, e.g. 40,40")->required()->delimiter(',');
  c_field->add_flag("--no-modulation", fd.no_modulation);
  c_field->add_option("--out", fd.out, "Field CSV")->required();

  ExperimentArgs ex;
  auto* c_exp = app.add_subcommand("experiment", "Full pipeline for a preset: demos, training, evaluation, exports");
  c_exp->add_option("preset", ex.preset, "hallway | cross | shelf, or an experiment file")->required();
  c_exp->add_option("--seed", ex.seed, "Root seed");
  c_exp->add_option("--config", ex.config, "Experiment file overriding the preset");
  c_exp->add_option("--out-dir", ex.out_dir, "Output directory (default runs/<name>-seed<k>)");
  c_exp->add_option("--epochs", ex.epochs, "Override the training epochs")->check(CLI::NonNegativeNumber);
  c_exp->add_option("--grid", ex.grid, "Override the start grid")->delimiter(',');

  try {
    app.parse(argc, argv);
    if (c_roll->parsed() && ro.source.model.empty() && !ro.source.baseline) {
      throw CLI::RequiredError("--model or --baseline");
    }
    if (c_roll->parsed() && ro.data.empty() && ro.start.empty()) throw CLI::RequiredError("--data or --start");
    if (c_field->parsed() && fd.source.model.empty() && !fd.source.baseline) {
      throw CLI::RequiredError("--model or --baseline");
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  Session session(command, argc, argv);
  fs::path manifest_dir = ".";
  int status = 0;
  try {
    if (sub == c_gen) {
      manifest_dir = dir_of(gd.out);
      status = gen_demos(gd, session);
    } else if (sub == c_train) {
      manifest_dir = dir_of(tr.out);
      status = train_cmd(tr, session);
    } else if (sub == c_roll) {
      manifest_dir = dir_of(ro.out);
      status = rollout_cmd(ro, session);
    } else if (sub == c_eval) {
      manifest_dir = dir_of(ev.out);
      status = eval_cmd(ev, session);
    } else if (sub == c_field) {
      manifest_dir = dir_of(fd.out);
      status = export_field(fd, session);
    } else if (sub == c_exp) {
      manifest_dir = ex.out_dir.empty() ? fs::path() : fs::path(ex.out_dir);
      status = experiment(ex, session);
    }
  } catch (const StageFailure& f) {
    print_error(command, f.code, f.message);
    status = 1;
  } catch (const Error& e) {
    print_error(command, std::string(to_string(e.code())), e.what());
    session.manifest().status = "error: " + std::string(to_string(e.code()));
    status = 1;
  } catch (const std::exception& e) {
    print_error(command, "internal", e.what());
    session.manifest().status = "error: internal";
    status = 1;
  }
  if (sub == c_exp && manifest_dir.empty()) {
    manifest_dir = session.manifest().outputs.empty() ? fs::path("runs")
                                                      : fs::path(session.manifest().outputs.front().path).parent_path();
  }
  try {
    session.finish(manifest_dir);
  } catch (const std::exception& e) {
    print_error(command, "io", e.what());
    return 1;
  }
  return status;
}
