// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [criterion ...]   (default: all)

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "lyapnav/evaluate.hpp"
#include "lyapnav/run.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace lyapnav;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  failures += !pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConvexHull hull(const testing::Pts2& pts) {
  std::vector<Vec> v;
  for (const auto& p : pts) v.push_back(make_vec({p.x(), p.y()}));
  return ConvexHull(std::move(v));
}

ConvexHull hull(const testing::Pts3& pts) {
  std::vector<Vec> v;
  for (const auto& p : pts) v.push_back(make_vec({p.x(), p.y(), p.z()}));
  return ConvexHull(std::move(v));
}

// --------------------------------------------------------------- geometry

void geometry_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0, solver_time = 0.0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 200; ++i) {
    const auto a = testing::random_convex_polygon(rng), b = testing::random_convex_polygon(rng);
    const auto ha = hull(a), hb = hull(b);
    const auto ts = Clock::now();
    const double sd = signed_distance(ha, hb).signed_distance;
    solver_time += seconds_since(ts);
    worst = std::max(worst, std::abs(sd - testing::oracle_signed_distance_2d(a, b)));
  }
  for (int i = 0; i < 50; ++i) {
    const auto a = testing::random_convex_polytope(rng), b = testing::random_convex_polytope(rng);
    const auto ha = hull(a), hb = hull(b);
    const auto ts = Clock::now();
    const double sd = signed_distance(ha, hb).signed_distance;
    solver_time += seconds_since(ts);
    worst = std::max(worst, std::abs(sd - testing::direction_signed_distance_3d(a, b)));
  }
  const double total = seconds_since(t0);
  report("geometry-oracle", worst <= 1e-3 && total < 30.0,
         "200 polygon + 50 polytope pairs, max |error| " + fmt(worst) + ", solver " + fmt(solver_time) +
             " s, total with oracle " + fmt(total) + " s");
}

// ------------------------------------------------------------ Gamma limits

void gamma_boundary() {
  std::mt19937_64 rng(77);
  double worst_gamma = 0.0, worst_lr = 0.0, worst_le = 0.0, worst_far = 0.0;
  int touching = 0, far = 0;
  auto touch_check = [&](const ConvexHull& a, const ConvexHull& b) {
    const auto w = signed_distance(a, b);
    // Slide b along the witness normal until the pair just touches.
    const ConvexHull bt = b.translated(Vec(w.signed_distance * w.normal));
    const auto c = modulation_matrix(a, bt);
    worst_gamma = std::max(worst_gamma, std::abs(c.gamma - 1.0));
    worst_lr = std::max(worst_lr, std::abs(c.eigen(0)));
    for (int k = 1; k < c.eigen.size(); ++k) worst_le = std::max(worst_le, std::abs(c.eigen(k) - 2.0));
    ++touching;
  };
  auto far_check = [&](const ConvexHull& a, const ConvexHull& b, const Vec& dir) {
    const auto c = modulation_matrix(a, b.translated(Vec(600.0 * dir)));
    if (c.gamma < 100.0) return;
    const int d = static_cast<int>(dir.size());
    worst_far = std::max(worst_far, (c.modulation - Mat::Identity(d, d)).cwiseAbs().maxCoeff() * c.gamma / 2.0);
    ++far;
  };
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const auto a = hull(testing::random_convex_polygon(rng)), b = hull(testing::random_convex_polygon(rng));
    if ((a.reference() - b.reference()).norm() < 1e-3) continue;
    touch_check(a, b);
    far_check(a, b, make_vec({n(rng), n(rng)}).normalized());
  }
  for (int i = 0; i < 30; ++i) {
    const auto a = hull(testing::random_convex_polytope(rng)), b = hull(testing::random_convex_polytope(rng));
    if ((a.reference() - b.reference()).norm() < 1e-3) continue;
    touch_check(a, b);
    far_check(a, b, make_vec({n(rng), n(rng), n(rng)}).normalized());
  }
  const bool pass = touching > 100 && far > 100 && worst_gamma <= 1e-6 && worst_lr <= 1e-6 && worst_le <= 1e-6 &&
                    worst_far <= 1.0;
  report("gamma-boundary", pass,
         std::to_string(touching) + " touching pairs: max |Gamma-1| " + fmt(worst_gamma) + ", max |lambda_r| " +
             fmt(worst_lr) + ", max |lambda_e-2| " + fmt(worst_le) + "; " + std::to_string(far) +
             " far pairs: max |M-I|_inf / (2/Gamma) " + fmt(worst_far));
}

// ------------------------------------------------------- nested gradients

void nested_gradient() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);

  // Parameter gradient of the loss on a (2,4,1) network.
  auto m = make_model(init_mlp({2, 4, 1}, 9), make_vec({0.2, -0.1}), 0.8, 1.4);
  std::vector<LossSample> batch;
  for (int i = 0; i < 8; ++i) {
    const Vec x = make_vec({u(rng), u(rng)});
    // Half the samples move away from the goal so the decrease term is active.
    const Vec v = (i % 2 ? 1.0 : -1.0) * (x - m.goal) + 0.3 * make_vec({u(rng), u(rng)});
    batch.push_back({x, v, Vec(x + 0.1 * v)});
  }
  TrainConfig cfg;
  cfg.lambda1 = 2.0;
  cfg.lambda2 = 3.0;
  MlpGradient grad;
  training_loss_gradient(m, batch, cfg, grad);
  const double h = 1e-6;
  double err = 0.0, scale = 0.0;
  auto check = [&](double& p, double analytic) {
    const double keep = p;
    p = keep + h;
    m.refresh();
    const double up = training_loss(m, batch, cfg).total;
    p = keep - h;
    m.refresh();
    const double down = training_loss(m, batch, cfg).total;
    p = keep;
    m.refresh();
    const double fd = (up - down) / (2 * h);
    err = std::max(err, std::abs(analytic - fd));
    scale = std::max(scale, std::abs(fd));
  };
  for (int l = 0; l < m.net.n_layers(); ++l) {
    for (Eigen::Index i = 0; i < m.net.W[l].size(); ++i) check(m.net.W[l].data()[i], grad.W[l].data()[i]);
    for (Eigen::Index i = 0; i < m.net.b[l].size(); ++i) check(m.net.b[l](i), grad.b[l](i));
  }
  const double param_rel = err / scale;

  // State gradient of V on the desk-scale architecture.
  const auto big = make_model(init_mlp({2, 128, 128, 128, 1}, 3), make_vec({1.5, 1.5}), 0.2, 5.0);
  std::uniform_real_distribution<double> box(0.0, 10.0);
  double state_rel = 0.0;
  const double hx = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const Vec x = make_vec({box(rng), box(rng)});
    const Vec g = lyapunov_gradient(big, x);
    Vec fd(2);
    for (int k = 0; k < 2; ++k) {
      Vec xp = x, xm = x;
      xp(k) += hx;
      xm(k) -= hx;
      fd(k) = (lyapunov_value(big, xp) - lyapunov_value(big, xm)) / (2 * hx);
    }
    state_rel = std::max(state_rel, (g - fd).norm() / fd.norm());
  }
  const double t = seconds_since(t0);
  report("nested-gradient", param_rel <= 1e-3 && state_rel <= 1e-4 && t < 10.0,
         "loss/theta rel " + fmt(param_rel) + ", grad_x V rel " + fmt(state_rel) + " at 100 states, " + fmt(t) + " s");
}

// ------------------------------------------------------------- pipelines

struct PipelineRun {
  bool ran = false;
  int exit_code = -1;
  double seconds = 0.0;
  fs::path dir;
  json report;
};

fs::path out_root() {
  if (const char* env = std::getenv("LYAPNAV_ACCEPTANCE_DIR")) return env;
  return fs::path(LYAPNAV_ACCEPTANCE_DIR);
}

PipelineRun run_cli_experiment(const std::string& preset, const std::string& tag) {
  PipelineRun r;
  r.dir = out_root() / (preset + "-" + tag);
  fs::remove_all(r.dir);
  fs::create_directories(r.dir);
  const std::string cmd = std::string(LYAPNAV_CLI) + " experiment " + preset + " --seed 7 --out-dir " +
                          r.dir.string() + " > " + (r.dir / "stdout.txt").string() + " 2> " +
                          (r.dir / "stderr.txt").string();
  const auto t0 = Clock::now();
  const int status = std::system(cmd.c_str());
  r.seconds = seconds_since(t0);
  r.ran = true;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (fs::exists(r.dir / "report.json")) r.report = read_json_file(r.dir / "report.json");
  return r;
}

void pipeline(const std::string& preset, const PipelineRun& r, std::size_t min_demos, bool exact, bool vtraces,
              double runtime_limit) {
  const std::string name = preset + "-pipeline";
  if (r.report.is_null()) {
    report(name, false, "no report written (exit " + std::to_string(r.exit_code) + ")");
    return;
  }
  const auto& cert = r.report.at("training").at("certificate");
  const auto& model = r.report.at("model");
  const std::size_t demos = r.report.at("dataset").at("demos").get<std::size_t>();
  const int pv = cert.at("positivity_violations").get<int>(), dv = cert.at("decrease_violations").get<int>();
  const double reach = model.at("reach_rate").get<double>();
  const std::size_t collisions = model.at("collision_count").get<std::size_t>();
  int max_steps = 0;
  for (const auto& rec : model.at("records")) max_steps = std::max(max_steps, rec.at("steps").get<int>());
  bool pass = (exact ? demos == min_demos : demos >= min_demos) && pv == 0 && dv == 0 && reach == 1.0 &&
              collisions == 0 && max_steps <= 2000;
  std::string detail = std::to_string(demos) + " demos, violations " + std::to_string(pv) + "/" + std::to_string(dv) +
                       " over " + std::to_string(cert.at("n_states").get<int>()) + " states, reach_rate " + fmt(reach) +
                       ", collision steps " + std::to_string(collisions) + ", max steps " + std::to_string(max_steps);
  if (vtraces) {
    const auto& vt = r.report.at("vtrace");
    const auto mono = vt.at("monotone").get<std::size_t>(), traces = vt.at("traces").get<std::size_t>();
    const double fin = vt.at("max_final").get<double>();
    pass = pass && traces == demos && mono == traces && fin <= 0.01;
    detail += ", monotone V traces " + std::to_string(mono) + "/" + std::to_string(traces) + ", max final " + fmt(fin);
  }
  if (runtime_limit > 0.0) pass = pass && r.seconds < runtime_limit;
  detail += ", " + fmt(r.seconds) + " s";
  report(name, pass, detail);
}

void baseline_inequality(const PipelineRun& hallway, const PipelineRun& cross) {
  bool pass = true;
  std::string detail;
  for (const auto* r : {&hallway, &cross}) {
    if (r->report.is_null()) {
      pass = false;
      detail += "missing report; ";
      continue;
    }
    const double m = r->report.at("model").at("mse_unit").get<double>();
    const double b = r->report.at("baseline").at("mse_unit").get<double>();
    pass = pass && m < b;
    detail += r->report.at("experiment").get<std::string>() + " model " + fmt(m) + " vs baseline " + fmt(b) + "; ";
  }
  report("baseline-inequality", pass, detail.substr(0, detail.size() - 2));
}

void perturbation_recovery(const PipelineRun& r) {
  if (r.report.is_null()) {
    report("perturbation-recovery", false, "no hallway report");
    return;
  }
  // Re-derive every landing from the saved artifacts.
  const Scene scene = builtin_scene("hallway");
  const auto model = load_model(r.dir / "model.json");
  const auto ds = load_dataset(r.dir / "dataset.jsonl", scene.dim);
  const PolicyConfig cfg = default_policy_config(scene);
  const auto& trials = r.report.at("perturbation").at("records");
  int reached = 0, bad_kicks = 0;
  double max_kick = 0.0;
  for (const auto& t : trials) {
    reached += t.at("status") == "reached";
    Vec delta(scene.dim);
    for (int k = 0; k < scene.dim; ++k) delta(k) = t.at("delta")[k].get<double>();
    max_kick = std::max(max_kick, delta.norm() / scene.diameter());
    const auto nominal = rollout(scene, ActionSource{&model}, ds.demos.at(t.at("demo").get<int>()).start(), cfg);
    const Vec landing = nominal.states.at(t.at("step").get<int>()) + delta;
    bad_kicks += !scene.within_limits(landing) || min_clearance(scene, landing) < scene.d_safe ||
                 distance_to_demos(ds, landing) > 0.02 * scene.diameter();
  }
  report("perturbation-recovery", trials.size() == 20 && reached == 20 && max_kick <= 0.1 && bad_kicks == 0,
         std::to_string(reached) + "/" + std::to_string(trials.size()) + " reached, max kick " + fmt(max_kick) +
             " of diameter, kicks outside the demonstrated region " + std::to_string(bad_kicks));
}

void determinism(const PipelineRun& a, const PipelineRun& b) {
  std::string detail;
  bool pass = a.exit_code == b.exit_code;
  for (const char* f : {"dataset.jsonl", "model.json", "report.json"}) {
    const bool present = fs::exists(a.dir / f) && fs::exists(b.dir / f);
    const bool same = present && slurp(a.dir / f) == slurp(b.dir / f);
    pass = pass && same;
    detail += std::string(f) + (same ? " identical" : present ? " differs" : " missing") + "; ";
  }
  report("determinism", pass, "experiment hallway --seed 7 twice: " + detail.substr(0, detail.size() - 2));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only(argv + 1, argv + argc);
  auto want = [&](const std::string& n) { return only.empty() || only.count(n) > 0; };
  try {
    if (want("geometry")) geometry_oracle();
    if (want("gamma")) gamma_boundary();
    if (want("gradient")) nested_gradient();

    const bool need_hallway = want("hallway") || want("baseline") || want("perturbation") || want("determinism");
    const bool need_cross = want("cross") || want("baseline");
    PipelineRun hallway, cross, shelf;
    if (need_hallway) hallway = run_cli_experiment("hallway", "a");
    if (want("hallway")) pipeline("hallway", hallway, 75, true, false, 30 * 60.0);
    if (need_cross) cross = run_cli_experiment("cross", "a");
    if (want("cross")) pipeline("cross", cross, 300, false, false, 0.0);
    if (want("shelf")) {
      shelf = run_cli_experiment("shelf", "a");
      pipeline("shelf", shelf, 100, false, true, 0.0);
    }
    if (want("baseline")) baseline_inequality(hallway, cross);
    if (want("perturbation")) perturbation_recovery(hallway);
    if (want("determinism")) determinism(hallway, run_cli_experiment("hallway", "b"));
  } catch (const std::exception& e) {
    report("acceptance-run", false, e.what());
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
