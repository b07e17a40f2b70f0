#pragma once

// Unit-vector MSE against demonstrations, rollout statistics, normalized V
// traces and the model-versus-baseline comparison.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lyapnav/demogen.hpp"
#include "lyapnav/lyapnet.hpp"
#include "lyapnav/policy.hpp"
#include "lyapnav/seed.hpp"

namespace lyapnav {

inline constexpr int kReportFormat = 1;

struct MseResult {
  double mse = 0.0;
  std::size_t samples = 0;
  /// Zero demonstrated velocity, so no direction to compare against.
  std::size_t zero_velocity = 0;
  /// Policy had no defined direction (vanishing gradient).
  std::size_t undefined_prediction = 0;
};

inline double unit_error(const Vec& predicted, const Vec& demonstrated) {
  return (predicted.normalized() - demonstrated.normalized()).squaredNorm();
}

/// Pooled over every (state, velocity) sample of the given demonstrations.
inline MseResult unit_mse(const ActionSource& src, const std::vector<const Demonstration*>& demos, const Vec& goal) {
  MseResult r;
  double sum = 0.0;
  for (const auto* d : demos) {
    for (int i = 0; i < d->steps(); ++i) {
      if (d->velocities[i].norm() == 0.0 || d->positions[i] == goal) {
        ++r.zero_velocity;
        continue;
      }
      try {
        sum += unit_error(action(src, d->positions[i], goal, 1.0), d->velocities[i]);
        ++r.samples;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_gradient) throw;
        ++r.undefined_prediction;
      }
    }
  }
  if (r.samples == 0) fail(ErrorCode::dataset_empty, "no samples with a defined direction in the split");
  r.mse = sum / static_cast<double>(r.samples);
  return r;
}

struct VTrace {
  std::vector<double> normalized;
  /// Steps where the normalized value rose by more than the tolerance.
  int increases = 0;
  bool monotone = true;
  double final_value = 0.0;
};

inline VTrace normalize_trace(const std::vector<double>& values, double tolerance = 1e-6) {
  VTrace t;
  if (values.empty() || values.front() == 0.0) {
    t.normalized = {0.0};
    return t;
  }
  for (double v : values) t.normalized.push_back(v / values.front());
  for (std::size_t i = 1; i < t.normalized.size(); ++i) {
    if (t.normalized[i] > t.normalized[i - 1] + tolerance) ++t.increases;
  }
  t.monotone = t.increases == 0;
  t.final_value = t.normalized.back();
  return t;
}

/// V(x_n) / V(x_0) along each trajectory.
inline std::vector<VTrace> v_trace_report(const ActionSource& src, const std::vector<std::vector<Vec>>& trajectories,
                                          const Vec& goal, double tolerance = 1e-6) {
  std::vector<VTrace> out;
  for (const auto& traj : trajectories) {
    std::vector<double> values;
    if (src.model) {
      values = lyapunov_values(*src.model, traj);
    } else {
      for (const auto& x : traj) values.push_back((x - goal).norm());
    }
    out.push_back(normalize_trace(values, tolerance));
  }
  return out;
}

struct RolloutRecord {
  int index = -1;
  bool validation = false;
  Vec start;
  std::string status;
  int steps = 0;
  double min_sd = 0.0;
  int collision_steps = 0;
  int clip_events = 0;
  bool v_monotone = true;
  double v_final = 0.0;
};

struct EvalReport {
  std::string source;
  std::string scene;
  MseResult mse;
  double reach_rate = 0.0;
  std::size_t collision_count = 0;
  double mean_steps = 0.0;
  StabilityReport lyapunov;
  std::vector<RolloutRecord> records;
  std::vector<RolloutResult> rollouts;  // not serialized

  double mse_unit() const { return mse.mse; }
};

inline EvalReport evaluate(const ActionSource& src, const Scene& scene, const Dataset& ds, const PolicyConfig& cfg,
                           double epsilon = 0.01) {
  if (ds.demos.empty()) fail(ErrorCode::dataset_empty, "dataset has no demonstrations");
  EvalReport rep;
  rep.source = src.name();
  rep.scene = scene.name;
  rep.mse = unit_mse(src, ds.split(true), scene.goal);
  const auto train = ds.split(false);
  rep.lyapunov = src.model ? verify_demos(*src.model, train, epsilon)
                           : verify_stability_quadratic(scene.goal, demo_pairs(train), epsilon);
  std::size_t reached = 0;
  double steps = 0.0;
  for (const auto& d : ds.demos) {
    auto ro = rollout(scene, src, d.start(), cfg);
    const VTrace trace = normalize_trace(ro.v_trace);
    RolloutRecord rec;
    rec.index = d.start_index;
    rec.validation = d.validation;
    rec.start = d.start();
    rec.status = ro.status;
    rec.steps = ro.steps;
    rec.min_sd = ro.min_sd();
    for (double sd : ro.min_sd_trace) rec.collision_steps += sd < 0.0;
    rec.clip_events = ro.clip_events;
    rec.v_monotone = trace.monotone;
    rec.v_final = trace.final_value;
    rep.collision_count += rec.collision_steps;
    reached += ro.status == "reached";
    steps += ro.steps;
    rep.records.push_back(std::move(rec));
    rep.rollouts.push_back(std::move(ro));
  }
  rep.reach_rate = static_cast<double>(reached) / static_cast<double>(ds.demos.size());
  rep.mean_steps = steps / static_cast<double>(ds.demos.size());
  return rep;
}

struct Comparison {
  EvalReport model;
  EvalReport baseline;
  bool model_better = false;
};

inline Comparison compare(const LyapunovModel& model, const Scene& scene, const Dataset& ds, const PolicyConfig& cfg,
                          double epsilon = 0.01) {
  Comparison c;
  c.model = evaluate(ActionSource{&model}, scene, ds, cfg, epsilon);
  c.baseline = evaluate(ActionSource{}, scene, ds, cfg, epsilon);
  c.model_better = c.model.mse_unit() < c.baseline.mse_unit();
  return c;
}

inline json report_to_json(const EvalReport& r) {
  json records = json::array();
  for (const auto& rec : r.records) {
    records.push_back({{"index", rec.index},
                       {"split", rec.validation ? "validation" : "train"},
                       {"start", detail::vec_to_json(rec.start)},
                       {"status", rec.status},
                       {"steps", rec.steps},
                       {"min_sd", rec.min_sd},
                       {"collision_steps", rec.collision_steps},
                       {"clip_events", rec.clip_events},
                       {"v_monotone", rec.v_monotone},
                       {"v_final", rec.v_final}});
  }
  return json{{"source", r.source},
              {"scene", r.scene},
              {"mse_unit", r.mse.mse},
              {"mse_samples", r.mse.samples},
              {"zero_velocity_excluded", r.mse.zero_velocity},
              {"undefined_predictions", r.mse.undefined_prediction},
              {"reach_rate", r.reach_rate},
              {"collision_count", r.collision_count},
              {"mean_steps", r.mean_steps},
              {"lyapunov_report", stability_to_json(r.lyapunov)},
              {"records", records}};
}

inline json comparison_to_json(const Comparison& c) {
  return json{{"format", kReportFormat},
              {"model", report_to_json(c.model)},
              {"baseline", report_to_json(c.baseline)},
              {"model_better", c.model_better}};
}

/// CSV: rollout, step, v_norm for each trace.
inline std::string vtraces_csv(const std::vector<VTrace>& traces) {
  std::string out = "rollout,step,v_norm\n";
  for (std::size_t r = 0; r < traces.size(); ++r) {
    for (std::size_t i = 0; i < traces[r].normalized.size(); ++i) {
      out += std::to_string(r) + "," + std::to_string(i) + "," + detail::fmt(traces[r].normalized[i]) + "\n";
    }
  }
  return out;
}

// ------------------------------------------------------------ perturbations

struct PerturbationTrial {
  int demo = -1;
  int step = 0;
  Vec delta;
  RolloutResult result;
};

/// Distance from x to the nearest demonstration state.
inline double distance_to_demos(const Dataset& ds, const Vec& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& d : ds.demos) {
    for (const auto& p : d.positions) best = std::min(best, (p - x).norm());
  }
  return best;
}

/// Seeded kicks of at most max_fraction * diameter, applied mid-rollout.
/// A kick is redrawn until the displaced state is inside the limits, at
/// least d_safe from every obstacle, and within region_radius of some
/// demonstration state.
inline std::vector<PerturbationTrial> perturbation_trials(const Scene& scene, const LyapunovModel& model,
                                                          const Dataset& ds, const PolicyConfig& cfg, int n_trials,
                                                          std::uint64_t seed, double max_fraction = 0.1,
                                                          double region_radius = -1.0) {
  if (ds.demos.empty()) fail(ErrorCode::dataset_empty, "dataset has no demonstrations");
  if (region_radius < 0.0) region_radius = 0.02 * scene.diameter();
  const ActionSource src{&model};
  std::mt19937_64 rng(derive_seed(seed, "perturb"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<PerturbationTrial> out;
  for (int t = 0; t < n_trials; ++t) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) fail(ErrorCode::infeasible, "could not place a kick inside the demonstrated region");
      PerturbationTrial trial;
      trial.demo = static_cast<int>(rng() % ds.demos.size());
      const auto nominal = rollout(scene, src, ds.demos[trial.demo].start(), cfg);
      if (nominal.steps < 2) continue;
      trial.step = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(nominal.steps - 1));
      Vec dir(scene.dim);
      for (int k = 0; k < scene.dim; ++k) dir(k) = normal(rng);
      if (dir.norm() == 0.0) continue;
      trial.delta = dir.normalized() * (unit_uniform(rng) * max_fraction * scene.diameter());
      const Vec landing = nominal.states[trial.step] + trial.delta;
      if (!scene.within_limits(landing) || min_clearance(scene, landing) < scene.d_safe ||
          distance_to_demos(ds, landing) > region_radius) {
        continue;
      }
      trial.result = perturb_rollout(scene, src, ds.demos[trial.demo].start(), cfg, {{trial.step, trial.delta}});
      out.push_back(std::move(trial));
      break;
    }
  }
  return out;
}

}  // namespace lyapnav
