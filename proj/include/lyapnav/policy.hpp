#pragma once

// Policies from V (normalized negative gradient) and from the quadratic
// candidate |x - x_g|, obstacle modulation built from convex-pair Gamma, and
// closed-loop rollouts.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lyapnav/envs.hpp"
#include "lyapnav/lyapnet.hpp"

namespace lyapnav {

struct PolicyConfig {
  double xdot_max = 1.0;
  double dt = 0.1;
  double goal_tolerance = 0.1;
  int max_steps = 2000;
  bool modulation_enabled = true;
  /// Gamma is computed from sd - contact_skin, so the blocking surface sits
  /// this far outside the obstacle and round-off in near-contact witnesses
  /// cannot carry the robot inside.
  double contact_skin = 0.0;
};

inline void validate(const PolicyConfig& c, const Scene& scene) {
  if (!(c.xdot_max > 0.0 && c.dt > 0.0 && c.goal_tolerance > 0.0) || c.max_steps <= 0) {
    fail(ErrorCode::invalid_argument, "policy settings must be positive");
  }
  if (!(c.goal_tolerance < scene.diameter())) fail(ErrorCode::invalid_argument, "goal tolerance must be below the scene diameter");
  if (!(c.contact_skin >= 0.0 && c.contact_skin < c.goal_tolerance)) {
    fail(ErrorCode::invalid_argument, "contact skin must lie in [0, goal tolerance)");
  }
}

/// Tolerance 1% of the scene diameter, a step of a quarter of that, and a
/// contact skin of 1e-6 diameters. Longer steps overshoot the bottom of a
/// tilted V near the goal and the last values along a rollout can rise.
inline PolicyConfig default_policy_config(const Scene& scene) {
  PolicyConfig c;
  c.goal_tolerance = 0.01 * scene.diameter();
  c.contact_skin = 1e-6 * scene.diameter();
  c.dt = 0.1;
  c.xdot_max = 0.25 * c.goal_tolerance / c.dt;
  return c;
}

/// A learned model, or the quadratic candidate when model is null.
struct ActionSource {
  const LyapunovModel* model = nullptr;

  bool is_baseline() const { return model == nullptr; }
  std::string name() const { return model ? "model" : "baseline"; }
};

inline Vec nominal_action(const LyapunovModel& m, const Vec& x, double xdot_max) {
  const Vec g = lyapunov_gradient(m, x);
  const double n = g.norm();
  if (!(n >= 1e-12)) fail(ErrorCode::degenerate_gradient, "gradient of V vanishes");
  return Vec(-g / n * xdot_max);
}

inline Vec quadratic_baseline_action(const Vec& x, const Vec& goal, double xdot_max) {
  const Vec d = goal - x;
  const double n = d.norm();
  if (n == 0.0) fail(ErrorCode::at_goal, "baseline action is undefined at the goal");
  return Vec(d / n * xdot_max);
}

inline Vec action(const ActionSource& src, const Vec& x, const Vec& goal, double xdot_max) {
  return src.model ? nominal_action(*src.model, x, xdot_max) : quadratic_baseline_action(x, goal, xdot_max);
}

inline double value(const ActionSource& src, const Vec& x, const Vec& goal) {
  return src.model ? lyapunov_value(*src.model, x) : (x - goal).norm();
}

/// Columns: the normal, then the tangents. 2D: the normal turned +90 degrees.
/// 3D: the polar and azimuthal unit vectors of the normal's spherical
/// coordinates, or x and y when the normal lies on the z axis.
inline Mat basis_vectors(const Vec& normal, int dim) {
  if (normal.size() != dim || (dim != 2 && dim != 3)) fail(ErrorCode::invalid_argument, "normal dimension mismatch");
  if (std::abs(normal.norm() - 1.0) > 1e-9) fail(ErrorCode::invalid_argument, "normal must be unit length");
  Mat E(dim, dim);
  E.col(0) = normal;
  if (dim == 2) {
    E(0, 1) = -normal(1);
    E(1, 1) = normal(0);
    return E;
  }
  if (std::abs(std::abs(normal(2)) - 1.0) <= 1e-6) {
    E.col(1) = make_vec({1, 0, 0});
    E.col(2) = make_vec({0, 1, 0});
    return E;
  }
  const double theta = std::acos(std::clamp(normal(2), -1.0, 1.0));
  const double phi = std::atan2(normal(1), normal(0));
  E.col(1) = make_vec({std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), -std::sin(theta)});
  E.col(2) = make_vec({-std::sin(phi), std::cos(phi), 0.0});
  return E;
}

inline constexpr double kContactTolerance = 1e-9;

struct ModulationContext {
  double gamma = 1.0;
  Vec normal;
  std::vector<Vec> tangents;
  Mat basis;
  Vec eigen;  // diagonal of D: lambda_r, then lambda_e per tangent
  Mat modulation;
};

inline ModulationContext modulation_from(double gamma, const Vec& normal) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) fail(ErrorCode::degenerate_configuration, "Gamma must be positive and finite");
  const int dim = static_cast<int>(normal.size());
  ModulationContext c;
  c.gamma = gamma;
  c.normal = normal;
  c.basis = basis_vectors(normal, dim);
  for (int k = 1; k < dim; ++k) c.tangents.push_back(c.basis.col(k));
  c.eigen = Vec::Constant(dim, 1.0 + 1.0 / gamma);
  c.eigen(0) = 1.0 - 1.0 / gamma;
  c.modulation = c.basis * c.eigen.asDiagonal() * c.basis.inverse();
  return c;
}

inline ModulationContext modulation_matrix(const ConvexHull& robot_at_x, const ConvexHull& obstacle,
                                           double contact_skin = 0.0) {
  const DistanceWitness w = signed_distance(robot_at_x, obstacle);
  // |sd| up to kContactTolerance is contact, where the EPA face normal stands in.
  if (std::abs(w.signed_distance) > kContactTolerance && (w.point_on_a - w.point_on_b).norm() < 1e-12) {
    fail(ErrorCode::degenerate_configuration, "witness points coincide away from contact");
  }
  if (!(std::abs(w.normal.norm() - 1.0) <= 1e-9)) {
    fail(ErrorCode::degenerate_configuration, "no usable witness normal for this pair");
  }
  const double R = (robot_at_x.reference() - obstacle.reference()).norm();
  return modulation_from(gamma_from(R, w.signed_distance - contact_skin), w.normal);
}

inline std::vector<ModulationContext> contexts_at(const Scene& scene, const Vec& x, double contact_skin = 0.0) {
  std::vector<ModulationContext> out;
  for (const auto& link : placed_robot(scene, x)) {
    for (const auto& obs : scene.obstacles) out.push_back(modulation_matrix(link, obs, contact_skin));
  }
  return out;
}

/// Applies the contexts one after another from largest to smallest Gamma, so
/// the nearest obstacle acts last and its blocking is not undone.
inline Vec modulate(const Vec& velocity, const std::vector<ModulationContext>& contexts) {
  std::vector<std::size_t> order(contexts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return contexts[a].gamma > contexts[b].gamma; });
  Vec v = velocity;
  for (std::size_t i : order) v = contexts[i].modulation * v;
  return v;
}

// ---------------------------------------------------------------- rollouts

struct RolloutResult {
  std::vector<Vec> states;
  std::vector<double> v_trace;
  std::vector<double> min_sd_trace;
  std::string status = "max-steps";  // reached | max-steps | degenerate
  int steps = 0;
  int clip_events = 0;
  std::string message;

  double min_sd() const {
    return min_sd_trace.empty() ? std::numeric_limits<double>::infinity()
                                : *std::min_element(min_sd_trace.begin(), min_sd_trace.end());
  }
};

/// Rollout with the state displaced by delta at the given step indices.
inline RolloutResult perturb_rollout(const Scene& scene, const ActionSource& src, const Vec& x0, const PolicyConfig& cfg,
                                     const std::vector<std::pair<int, Vec>>& perturbations) {
  validate(cfg, scene);
  if (x0.size() != scene.dim || !scene.within_limits(x0)) fail(ErrorCode::invalid_argument, "start outside the position limits");
  RolloutResult r;
  Vec x = x0;
  for (int step = 0;; ++step) {
    for (const auto& [at, delta] : perturbations) {
      if (at != step) continue;
      x += delta;
      if (!scene.within_limits(x)) fail(ErrorCode::invalid_argument, "perturbation leaves the position limits");
    }
    r.states.push_back(x);
    r.v_trace.push_back(value(src, x, scene.goal));
    r.min_sd_trace.push_back(min_clearance(scene, x));
    r.steps = step;
    if ((x - scene.goal).norm() <= cfg.goal_tolerance) {
      r.status = "reached";
      break;
    }
    if (step >= cfg.max_steps) {
      r.status = "max-steps";
      break;
    }
    Vec v;
    try {
      v = action(src, x, scene.goal, cfg.xdot_max);
      if (cfg.modulation_enabled) v = modulate(v, contexts_at(scene, x, cfg.contact_skin));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_gradient && e.code() != ErrorCode::degenerate_configuration) throw;
      r.status = "degenerate";
      r.message = e.what();
      break;
    }
    const double speed = v.norm();
    if (speed > cfg.xdot_max) v *= cfg.xdot_max / speed;
    Vec next = x + cfg.dt * v;
    const Vec clipped = next.cwiseMax(scene.pos_lower).cwiseMin(scene.pos_upper);
    if (clipped != next) ++r.clip_events;
    x = clipped;
  }
  return r;
}

inline RolloutResult rollout(const Scene& scene, const ActionSource& src, const Vec& x0, const PolicyConfig& cfg) {
  return perturb_rollout(scene, src, x0, cfg, {});
}

// ----------------------------------------------------------------- exports

namespace detail {

inline const char* axis_name(int k) {
  static const char* names[] = {"x", "y", "z"};
  return names[k];
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace detail

/// CSV: rollout, step, x.., V, min_sd for every state of every rollout.
inline std::string rollouts_csv(const std::vector<RolloutResult>& rollouts, int dim) {
  std::string out = "rollout,step";
  for (int k = 0; k < dim; ++k) out += std::string(",") + detail::axis_name(k);
  out += ",V,min_sd\n";
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    const auto& ro = rollouts[r];
    for (std::size_t i = 0; i < ro.states.size(); ++i) {
      out += std::to_string(r) + "," + std::to_string(i);
      for (int k = 0; k < dim; ++k) out += "," + detail::fmt(ro.states[i](k));
      out += "," + detail::fmt(ro.v_trace[i]) + "," + detail::fmt(ro.min_sd_trace[i]) + "\n";
    }
  }
  return out;
}

/// Regular grid over the position limits with V, clearance, and the nominal
/// and modulated velocities. valid = 0 where no action is defined (the goal,
/// a vanishing gradient, a degenerate obstacle pair); velocities are 0 there.
inline std::string field_csv(const Scene& scene, const ActionSource& src, const std::vector<int>& grid,
                             const PolicyConfig& cfg) {
  if (static_cast<int>(grid.size()) != scene.dim) fail(ErrorCode::invalid_argument, "grid needs one count per axis");
  for (int g : grid) {
    if (g < 2) fail(ErrorCode::invalid_argument, "grid resolution must be at least 2 per axis");
  }
  const int d = scene.dim;
  std::string out;
  for (int k = 0; k < d; ++k) out += std::string(k ? "," : "") + detail::axis_name(k);
  out += ",V,min_sd";
  for (int k = 0; k < d; ++k) out += std::string(",u_") + detail::axis_name(k);
  for (int k = 0; k < d; ++k) out += std::string(",m_") + detail::axis_name(k);
  out += ",valid\n";
  std::vector<int> idx(d, 0);
  for (;;) {
    Vec x(d);
    for (int k = 0; k < d; ++k) {
      x(k) = scene.pos_lower(k) + (scene.pos_upper(k) - scene.pos_lower(k)) * idx[k] / (grid[k] - 1);
    }
    Vec u = Vec::Zero(d), m = Vec::Zero(d);
    int valid = 1;
    try {
      u = action(src, x, scene.goal, cfg.xdot_max);
      m = cfg.modulation_enabled ? modulate(u, contexts_at(scene, x, cfg.contact_skin)) : u;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::at_goal && e.code() != ErrorCode::degenerate_gradient &&
          e.code() != ErrorCode::degenerate_configuration) {
        throw;
      }
      u.setZero();
      m.setZero();
      valid = 0;
    }
    for (int k = 0; k < d; ++k) out += (k ? "," : "") + detail::fmt(x(k));
    out += "," + detail::fmt(value(src, x, scene.goal)) + "," + detail::fmt(min_clearance(scene, x));
    for (int k = 0; k < d; ++k) out += "," + detail::fmt(u(k));
    for (int k = 0; k < d; ++k) out += "," + detail::fmt(m(k));
    out += "," + std::to_string(valid) + "\n";
    int k = 0;
    while (k < d && ++idx[k] == grid[k]) idx[k++] = 0;
    if (k == d) break;
  }
  return out;
}

}  // namespace lyapnav
