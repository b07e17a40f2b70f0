#pragma once

// Demonstrations from discretized trajectory optimization.
//
// Each start is warm-started from a shortest path on a clearance-checked grid
// roadmap rooted at the goal, then the interior via points are optimized
// against smoothed path length plus quadratic penalties on clearance and
// velocity limits. Velocities are finite differences of consecutive points,
// so x_{n+1} = x_n + dt * xdot_n holds by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lyapnav/envs.hpp"
#include "lyapnav/seed.hpp"

namespace lyapnav {

inline constexpr int kDatasetFormat = 1;

struct SolverConfig {
  int n_steps = 0;  // 0 picks 50 in 2D and 80 in 3D
  double dt = 0.1;
  int max_iters = 400;
  double penalty = 1e3;
  /// Clearance the penalty aims for beyond d_safe.
  double margin = 0.02;
  /// Accepted clearance shortfall below d_safe when checking the result.
  double clearance_tol = 1e-3;
  int max_restarts = 3;
  /// Roadmap cell size; 0 means 1% of the scene diameter.
  double cell = 0.0;
  int lbfgs_memory = 8;

  int steps_for(int dim) const { return n_steps > 0 ? n_steps : (dim == 2 ? 50 : 80); }
};

struct Demonstration {
  std::vector<Vec> positions;
  std::vector<Vec> velocities;
  double dt = 0.1;
  std::string scene_name;
  std::string status = "converged";  // converged | max-iters
  int iterations = 0;
  int restarts = 0;
  double objective = 0.0;
  int start_index = -1;
  bool validation = false;
  /// Objective after every accepted iteration of the final attempt; not serialized.
  std::vector<double> objective_history;

  int steps() const { return static_cast<int>(velocities.size()); }
  const Vec& start() const { return positions.front(); }
};

struct InfeasibleStart {
  int index = -1;
  Vec start;
  std::string reason;
};

struct Dataset {
  std::string scene_name;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  std::vector<Demonstration> demos;
  std::vector<InfeasibleStart> infeasible;

  std::vector<const Demonstration*> split(bool validation) const {
    std::vector<const Demonstration*> out;
    for (const auto& d : demos) {
      if (d.validation == validation) out.push_back(&d);
    }
    return out;
  }
};

inline double default_goal_tolerance(const Scene& scene) { return 0.01 * scene.diameter(); }

inline std::vector<Vec> grid_starts(const Scene& scene, const std::vector<int>& resolution,
                                    std::optional<double> goal_tolerance = std::nullopt) {
  if (static_cast<int>(resolution.size()) != scene.dim) {
    fail(ErrorCode::invalid_argument, "grid needs one count per axis");
  }
  for (int r : resolution) {
    if (r < 2) fail(ErrorCode::invalid_argument, "grid resolution must be at least 2 per axis");
  }
  const double tol = goal_tolerance.value_or(default_goal_tolerance(scene));
  const Vec lo = scene.start_region ? scene.start_region->lower : scene.pos_lower;
  const Vec hi = scene.start_region ? scene.start_region->upper : scene.pos_upper;
  std::vector<Vec> out;
  std::vector<int> idx(scene.dim, 0);
  for (;;) {
    Vec x(scene.dim);
    for (int k = 0; k < scene.dim; ++k) x(k) = lo(k) + (hi(k) - lo(k)) * idx[k] / (resolution[k] - 1);
    if (scene.within_limits(x) && (x - scene.goal).norm() > tol && min_clearance(scene, x) >= scene.d_safe) {
      out.push_back(x);
    }
    // First axis varies fastest.
    int k = 0;
    while (k < scene.dim && ++idx[k] == resolution[k]) idx[k++] = 0;
    if (k == scene.dim) break;
  }
  return out;
}

/// Grid graph over the position limits; nodes keep d_safe + cell clearance so
/// any edge between two of them stays above d_safe. Distances are shortest
/// path lengths to the goal.
class Roadmap {
 public:
  Roadmap(const Scene& scene, double cell) : scene_(&scene), cell_(cell) {
    if (!(cell > 0.0)) fail(ErrorCode::invalid_argument, "roadmap cell must be positive");
    const int d = scene.dim;
    counts_.resize(d);
    std::size_t total = 1;
    for (int k = 0; k < d; ++k) {
      counts_[k] = static_cast<int>(std::floor((scene.pos_upper(k) - scene.pos_lower(k)) / cell)) + 1;
      total *= counts_[k];
    }
    clear_.assign(total, 0);
    for (std::size_t i = 0; i < total; ++i) {
      clear_[i] = min_clearance(scene, node(i)) >= scene.d_safe + cell ? 1 : 0;
    }
    dist_.assign(total, std::numeric_limits<double>::infinity());
    parent_.assign(total, -1);
    run_dijkstra();
  }

  double cell() const { return cell_; }

  /// Polyline start -> roadmap nodes -> goal, or empty if the start cannot connect.
  std::vector<Vec> path_from(const Vec& start) const {
    const Scene& s = *scene_;
    for (double radius : {2.0, 4.0, 8.0}) {
      double best = std::numeric_limits<double>::infinity();
      long best_node = -1;
      for (long i : nodes_near(start, radius * cell_)) {
        if (!clear_[i] || !std::isfinite(dist_[i])) continue;
        const double c = (node(i) - start).norm() + dist_[i];
        if (c < best && segment_clear(start, node(i))) {
          best = c;
          best_node = i;
        }
      }
      if (best_node >= 0) {
        std::vector<Vec> path{start};
        for (long i = best_node; i >= 0; i = parent_[i]) path.push_back(node(i));
        path.push_back(s.goal);
        return path;
      }
    }
    return {};
  }

  bool segment_clear(const Vec& a, const Vec& b) const {
    const int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / (0.25 * cell_))));
    for (int k = 0; k <= n; ++k) {
      const Vec x = a + (b - a) * (static_cast<double>(k) / n);
      if (min_clearance(*scene_, x) < scene_->d_safe) return false;
    }
    return true;
  }

 private:
  Vec node(std::size_t i) const {
    Vec x(scene_->dim);
    for (int k = 0; k < scene_->dim; ++k) {
      x(k) = scene_->pos_lower(k) + cell_ * static_cast<double>(i % counts_[k]);
      i /= counts_[k];
    }
    return x;
  }

  std::vector<long> nodes_near(const Vec& x, double radius) const {
    const int d = scene_->dim;
    std::vector<int> lo(d), hi(d), idx(d);
    for (int k = 0; k < d; ++k) {
      lo[k] = std::max(0, static_cast<int>(std::floor((x(k) - radius - scene_->pos_lower(k)) / cell_)));
      hi[k] = std::min(counts_[k] - 1, static_cast<int>(std::ceil((x(k) + radius - scene_->pos_lower(k)) / cell_)));
      if (lo[k] > hi[k]) return {};
      idx[k] = lo[k];
    }
    std::vector<long> out;
    for (;;) {
      long flat = 0, stride = 1;
      for (int k = 0; k < d; ++k) {
        flat += idx[k] * stride;
        stride *= counts_[k];
      }
      if ((node(flat) - x).norm() <= radius) out.push_back(flat);
      int k = 0;
      while (k < d && ++idx[k] > hi[k]) {
        idx[k] = lo[k];
        ++k;
      }
      if (k == d) break;
    }
    return out;
  }

  void run_dijkstra() {
    using Item = std::pair<double, long>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    for (double radius : {2.0, 4.0, 8.0}) {
      for (long i : nodes_near(scene_->goal, radius * cell_)) {
        if (!clear_[i] || !segment_clear(scene_->goal, node(i))) continue;
        const double c = (node(i) - scene_->goal).norm();
        if (c < dist_[i]) {
          dist_[i] = c;
          queue.emplace(c, i);
        }
      }
      if (!queue.empty()) break;
    }
    const int d = scene_->dim;
    std::vector<std::vector<int>> offsets;
    std::vector<int> off(d, -1);
    for (;;) {
      if (std::any_of(off.begin(), off.end(), [](int o) { return o != 0; })) offsets.push_back(off);
      int k = 0;
      while (k < d && ++off[k] > 1) off[k++] = -1;
      if (k == d) break;
    }
    while (!queue.empty()) {
      const auto [c, i] = queue.top();
      queue.pop();
      if (c > dist_[i]) continue;
      std::vector<int> idx(d);
      long rem = i;
      for (int k = 0; k < d; ++k) {
        idx[k] = static_cast<int>(rem % counts_[k]);
        rem /= counts_[k];
      }
      for (const auto& o : offsets) {
        long flat = 0, stride = 1;
        double len2 = 0.0;
        bool inside = true;
        for (int k = 0; k < d; ++k) {
          const int j = idx[k] + o[k];
          if (j < 0 || j >= counts_[k]) {
            inside = false;
            break;
          }
          flat += j * stride;
          stride *= counts_[k];
          len2 += o[k] * o[k];
        }
        if (!inside || !clear_[flat]) continue;
        const double nc = c + cell_ * std::sqrt(len2);
        if (nc < dist_[flat]) {
          dist_[flat] = nc;
          parent_[flat] = i;
          queue.emplace(nc, flat);
        }
      }
    }
  }

  const Scene* scene_;
  double cell_;
  std::vector<int> counts_;
  std::vector<char> clear_;
  std::vector<double> dist_;
  std::vector<long> parent_;
};

inline double polyline_length(const std::vector<Vec>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

/// n_steps + 1 points equally spaced in arc length along the polyline.
inline std::vector<Vec> resample_polyline(const std::vector<Vec>& pts, int n_steps) {
  const double total = polyline_length(pts);
  std::vector<Vec> out;
  out.reserve(n_steps + 1);
  out.push_back(pts.front());
  std::size_t seg = 1;
  double seg_start = 0.0;
  for (int k = 1; k < n_steps; ++k) {
    const double s = total * k / n_steps;
    while (seg + 1 < pts.size() && seg_start + (pts[seg] - pts[seg - 1]).norm() < s) {
      seg_start += (pts[seg] - pts[seg - 1]).norm();
      ++seg;
    }
    const double len = (pts[seg] - pts[seg - 1]).norm();
    const double t = len > 0.0 ? std::clamp((s - seg_start) / len, 0.0, 1.0) : 0.0;
    out.push_back(pts[seg - 1] + t * (pts[seg] - pts[seg - 1]));
  }
  out.push_back(pts.back());
  return out;
}

namespace detail {

/// Penalized path objective over interior points; endpoints are fixed.
class PathObjective {
 public:
  PathObjective(const Scene& scene, Vec x0, const SolverConfig& cfg, int n_steps, double ref_length, double penalty)
      : scene_(scene), x0_(std::move(x0)), cfg_(cfg), n_(n_steps), penalty_(penalty) {
    ref_length_ = std::max(ref_length, 1e-9);
    eta_ = 1e-3 * ref_length_ / n_;
  }

  int size() const { return (n_ - 1) * scene_.dim; }

  Vec point(const Eigen::VectorXd& z, int n) const {
    if (n == 0) return x0_;
    if (n == n_) return scene_.goal;
    return z.segment((n - 1) * scene_.dim, scene_.dim);
  }

  void project(Eigen::VectorXd& z) const {
    const int d = scene_.dim;
    for (int n = 0; n < n_ - 1; ++n) {
      for (int k = 0; k < d; ++k) z(n * d + k) = std::clamp(z(n * d + k), scene_.pos_lower(k), scene_.pos_upper(k));
    }
  }

  double operator()(const Eigen::VectorXd& z, Eigen::VectorXd* grad) const {
    const int d = scene_.dim;
    if (grad) grad->setZero(size());
    double value = 0.0;
    const double spacing_w = n_ / (2.0 * ref_length_);
    for (int n = 0; n < n_; ++n) {
      const Vec delta = point(z, n + 1) - point(z, n);
      const double r = std::sqrt(delta.squaredNorm() + eta_ * eta_);
      value += r + spacing_w * delta.squaredNorm();
      Vec g = delta / r + 2.0 * spacing_w * delta;
      // Velocity limits on delta / dt.
      for (int k = 0; k < d; ++k) {
        const double v = delta(k) / cfg_.dt;
        double excess = 0.0;
        if (v > scene_.vel_upper(k)) excess = v - scene_.vel_upper(k);
        if (v < scene_.vel_lower(k)) excess = v - scene_.vel_lower(k);
        if (excess != 0.0) {
          value += penalty_ * excess * excess;
          g(k) += 2.0 * penalty_ * excess / cfg_.dt;
        }
      }
      if (grad) {
        if (n + 1 < n_) grad->segment(n * d, d) += g;
        if (n > 0) grad->segment((n - 1) * d, d) -= g;
      }
    }
    const double target = scene_.d_safe + cfg_.margin;
    for (int n = 1; n < n_; ++n) {
      for (const auto& w : pair_witnesses(scene_, point(z, n))) {
        const double short_by = target - w.signed_distance;
        if (short_by <= 0.0) continue;
        value += penalty_ * short_by * short_by;
        if (grad) grad->segment((n - 1) * d, d) -= 2.0 * penalty_ * short_by * w.normal;
      }
    }
    return value;
  }

 private:
  const Scene& scene_;
  Vec x0_;
  const SolverConfig& cfg_;
  int n_;
  double penalty_;
  double ref_length_;
  double eta_;
};

struct SolveOutcome {
  Eigen::VectorXd z;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;
};

/// L-BFGS directions with a projected Armijo backtracking line search; every
/// accepted step strictly lowers the objective.
inline SolveOutcome minimize(const PathObjective& f, Eigen::VectorXd z, const SolverConfig& cfg) {
  SolveOutcome out;
  f.project(z);
  Eigen::VectorXd g;
  double value = f(z, &g);
  out.history.push_back(value);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;
  int stalls = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-9) {
      out.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (int i = static_cast<int>(memory.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = memory[i];
      alpha[i] = s.dot(q) / y.dot(s);
      q -= alpha[i] * y;
    }
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      q *= s.dot(y) / y.squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const auto& [s, y] = memory[i];
      const double beta = y.dot(q) / y.dot(s);
      q += s * (alpha[i] - beta);
    }
    Eigen::VectorXd dir = -q;
    if (dir.dot(g) >= 0.0) {
      memory.clear();
      dir = -g / std::max(1.0, g.norm());
    }
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd z_new, g_new;
    double v_new = value;
    for (int ls = 0; ls < 40; ++ls) {
      z_new = z + step * dir;
      f.project(z_new);
      v_new = f(z_new, &g_new);
      if (std::isfinite(v_new) && v_new <= value + 1e-4 * g.dot(z_new - z) && v_new < value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (memory.empty()) {
        out.converged = true;
        break;
      }
      memory.clear();
      continue;
    }
    const Eigen::VectorXd s = z_new - z;
    const Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (static_cast<int>(memory.size()) > cfg.lbfgs_memory) memory.pop_front();
    }
    const double drop = value - v_new;
    z = std::move(z_new);
    g = std::move(g_new);
    value = v_new;
    out.history.push_back(value);
    out.iterations = it + 1;
    stalls = drop <= 1e-10 * (1.0 + std::abs(value)) ? stalls + 1 : 0;
    if (stalls >= 5) {
      out.converged = true;
      break;
    }
  }
  out.z = std::move(z);
  out.value = value;
  return out;
}

inline std::string demo_violation(const Scene& scene, const std::vector<Vec>& pts, const SolverConfig& cfg) {
  for (std::size_t n = 0; n < pts.size(); ++n) {
    const double c = min_clearance(scene, pts[n]);
    if (c < scene.d_safe - cfg.clearance_tol) {
      std::ostringstream msg;
      msg << "clearance " << c << " below d_safe at via point " << n;
      return msg.str();
    }
  }
  for (std::size_t n = 0; n + 1 < pts.size(); ++n) {
    const Vec v = (pts[n + 1] - pts[n]) / cfg.dt;
    for (int k = 0; k < scene.dim; ++k) {
      if (v(k) > scene.vel_upper(k) + 1e-6 || v(k) < scene.vel_lower(k) - 1e-6) {
        return "velocity limit exceeded at step " + std::to_string(n);
      }
    }
  }
  return {};
}

}  // namespace detail

inline double roadmap_cell(const Scene& scene, const SolverConfig& cfg) {
  return cfg.cell > 0.0 ? cfg.cell : 0.01 * scene.diameter();
}

inline Demonstration optimize_trajectory(const Scene& scene, const Vec& x0, const SolverConfig& cfg,
                                         const Roadmap& roadmap, std::uint64_t seed = 0) {
  if (x0.size() != scene.dim || !scene.within_limits(x0)) {
    fail(ErrorCode::invalid_argument, "start outside the position limits");
  }
  if (min_clearance(scene, x0) < scene.d_safe) fail(ErrorCode::invalid_argument, "start closer than d_safe to an obstacle");
  Demonstration demo;
  demo.dt = cfg.dt;
  demo.scene_name = scene.name;
  if (x0 == scene.goal) {
    demo.positions = {x0};
    return demo;
  }
  const auto warm = roadmap.path_from(x0);
  if (warm.empty()) fail(ErrorCode::infeasible, "start cannot be connected to the roadmap");
  const int n = cfg.steps_for(scene.dim);
  const auto initial = resample_polyline(warm, n);
  const double ref = polyline_length(warm);

  std::mt19937_64 rng(seed);
  std::string last_reason;
  for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
    const double penalty = cfg.penalty * std::pow(10.0, attempt);
    detail::PathObjective f(scene, x0, cfg, n, ref, penalty);
    Eigen::VectorXd z(f.size());
    for (int i = 1; i < n; ++i) z.segment((i - 1) * scene.dim, scene.dim) = initial[i];
    if (attempt > 0) {
      // Midpoint jitter scaled to the roadmap cell.
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += uniform(rng, -1.0, 1.0) * roadmap.cell();
    }
    auto solved = detail::minimize(f, z, cfg);
    std::vector<Vec> pts;
    for (int i = 0; i <= n; ++i) pts.push_back(f.point(solved.z, i));
    last_reason = detail::demo_violation(scene, pts, cfg);
    if (last_reason.empty()) {
      demo.positions = std::move(pts);
      for (int i = 0; i < n; ++i) demo.velocities.push_back((demo.positions[i + 1] - demo.positions[i]) / cfg.dt);
      demo.status = solved.converged ? "converged" : "max-iters";
      demo.iterations = solved.iterations;
      demo.restarts = attempt;
      demo.objective = solved.value;
      demo.objective_history = std::move(solved.history);
      return demo;
    }
  }
  fail(ErrorCode::infeasible, "no collision-free demonstration after " + std::to_string(cfg.max_restarts) +
                                  " restarts: " + last_reason);
}

inline Demonstration optimize_trajectory(const Scene& scene, const Vec& x0, const SolverConfig& cfg,
                                         std::uint64_t seed = 0) {
  const Roadmap roadmap(scene, roadmap_cell(scene, cfg));
  return optimize_trajectory(scene, x0, cfg, roadmap, seed);
}

/// Deterministic validation flags: a seeded Fisher-Yates order, the first
/// round(fraction * n) entries go to validation.
inline std::vector<bool> split_flags(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) fail(ErrorCode::invalid_argument, "validation fraction must lie in [0,1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, "split"));
  shuffle_in_place(order, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<bool> flags(n, false);
  for (std::size_t i = 0; i < n_val && i < n; ++i) flags[order[i]] = true;
  return flags;
}

inline Dataset generate_dataset(const Scene& scene, const std::vector<Vec>& starts, const SolverConfig& cfg,
                                std::uint64_t seed, double validation_fraction = 0.2) {
  if (starts.empty()) fail(ErrorCode::invalid_argument, "no start states given");
  Dataset ds;
  ds.scene_name = scene.name;
  ds.seed = seed;
  ds.validation_fraction = validation_fraction;
  const Roadmap roadmap(scene, roadmap_cell(scene, cfg));
  for (std::size_t i = 0; i < starts.size(); ++i) {
    try {
      auto demo = optimize_trajectory(scene, starts[i], cfg, roadmap, derive_seed(seed, "demo", i));
      demo.start_index = static_cast<int>(i);
      ds.demos.push_back(std::move(demo));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::infeasible && e.code() != ErrorCode::invalid_argument) throw;
      ds.infeasible.push_back({static_cast<int>(i), starts[i], e.what()});
    }
  }
  if (ds.demos.empty()) fail(ErrorCode::dataset_empty, "every start was infeasible");
  const auto flags = split_flags(ds.demos.size(), validation_fraction, seed);
  for (std::size_t i = 0; i < ds.demos.size(); ++i) ds.demos[i].validation = flags[i];
  return ds;
}

// JSON-lines dataset file: one header line, then one line per demonstration.

inline json demo_to_json(const Demonstration& d) {
  json pos = json::array(), vel = json::array();
  for (const auto& p : d.positions) pos.push_back(detail::vec_to_json(p));
  for (const auto& v : d.velocities) vel.push_back(detail::vec_to_json(v));
  return json{{"kind", "demo"},          {"index", d.start_index},     {"split", d.validation ? "validation" : "train"},
              {"scene", d.scene_name},   {"dt", d.dt},                 {"status", d.status},
              {"iterations", d.iterations}, {"restarts", d.restarts}, {"objective", d.objective},
              {"positions", pos},        {"velocities", vel}};
}

inline Demonstration demo_from_json(const json& j, int dim) {
  Demonstration d;
  d.start_index = j.at("index").get<int>();
  d.validation = j.at("split").get<std::string>() == "validation";
  d.scene_name = j.at("scene").get<std::string>();
  d.dt = j.at("dt").get<double>();
  d.status = j.at("status").get<std::string>();
  d.iterations = j.at("iterations").get<int>();
  d.restarts = j.at("restarts").get<int>();
  d.objective = j.at("objective").get<double>();
  for (const auto& p : j.at("positions")) d.positions.push_back(detail::vec_from_json(p, dim, "positions"));
  for (const auto& v : j.at("velocities")) d.velocities.push_back(detail::vec_from_json(v, dim, "velocities"));
  if (d.positions.empty() || d.velocities.size() + 1 != d.positions.size()) {
    fail(ErrorCode::invalid_argument, "demo needs one more position than velocities");
  }
  return d;
}

inline std::string dataset_to_jsonl(const Dataset& ds) {
  json infeasible = json::array();
  for (const auto& f : ds.infeasible) {
    infeasible.push_back({{"index", f.index}, {"start", detail::vec_to_json(f.start)}, {"reason", f.reason}});
  }
  json header{{"kind", "dataset"},
              {"format", kDatasetFormat},
              {"scene", ds.scene_name},
              {"seed", ds.seed},
              {"validation_fraction", ds.validation_fraction},
              {"n_demos", ds.demos.size()},
              {"infeasible", infeasible}};
  std::string out = header.dump() + "\n";
  for (const auto& d : ds.demos) out += demo_to_json(d).dump() + "\n";
  return out;
}

inline Dataset dataset_from_jsonl(std::istream& in, int dim) {
  Dataset ds;
  std::string line;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "dataset") {
        if (j.at("format").get<int>() != kDatasetFormat) fail(ErrorCode::invalid_argument, "unsupported dataset format");
        ds.scene_name = j.at("scene").get<std::string>();
        ds.seed = j.at("seed").get<std::uint64_t>();
        ds.validation_fraction = j.at("validation_fraction").get<double>();
        for (const auto& f : j.at("infeasible")) {
          ds.infeasible.push_back({f.at("index").get<int>(), detail::vec_from_json(f.at("start"), dim, "start"),
                                   f.at("reason").get<std::string>()});
        }
        have_header = true;
      } else if (kind == "demo") {
        ds.demos.push_back(demo_from_json(j, dim));
      } else {
        fail(ErrorCode::invalid_argument, "unknown dataset line kind '" + kind + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed dataset: ") + e.what());
  }
  if (!have_header) fail(ErrorCode::invalid_argument, "dataset file has no header line");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_text_file(path, dataset_to_jsonl(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path, int dim) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return dataset_from_jsonl(in, dim);
}

}  // namespace lyapnav
