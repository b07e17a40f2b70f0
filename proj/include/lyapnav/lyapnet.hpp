#pragma once

// Lyapunov network V(x) = phi(x - x_g) - phi(0) + |x - x_g| with a tanh MLP phi,
// its input gradient, the constrained training loss and its parameter
// gradient, and the certificate check on demonstration states.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lyapnav/demogen.hpp"
#include "lyapnav/envs.hpp"
#include "lyapnav/seed.hpp"

namespace lyapnav {

inline constexpr int kModelFormat = 1;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Mlp {
  std::vector<int> sizes;
  std::vector<Matrix> W;  // W[l] maps layer l to layer l + 1
  std::vector<Vector> b;

  int n_layers() const { return static_cast<int>(W.size()); }
  int input_dim() const { return sizes.front(); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (int l = 0; l < n_layers(); ++l) n += W[l].size() + b[l].size();
    return n;
  }

  bool finite() const {
    for (int l = 0; l < n_layers(); ++l) {
      if (!W[l].allFinite() || !b[l].allFinite()) return false;
    }
    return true;
  }
};

inline void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2 || sizes.back() != 1) fail(ErrorCode::invalid_argument, "layer sizes must end in a single output");
  for (int s : sizes) {
    if (s < 1) fail(ErrorCode::invalid_argument, "layer sizes must be positive");
  }
}

inline Mlp zero_mlp(const std::vector<int>& sizes) {
  check_sizes(sizes);
  Mlp net;
  net.sizes = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    net.W.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
    net.b.push_back(Vector::Zero(sizes[l + 1]));
  }
  return net;
}

/// Uniform in +-1/sqrt(fan_in), weights then bias per layer, row by row.
inline Mlp init_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  Mlp net = zero_mlp(sizes);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < net.n_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    for (Eigen::Index i = 0; i < net.W[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < net.W[l].cols(); ++j) net.W[l](i, j) = uniform(rng, -bound, bound);
    }
    for (Eigen::Index i = 0; i < net.b[l].size(); ++i) net.b[l](i) = uniform(rng, -bound, bound);
  }
  return net;
}

inline std::vector<int> default_layer_sizes(int dim) {
  if (dim == 2) return {2, 128, 128, 128, 1};
  return {3, 256, 256, 256, 256, 1};
}

namespace detail {

/// tanh through one vectorized exp; several times faster than the
/// elementwise library tanh and within a few ulp of it.
template <class Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& a) {
  return 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
}

/// Hidden activations for a batch; H[0] is the input, H[l] = tanh(W H[l-1] + b).
/// Reuses the storage already in H.
inline void forward_hidden(const Mlp& net, const Matrix& Y, std::vector<Matrix>& H) {
  H.resize(net.n_layers());
  H[0] = Y;
  for (int l = 1; l < net.n_layers(); ++l) {
    H[l].resize(net.W[l - 1].rows(), Y.cols());
    H[l].noalias() = net.W[l - 1] * H[l - 1];
    H[l].colwise() += net.b[l - 1];
    H[l] = fast_tanh(H[l].array()).matrix();
  }
}

inline std::vector<Matrix> forward_hidden(const Mlp& net, const Matrix& Y) {
  std::vector<Matrix> H;
  forward_hidden(net, Y, H);
  return H;
}

inline RowVector output(const Mlp& net, const std::vector<Matrix>& H) {
  RowVector out = net.W.back() * H.back();
  out.array() += net.b.back()(0);
  return out;
}

/// d out / d input for every column; tmp is scratch storage.
inline void input_gradient(const Mlp& net, const std::vector<Matrix>& H, Matrix& G, Matrix& tmp) {
  const Eigen::Index B = H.front().cols();
  G = net.W.back().transpose().replicate(1, B);
  for (int l = net.n_layers() - 1; l >= 1; --l) {
    G.array() *= 1.0 - H[l].array().square();
    tmp.resize(net.W[l - 1].cols(), B);
    tmp.noalias() = net.W[l - 1].transpose() * G;
    G.swap(tmp);
  }
}

inline double single_output(const Mlp& net, const Vector& y) {
  Vector h = y;
  for (int l = 0; l + 1 < net.n_layers(); ++l) h = fast_tanh((net.W[l] * h + net.b[l]).array()).matrix();
  return net.W.back().row(0).dot(h) + net.b.back()(0);
}

inline Vector single_input_gradient(const Mlp& net, const Vector& y) {
  std::vector<Vector> H{y};
  for (int l = 0; l + 1 < net.n_layers(); ++l) H.push_back(fast_tanh((net.W[l] * H.back() + net.b[l]).array()).matrix());
  Vector delta = net.W.back().row(0).transpose();
  for (int l = net.n_layers() - 1; l >= 1; --l) {
    delta = delta.cwiseProduct((1.0 - H[l].array().square()).matrix());
    delta = net.W[l - 1].transpose() * delta;
  }
  return delta;
}

}  // namespace detail

struct LyapunovModel {
  Mlp net;
  Vec goal;
  /// phi(z) = output_scale * net(input_scale * z).
  double input_scale = 1.0;
  double output_scale = 1.0;
  double phi_at_zero = 0.0;
  std::string config_hash;

  int dim() const { return static_cast<int>(goal.size()); }

  double phi(const Vec& z) const {
    return output_scale * detail::single_output(net, Vector(input_scale * z));
  }

  void refresh() { phi_at_zero = phi(Vec::Zero(goal.size())); }
};

inline LyapunovModel make_model(Mlp net, Vec goal, double input_scale = 1.0, double output_scale = 1.0) {
  if (net.input_dim() != goal.size()) fail(ErrorCode::invalid_argument, "network input size does not match the goal");
  LyapunovModel m;
  m.net = std::move(net);
  m.goal = std::move(goal);
  m.input_scale = input_scale;
  m.output_scale = output_scale;
  m.refresh();
  return m;
}

inline void check_state(const LyapunovModel& m, const Vec& x) {
  if (x.size() != m.dim()) fail(ErrorCode::invalid_argument, "state dimension does not match the model");
  if (!x.allFinite()) fail(ErrorCode::invalid_argument, "state is not finite");
}

inline double lyapunov_value(const LyapunovModel& m, const Vec& x) {
  check_state(m, x);
  const Vec z = x - m.goal;
  if (z.isZero(0.0)) return 0.0;
  return m.phi(z) - m.phi_at_zero + z.norm();
}

inline Vec lyapunov_gradient(const LyapunovModel& m, const Vec& x) {
  check_state(m, x);
  const Vec z = x - m.goal;
  if (z.isZero(0.0)) fail(ErrorCode::at_goal, "V is not differentiable at the goal");
  const Vector g = detail::single_input_gradient(m.net, Vector(m.input_scale * z));
  return Vec(m.output_scale * m.input_scale * g + z / z.norm());
}

/// V for many states at once, in fixed-size chunks; exactly 0 at the goal.
inline std::vector<double> lyapunov_values(const LyapunovModel& m, const std::vector<Vec>& xs) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> out(xs.size(), 0.0);
  std::vector<Matrix> H;
  Matrix Y;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, xs.size() - start);
    Y.resize(m.dim(), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      check_state(m, xs[start + i]);
      Y.col(i) = m.input_scale * (xs[start + i] - m.goal);
    }
    detail::forward_hidden(m.net, Y, H);
    const RowVector phi = detail::output(m.net, H);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec z = xs[start + i] - m.goal;
      if (!z.isZero(0.0)) out[start + i] = m.output_scale * phi(i) - m.phi_at_zero + z.norm();
    }
  }
  return out;
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::vector<int> layer_sizes;  // empty: per-dimension default
  double epsilon = 0.01;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 8;  // demonstrations per step
  std::uint64_t seed = 0;
  double multiplier_growth = 1.05;
  double lambda_max = 1e4;
  /// Extra slack the training constraints ask for beyond the checked ones.
  double decrease_margin = 0.005;
  double positivity_margin = 0.01;
  /// Epochs allowed past `epochs` while the certificate still fails.
  int max_extra_epochs = 0;
  /// 0 picks 2 / scene diameter.
  double input_scale = 0.0;
  /// 0 picks scene diameter / 2.
  double output_scale = 0.0;
};

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"layer_sizes", c.layer_sizes},
              {"epsilon", c.epsilon},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"multiplier_growth", c.multiplier_growth},
              {"lambda_max", c.lambda_max},
              {"decrease_margin", c.decrease_margin},
              {"positivity_margin", c.positivity_margin},
              {"max_extra_epochs", c.max_extra_epochs},
              {"input_scale", c.input_scale},
              {"output_scale", c.output_scale}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  c.layer_sizes = j.value("layer_sizes", c.layer_sizes);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.multiplier_growth = j.value("multiplier_growth", c.multiplier_growth);
  c.lambda_max = j.value("lambda_max", c.lambda_max);
  c.decrease_margin = j.value("decrease_margin", c.decrease_margin);
  c.positivity_margin = j.value("positivity_margin", c.positivity_margin);
  c.max_extra_epochs = j.value("max_extra_epochs", c.max_extra_epochs);
  c.input_scale = j.value("input_scale", c.input_scale);
  c.output_scale = j.value("output_scale", c.output_scale);
  return c;
}

inline void validate(const TrainConfig& c) {
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) fail(ErrorCode::invalid_argument, "epsilon must lie in (0,1)");
  if (!(c.lambda1 >= 0.0 && c.lambda2 >= 0.0) || !std::isfinite(c.lambda1) || !std::isfinite(c.lambda2)) {
    fail(ErrorCode::invalid_argument, "multipliers must be finite and non-negative");
  }
  if (!(c.multiplier_growth >= 1.0)) fail(ErrorCode::invalid_argument, "multiplier_growth must be >= 1");
  if (!(c.learning_rate > 0.0) || c.epochs < 0 || c.batch_size < 1 || c.max_extra_epochs < 0) {
    fail(ErrorCode::invalid_argument, "invalid optimizer settings");
  }
  if (c.epsilon + c.decrease_margin >= 1.0 || c.decrease_margin < 0.0 || c.positivity_margin < 0.0) {
    fail(ErrorCode::invalid_argument, "invalid constraint margins");
  }
}

struct LossSample {
  Vec x;
  Vec xdot;
  Vec x_next;
};

struct LossBreakdown {
  double total = 0.0;
  double alignment = 0.0;
  double positivity = 0.0;
  double decrease = 0.0;
  int samples = 0;
  /// Samples whose demonstrated velocity is zero; left out of the alignment term.
  int skipped = 0;
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double epsilon = 0.01;
  double positivity_margin = 0.0;
};

struct MlpGradient {
  std::vector<Matrix> W;
  std::vector<Vector> b;
};

namespace detail {

/// States as columns plus the samples that reference them. next < 0 marks
/// a transition into the goal.
struct LossProblem {
  Matrix Z;
  struct Item {
    Eigen::Index col;
    Eigen::Index next;
    Vec xdot;
  };
  std::vector<Item> items;
};

inline LossProblem problem_from_samples(const LyapunovModel& m, const std::vector<LossSample>& batch) {
  LossProblem p;
  p.Z.resize(m.dim(), 2 * static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_state(m, batch[i].x);
    check_state(m, batch[i].x_next);
    if (batch[i].xdot.size() != m.dim()) fail(ErrorCode::invalid_argument, "velocity dimension does not match the model");
    p.Z.col(2 * i) = batch[i].x - m.goal;
    p.Z.col(2 * i + 1) = batch[i].x_next - m.goal;
    const bool next_goal = p.Z.col(2 * i + 1).isZero(0.0);
    p.items.push_back({static_cast<Eigen::Index>(2 * i), next_goal ? -1 : static_cast<Eigen::Index>(2 * i + 1), batch[i].xdot});
  }
  return p;
}

/// One column per non-final state of each demonstration.
inline LossProblem problem_from_demos(const LyapunovModel& m, const std::vector<const Demonstration*>& demos) {
  LossProblem p;
  Eigen::Index cols = 0;
  for (const auto* d : demos) cols += d->steps();
  p.Z.resize(m.dim(), cols);
  Eigen::Index c = 0;
  for (const auto* d : demos) {
    const int n = d->steps();
    for (int i = 0; i < n; ++i) {
      p.Z.col(c + i) = d->positions[i] - m.goal;
      const bool next_goal = (d->positions[i + 1] - m.goal).isZero(0.0);
      p.items.push_back({c + i, (i + 1 < n && !next_goal) ? c + i + 1 : -1, d->velocities[i]});
    }
    c += n;
  }
  return p;
}

/// Buffers kept across calls so large batches do not hit the allocator.
struct LossWorkspace {
  Matrix Y, G, tmp, U, Hbar, Hdbar, Abar, Adbar;
  std::vector<Matrix> H, Hd, Ad;
};

/// Loss of a problem and, when requested, its gradient with respect to every
/// network parameter. The alignment term depends on grad_x V, so its
/// parameter gradient is taken through a forward tangent pass seeded with
/// dA/d(grad V) and then reversed.
inline LossBreakdown loss_and_gradient(const LyapunovModel& m, const LossProblem& p, const LossWeights& w,
                                       MlpGradient* grad, LossWorkspace& ws) {
  const Mlp& net = m.net;
  const Eigen::Index C = p.Z.cols();
  const Eigen::Index B = C + 1;  // last column evaluates phi(0)
  ws.Y.setZero(m.dim(), B);
  ws.Y.leftCols(C) = m.input_scale * p.Z;
  forward_hidden(net, ws.Y, ws.H);
  const auto& H = ws.H;
  const RowVector raw = output(net, H);
  input_gradient(net, H, ws.G, ws.tmp);
  const Matrix& G = ws.G;
  const double phi0 = m.output_scale * raw(C);

  std::vector<double> V(C, 0.0), znorm(C, 0.0);
  std::vector<char> at_goal(C, 0);
  for (Eigen::Index c = 0; c < C; ++c) {
    znorm[c] = p.Z.col(c).norm();
    at_goal[c] = znorm[c] == 0.0;
    if (!at_goal[c]) V[c] = m.output_scale * raw(c) - phi0 + znorm[c];
  }

  LossBreakdown out;
  RowVector coef = RowVector::Zero(B);
  ws.U.setZero(m.dim(), B);
  Matrix& U = ws.U;
  for (const auto& it : p.items) {
    const Eigen::Index c = it.col;
    if (at_goal[c]) continue;
    ++out.samples;
    const double vnorm = it.xdot.norm();
    if (vnorm == 0.0) {
      ++out.skipped;
    } else {
      const Vector gv = m.output_scale * m.input_scale * G.col(c) + p.Z.col(c) / znorm[c];
      const double gnorm = gv.norm();
      if (gnorm > 0.0) {
        const Vector vhat = it.xdot / vnorm;
        const Vector ghat = gv / gnorm;
        const double cosine = ghat.dot(vhat);
        out.alignment += 1.0 + cosine;
        U.col(c) += (vhat - cosine * ghat) / gnorm;
      } else {
        out.alignment += 1.0;
      }
    }
    const double pos = w.positivity_margin * znorm[c] - V[c];
    if (pos > 0.0) {
      out.positivity += w.lambda1 * pos;
      coef(c) -= w.lambda1;
    }
    const double v_next = it.next >= 0 ? V[it.next] : 0.0;
    const double dec = v_next - (1.0 - w.epsilon) * V[c];
    if (dec > 0.0) {
      out.decrease += w.lambda2 * dec;
      if (it.next >= 0) coef(it.next) += w.lambda2;
      coef(c) -= w.lambda2 * (1.0 - w.epsilon);
    }
  }
  out.total = out.alignment + out.positivity + out.decrease;
  if (!grad) return out;

  // Every V carries -phi(0).
  coef(C) = -coef.head(C).sum();
  coef *= m.output_scale;
  U *= m.output_scale * m.input_scale;

  const int L = net.n_layers();
  // Tangent pass: Hd[l] is the directional derivative of H[l] along U.
  auto& Hd = ws.Hd;
  auto& Ad = ws.Ad;
  Hd.resize(L);
  Ad.resize(L);
  Hd[0] = U;
  for (int l = 1; l < L; ++l) {
    Ad[l].resize(net.W[l - 1].rows(), B);
    Ad[l].noalias() = net.W[l - 1] * Hd[l - 1];
    Hd[l] = (Ad[l].array() * (1.0 - H[l].array().square())).matrix();
  }

  grad->W.resize(L);
  grad->b.resize(L);
  // Output layer: F = sum coef * out + sum (W_L Hd[L-1]).
  grad->W[L - 1].noalias() = coef * H[L - 1].transpose();
  grad->W[L - 1] += Hd[L - 1].rowwise().sum().transpose();
  grad->b[L - 1] = Vector::Constant(1, coef.sum());
  ws.Hbar.noalias() = net.W[L - 1].transpose() * coef;
  ws.Hdbar = net.W[L - 1].transpose().replicate(1, B);
  for (int l = L - 1; l >= 1; --l) {
    const auto S = 1.0 - H[l].array().square();
    ws.Adbar = (ws.Hdbar.array() * S).matrix();
    ws.Hbar.array() -= 2.0 * H[l].array() * ws.Hdbar.array() * Ad[l].array();
    ws.Abar = (ws.Hbar.array() * S).matrix();
    grad->W[l - 1].noalias() = ws.Abar * H[l - 1].transpose();
    grad->W[l - 1].noalias() += ws.Adbar * Hd[l - 1].transpose();
    grad->b[l - 1] = ws.Abar.rowwise().sum();
    if (l > 1) {
      ws.Hbar.noalias() = net.W[l - 1].transpose() * ws.Abar;
      ws.Hdbar.noalias() = net.W[l - 1].transpose() * ws.Adbar;
    }
  }
  return out;
}

inline LossBreakdown loss_and_gradient(const LyapunovModel& m, const LossProblem& p, const LossWeights& w,
                                       MlpGradient* grad) {
  LossWorkspace ws;
  return loss_and_gradient(m, p, w, grad, ws);
}

}  // namespace detail

/// Sum over samples of [1 + cos(grad V, xdot)] + lambda1 max(-V, 0)
/// + lambda2 max(V(x_next) - (1 - eps) V(x), 0). Samples at the goal are
/// left out entirely.
inline LossBreakdown training_loss(const LyapunovModel& m, const std::vector<LossSample>& batch, const TrainConfig& cfg) {
  if (batch.empty()) fail(ErrorCode::invalid_argument, "empty batch");
  const auto p = detail::problem_from_samples(m, batch);
  return detail::loss_and_gradient(m, p, {cfg.lambda1, cfg.lambda2, cfg.epsilon, 0.0}, nullptr);
}

inline LossBreakdown training_loss_gradient(const LyapunovModel& m, const std::vector<LossSample>& batch,
                                            const TrainConfig& cfg, MlpGradient& grad) {
  if (batch.empty()) fail(ErrorCode::invalid_argument, "empty batch");
  const auto p = detail::problem_from_samples(m, batch);
  return detail::loss_and_gradient(m, p, {cfg.lambda1, cfg.lambda2, cfg.epsilon, 0.0}, &grad);
}

// ---------------------------------------------------------- verification

struct StatePair {
  Vec x;
  Vec next;
};

struct StabilityReport {
  std::size_t n_states = 0;
  std::size_t positivity_violations = 0;
  std::size_t decrease_violations = 0;
  double max_violation_magnitude = 0.0;
  double rho_estimate = 0.0;

  bool certified() const { return positivity_violations == 0 && decrease_violations == 0; }
};

inline json stability_to_json(const StabilityReport& r) {
  return json{{"n_states", r.n_states},
              {"positivity_violations", r.positivity_violations},
              {"decrease_violations", r.decrease_violations},
              {"max_violation_magnitude", r.max_violation_magnitude},
              {"rho_estimate", r.rho_estimate}};
}

/// Counts V <= 0 at non-goal states and V(next) > (1 - eps) V(x) over the
/// pairs, given the values already evaluated.
inline StabilityReport stability_from_values(const std::vector<StatePair>& pairs, const std::vector<double>& v,
                                             const std::vector<double>& v_next, const Vec& goal, double epsilon) {
  StabilityReport r;
  r.n_states = pairs.size();
  double lowest_bad = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].x == goal) continue;
    bool bad = false;
    if (v[i] <= 0.0) {
      ++r.positivity_violations;
      r.max_violation_magnitude = std::max(r.max_violation_magnitude, -v[i]);
      bad = true;
    }
    const double excess = v_next[i] - (1.0 - epsilon) * v[i];
    if (excess > 0.0) {
      ++r.decrease_violations;
      r.max_violation_magnitude = std::max(r.max_violation_magnitude, excess);
      bad = true;
    }
    if (bad) {
      lowest_bad = std::min(lowest_bad, v[i]);
    } else {
      good.push_back(i);
    }
  }
  for (std::size_t i : good) {
    if (v[i] < lowest_bad) r.rho_estimate = std::max(r.rho_estimate, v[i]);
  }
  return r;
}

inline StabilityReport verify_stability(const LyapunovModel& m, const std::vector<StatePair>& pairs, double epsilon) {
  std::vector<Vec> xs, nexts;
  for (const auto& p : pairs) {
    xs.push_back(p.x);
    nexts.push_back(p.next);
  }
  return stability_from_values(pairs, lyapunov_values(m, xs), lyapunov_values(m, nexts), m.goal, epsilon);
}

/// Same check for the quadratic-baseline candidate V = |x - x_g|.
inline StabilityReport verify_stability_quadratic(const Vec& goal, const std::vector<StatePair>& pairs, double epsilon) {
  std::vector<double> v, vn;
  for (const auto& p : pairs) {
    v.push_back((p.x - goal).norm());
    vn.push_back((p.next - goal).norm());
  }
  return stability_from_values(pairs, v, vn, goal, epsilon);
}

inline std::vector<StatePair> demo_pairs(const std::vector<const Demonstration*>& demos) {
  std::vector<StatePair> out;
  for (const auto* d : demos) {
    for (int i = 0; i < d->steps(); ++i) out.push_back({d->positions[i], d->positions[i + 1]});
  }
  return out;
}

/// verify_stability over the consecutive pairs of the demonstrations, with
/// every state evaluated once.
inline StabilityReport verify_demos(const LyapunovModel& m, const std::vector<const Demonstration*>& demos,
                                    double epsilon) {
  std::vector<Vec> states;
  for (const auto* d : demos) states.insert(states.end(), d->positions.begin(), d->positions.end());
  const auto v = lyapunov_values(m, states);
  std::vector<StatePair> pairs;
  std::vector<double> vx, vn;
  std::size_t offset = 0;
  for (const auto* d : demos) {
    for (int i = 0; i < d->steps(); ++i) {
      pairs.push_back({d->positions[i], d->positions[i + 1]});
      vx.push_back(v[offset + i]);
      vn.push_back(v[offset + i + 1]);
    }
    offset += d->positions.size();
  }
  return stability_from_values(pairs, vx, vn, m.goal, epsilon);
}

// ---------------------------------------------------------------- training

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  std::size_t positivity_violations = 0;
  std::size_t decrease_violations = 0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

struct TrainResult {
  LyapunovModel model;
  std::vector<EpochRecord> history;
  StabilityReport certificate;
  /// "certified" or "invalid Lyapunov function".
  std::string status;
  int epochs_run = 0;
};

/// Loss became non-finite; carries the last model whose loss was finite.
class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& message, LyapunovModel last_finite)
      : Error(ErrorCode::training_failure, message), last_finite_(std::move(last_finite)) {}
  const LyapunovModel& last_finite() const noexcept { return last_finite_; }

 private:
  LyapunovModel last_finite_;
};

inline std::string hex64(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

inline std::string config_hash(const TrainConfig& cfg) { return hex64(fnv1a(train_config_to_json(cfg).dump())); }

namespace detail {

struct Adam {
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  long t = 0;

  explicit Adam(const Mlp& net) {
    for (int l = 0; l < net.n_layers(); ++l) {
      mW.push_back(Matrix::Zero(net.W[l].rows(), net.W[l].cols()));
      vW.push_back(mW.back());
      mb.push_back(Vector::Zero(net.b[l].size()));
      vb.push_back(mb.back());
    }
  }

  void step(Mlp& net, const MlpGradient& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto update = [&](auto& p, auto& m, auto& v, const auto& gr) {
      m = b1 * m + (1.0 - b1) * gr;
      v.array() = b2 * v.array() + (1.0 - b2) * gr.array().square();
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (int l = 0; l < net.n_layers(); ++l) {
      update(net.W[l], mW[l], vW[l], g.W[l]);
      update(net.b[l], mb[l], vb[l], g.b[l]);
    }
  }
};

}  // namespace detail

inline TrainResult train(const Dataset& dataset, const Scene& scene, TrainConfig cfg) {
  validate(cfg);
  std::vector<const Demonstration*> demos;
  for (const auto* d : dataset.split(false)) {
    if (d->steps() > 0) demos.push_back(d);
  }
  if (demos.empty()) fail(ErrorCode::dataset_empty, "no training demonstrations with at least one step");
  if (cfg.layer_sizes.empty()) cfg.layer_sizes = default_layer_sizes(scene.dim);
  check_sizes(cfg.layer_sizes);
  if (cfg.layer_sizes.front() != scene.dim) fail(ErrorCode::invalid_argument, "input layer must match the scene dimension");
  const double in_scale = cfg.input_scale > 0.0 ? cfg.input_scale : 2.0 / scene.diameter();
  const double out_scale = cfg.output_scale > 0.0 ? cfg.output_scale : 0.5 * scene.diameter();

  TrainResult res;
  res.model = make_model(init_mlp(cfg.layer_sizes, derive_seed(cfg.seed, "init")), scene.goal, in_scale, out_scale);
  res.model.config_hash = config_hash(cfg);
  LyapunovModel& model = res.model;
  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));
  detail::Adam adam(model.net);
  double lambda1 = cfg.lambda1, lambda2 = cfg.lambda2;
  const int limit = cfg.epochs + cfg.max_extra_epochs;
  std::vector<std::size_t> order(demos.size());
  MlpGradient grad;
  detail::LossWorkspace ws;

  for (int epoch = 0; epoch < limit; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda1 = lambda1;
    rec.lambda2 = lambda2;
    const LossWeights weights{lambda1, lambda2, cfg.epsilon + cfg.decrease_margin, cfg.positivity_margin};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Demonstration*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(demos[order[i]]);
      const auto problem = detail::problem_from_demos(model, batch);
      const LyapunovModel before = model;
      const auto loss = detail::loss_and_gradient(model, problem, weights, &grad, ws);
      if (!std::isfinite(loss.total)) {
        throw TrainingFailure("loss became non-finite in epoch " + std::to_string(epoch), before);
      }
      adam.step(model.net, grad, cfg.learning_rate);
      if (!model.net.finite()) throw TrainingFailure("parameters became non-finite in epoch " + std::to_string(epoch), before);
      model.refresh();
      rec.loss.total += loss.total;
      rec.loss.alignment += loss.alignment;
      rec.loss.positivity += loss.positivity;
      rec.loss.decrease += loss.decrease;
      rec.loss.samples += loss.samples;
      rec.loss.skipped += loss.skipped;
    }
    const auto report = verify_demos(model, demos, cfg.epsilon);
    rec.positivity_violations = report.positivity_violations;
    rec.decrease_violations = report.decrease_violations;
    res.history.push_back(rec);
    res.epochs_run = epoch + 1;
    if (report.positivity_violations > 0) lambda1 = std::min(cfg.lambda_max, lambda1 * cfg.multiplier_growth);
    if (report.decrease_violations > 0) lambda2 = std::min(cfg.lambda_max, lambda2 * cfg.multiplier_growth);
    if (epoch + 1 >= cfg.epochs && report.certified()) break;
  }
  res.certificate = verify_demos(model, demos, cfg.epsilon);
  res.status = res.certificate.certified() ? "certified" : "invalid Lyapunov function";
  return res;
}

// -------------------------------------------------------------- model I/O

inline json model_to_json(const LyapunovModel& m) {
  json weights = json::array(), biases = json::array();
  for (int l = 0; l < m.net.n_layers(); ++l) {
    json w = json::array();
    for (Eigen::Index i = 0; i < m.net.W[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < m.net.W[l].cols(); ++j) w.push_back(m.net.W[l](i, j));
    }
    weights.push_back(std::move(w));
    json b = json::array();
    for (Eigen::Index i = 0; i < m.net.b[l].size(); ++i) b.push_back(m.net.b[l](i));
    biases.push_back(std::move(b));
  }
  return json{{"format", kModelFormat},
              {"layer_sizes", m.net.sizes},
              {"activation", "tanh"},
              {"weights", weights},
              {"biases", biases},
              {"goal", detail::vec_to_json(m.goal)},
              {"input_scale", m.input_scale},
              {"output_scale", m.output_scale},
              {"config_hash", m.config_hash}};
}

inline LyapunovModel model_from_json(const json& j) {
  try {
    if (j.at("format").get<int>() != kModelFormat) fail(ErrorCode::invalid_argument, "unsupported model format");
    Mlp net = zero_mlp(j.at("layer_sizes").get<std::vector<int>>());
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (static_cast<int>(weights.size()) != net.n_layers() || static_cast<int>(biases.size()) != net.n_layers()) {
      fail(ErrorCode::invalid_argument, "model has the wrong number of layers");
    }
    for (int l = 0; l < net.n_layers(); ++l) {
      if (static_cast<Eigen::Index>(weights[l].size()) != net.W[l].size() ||
          static_cast<Eigen::Index>(biases[l].size()) != net.b[l].size()) {
        fail(ErrorCode::invalid_argument, "layer " + std::to_string(l) + " has the wrong shape");
      }
      Eigen::Index k = 0;
      for (Eigen::Index r = 0; r < net.W[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < net.W[l].cols(); ++c) net.W[l](r, c) = weights[l][k++].get<double>();
      }
      for (Eigen::Index r = 0; r < net.b[l].size(); ++r) net.b[l](r) = biases[l][r].get<double>();
    }
    if (!net.finite()) fail(ErrorCode::invalid_argument, "model parameters are not finite");
    const int dim = net.input_dim();
    auto m = make_model(std::move(net), detail::vec_from_json(j.at("goal"), dim, "goal"), j.at("input_scale").get<double>(),
                        j.at("output_scale").get<double>());
    m.config_hash = j.at("config_hash").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed model: ") + e.what());
  }
}

inline void save_model(const LyapunovModel& m, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(m).dump() + "\n");
}

inline LyapunovModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

inline json history_to_json(const std::vector<EpochRecord>& h) {
  json out = json::array();
  for (const auto& r : h) {
    out.push_back({{"epoch", r.epoch},
                   {"loss", r.loss.total},
                   {"alignment", r.loss.alignment},
                   {"positivity", r.loss.positivity},
                   {"decrease", r.loss.decrease},
                   {"positivity_violations", r.positivity_violations},
                   {"decrease_violations", r.decrease_violations},
                   {"lambda1", r.lambda1},
                   {"lambda2", r.lambda2}});
  }
  return out;
}

}  // namespace lyapnav
