#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "lyapnav/policy.hpp"

namespace lyapnav {
namespace {

Scene open_scene() {
  Scene s;
  s.name = "open";
  s.dim = 2;
  s.goal = make_vec({0, 0});
  s.pos_lower = make_vec({-5, -5});
  s.pos_upper = make_vec({5, 5});
  s.vel_lower = make_vec({-1, -1});
  s.vel_upper = make_vec({1, 1});
  s.d_safe = 0.05;
  s.robot_links.push_back(make_box(make_vec({-0.1, -0.1}), make_vec({0.1, 0.1})));
  return s;
}

Scene wall_scene() {
  Scene s = open_scene();
  s.obstacles.push_back(make_box(make_vec({1.0, -1.0}), make_vec({1.5, 1.0})));
  return s;
}

Vec random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  for (int k = 0; k < dim; ++k) v(k) = n(rng);
  return v.normalized();
}

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

// ------------------------------------------------------------------ actions

TEST(Action, ZeroModelPointsDownTheNorm) {
  const auto m = make_model(zero_mlp({2, 3, 1}), make_vec({0, 0}));
  const Vec u = nominal_action(m, make_vec({3, 4}), 1.0);
  EXPECT_NEAR(u(0), -0.6, 1e-15);
  EXPECT_NEAR(u(1), -0.8, 1e-15);
}

TEST(Action, MagnitudeAndDescentDirection) {
  const auto m = make_model(init_mlp({2, 16, 16, 1}, 3), make_vec({0.5, -0.5}), 0.6, 1.4);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int i = 0; i < 50; ++i) {
    const Vec x = make_vec({u(rng), u(rng)});
    const Vec a = nominal_action(m, x, 0.35);
    EXPECT_NEAR(a.norm(), 0.35, 1e-9);
    EXPECT_LT(a.dot(lyapunov_gradient(m, x)), 0.0);
  }
}

TEST(Action, VanishingGradientIsDegenerate) {
  // phi(z) = -cosh(1)^2 tanh(z_x): dV/dx = 0 at (1, 0).
  Mlp net = zero_mlp({2, 1, 1});
  net.W[0](0, 0) = 1.0;
  net.W[1](0, 0) = -std::cosh(1.0) * std::cosh(1.0);
  const auto m = make_model(net, make_vec({0, 0}));
  try {
    nominal_action(m, make_vec({1, 0}), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_gradient);
  }
  Scene s = open_scene();
  PolicyConfig cfg = default_policy_config(s);
  const auto r = rollout(s, ActionSource{&m}, make_vec({1, 0}), cfg);
  EXPECT_EQ(r.status, "degenerate");
  EXPECT_EQ(r.states.size(), 1u);
}

TEST(Baseline, PointsAtGoal) {
  const Vec a = quadratic_baseline_action(make_vec({1, 0}), make_vec({0, 0}), 2.0);
  EXPECT_EQ(a, make_vec({-2, 0}));
  const Vec x = make_vec({-1.3, 2.2}), g = make_vec({0.4, 0.1});
  EXPECT_NEAR(quadratic_baseline_action(x, g, 0.7).dot(g - x), 0.7 * (g - x).norm(), 1e-12);
  try {
    quadratic_baseline_action(g, g, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::at_goal);
  }
}

// -------------------------------------------------------------------- basis

TEST(Basis, TwoDimensionalRotation) {
  const Mat E = basis_vectors(make_vec({1, 0}), 2);
  EXPECT_EQ(Vec(E.col(1)), make_vec({0, 1}));
  const Mat F = basis_vectors(make_vec({0.6, 0.8}), 2);
  EXPECT_NEAR(F(0, 1), -0.8, 1e-15);
  EXPECT_NEAR(F(1, 1), 0.6, 1e-15);
}

TEST(Basis, PoleConvention) {
  for (double sign : {1.0, -1.0}) {
    const Mat E = basis_vectors(make_vec({0, 0, sign}), 3);
    EXPECT_EQ(Vec(E.col(1)), make_vec({1, 0, 0}));
    EXPECT_EQ(Vec(E.col(2)), make_vec({0, 1, 0}));
  }
}

TEST(Basis, SphericalUnitVectors) {
  const double theta = 1.1, phi = -2.3;
  const Vec n = make_vec({std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
  const Mat E = basis_vectors(n, 3);
  const Vec t_theta = make_vec({std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), -std::sin(theta)});
  const Vec t_phi = make_vec({-std::sin(phi), std::cos(phi), 0});
  EXPECT_LT((Vec(E.col(1)) - t_theta).norm(), 1e-12);
  EXPECT_LT((Vec(E.col(2)) - t_phi).norm(), 1e-12);
}

TEST(Basis, OrthonormalForRandomNormals) {
  std::mt19937_64 rng(4);
  for (int dim : {2, 3}) {
    for (int i = 0; i < 200; ++i) {
      const Mat E = basis_vectors(random_unit(rng, dim), dim);
      EXPECT_LT(max_abs(E.transpose() * E - Mat::Identity(dim, dim)), 1e-12);
      EXPECT_GT(std::abs(E.determinant()), 1e-9);
    }
  }
}

TEST(Basis, RejectsNonUnitNormal) {
  try {
    basis_vectors(make_vec({1, 1}), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

// --------------------------------------------------------------- modulation

TEST(Modulation, EigenvaluesFollowGamma) {
  const auto c1 = modulation_from(1.0, make_vec({0, 1}));
  EXPECT_EQ(c1.eigen(0), 0.0);
  EXPECT_EQ(c1.eigen(1), 2.0);
  const auto c3 = modulation_from(3.0, make_vec({0, 1}));
  EXPECT_NEAR(c3.eigen(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(c3.eigen(1), 4.0 / 3.0, 1e-15);
}

TEST(Modulation, MatrixIsEDEinverse) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> g(1.0, 50.0);
  for (int dim : {2, 3}) {
    for (int i = 0; i < 100; ++i) {
      const auto c = modulation_from(g(rng), random_unit(rng, dim));
      const Mat want = c.basis * c.eigen.asDiagonal() * c.basis.inverse();
      EXPECT_LT(max_abs(c.modulation - want), 1e-9);
      EXPECT_GT(std::abs(c.modulation.determinant()), 0.0);
      for (int k = 0; k < dim; ++k) EXPECT_NEAR(c.basis.col(k).norm(), 1.0, 1e-12);
    }
  }
}

TEST(Modulation, FarFieldNearIdentity) {
  std::mt19937_64 rng(7);
  for (int dim : {2, 3}) {
    const auto c = modulation_from(1e3, random_unit(rng, dim));
    EXPECT_LE(max_abs(c.modulation - Mat::Identity(dim, dim)), 2.0 / 1e3);
  }
}

TEST(Modulation, TouchingBoxesGiveGammaOne) {
  const auto robot = make_box(make_vec({-0.5, -0.5}), make_vec({0.5, 0.5}));
  const auto obstacle = make_box(make_vec({0.5, -1.0}), make_vec({1.5, 1.0}));
  const auto c = modulation_matrix(robot, obstacle);
  EXPECT_NEAR(c.gamma, 1.0, 1e-6);
  EXPECT_NEAR(c.eigen(0), 0.0, 1e-6);
  EXPECT_NEAR(c.eigen(1), 2.0, 1e-6);
  // Normal points from the obstacle to the robot.
  EXPECT_LT((c.normal - make_vec({-1, 0})).norm(), 1e-9);
}

TEST(Modulation, ContactSkinMovesTheBlockingSurfaceOut) {
  const auto robot = make_box(make_vec({-0.5, -0.5}), make_vec({0.5, 0.5}));
  const auto obstacle = make_box(make_vec({0.5, -1.0}), make_vec({1.5, 1.0}));
  const auto c = modulation_matrix(robot, obstacle, 1e-3);
  EXPECT_LT(c.gamma, 1.0);
  EXPECT_LT(c.eigen(0), 0.0);  // motion into the obstacle is reversed
}

TEST(Modulation, FarPairNearIdentity) {
  const auto robot = make_box(make_vec({-0.1, -0.1}), make_vec({0.1, 0.1}));
  const auto obstacle = make_box(make_vec({300.0, -0.1}), make_vec({300.2, 0.1}));
  const auto c = modulation_matrix(robot, obstacle);
  ASSERT_GE(c.gamma, 100.0);
  EXPECT_LE(max_abs(c.modulation - Mat::Identity(2, 2)), 2.0 / c.gamma);
}

TEST(Modulate, EmptyContextsIsIdentity) {
  const Vec v = make_vec({0.3, -0.2});
  EXPECT_EQ(modulate(v, {}), v);
}

TEST(Modulate, TouchingBlocksNormalAndDoublesTangent) {
  const Vec r = make_vec({0.6, 0.8});
  const auto c = modulation_from(1.0, r);
  const Vec e = c.tangents[0];
  const Vec out = modulate(Vec(-2.0 * r + 0.5 * e), {c});
  EXPECT_NEAR(out.dot(r), 0.0, 1e-12);
  EXPECT_NEAR(out.dot(e), 1.0, 1e-12);
}

TEST(Modulate, TangentAtGammaTwo) {
  const auto c = modulation_from(2.0, make_vec({1, 0}));
  const Vec out = modulate(c.tangents[0], {c});
  EXPECT_LT((out - 1.5 * c.tangents[0]).norm(), 1e-12);
}

TEST(Modulate, ImpenetrableAtContact) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> g(1.0, 5.0);
  for (int dim : {2, 3}) {
    for (int i = 0; i < 300; ++i) {
      const auto touching = modulation_from(1.0, random_unit(rng, dim));
      const auto other = modulation_from(1.0 + g(rng), random_unit(rng, dim));
      const Vec v = 3.0 * random_unit(rng, dim);
      EXPECT_LE(modulate(v, {touching}).dot(-touching.normal), 1e-9);
      EXPECT_LE(modulate(v, {touching, other}).dot(-touching.normal), 1e-9);
      EXPECT_LE(modulate(v, {other, touching}).dot(-touching.normal), 1e-9);
    }
  }
}

TEST(Modulate, NearestActsLast) {
  const auto near = modulation_from(1.2, make_vec({1, 0}));
  const auto far = modulation_from(4.0, make_vec({0.6, 0.8}));
  const Vec v = make_vec({-1, 0.3});
  const Vec want = near.modulation * (far.modulation * v);
  EXPECT_LT((modulate(v, {near, far}) - want).norm(), 1e-15);
  EXPECT_LT((modulate(v, {far, near}) - want).norm(), 1e-15);
}

// ----------------------------------------------------------------- rollouts

TEST(Rollout, StartAtGoal) {
  const Scene s = open_scene();
  const auto r = rollout(s, ActionSource{}, s.goal, default_policy_config(s));
  EXPECT_EQ(r.status, "reached");
  EXPECT_EQ(r.steps, 0);
  ASSERT_EQ(r.states.size(), 1u);
  EXPECT_EQ(r.v_trace[0], 0.0);
}

TEST(Rollout, BaselineStraightLineInOpenScene) {
  const Scene s = open_scene();
  const PolicyConfig cfg = default_policy_config(s);
  const Vec x0 = make_vec({3, -2});
  const auto r = rollout(s, ActionSource{}, x0, cfg);
  EXPECT_EQ(r.status, "reached");
  EXPECT_LE((r.states.back() - s.goal).norm(), cfg.goal_tolerance);
  const Vec dir = (s.goal - x0).normalized();
  for (std::size_t i = 1; i < r.states.size(); ++i) {
    const Vec off = r.states[i] - x0;
    EXPECT_LT((off - off.dot(dir) * dir).norm(), 1e-9);
    EXPECT_LT((r.states[i] - s.goal).norm(), (r.states[i - 1] - s.goal).norm());
    EXPECT_LE((r.states[i] - r.states[i - 1]).norm(), cfg.dt * cfg.xdot_max * (1 + 1e-12));
  }
  EXPECT_EQ(r.clip_events, 0);
  EXPECT_EQ(r.v_trace.size(), r.states.size());
  EXPECT_EQ(r.min_sd_trace.size(), r.states.size());
}

TEST(Rollout, StepSpeedCappedAfterModulation) {
  const Scene s = wall_scene();
  const PolicyConfig cfg = default_policy_config(s);
  const auto r = rollout(s, ActionSource{}, make_vec({3, 0.5}), cfg);
  for (std::size_t i = 1; i < r.states.size(); ++i) {
    EXPECT_LE((r.states[i] - r.states[i - 1]).norm(), cfg.dt * cfg.xdot_max * (1 + 1e-12));
  }
}

TEST(Rollout, ModulationKeepsBaselineOutOfTheWall) {
  const Scene s = wall_scene();
  const PolicyConfig cfg = default_policy_config(s);
  for (double y : {-0.9, -0.3, 0.0, 0.4, 0.8}) {
    const auto r = rollout(s, ActionSource{}, make_vec({3, y}), cfg);
    EXPECT_GE(r.min_sd(), 0.0) << "start y = " << y;
  }
  PolicyConfig off = cfg;
  off.modulation_enabled = false;
  EXPECT_LT(rollout(s, ActionSource{}, make_vec({3, 0.4}), off).min_sd(), 0.0);
}

TEST(Perturb, NoPerturbationsIsBitwiseRollout) {
  const Scene s = wall_scene();
  const auto m = make_model(init_mlp({2, 8, 1}, 1), s.goal, 0.3, 2.0);
  const PolicyConfig cfg = default_policy_config(s);
  const auto a = rollout(s, ActionSource{&m}, make_vec({3, 0.5}), cfg);
  const auto b = perturb_rollout(s, ActionSource{&m}, make_vec({3, 0.5}), cfg, {});
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.v_trace, b.v_trace);
  EXPECT_EQ(a.status, b.status);
}

TEST(Perturb, KickIsApplied) {
  const Scene s = open_scene();
  const PolicyConfig cfg = default_policy_config(s);
  const auto r = perturb_rollout(s, ActionSource{}, make_vec({3, 0}), cfg, {{5, make_vec({0, 1})}});
  const auto plain = rollout(s, ActionSource{}, make_vec({3, 0}), cfg);
  EXPECT_EQ(r.states[4], plain.states[4]);
  EXPECT_LT((r.states[5] - plain.states[5] - make_vec({0, 1})).norm(), 1e-15);
  EXPECT_EQ(r.status, "reached");
}

TEST(Perturb, KickOutsideLimitsIsInvalid) {
  const Scene s = open_scene();
  try {
    perturb_rollout(s, ActionSource{}, make_vec({3, 0}), default_policy_config(s), {{2, make_vec({0, 10})}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

TEST(Config, Validation) {
  const Scene s = open_scene();
  PolicyConfig c = default_policy_config(s);
  EXPECT_NEAR(c.goal_tolerance, 0.01 * s.diameter(), 1e-15);
  EXPECT_NO_THROW(validate(c, s));
  c.goal_tolerance = 2 * s.diameter();
  EXPECT_THROW(validate(c, s), Error);
  c = default_policy_config(s);
  c.max_steps = 0;
  EXPECT_THROW(validate(c, s), Error);
}

// ------------------------------------------------------------------ exports

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

TEST(Export, FieldCsvHasOneRowPerGridPoint) {
  const Scene s = wall_scene();
  const std::string csv = field_csv(s, ActionSource{}, {40, 40}, default_policy_config(s));
  EXPECT_EQ(count_lines(csv), 1601);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x,y,V,min_sd,u_x,u_y,m_x,m_y,valid");
  EXPECT_THROW(field_csv(s, ActionSource{}, {40}, default_policy_config(s)), Error);
}

TEST(Export, RolloutCsvColumns) {
  const Scene s = open_scene();
  const auto r = rollout(s, ActionSource{}, make_vec({1, 0}), default_policy_config(s));
  const std::string csv = rollouts_csv({r, r}, 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "rollout,step,x,y,V,min_sd");
  EXPECT_EQ(count_lines(csv), 1 + 2 * static_cast<int>(r.states.size()));
}

}  // namespace
}  // namespace lyapnav
