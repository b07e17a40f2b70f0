#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "lyapnav/demogen.hpp"

namespace lyapnav {
namespace {

Scene open_scene(double half = 5.0) {
  Scene s;
  s.name = "open";
  s.dim = 2;
  s.goal = make_vec({0, 0});
  s.pos_lower = make_vec({-half, -half});
  s.pos_upper = make_vec({half, half});
  s.vel_lower = make_vec({-2, -2});
  s.vel_upper = make_vec({2, 2});
  s.d_safe = 0.05;
  s.robot_links.push_back(make_box(make_vec({-0.1, -0.1}), make_vec({0.1, 0.1})));
  return s;
}

// One wall between the start side (x > 1) and the goal at the origin.
Scene wall_scene() {
  Scene s = open_scene(3.0);
  s.name = "wall";
  s.obstacles.push_back(make_box(make_vec({1.0, -1.5}), make_vec({1.4, 1.5})));
  return s;
}

TEST(GridStarts, OpenSquareDropsOnlyTheGoal) {
  const Scene s = open_scene();
  const auto pts = grid_starts(s, {5, 5});
  // 5x5 over [-5,5]^2 hits (0,0) exactly once.
  EXPECT_EQ(pts.size(), 24u);
  for (const auto& p : pts) EXPECT_GT((p - s.goal).norm(), 0.1);
}

TEST(GridStarts, FirstAxisVariesFastest) {
  const auto pts = grid_starts(open_scene(), {5, 5});
  EXPECT_EQ(pts[0], make_vec({-5, -5}));
  EXPECT_EQ(pts[1], make_vec({-2.5, -5}));
}

TEST(GridStarts, ExcludesBlockedPoints) {
  Scene s = open_scene();
  s.obstacles.push_back(make_box(make_vec({2, 2}), make_vec({3, 3})));
  const auto pts = grid_starts(s, {5, 5});
  EXPECT_EQ(pts.size(), 23u);  // (2.5, 2.5) is inside the box
  for (const auto& p : pts) EXPECT_GE(min_clearance(s, p), s.d_safe);
}

TEST(GridStarts, RejectsCoarseGrid) {
  EXPECT_THROW(grid_starts(open_scene(), {1, 5}), Error);
  EXPECT_THROW(grid_starts(open_scene(), {5}), Error);
}

TEST(GridStarts, HallwayPresetGives75) { EXPECT_EQ(grid_starts(builtin_scene("hallway"), {11, 9}).size(), 75u); }

TEST(Polyline, ResampleIsEquallySpaced) {
  const std::vector<Vec> pts{make_vec({0, 0}), make_vec({3, 0}), make_vec({3, 1})};
  const auto r = resample_polyline(pts, 8);
  ASSERT_EQ(r.size(), 9u);
  EXPECT_NEAR(polyline_length(pts), 4.0, 1e-15);
  for (std::size_t i = 0; i + 1 < r.size(); ++i) EXPECT_NEAR((r[i + 1] - r[i]).norm(), 0.5, 1e-12);
  EXPECT_EQ(r.front(), pts.front());
  EXPECT_EQ(r.back(), pts.back());
}

TEST(Optimize, StraightLineWithoutObstacles) {
  const Scene s = open_scene();
  const auto d = optimize_trajectory(s, make_vec({1, 0}), SolverConfig{});
  EXPECT_NEAR(polyline_length(d.positions), 1.0, 1e-3);
  for (const auto& p : d.positions) EXPECT_NEAR(p(1), 0.0, 1e-4);
  EXPECT_EQ(d.positions.size(), 51u);
}

TEST(Optimize, StartAtGoalIsSinglePoint) {
  const Scene s = open_scene();
  const auto d = optimize_trajectory(s, s.goal, SolverConfig{});
  ASSERT_EQ(d.positions.size(), 1u);
  EXPECT_EQ(d.steps(), 0);
  EXPECT_DOUBLE_EQ(polyline_length(d.positions), 0.0);
}

TEST(Optimize, BehindWallKeepsClearance) {
  const Scene s = wall_scene();
  const SolverConfig cfg;
  const auto d = optimize_trajectory(s, make_vec({2.2, 0.0}), cfg);
  EXPECT_EQ(d.positions.front(), make_vec({2.2, 0.0}));
  EXPECT_EQ(d.positions.back(), s.goal);
  for (const auto& p : d.positions) EXPECT_GE(min_clearance(s, p), s.d_safe - cfg.clearance_tol);
  // The path has to go around the wall, so it is longer than the straight line.
  EXPECT_GT(polyline_length(d.positions), 2.2 + 0.5);
  // Dynamics consistency and velocity limits.
  ASSERT_EQ(d.velocities.size() + 1, d.positions.size());
  for (int n = 0; n < d.steps(); ++n) {
    EXPECT_LT((d.positions[n] + d.dt * d.velocities[n] - d.positions[n + 1]).norm(), 1e-12);
    for (int k = 0; k < 2; ++k) {
      EXPECT_LE(d.velocities[n](k), s.vel_upper(k) + 1e-6);
      EXPECT_GE(d.velocities[n](k), s.vel_lower(k) - 1e-6);
    }
  }
}

TEST(Optimize, ObjectiveNeverIncreases) {
  const auto d = optimize_trajectory(wall_scene(), make_vec({2.2, 0.5}), SolverConfig{});
  ASSERT_GT(d.objective_history.size(), 2u);
  for (std::size_t i = 1; i < d.objective_history.size(); ++i) {
    EXPECT_LE(d.objective_history[i], d.objective_history[i - 1]);
  }
}

TEST(Optimize, RejectsBadStarts) {
  const Scene s = wall_scene();
  EXPECT_THROW(optimize_trajectory(s, make_vec({1.2, 0.0}), SolverConfig{}), Error);  // inside the wall
  EXPECT_THROW(optimize_trajectory(s, make_vec({9.0, 0.0}), SolverConfig{}), Error);  // outside limits
}

TEST(Dataset, EmptyStartsIsAnError) { EXPECT_THROW(generate_dataset(open_scene(), {}, SolverConfig{}, 1), Error); }

TEST(Dataset, InfeasibleStartsAreReported) {
  const Scene s = wall_scene();
  const auto ds = generate_dataset(s, {make_vec({2.2, 0.0}), make_vec({1.2, 0.0}), make_vec({-2, 2})}, SolverConfig{}, 3);
  EXPECT_EQ(ds.demos.size(), 2u);
  ASSERT_EQ(ds.infeasible.size(), 1u);
  EXPECT_EQ(ds.infeasible[0].index, 1);
  EXPECT_EQ(ds.demos[1].start_index, 2);
}

TEST(Dataset, AllInfeasibleIsDatasetEmpty) {
  try {
    generate_dataset(wall_scene(), {make_vec({1.2, 0.0})}, SolverConfig{}, 3);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dataset_empty);
  }
}

TEST(Dataset, DeterministicAndRoundTrips) {
  const Scene s = wall_scene();
  const auto starts = grid_starts(s, {4, 4});
  const auto a = generate_dataset(s, starts, SolverConfig{}, 11);
  const auto b = generate_dataset(s, starts, SolverConfig{}, 11);
  const std::string text = dataset_to_jsonl(a);
  EXPECT_EQ(text, dataset_to_jsonl(b));
  std::istringstream in(text);
  const auto back = dataset_from_jsonl(in, 2);
  EXPECT_EQ(dataset_to_jsonl(back), text);
  ASSERT_EQ(back.demos.size(), a.demos.size());
  EXPECT_EQ(back.demos[0].positions, a.demos[0].positions);
}

TEST(Split, FractionAndDeterminism) {
  const auto a = split_flags(75, 0.2, 7);
  EXPECT_EQ(std::count(a.begin(), a.end(), true), 15);
  EXPECT_EQ(a, split_flags(75, 0.2, 7));
  EXPECT_NE(a, split_flags(75, 0.2, 8));
  EXPECT_THROW(split_flags(10, 1.0, 7), Error);
}

TEST(DatasetIo, RejectsMissingHeader) {
  std::istringstream in("{\"kind\":\"demo\"}\n");
  EXPECT_THROW(dataset_from_jsonl(in, 2), Error);
}

}  // namespace
}  // namespace lyapnav
