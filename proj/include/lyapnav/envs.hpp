#pragma once

// Scenes: obstacles, robot hulls, goal and limits, plus their JSON format.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lyapnav/geometry.hpp"
#include "lyapnav/presets.hpp"

namespace lyapnav {

using json = nlohmann::json;

inline constexpr int kSceneFormat = 1;

struct Box {
  Vec lower;
  Vec upper;
};

struct Scene {
  std::string name;
  int dim = 2;
  std::vector<ConvexHull> obstacles;
  /// Link hulls in the link-local frame.
  std::vector<ConvexHull> robot_links;
  Vec goal;
  Vec pos_lower;
  Vec pos_upper;
  Vec vel_lower;
  Vec vel_upper;
  double d_safe = 0.1;
  /// Region sampled for demonstration starts; the position limits when unset.
  std::optional<Box> start_region;

  double diameter() const { return (pos_upper - pos_lower).norm(); }

  bool within_limits(const Vec& x, double tol = 1e-12) const {
    if (x.size() != dim) return false;
    for (int k = 0; k < dim; ++k) {
      if (x(k) < pos_lower(k) - tol || x(k) > pos_upper(k) + tol) return false;
    }
    return true;
  }
};

inline std::vector<ConvexHull> placed_robot(const Scene& scene, const Vec& x) {
  if (x.size() != scene.dim) fail(ErrorCode::invalid_argument, "state dimension does not match the scene");
  if (!scene.within_limits(x)) fail(ErrorCode::invalid_argument, "state lies outside the position limits");
  std::vector<ConvexHull> out;
  out.reserve(scene.robot_links.size());
  for (const auto& link : scene.robot_links) out.push_back(link.translated(Vec(x - link.reference())));
  return out;
}

/// Witness for every (link, obstacle) pair, link-major order.
inline std::vector<DistanceWitness> pair_witnesses(const Scene& scene, const Vec& x) {
  std::vector<DistanceWitness> out;
  for (const auto& link : placed_robot(scene, x)) {
    for (const auto& obs : scene.obstacles) out.push_back(signed_distance(link, obs));
  }
  return out;
}

inline double min_clearance(const Scene& scene, const Vec& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : pair_witnesses(scene, x)) best = std::min(best, w.signed_distance);
  return best;
}

namespace detail {

inline Vec vec_from_json(const json& j, int dim, const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != dim) {
    fail(ErrorCode::invalid_argument, std::string("field '") + what + "' must be an array of " +
                                          std::to_string(dim) + " numbers");
  }
  Vec v(dim);
  for (int k = 0; k < dim; ++k) v(k) = j.at(k).get<double>();
  return v;
}

inline json vec_to_json(const Vec& v) {
  json j = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

}  // namespace detail

inline ConvexHull hull_from_json(const json& j, int dim) {
  std::vector<Vec> verts;
  for (const auto& p : j.at("vertices")) verts.push_back(detail::vec_from_json(p, dim, "vertices"));
  std::optional<Vec> ref;
  if (j.contains("reference") && !j.at("reference").is_null()) {
    ref = detail::vec_from_json(j.at("reference"), dim, "reference");
  }
  return ConvexHull(std::move(verts), ref);
}

inline json hull_to_json(const ConvexHull& h, bool explicit_reference = false) {
  json verts = json::array();
  for (const auto& v : h.vertices()) verts.push_back(detail::vec_to_json(v));
  json j{{"vertices", verts}, {"reference", nullptr}};
  if (explicit_reference) j["reference"] = detail::vec_to_json(h.reference());
  return j;
}

/// Checks the scene invariants; throws invalid-argument on the first failure.
inline void validate(const Scene& s) {
  if (s.dim != 2 && s.dim != 3) fail(ErrorCode::invalid_argument, "scene dim must be 2 or 3");
  for (const Vec* v : {&s.goal, &s.pos_lower, &s.pos_upper, &s.vel_lower, &s.vel_upper}) {
    if (v->size() != s.dim) fail(ErrorCode::invalid_argument, "scene vector has the wrong dimension");
  }
  if (!((s.pos_upper - s.pos_lower).minCoeff() > 0.0)) fail(ErrorCode::invalid_argument, "pos_lower must be < pos_upper");
  if (!((s.vel_upper - s.vel_lower).minCoeff() > 0.0)) fail(ErrorCode::invalid_argument, "vel_lower must be < vel_upper");
  if (!(s.d_safe > 0.0)) fail(ErrorCode::invalid_argument, "d_safe must be positive");
  for (const auto& h : s.obstacles) {
    if (h.dim() != s.dim || h.degenerate()) fail(ErrorCode::invalid_argument, "obstacle hull invalid for scene");
  }
  for (const auto& h : s.robot_links) {
    if (h.dim() != s.dim || h.degenerate()) fail(ErrorCode::invalid_argument, "robot hull invalid for scene");
  }
  if (!s.within_limits(s.goal)) fail(ErrorCode::invalid_argument, "goal lies outside the position limits");
  if (min_clearance(s, s.goal) < s.d_safe) fail(ErrorCode::invalid_argument, "goal is closer than d_safe to an obstacle");
  if (s.start_region) {
    if (s.start_region->lower.size() != s.dim || s.start_region->upper.size() != s.dim ||
        !((s.start_region->upper - s.start_region->lower).minCoeff() >= 0.0)) {
      fail(ErrorCode::invalid_argument, "start_region is malformed");
    }
  }
}

inline Scene scene_from_json(const json& j) {
  try {
    if (j.value("format", 0) != kSceneFormat) fail(ErrorCode::invalid_argument, "unsupported scene format");
    Scene s;
    s.name = j.at("name").get<std::string>();
    s.dim = j.at("dim").get<int>();
    if (s.dim != 2 && s.dim != 3) fail(ErrorCode::invalid_argument, "scene dim must be 2 or 3");
    s.goal = detail::vec_from_json(j.at("goal"), s.dim, "goal");
    s.pos_lower = detail::vec_from_json(j.at("pos_lower"), s.dim, "pos_lower");
    s.pos_upper = detail::vec_from_json(j.at("pos_upper"), s.dim, "pos_upper");
    s.vel_lower = detail::vec_from_json(j.at("vel_lower"), s.dim, "vel_lower");
    s.vel_upper = detail::vec_from_json(j.at("vel_upper"), s.dim, "vel_upper");
    s.d_safe = j.at("d_safe").get<double>();
    for (const auto& h : j.at("robot_links")) s.robot_links.push_back(hull_from_json(h, s.dim));
    for (const auto& h : j.at("obstacles")) s.obstacles.push_back(hull_from_json(h, s.dim));
    if (j.contains("start_region") && !j.at("start_region").is_null()) {
      const auto& r = j.at("start_region");
      s.start_region = Box{detail::vec_from_json(r.at("lower"), s.dim, "start_region.lower"),
                           detail::vec_from_json(r.at("upper"), s.dim, "start_region.upper")};
    }
    validate(s);
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed scene: ") + e.what());
  }
}

inline json scene_to_json(const Scene& s) {
  json j;
  j["format"] = kSceneFormat;
  j["name"] = s.name;
  j["dim"] = s.dim;
  j["goal"] = detail::vec_to_json(s.goal);
  j["pos_lower"] = detail::vec_to_json(s.pos_lower);
  j["pos_upper"] = detail::vec_to_json(s.pos_upper);
  j["vel_lower"] = detail::vec_to_json(s.vel_lower);
  j["vel_upper"] = detail::vec_to_json(s.vel_upper);
  j["d_safe"] = s.d_safe;
  j["robot_links"] = json::array();
  for (const auto& h : s.robot_links) j["robot_links"].push_back(hull_to_json(h, true));
  j["obstacles"] = json::array();
  for (const auto& h : s.obstacles) j["obstacles"].push_back(hull_to_json(h, true));
  if (s.start_region) {
    j["start_region"] = {{"lower", detail::vec_to_json(s.start_region->lower)},
                         {"upper", detail::vec_to_json(s.start_region->upper)}};
  }
  return j;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_argument, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

inline Scene load_scene(const std::filesystem::path& path) { return scene_from_json(read_json_file(path)); }

inline void save_scene(const Scene& s, const std::filesystem::path& path) {
  write_text_file(path, scene_to_json(s).dump(2) + "\n");
}

inline Scene builtin_scene(const std::string& name) {
  const auto text = preset_text("scenes", name);
  if (!text) fail(ErrorCode::not_found, "unknown scene preset '" + name + "'");
  return scene_from_json(json::parse(*text));
}

/// A --scene argument: an existing file path, otherwise a preset name.
inline Scene resolve_scene(const std::string& path_or_name) {
  if (std::filesystem::exists(path_or_name)) return load_scene(path_or_name);
  return builtin_scene(path_or_name);
}

}  // namespace lyapnav
