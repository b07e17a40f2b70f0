#pragma once

// Convex hulls, GJK/EPA signed distance and the convex-pair Gamma function.
//
// Everything here works in 2 or 3 dimensions with the dimension chosen at
// runtime. Points use a fixed-capacity Eigen vector so that the hot GJK loop
// never touches the heap.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lyapnav/error.hpp"

namespace lyapnav {

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

inline Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

struct GjkOptions {
  int max_iterations = 128;
  double tolerance = 1e-9;
};

struct EpaOptions {
  int max_iterations = 256;
  double tolerance = 1e-9;
};

namespace detail {

struct SupportPoint {
  Vec w;  // a - b
  Vec a;
  Vec b;
};

struct SimplexClosest {
  Vec v;
  std::array<double, 4> lambda{};
  unsigned mask = 0;
};

}  // namespace detail

/// Final GJK simplex; at most dim + 1 Minkowski-difference support points.
struct Simplex {
  std::array<detail::SupportPoint, 4> points;
  int size = 0;
  int dim = 0;
};

struct DistanceWitness {
  double signed_distance = 0.0;
  Vec point_on_a;
  Vec point_on_b;
  /// Unit direction in which translating A increases the signed distance
  /// (points from B towards A).
  Vec normal;
};

class ConvexHull;

namespace detail {

inline double point_hull_distance(const std::vector<Vec>& vertices, const Vec& p);

inline int affine_rank(const std::vector<Vec>& pts, int dim) {
  if (pts.empty()) return -1;
  Eigen::MatrixXd q(dim, static_cast<Eigen::Index>(pts.size()) - 1);
  double scale = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    q.col(static_cast<Eigen::Index>(i) - 1) = pts[i] - pts[0];
    scale = std::max(scale, (pts[i] - pts[0]).norm());
  }
  if (q.cols() == 0 || scale == 0.0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  const auto& s = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-9 * scale) ++rank;
  }
  return rank;
}

}  // namespace detail

/// Convex hull of a vertex set, with a reference point used by Gamma.
class ConvexHull {
 public:
  ConvexHull() = default;

  explicit ConvexHull(std::vector<Vec> vertices, std::optional<Vec> reference = std::nullopt)
      : vertices_(std::move(vertices)) {
    if (vertices_.empty()) fail(ErrorCode::invalid_argument, "convex hull needs at least one vertex");
    dim_ = static_cast<int>(vertices_.front().size());
    if (dim_ != 2 && dim_ != 3) fail(ErrorCode::invalid_argument, "convex hull dimension must be 2 or 3");
    for (const auto& v : vertices_) {
      if (v.size() != dim_) fail(ErrorCode::invalid_argument, "convex hull vertices have mixed dimensions");
      if (!v.allFinite()) fail(ErrorCode::invalid_argument, "convex hull vertex is not finite");
    }
    degenerate_ = static_cast<int>(vertices_.size()) < dim_ + 1 ||
                  detail::affine_rank(vertices_, dim_) < dim_;
    if (reference) {
      if (reference->size() != dim_) fail(ErrorCode::invalid_argument, "reference point dimension mismatch");
      reference_ = *reference;
      if (!degenerate_) {
        double scale = 1.0;
        for (const auto& v : vertices_) scale = std::max(scale, v.cwiseAbs().maxCoeff());
        if (detail::point_hull_distance(vertices_, reference_) > 1e-9 * scale) {
          fail(ErrorCode::invalid_argument, "reference point lies outside the hull");
        }
      }
    } else {
      reference_ = centroid();
    }
  }

  int dim() const noexcept { return dim_; }
  const std::vector<Vec>& vertices() const noexcept { return vertices_; }
  const Vec& reference() const noexcept { return reference_; }
  bool degenerate() const noexcept { return degenerate_; }

  Vec centroid() const {
    Vec c = Vec::Zero(dim_);
    for (const auto& v : vertices_) c += v;
    return c / static_cast<double>(vertices_.size());
  }

  /// Vertex maximizing dot(vertex, direction); ties go to the lowest index.
  const Vec& support(const Vec& direction) const {
    if (direction.size() != dim_) fail(ErrorCode::invalid_argument, "support direction dimension mismatch");
    if (!(direction.squaredNorm() > 0.0)) fail(ErrorCode::invalid_argument, "support direction must be nonzero");
    return support_unchecked(direction);
  }

  const Vec& support_unchecked(const Vec& direction) const noexcept {
    std::size_t best = 0;
    double best_dot = vertices_[0].dot(direction);
    for (std::size_t i = 1; i < vertices_.size(); ++i) {
      const double d = vertices_[i].dot(direction);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return vertices_[best];
  }

  ConvexHull translated(const Vec& offset) const {
    if (offset.size() != dim_) fail(ErrorCode::invalid_argument, "translation dimension mismatch");
    ConvexHull out = *this;
    for (auto& v : out.vertices_) v += offset;
    out.reference_ += offset;
    return out;
  }

 private:
  std::vector<Vec> vertices_;
  Vec reference_;
  int dim_ = 0;
  bool degenerate_ = true;
};

namespace detail {

inline double det_tolerance(double product) { return 1e-12 * product; }

/// Closest point to the origin on conv(simplex) by enumerating every face.
/// The minimum-norm projection with nonnegative barycentric weights is the
/// answer; smaller faces win ties so the simplex shrinks on boundaries.
inline SimplexClosest closest_on_simplex(const Simplex& s) {
  SimplexClosest best;
  double best_norm = std::numeric_limits<double>::infinity();
  const int k = s.size;
  for (int m = 1; m <= k; ++m) {
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
      if (std::popcount(mask) != m) continue;
      std::array<int, 4> idx{};
      int c = 0;
      for (int i = 0; i < k; ++i) {
        if (mask & (1u << i)) idx[c++] = i;
      }
      const Vec& p0 = s.points[idx[0]].w;
      std::array<double, 4> lam{};
      Vec v;
      if (m == 1) {
        v = p0;
        lam[0] = 1.0;
      } else {
        const int q = m - 1;
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3> g(q, q);
        Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1> rhs(q);
        std::array<Vec, 3> cols;
        for (int i = 0; i < q; ++i) cols[i] = s.points[idx[i + 1]].w - p0;
        double diag_prod = 1.0;
        for (int i = 0; i < q; ++i) {
          for (int j = 0; j < q; ++j) g(i, j) = cols[i].dot(cols[j]);
          rhs(i) = -cols[i].dot(p0);
          diag_prod *= g(i, i);
        }
        const double det = g.determinant();
        if (!(diag_prod > 0.0) || std::abs(det) <= det_tolerance(diag_prod)) continue;
        const Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1> mu = g.partialPivLu().solve(rhs);
        double sum = 0.0;
        bool inside = true;
        for (int i = 0; i < q; ++i) {
          if (mu(i) < -1e-12) inside = false;
          sum += mu(i);
        }
        if (1.0 - sum < -1e-12) inside = false;
        if (!inside) continue;
        v = p0;
        for (int i = 0; i < q; ++i) {
          v += mu(i) * cols[i];
          lam[i + 1] = std::max(mu(i), 0.0);
        }
        lam[0] = std::max(1.0 - sum, 0.0);
      }
      const double n = v.squaredNorm();
      if (n < best_norm) {
        best_norm = n;
        best.v = v;
        best.mask = mask;
        best.lambda = {};
        for (int i = 0; i < m; ++i) best.lambda[idx[i]] = lam[i];
      }
    }
    // A smaller face already touching the origin cannot be beaten.
    if (best_norm == 0.0) break;
  }
  return best;
}

inline void reduce_simplex(Simplex& s, SimplexClosest& closest) {
  Simplex out;
  out.dim = s.dim;
  std::array<double, 4> lam{};
  for (int i = 0; i < s.size; ++i) {
    if (closest.mask & (1u << i)) {
      lam[out.size] = closest.lambda[i];
      out.points[out.size++] = s.points[i];
    }
  }
  closest.lambda = lam;
  closest.mask = (1u << out.size) - 1u;
  s = out;
}

struct GjkOutcome {
  bool intersecting = false;
  double distance = 0.0;
  Vec point_on_a;
  Vec point_on_b;
  /// Unit direction of the closest Minkowski point when separated.
  Vec normal;
  Simplex simplex;
};

/// GJK over arbitrary support mappings of A and B.
template <class SupportA, class SupportB>
GjkOutcome gjk_core(const SupportA& support_a, const SupportB& support_b, const Vec& seed_direction, int dim,
                    const GjkOptions& opt) {
  auto support = [&](const Vec& dir) {
    SupportPoint sp;
    sp.a = support_a(dir);
    sp.b = support_b(Vec(-dir));
    sp.w = sp.a - sp.b;
    return sp;
  };

  Simplex s;
  s.dim = dim;
  Vec dir = seed_direction;
  if (!(dir.squaredNorm() > 0.0)) dir = Vec::Unit(dim, 0);
  s.points[0] = support(dir);
  s.size = 1;
  SimplexClosest closest;
  closest.v = s.points[0].w;
  closest.lambda = {1.0, 0.0, 0.0, 0.0};
  closest.mask = 1;

  auto finish = [&](bool intersecting) {
    GjkOutcome out;
    out.intersecting = intersecting;
    out.simplex = s;
    out.point_on_a = Vec::Zero(dim);
    out.point_on_b = Vec::Zero(dim);
    for (int i = 0; i < s.size; ++i) {
      out.point_on_a += closest.lambda[i] * s.points[i].a;
      out.point_on_b += closest.lambda[i] * s.points[i].b;
    }
    out.distance = intersecting ? 0.0 : closest.v.norm();
    out.normal = intersecting ? Vec(Vec::Zero(dim)) : Vec(closest.v / out.distance);
    return out;
  };

  constexpr double kContactNorm = 1e-12;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    const Vec v = closest.v;
    const double vv = v.squaredNorm();
    if (vv <= kContactNorm * kContactNorm) return finish(true);

    SupportPoint w = support(Vec(-v));
    if (vv - v.dot(w.w) <= opt.tolerance * vv) return finish(false);
    for (int i = 0; i < s.size; ++i) {
      if ((s.points[i].w - w.w).squaredNorm() <= 1e-24 * (1.0 + vv)) return finish(false);
    }

    s.points[s.size++] = std::move(w);
    SimplexClosest next = closest_on_simplex(s);
    if (next.mask == 0) return finish(false);
    reduce_simplex(s, next);
    const double next_vv = next.v.squaredNorm();
    if (s.size == dim + 1) {
      closest = next;
      return finish(true);
    }
    if (next_vv >= vv * (1.0 - 1e-14)) {
      // No further progress is possible in floating point.
      if (next_vv < vv) closest = next;
      return finish(false);
    }
    closest = next;
  }
  throw NumericalFailure("GJK iteration cap exceeded", closest.v.norm());
}

inline double point_hull_distance(const std::vector<Vec>& vertices, const Vec& p) {
  const int dim = static_cast<int>(p.size());
  auto support_hull = [&](const Vec& d) -> Vec {
    std::size_t best = 0;
    double best_dot = vertices[0].dot(d);
    for (std::size_t i = 1; i < vertices.size(); ++i) {
      const double x = vertices[i].dot(d);
      if (x > best_dot) {
        best_dot = x;
        best = i;
      }
    }
    return vertices[best];
  };
  auto support_point = [&](const Vec&) -> Vec { return p; };
  return gjk_core(support_hull, support_point, Vec(vertices[0] - p), dim, GjkOptions{}).distance;
}

inline void require_distance_inputs(const ConvexHull& a, const ConvexHull& b) {
  if (a.dim() != b.dim()) fail(ErrorCode::invalid_argument, "hull dimensions differ");
  if (a.degenerate() || b.degenerate()) {
    fail(ErrorCode::invalid_argument, "distance queries require non-degenerate hulls");
  }
}

inline Vec any_perpendicular(const Vec& u) {
  // 3D only: cross with the axis least aligned with u.
  Eigen::Index k;
  u.cwiseAbs().minCoeff(&k);
  Eigen::Vector3d uu = u;
  Eigen::Vector3d n = uu.cross(Eigen::Vector3d::Unit(k));
  return Vec(n.normalized());
}

}  // namespace detail

struct GjkResult {
  double distance = 0.0;
  DistanceWitness witness;
  Simplex final_simplex;
};

struct EpaResult {
  double depth = 0.0;
  DistanceWitness witness;
  /// Outward normal of the Minkowski-difference face closest to the origin.
  Vec face_normal;
};

inline const Vec& support(const ConvexHull& hull, const Vec& direction) { return hull.support(direction); }

/// Separation distance between two hulls (0 when they touch or overlap).
inline GjkResult gjk_separation(const ConvexHull& a, const ConvexHull& b, const GjkOptions& opt = {}) {
  detail::require_distance_inputs(a, b);
  auto sa = [&](const Vec& d) -> const Vec& { return a.support_unchecked(d); };
  auto sb = [&](const Vec& d) -> const Vec& { return b.support_unchecked(d); };
  Vec seed = b.reference() - a.reference();
  auto out = detail::gjk_core(sa, sb, seed, a.dim(), opt);
  GjkResult r;
  r.distance = out.distance;
  r.final_simplex = out.simplex;
  r.witness.signed_distance = out.distance;
  r.witness.point_on_a = out.point_on_a;
  r.witness.point_on_b = out.point_on_b;
  if (out.distance > 0.0) {
    r.witness.normal = out.normal;
  } else {
    r.witness.normal = Vec::Zero(a.dim());
  }
  return r;
}

namespace detail {

struct EpaSupport {
  const ConvexHull& a;
  const ConvexHull& b;
  SupportPoint operator()(const Vec& dir) const {
    SupportPoint sp;
    sp.a = a.support_unchecked(dir);
    sp.b = b.support_unchecked(Vec(-dir));
    sp.w = sp.a - sp.b;
    return sp;
  }
};

inline double simplex_scale(const std::vector<SupportPoint>& pts) {
  double s = 1e-300;
  for (const auto& p : pts) s = std::max(s, p.w.norm());
  return s;
}

/// Grow a lower-dimensional simplex that contains the origin to a full one.
inline std::vector<SupportPoint> blow_up_simplex(const Simplex& s, const EpaSupport& support) {
  const int dim = s.dim;
  std::vector<SupportPoint> pts(s.points.begin(), s.points.begin() + s.size);
  auto independent = [&](const Vec& w) {
    const double scale = std::max(simplex_scale(pts), w.norm());
    const double tol = 1e-10 * scale;
    if (pts.size() == 1) return (w - pts[0].w).norm() > tol;
    if (pts.size() == 2) {
      const Vec u = pts[1].w - pts[0].w;
      const Vec r = w - pts[0].w;
      if (dim == 2) return std::abs(u(0) * r(1) - u(1) * r(0)) > tol * u.norm();
      Eigen::Vector3d u3 = u, r3 = r;
      return u3.cross(r3).norm() > tol * u.norm();
    }
    Eigen::Vector3d u = pts[1].w - pts[0].w, v = pts[2].w - pts[0].w;
    Eigen::Vector3d n = u.cross(v);
    return std::abs(n.dot(Eigen::Vector3d(w - pts[0].w))) > tol * n.norm();
  };
  auto try_dirs = [&](const std::vector<Vec>& dirs) {
    for (const auto& d : dirs) {
      SupportPoint sp = support(d);
      if (independent(sp.w)) {
        pts.push_back(sp);
        return true;
      }
    }
    return false;
  };
  while (static_cast<int>(pts.size()) < dim + 1) {
    std::vector<Vec> dirs;
    if (pts.size() == 1) {
      for (int k = 0; k < dim; ++k) {
        dirs.push_back(Vec::Unit(dim, k));
        dirs.push_back(Vec(-Vec::Unit(dim, k)));
      }
    } else if (pts.size() == 2) {
      const Vec u = pts[1].w - pts[0].w;
      if (dim == 2) {
        Vec n = make_vec({-u(1), u(0)});
        dirs = {n, Vec(-n)};
      } else {
        Vec n1 = any_perpendicular(u);
        Eigen::Vector3d n2 = Eigen::Vector3d(u).cross(Eigen::Vector3d(n1)).normalized();
        dirs = {n1, Vec(-n1), Vec(n2), Vec(-n2)};
      }
    } else {
      Eigen::Vector3d u = pts[1].w - pts[0].w, v = pts[2].w - pts[0].w;
      Vec n = u.cross(v);
      dirs = {n, Vec(-n)};
    }
    if (!try_dirs(dirs)) fail(ErrorCode::numerical_failure, "EPA could not build a full-dimensional simplex");
  }
  return pts;
}

inline EpaResult epa_finish(const Vec& normal, double depth, const std::vector<SupportPoint>& face,
                            const std::vector<double>& lambda) {
  EpaResult r;
  r.depth = std::max(depth, 0.0);
  r.face_normal = normal;
  const int dim = static_cast<int>(normal.size());
  r.witness.point_on_a = Vec::Zero(dim);
  r.witness.point_on_b = Vec::Zero(dim);
  for (std::size_t i = 0; i < face.size(); ++i) {
    r.witness.point_on_a += lambda[i] * face[i].a;
    r.witness.point_on_b += lambda[i] * face[i].b;
  }
  r.witness.signed_distance = -r.depth;
  r.witness.normal = -normal;
  return r;
}

inline EpaResult epa_2d(std::vector<SupportPoint> poly, const EpaSupport& support, const EpaOptions& opt) {
  auto cross = [](const Vec& u, const Vec& v) { return u(0) * v(1) - u(1) * v(0); };
  if (cross(poly[1].w - poly[0].w, poly[2].w - poly[0].w) < 0.0) std::swap(poly[1], poly[2]);
  double best_depth = 0.0;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    Vec best_n;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const std::size_t j = (i + 1) % poly.size();
      const Vec e = poly[j].w - poly[i].w;
      const double len = e.norm();
      if (!(len > 0.0)) continue;
      Vec n = make_vec({e(1) / len, -e(0) / len});
      const double d = n.dot(poly[i].w);
      if (d < best_d) {
        best_d = d;
        best = i;
        best_n = n;
      }
    }
    best_depth = best_d;
    SupportPoint w = support(best_n);
    const std::size_t j = (best + 1) % poly.size();
    const bool duplicate = (w.w - poly[best].w).squaredNorm() == 0.0 || (w.w - poly[j].w).squaredNorm() == 0.0;
    if (duplicate || best_n.dot(w.w) - best_d <= opt.tolerance * (1.0 + std::abs(best_d))) {
      const Vec e = poly[j].w - poly[best].w;
      const Vec q = best_d * best_n;
      double t = e.dot(q - poly[best].w) / e.squaredNorm();
      t = std::clamp(t, 0.0, 1.0);
      return epa_finish(best_n, best_d, {poly[best], poly[j]}, {1.0 - t, t});
    }
    poly.insert(poly.begin() + static_cast<std::ptrdiff_t>(j == 0 ? poly.size() : j), std::move(w));
  }
  throw NumericalFailure("EPA expansion cap exceeded", std::max(best_depth, 0.0));
}

inline EpaResult epa_3d(std::vector<SupportPoint> verts, const EpaSupport& support, const EpaOptions& opt) {
  struct Face {
    std::array<int, 3> v;
    Eigen::Vector3d n;
    double d;
    bool alive;
  };
  Eigen::Vector3d interior = Eigen::Vector3d::Zero();
  for (const auto& p : verts) interior += Eigen::Vector3d(p.w);
  interior /= static_cast<double>(verts.size());

  std::vector<Face> faces;
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;

  auto add_face = [&](int a, int b, int c) {
    const Eigen::Vector3d pa = verts[a].w, pb = verts[b].w, pc = verts[c].w;
    Eigen::Vector3d n = (pb - pa).cross(pc - pa);
    const double len = n.norm();
    if (!(len > 0.0)) return false;
    n /= len;
    if (n.dot(pa - interior) < 0.0) {
      n = -n;
      std::swap(b, c);
    }
    const double d = n.dot(pa);
    faces.push_back({{a, b, c}, n, d, true});
    queue.push({d, static_cast<int>(faces.size()) - 1});
    return true;
  };
  add_face(0, 1, 2);
  add_face(0, 3, 1);
  add_face(0, 2, 3);
  add_face(1, 3, 2);

  double best_depth = 0.0;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    while (!queue.empty() && !faces[queue.top().second].alive) queue.pop();
    if (queue.empty()) fail(ErrorCode::numerical_failure, "EPA polytope collapsed");
    const int fi = queue.top().second;
    const Face f = faces[fi];
    best_depth = f.d;
    SupportPoint w = support(Vec(f.n));
    const double gap = f.n.dot(Eigen::Vector3d(w.w)) - f.d;
    if (gap <= opt.tolerance * (1.0 + std::abs(f.d))) {
      const Eigen::Vector3d q = f.d * f.n;
      const Eigen::Vector3d a = verts[f.v[0]].w, b = verts[f.v[1]].w, c = verts[f.v[2]].w;
      const Eigen::Vector3d v0 = b - a, v1 = c - a, v2 = q - a;
      const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
      const double d20 = v2.dot(v0), d21 = v2.dot(v1);
      const double den = d00 * d11 - d01 * d01;
      double lv = (d11 * d20 - d01 * d21) / den;
      double lw = (d00 * d21 - d01 * d20) / den;
      double lu = 1.0 - lv - lw;
      lu = std::max(lu, 0.0);
      lv = std::max(lv, 0.0);
      lw = std::max(lw, 0.0);
      const double s = lu + lv + lw;
      return epa_finish(Vec(f.n), f.d, {verts[f.v[0]], verts[f.v[1]], verts[f.v[2]]},
                        {lu / s, lv / s, lw / s});
    }
    const int wi = static_cast<int>(verts.size());
    const Eigen::Vector3d wp = w.w;
    verts.push_back(std::move(w));

    std::vector<std::pair<int, int>> horizon;
    for (auto& face : faces) {
      if (!face.alive) continue;
      if (face.n.dot(wp - Eigen::Vector3d(verts[face.v[0]].w)) > 0.0) {
        face.alive = false;
        for (int e = 0; e < 3; ++e) {
          const std::pair<int, int> edge{face.v[e], face.v[(e + 1) % 3]};
          auto rev = std::find(horizon.begin(), horizon.end(), std::pair<int, int>{edge.second, edge.first});
          if (rev != horizon.end()) {
            horizon.erase(rev);
          } else {
            horizon.push_back(edge);
          }
        }
      }
    }
    for (const auto& [ea, eb] : horizon) add_face(ea, eb, wi);
  }
  throw NumericalFailure("EPA expansion cap exceeded", std::max(best_depth, 0.0));
}

}  // namespace detail

/// Penetration depth of two overlapping hulls, starting from a GJK simplex
/// that encloses the origin of their Minkowski difference.
inline EpaResult epa_penetration(const ConvexHull& a, const ConvexHull& b, const Simplex& simplex,
                                 const EpaOptions& opt = {}) {
  detail::require_distance_inputs(a, b);
  if (simplex.size < 1 || simplex.dim != a.dim()) fail(ErrorCode::invalid_argument, "EPA needs a GJK simplex");
  const auto closest = detail::closest_on_simplex(simplex);
  double scale = 1.0;
  for (int i = 0; i < simplex.size; ++i) scale = std::max(scale, simplex.points[i].w.norm());
  if (closest.mask == 0 || closest.v.norm() > 1e-9 * scale) {
    fail(ErrorCode::invalid_argument, "EPA simplex does not enclose the origin (hulls do not intersect)");
  }
  detail::EpaSupport sup{a, b};
  auto pts = detail::blow_up_simplex(simplex, sup);
  return a.dim() == 2 ? detail::epa_2d(std::move(pts), sup, opt) : detail::epa_3d(std::move(pts), sup, opt);
}

/// Positive separation, zero at contact, negative penetration depth.
inline DistanceWitness signed_distance(const ConvexHull& a, const ConvexHull& b, const GjkOptions& gjk = {},
                                       const EpaOptions& epa = {}) {
  GjkResult g = gjk_separation(a, b, gjk);
  if (g.distance > 0.0) return g.witness;
  return epa_penetration(a, b, g.final_simplex, epa).witness;
}

/// Gamma from an already computed signed distance.
inline double gamma_from(double reference_distance, double sd) {
  if (!(reference_distance > 0.0)) {
    fail(ErrorCode::degenerate_configuration, "Gamma needs distinct reference points");
  }
  const double denom = reference_distance - sd;
  if (!(denom > 0.0)) {
    fail(ErrorCode::degenerate_configuration, "Gamma denominator is non-positive");
  }
  return reference_distance / denom;
}

/// Convex-pair distance ratio: 1 at contact, > 1 when apart, < 1 inside.
inline double gamma(const ConvexHull& a, const ConvexHull& b) {
  detail::require_distance_inputs(a, b);
  const double r = (a.reference() - b.reference()).norm();
  if (!(r > 0.0)) fail(ErrorCode::degenerate_configuration, "Gamma needs distinct reference points");
  return gamma_from(r, signed_distance(a, b).signed_distance);
}

/// Axis-aligned box helper used by presets and tests.
inline ConvexHull make_box(const Vec& lower, const Vec& upper) {
  const int dim = static_cast<int>(lower.size());
  std::vector<Vec> verts;
  for (int mask = 0; mask < (1 << dim); ++mask) {
    Vec v(dim);
    for (int k = 0; k < dim; ++k) v(k) = (mask & (1 << k)) ? upper(k) : lower(k);
    verts.push_back(v);
  }
  return ConvexHull(std::move(verts));
}

}  // namespace lyapnav
