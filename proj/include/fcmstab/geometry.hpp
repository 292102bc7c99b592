#pragma once

// Cut configurations on the standard cell [-1,1]^2 and feature extraction.
//
// A cut is the oriented chord A->B with the physical region on the right of
// the direction of travel. Rotation normalization brings the start point onto
// the top edge so that geometrically equal cuts share one representation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fcmstab/core.hpp"

namespace fcmstab {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point p) { return std::hypot(p.x, p.y); }
inline double dist(Point a, Point b) { return norm(b - a); }

constexpr double kMinCutDistance = 1e-10;  // feature clamp floor
constexpr double kVertexTol = 1e-12;
constexpr double kDegenerateLen = 1e-12;

// Edge indices double as the quarter-turn count that brings the edge to TOP.
enum class Edge : int { top = 0, right = 1, bottom = 2, left = 3 };

struct CutConfig {
  Point a;  // start
  Point b;  // end; physical region on the right of a->b
};

// One counter-clockwise quarter turn about the origin. Exact in floating
// point (sign flip and swap only).
inline Point rot90(Point p) { return {-p.y, p.x}; }

inline Point rot90(Point p, int k) {
  for (int i = 0; i < (k & 3); ++i) p = rot90(p);
  return p;
}

inline CutConfig rotate_config(const CutConfig& c, int k) {
  return {rot90(c.a, k), rot90(c.b, k)};
}

// Reflection across the vertical axis flips orientation; swapping the
// endpoints restores physical-on-the-right. Same lambda, permuted features.
inline CutConfig mirror_config(const CutConfig& c) {
  return {{-c.b.x, c.b.y}, {-c.a.x, c.a.y}};
}

// Edge membership on the standard cell. A point within kVertexTol of a vertex
// belongs to the clockwise-adjacent edge: (-1,1)->top, (1,1)->right,
// (1,-1)->bottom, (-1,-1)->left.
inline Edge which_edge(Point p) {
  const bool xl = std::abs(p.x + 1.0) <= kVertexTol;
  const bool xr = std::abs(p.x - 1.0) <= kVertexTol;
  const bool yb = std::abs(p.y + 1.0) <= kVertexTol;
  const bool yt = std::abs(p.y - 1.0) <= kVertexTol;
  if (yt && xl) return Edge::top;
  if (yt && xr) return Edge::right;
  if (yb && xr) return Edge::bottom;
  if (yb && xl) return Edge::left;
  if (yt) return Edge::top;
  if (xr) return Edge::right;
  if (yb) return Edge::bottom;
  if (xl) return Edge::left;
  fail(Errc::bad_input, "point not on the standard cell boundary");
}

inline bool on_boundary(Point p) {
  if (std::abs(p.x) > 1.0 + kVertexTol || std::abs(p.y) > 1.0 + kVertexTol) return false;
  return std::abs(std::abs(p.x) - 1.0) <= kVertexTol || std::abs(std::abs(p.y) - 1.0) <= kVertexTol;
}

inline void validate_config(const CutConfig& c) {
  require(on_boundary(c.a) && on_boundary(c.b), Errc::bad_input,
          "cut endpoints must lie on the standard cell boundary");
  require(dist(c.a, c.b) > kDegenerateLen, Errc::degenerate_cut, "cut endpoints coincide");
}

struct NormalizedConfig {
  CutConfig config;
  int k = 0;  // quarter turns applied (counter-clockwise)
};

// Rotate until the start point sits on the top edge. The edge index of the
// start point is exactly the number of quarter turns needed.
inline NormalizedConfig normalize_config(const CutConfig& c) {
  validate_config(c);
  const int k = static_cast<int>(which_edge(c.a));
  return {rotate_config(c, k), k};
}

enum class Region { physical, fictitious };

// Right-of test. Points on the line (cross exactly 0) count as physical so
// that quadrature classification is deterministic.
inline Region physical_side(Point p, const CutConfig& c) {
  return cross(c.b - c.a, p - c.a) <= 0.0 ? Region::physical : Region::fictitious;
}

// Feature layout "Tv+T0.002": the 4 vertices plus one point 0.002 inside each
// edge end, walked clockwise from the top-left vertex. Order is serialized
// into datasets and model files; never reorder.
inline const char* feature_layout_id() { return "Tv+T0.002"; }

inline const std::array<Point, 12>& feature_points() {
  static const std::array<Point, 12> pts = {{
      {-1.0, 1.0},
      {-1.0 + 0.002, 1.0},
      {1.0 - 0.002, 1.0},
      {1.0, 1.0},
      {1.0, 1.0 - 0.002},
      {1.0, -1.0 + 0.002},
      {1.0, -1.0},
      {1.0 - 0.002, -1.0},
      {-1.0 + 0.002, -1.0},
      {-1.0, -1.0},
      {-1.0, -1.0 + 0.002},
      {-1.0, 1.0 - 0.002},
  }};
  return pts;
}

using FeatureVector = std::array<double, 12>;
inline constexpr int kFeatureCount = 12;

// Distance from p to the infinite line through a,b. The infinite line (rather
// than the segment) keeps the feature map smooth as cuts slide past corners.
inline double line_distance(Point p, Point a, Point b) {
  const double len = dist(a, b);
  return std::abs(cross(b - a, p - a)) / len;
}

inline FeatureVector cut_distances(const CutConfig& c) {
  FeatureVector x{};
  const auto& pts = feature_points();
  for (size_t i = 0; i < pts.size(); ++i)
    x[i] = std::max(line_distance(pts[i], c.a, c.b), kMinCutDistance);
  return x;
}

// ---------------------------------------------------------------------------
// Cells and curved boundaries.

struct Box {
  Point center;
  double side = 2.0;
  double half() const { return 0.5 * side; }
  Point lo() const { return {center.x - half(), center.y - half()}; }
  Point hi() const { return {center.x + half(), center.y + half()}; }
  bool contains(Point p) const {
    return std::abs(p.x - center.x) <= half() && std::abs(p.y - center.y) <= half();
  }
};

inline const Box& standard_cell() {
  static const Box b{{0.0, 0.0}, 2.0};
  return b;
}

// Segment/box overlap via parametric clipping (closed box).
inline bool segment_intersects_box(Point a, Point b, const Box& box) {
  const Point d = b - a;
  double t0 = 0.0, t1 = 1.0;
  const double lo[2] = {box.lo().x, box.lo().y};
  const double hi[2] = {box.hi().x, box.hi().y};
  const double p0[2] = {a.x, a.y};
  const double dd[2] = {d.x, d.y};
  for (int ax = 0; ax < 2; ++ax) {
    if (dd[ax] == 0.0) {
      if (p0[ax] < lo[ax] || p0[ax] > hi[ax]) return false;
    } else {
      double u = (lo[ax] - p0[ax]) / dd[ax];
      double v = (hi[ax] - p0[ax]) / dd[ax];
      if (u > v) std::swap(u, v);
      t0 = std::max(t0, u);
      t1 = std::min(t1, v);
      if (t0 > t1) return false;
    }
  }
  return true;
}

// Closed parametric boundary with a physical-side predicate. gamma maps
// [0,1) around the loop; scan_samples controls crossing detection and must
// resolve the smallest cell of interest.
struct Boundary {
  std::function<Point(double)> gamma;
  std::function<bool(Point)> inside;
  int scan_samples = 2048;
};

// One connected piece of the boundary inside a cell: the chord, its arc
// length, and a polyline for downstream segment integration.
struct CutPiece {
  Point a;
  Point b;
  double arclength = 0.0;
  std::vector<Point> polyline;
};

struct CutExtraction {
  Point a;  // chord of the first piece, physical on the right
  Point b;
  double q = 0.0;  // |AB| / arclength, only meaningful when segment_count == 1
  int segment_count = 0;
  std::vector<CutPiece> pieces;
};

namespace detail {

inline double wrap01(double t) { return t - std::floor(t); }

// Bisect an in-box status flip between params u and v (status(u) != status(v)).
inline double bisect_crossing(const Boundary& bd, const Box& box, double u, double v, bool in_u) {
  for (int i = 0; i < 80; ++i) {
    const double m = 0.5 * (u + v);
    if (box.contains(bd.gamma(wrap01(m))) == in_u)
      u = m;
    else
      v = m;
  }
  return 0.5 * (u + v);
}

inline double polyline_length(const std::vector<Point>& pts) {
  double s = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) s += dist(pts[i - 1], pts[i]);
  return s;
}

// Arc length of gamma over [u,v] by doubling the polyline resolution until
// the length stabilizes.
inline double arc_length(const Boundary& bd, double u, double v, double rel_tol = 1e-9) {
  int n = 8;
  double prev = -1.0;
  for (int pass = 0; pass < 22; ++pass) {
    double s = 0.0;
    Point last = bd.gamma(wrap01(u));
    for (int i = 1; i <= n; ++i) {
      const Point p = bd.gamma(wrap01(u + (v - u) * i / n));
      s += dist(last, p);
      last = p;
    }
    if (prev >= 0.0 && std::abs(s - prev) <= rel_tol * std::max(s, 1e-300)) return s;
    prev = s;
    n *= 2;
  }
  return prev;
}

}  // namespace detail

// Intersect a closed boundary curve with a square cell. Returns the chordal
// approximation of each in-cell piece, or nullopt when the curve misses the
// cell (or only grazes it within tolerance).
inline std::optional<CutExtraction> extract_cut(const Box& cell, const Boundary& bd) {
  const int n = std::max(bd.scan_samples, 16);
  std::vector<char> status(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) status[static_cast<size_t>(i)] = cell.contains(bd.gamma(static_cast<double>(i) / n)) ? 1 : 0;

  std::vector<double> crossings;
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    if (status[static_cast<size_t>(i)] != status[static_cast<size_t>(j)]) {
      const double u = static_cast<double>(i) / n;
      const double v = static_cast<double>(i + 1) / n;
      crossings.push_back(detail::bisect_crossing(bd, cell, u, v, status[static_cast<size_t>(i)] == 1));
    }
  }
  if (crossings.empty()) return std::nullopt;
  if (crossings.size() % 2 != 0) return std::nullopt;  // tangential grazing, ambiguous

  // Pair crossings into in-cell windows. If the window starting at
  // crossings[0] is outside, shift by one (with wrap).
  const size_t m = crossings.size();
  double probe = detail::wrap01(0.5 * (crossings[0] + crossings[1]));
  size_t first = cell.contains(bd.gamma(probe)) ? 0 : 1;

  CutExtraction out;
  for (size_t w = 0; w < m; w += 2) {
    double u = crossings[(first + w) % m];
    double v = crossings[(first + w + 1) % m];
    if (v < u) v += 1.0;  // wrapped window
    CutPiece piece;
    piece.a = bd.gamma(detail::wrap01(u));
    piece.b = bd.gamma(detail::wrap01(v));
    piece.arclength = detail::arc_length(bd, u, v);
    const int poly_n = 64;
    piece.polyline.reserve(poly_n + 1);
    for (int i = 0; i <= poly_n; ++i)
      piece.polyline.push_back(bd.gamma(detail::wrap01(u + (v - u) * i / poly_n)));

    const double chord = dist(piece.a, piece.b);
    if (chord <= kDegenerateLen || piece.arclength <= kDegenerateLen * std::max(1.0, cell.side))
      return std::nullopt;  // grazing contact

    // Orient so the physical side is on the right of a->b. Probe from a point
    // on the curve itself: the chord midpoint of a convex arc lies strictly
    // inside (the sagitta exceeds any safe probe distance), so displacements
    // from it land on the physical side in both directions and cannot decide.
    const Point t = (1.0 / chord) * (piece.b - piece.a);
    const Point n_right{t.y, -t.x};
    const Point mid = piece.polyline[piece.polyline.size() / 2];
    int score = 0;
    for (double f : {0.5e-3, 1e-3, 2e-3}) {
      const double d = f * cell.side;
      if (bd.inside(mid + d * n_right)) ++score;
      if (!bd.inside(mid - d * n_right)) ++score;
    }
    if (score < 3) {
      std::swap(piece.a, piece.b);
      std::reverse(piece.polyline.begin(), piece.polyline.end());
    }
    out.pieces.push_back(std::move(piece));
  }

  out.segment_count = static_cast<int>(out.pieces.size());
  out.a = out.pieces[0].a;
  out.b = out.pieces[0].b;
  if (out.segment_count == 1)
    out.q = dist(out.a, out.b) / out.pieces[0].arclength;
  return out;
}

// Map a point of a physical cell onto the standard cell, snapping coordinates
// that land within tol of +-1 (chord endpoints live on cell edges).
inline Point to_standard_cell(const Box& cell, Point p, double snap_tol = 1e-9) {
  Point s{(p.x - cell.center.x) * (2.0 / cell.side), (p.y - cell.center.y) * (2.0 / cell.side)};
  auto snap = [&](double v) {
    if (std::abs(v - 1.0) <= snap_tol) return 1.0;
    if (std::abs(v + 1.0) <= snap_tol) return -1.0;
    return std::clamp(v, -1.0, 1.0);
  };
  return {snap(s.x), snap(s.y)};
}

}  // namespace fcmstab
