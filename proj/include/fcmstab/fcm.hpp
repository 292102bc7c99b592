#pragma once
// 2D Poisson on an embedding box: quadtree mesh refined toward the immersed
// boundary, bilinear elements with alpha-weighted cut-cell quadrature, weak
// Dirichlet conditions with per-cutcell stabilization, Jacobi-CG solve, and
// L2 error measurement over the physical domain.

#include <algorithm>
#include <array>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "estimator.hpp"
#include "linalg.hpp"
#include "quadrature.hpp"

namespace fcmstab {

// Embedding-box Poisson problem. With a parametric boundary the domain is
// immersed; without one (gamma unset) the box itself is the domain and weak
// Dirichlet conditions are applied on its edges. The Neumann part is selected
// pointwise on the boundary; everything else is Dirichlet.
struct PoissonProblem {
  Box domain;
  Boundary boundary;
  std::function<double(Point)> dirichlet;      // g
  std::function<double(Point)> source;         // f
  std::function<double(Point)> neumann;        // h; unset = pure Dirichlet
  std::function<bool(Point)> neumann_region;   // where h applies on the boundary
  std::function<double(Point)> exact;          // reference solution, optional
};

enum class CellClass { inside, outside, cut };

struct MeshCell {
  int level = 0;
  int64_t ix = 0, iy = 0;  // column/row within the level-k grid
  CellClass cls = CellClass::inside;
  Box box;
  std::optional<CutExtraction> cut;  // present exactly when cls == cut
};

// Hanging node constrained to the mean of its coarse edge's endpoints.
struct NodeConstraint {
  int node = -1;
  std::array<int, 2> masters{-1, -1};
};

struct QuadtreeMesh {
  Box root;
  int l_min = 0, l_max = 0;
  std::vector<MeshCell> leaves;  // level-major deterministic order
  int64_t lattice = 1;           // nodes live on the (lattice+1)^2 level-L_max grid
  std::vector<uint64_t> node_keys;          // sorted; key = iy * (lattice + 1) + ix
  std::vector<int> dof_of_node;             // -1 for hanging nodes
  std::vector<NodeConstraint> constraints;  // masters are always free nodes
  int dof_count = 0;

  int node_count() const { return static_cast<int>(node_keys.size()); }

  int node_id(uint64_t key) const {
    const auto it = std::lower_bound(node_keys.begin(), node_keys.end(), key);
    require(it != node_keys.end() && *it == key, Errc::bad_input, "unknown mesh node");
    return static_cast<int>(it - node_keys.begin());
  }

  Point node_coord(int id) const {
    const uint64_t key = node_keys[static_cast<size_t>(id)];
    const double h = root.side / static_cast<double>(lattice);
    const auto per_row = static_cast<uint64_t>(lattice) + 1;
    const Point lo = root.lo();
    return {lo.x + static_cast<double>(key % per_row) * h,
            lo.y + static_cast<double>(key / per_row) * h};
  }
};

namespace detail {

inline uint64_t pack_cell(int level, int64_t ix, int64_t iy) {
  return (static_cast<uint64_t>(level) << 58) | (static_cast<uint64_t>(ix) << 29) |
         static_cast<uint64_t>(iy);
}

inline Box cell_box(const Box& root, int level, int64_t ix, int64_t iy) {
  const double s = root.side / static_cast<double>(int64_t{1} << level);
  const Point lo = root.lo();
  return {{lo.x + (static_cast<double>(ix) + 0.5) * s, lo.y + (static_cast<double>(iy) + 0.5) * s},
          s};
}

struct MeshBuilder {
  const Boundary* bd = nullptr;
  Box root;
  int l_min = 0, l_max = 0;
  std::vector<Point> samples;
  std::map<uint64_t, MeshCell> leaves;

  bool corners_mixed(const Box& b) const {
    if (!bd || !bd->inside) return false;
    const Point lo = b.lo(), hi = b.hi();
    const bool c0 = bd->inside({lo.x, lo.y});
    return bd->inside({hi.x, lo.y}) != c0 || bd->inside({hi.x, hi.y}) != c0 ||
           bd->inside({lo.x, hi.y}) != c0;
  }

  void emit_leaf(int level, int64_t ix, int64_t iy, const Box& b, bool candidate) {
    MeshCell cell;
    cell.level = level;
    cell.ix = ix;
    cell.iy = iy;
    cell.box = b;
    if (candidate && level == l_max) cell.cut = extract_cut(b, *bd);
    if (cell.cut) {
      cell.cls = CellClass::cut;
    } else if (bd && bd->inside) {
      // mixed corners without an extractable cut: a grazing sliver below the
      // scan resolution; classify by the center like the quadrature would
      const Point probe = candidate && corners_mixed(b) ? b.center : b.lo();
      cell.cls = bd->inside(probe) ? CellClass::inside : CellClass::outside;
    } else {
      cell.cls = CellClass::inside;  // conforming box mode
    }
    leaves.emplace(pack_cell(level, ix, iy), std::move(cell));
  }

  void descend(int level, int64_t ix, int64_t iy, std::vector<int> idx) {
    const Box b = cell_box(root, level, ix, iy);
    const bool candidate = !idx.empty() || corners_mixed(b);
    if (level < l_min || (level < l_max && candidate)) {
      std::vector<int> kid_idx[4];
      for (int i : idx) {
        const Point& p = samples[static_cast<size_t>(i)];
        const int k = (p.x >= b.center.x ? 1 : 0) + (p.y >= b.center.y ? 2 : 0);
        kid_idx[k].push_back(i);
      }
      idx.clear();
      idx.shrink_to_fit();
      descend(level + 1, 2 * ix, 2 * iy, std::move(kid_idx[0]));
      descend(level + 1, 2 * ix + 1, 2 * iy, std::move(kid_idx[1]));
      descend(level + 1, 2 * ix, 2 * iy + 1, std::move(kid_idx[2]));
      descend(level + 1, 2 * ix + 1, 2 * iy + 1, std::move(kid_idx[3]));
      return;
    }
    emit_leaf(level, ix, iy, b, candidate);
  }

  // corner-inclusive 2:1 balance; splitting only ever touches uncut cells,
  // and their children inherit the parent classification because a cell that
  // never intersects the boundary lies entirely on one side of it
  void balance() {
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<uint64_t> keys;
      keys.reserve(leaves.size());
      for (const auto& kv : leaves) keys.push_back(kv.first);
      for (uint64_t key : keys) {
        const auto it = leaves.find(key);
        if (it == leaves.end()) continue;  // split earlier in this sweep
        const MeshCell cell = it->second;
        const int64_t n = int64_t{1} << cell.level;
        static constexpr int dx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
        static constexpr int dy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
        for (int d = 0; d < 8; ++d) {
          int64_t cx = cell.ix + dx[d], cy = cell.iy + dy[d];
          if (cx < 0 || cy < 0 || cx >= n || cy >= n) continue;
          int j = cell.level;
          while (j >= 0 && !leaves.count(pack_cell(j, cx, cy))) {
            cx >>= 1;
            cy >>= 1;
            --j;
          }
          if (j >= 0 && j <= cell.level - 2) {
            split_leaf(j, cx, cy);
            changed = true;
          }
        }
      }
    }
  }

  void split_leaf(int level, int64_t ix, int64_t iy) {
    const auto it = leaves.find(pack_cell(level, ix, iy));
    const CellClass cls = it->second.cls;
    leaves.erase(it);
    for (int k = 0; k < 4; ++k) {
      const int64_t cx = 2 * ix + (k & 1), cy = 2 * iy + (k >> 1);
      MeshCell kid;
      kid.level = level + 1;
      kid.ix = cx;
      kid.iy = cy;
      kid.cls = cls;
      kid.box = cell_box(root, level + 1, cx, cy);
      leaves.emplace(pack_cell(level + 1, cx, cy), std::move(kid));
    }
  }
};

}  // namespace detail

// Uniform refinement to l_min, refinement to l_max along the boundary,
// corner-inclusive 2:1 balance, then node/constraint tables. Without a
// parametric boundary the mesh is uniform at l_min and every cell is inside.
inline QuadtreeMesh build_mesh(const PoissonProblem& prob, int l_min, int l_max) {
  require(l_min >= 0 && l_min <= l_max && l_max <= 24, Errc::bad_input,
          "refinement levels must satisfy 0 <= L_min <= L_max <= 24");
  detail::MeshBuilder builder;
  builder.root = prob.domain;
  builder.l_min = l_min;
  builder.l_max = l_max;
  require(prob.domain.side > 0.0, Errc::bad_input, "embedding box side must be positive");

  std::vector<int> all;
  if (prob.boundary.gamma) {
    require(static_cast<bool>(prob.boundary.inside), Errc::bad_input,
            "boundary needs an inside predicate");
    builder.bd = &prob.boundary;
    const int n = std::max(prob.boundary.scan_samples, 16);
    builder.samples.reserve(static_cast<size_t>(n));
    const Point c = prob.domain.center;
    const double half = prob.domain.half();
    for (int i = 0; i < n; ++i) {
      const Point p = prob.boundary.gamma(static_cast<double>(i) / n);
      require(std::abs(p.x - c.x) < half && std::abs(p.y - c.y) < half, Errc::bad_input,
              "boundary is not strictly inside the embedding box");
      builder.samples.push_back(p);
    }
    all.resize(builder.samples.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  }

  builder.descend(0, 0, 0, std::move(all));
  builder.balance();

  QuadtreeMesh mesh;
  mesh.root = prob.domain;
  mesh.l_min = l_min;
  mesh.l_max = l_max;
  mesh.lattice = int64_t{1} << l_max;
  mesh.leaves.reserve(builder.leaves.size());
  for (auto& kv : builder.leaves) mesh.leaves.push_back(std::move(kv.second));

  const auto per_row = static_cast<uint64_t>(mesh.lattice) + 1;
  auto node_key = [per_row](int64_t x, int64_t y) {
    return static_cast<uint64_t>(y) * per_row + static_cast<uint64_t>(x);
  };
  for (const MeshCell& cell : mesh.leaves) {
    const int64_t s = int64_t{1} << (mesh.l_max - cell.level);
    const int64_t x = cell.ix * s, y = cell.iy * s;
    mesh.node_keys.push_back(node_key(x, y));
    mesh.node_keys.push_back(node_key(x + s, y));
    mesh.node_keys.push_back(node_key(x + s, y + s));
    mesh.node_keys.push_back(node_key(x, y + s));
  }
  std::sort(mesh.node_keys.begin(), mesh.node_keys.end());
  mesh.node_keys.erase(std::unique(mesh.node_keys.begin(), mesh.node_keys.end()),
                       mesh.node_keys.end());

  auto find_node = [&mesh](uint64_t key) -> int {
    const auto it = std::lower_bound(mesh.node_keys.begin(), mesh.node_keys.end(), key);
    if (it == mesh.node_keys.end() || *it != key) return -1;
    return static_cast<int>(it - mesh.node_keys.begin());
  };

  // a node interior to a leaf edge exists only because the neighbor on the
  // other side is one level finer; that node hangs on this edge
  std::vector<char> hanging(mesh.node_keys.size(), 0);
  for (const MeshCell& cell : mesh.leaves) {
    if (cell.level == mesh.l_max) continue;
    const int64_t s = int64_t{1} << (mesh.l_max - cell.level);
    const int64_t x = cell.ix * s, y = cell.iy * s;
    const int64_t ex[4][4] = {{x, y, x + s, y},          // bottom
                              {x, y + s, x + s, y + s},  // top
                              {x, y, x, y + s},          // left
                              {x + s, y, x + s, y + s}}; // right
    for (const auto& e : ex) {
      const int mid = find_node(node_key((e[0] + e[2]) / 2, (e[1] + e[3]) / 2));
      if (mid < 0) continue;
      NodeConstraint c;
      c.node = mid;
      c.masters = {find_node(node_key(e[0], e[1])), find_node(node_key(e[2], e[3]))};
      hanging[static_cast<size_t>(mid)] = 1;
      mesh.constraints.push_back(c);
    }
  }

  mesh.dof_of_node.assign(mesh.node_keys.size(), -1);
  for (size_t i = 0; i < mesh.node_keys.size(); ++i)
    if (!hanging[i]) mesh.dof_of_node[i] = mesh.dof_count++;
  // corner-inclusive balance keeps constraint chains one level deep
  for (const NodeConstraint& c : mesh.constraints)
    for (int mstr : c.masters)
      require(mstr >= 0 && mesh.dof_of_node[static_cast<size_t>(mstr)] >= 0, Errc::bad_input,
              "hanging-node master is itself constrained");
  return mesh;
}

struct LambdaValue {
  double lambda = 0.0;
  EstimateMethod method = EstimateMethod::eigen_fallback;
};

// Per-cutcell stabilization source; ordinal counts cut cells (or boundary
// edges in conforming box mode) in deterministic mesh order.
using LambdaProvider = std::function<LambdaValue(size_t ordinal, const MeshCell& cell)>;

// Eigenvalue problem on the actual extracted geometry of each cut cell.
inline LambdaProvider make_oracle_provider(const Boundary& bd, int n_ai = 20) {
  return [&bd, n_ai](size_t, const MeshCell& cell) {
    const EstimateResult r = eigen_estimate(cell.box, bd, *cell.cut, n_ai);
    return LambdaValue{r.lambda_raw, r.method};
  };
}

// Chord oracle; needs no boundary functions, so it also serves the
// conforming-box edges where the "cut" is a full cell edge.
inline LambdaProvider make_chord_oracle_provider(int n_ai = 20) {
  return [n_ai](size_t, const MeshCell& cell) {
    const CutExtraction& ext = *cell.cut;
    const CutConfig cfg{to_standard_cell(cell.box, ext.a), to_standard_cell(cell.box, ext.b)};
    return LambdaValue{lambda_oracle(cfg, cell.box.side, n_ai).lambda,
                       EstimateMethod::eigen_fallback};
  };
}

inline LambdaProvider make_table_provider(std::vector<LambdaValue> table) {
  return [table = std::move(table)](size_t ordinal, const MeshCell&) {
    require(ordinal < table.size(), Errc::bad_input, "lambda table shorter than cutcell count");
    return table[ordinal];
  };
}

// Network estimates for every cut cell of the mesh in one batched pass,
// falling back per policy; errors abort with the offending cell id.
inline std::vector<LambdaValue> batch_lambdas(const QuadtreeMesh& mesh, const Boundary& bd,
                                              const MlpModel& model,
                                              const EstimatePolicy& pol = {}, int threads = 1) {
  std::vector<Box> boxes;
  std::vector<size_t> leaf_of;
  for (size_t i = 0; i < mesh.leaves.size(); ++i)
    if (mesh.leaves[i].cls == CellClass::cut) {
      boxes.push_back(mesh.leaves[i].box);
      leaf_of.push_back(i);
    }
  const auto batch = estimate_batch(boxes, bd, model, pol, threads);
  std::vector<LambdaValue> out(batch.size());
  for (size_t j = 0; j < batch.size(); ++j) {
    if (!batch[j].ok()) {
      const MeshCell& cell = mesh.leaves[leaf_of[j]];
      char where[96];
      std::snprintf(where, sizeof where, " on cell level=%d ix=%" PRId64 " iy=%" PRId64,
                    cell.level, cell.ix, cell.iy);
      fail(batch[j].error_code.value_or(Errc::bad_input), batch[j].error + where);
    }
    out[j] = {batch[j].result->lambda_raw, batch[j].result->method};
  }
  return out;
}

struct CutCellLambda {
  size_t leaf = 0;  // index into mesh.leaves
  double lambda = 0.0;
  EstimateMethod method = EstimateMethod::eigen_fallback;
};

struct FcmSystem {
  Csr A;
  std::vector<double> b;
  int dof_count = 0;
  double safety = 2.0;
  std::vector<CutCellLambda> lambdas;
};

namespace detail {

struct ShapeValues {
  double phi[4];
  double gx[4];
  double gy[4];
};

// bilinear basis on the cell, order SW SE NE NW, physical-coordinate gradients
inline ShapeValues shape_at(const Box& cell, Point p) {
  const double inv = 2.0 / cell.side;
  const double s = (p.x - cell.center.x) * inv;
  const double t = (p.y - cell.center.y) * inv;
  ShapeValues v;
  v.phi[0] = 0.25 * (1.0 - s) * (1.0 - t);
  v.phi[1] = 0.25 * (1.0 + s) * (1.0 - t);
  v.phi[2] = 0.25 * (1.0 + s) * (1.0 + t);
  v.phi[3] = 0.25 * (1.0 - s) * (1.0 + t);
  const double ds[4] = {-(1.0 - t), (1.0 - t), (1.0 + t), -(1.0 + t)};
  const double dt[4] = {-(1.0 - s), -(1.0 + s), (1.0 + s), (1.0 - s)};
  for (int i = 0; i < 4; ++i) {
    v.gx[i] = 0.25 * ds[i] * inv;
    v.gy[i] = 0.25 * dt[i] * inv;
  }
  return v;
}

inline void cell_nodes(const QuadtreeMesh& mesh, const MeshCell& cell, int nid[4]) {
  const int64_t s = int64_t{1} << (mesh.l_max - cell.level);
  const int64_t x = cell.ix * s, y = cell.iy * s;
  const auto per_row = static_cast<uint64_t>(mesh.lattice) + 1;
  auto key = [per_row](int64_t kx, int64_t ky) {
    return static_cast<uint64_t>(ky) * per_row + static_cast<uint64_t>(kx);
  };
  nid[0] = mesh.node_id(key(x, y));
  nid[1] = mesh.node_id(key(x + s, y));
  nid[2] = mesh.node_id(key(x + s, y + s));
  nid[3] = mesh.node_id(key(x, y + s));
}

// synthetic straight cut along one edge of a conforming boundary cell,
// oriented so the box interior is the physical side
inline CutExtraction edge_cut(const Box& cell, int edge) {
  const Point lo = cell.lo(), hi = cell.hi();
  Point a, b;
  switch (edge) {
    case 0: a = {hi.x, lo.y}; b = {lo.x, lo.y}; break;  // bottom
    case 1: a = {lo.x, hi.y}; b = {hi.x, hi.y}; break;  // top
    case 2: a = {lo.x, lo.y}; b = {lo.x, hi.y}; break;  // left
    default: a = {hi.x, hi.y}; b = {hi.x, lo.y}; break; // right
  }
  CutExtraction ext;
  ext.a = a;
  ext.b = b;
  ext.q = 1.0;
  ext.segment_count = 1;
  CutPiece piece;
  piece.a = a;
  piece.b = b;
  piece.arclength = dist(a, b);
  piece.polyline = {a, b};
  ext.pieces.push_back(piece);
  return ext;
}

struct Assembler {
  const QuadtreeMesh& mesh;
  const PoissonProblem& prob;
  double safety;
  const IntegrationParams& params;
  std::vector<std::array<int, 2>> idx;
  std::vector<double> vals;
  std::vector<double> rhs;
  // node -> (dof, weight) pairs; hanging nodes spread onto their two masters
  std::vector<std::array<std::pair<int, double>, 2>> spread;
  std::vector<int> spread_len;

  Assembler(const QuadtreeMesh& m, const PoissonProblem& p, double sf,
            const IntegrationParams& ip)
      : mesh(m), prob(p), safety(sf), params(ip), rhs(static_cast<size_t>(m.dof_count), 0.0) {
    spread.resize(m.node_keys.size());
    spread_len.assign(m.node_keys.size(), 0);
    for (size_t n = 0; n < m.node_keys.size(); ++n) {
      const int dof = m.dof_of_node[n];
      if (dof >= 0) {
        spread[n][0] = {dof, 1.0};
        spread_len[n] = 1;
      }
    }
    for (const NodeConstraint& c : m.constraints) {
      const auto n = static_cast<size_t>(c.node);
      spread[n][0] = {m.dof_of_node[static_cast<size_t>(c.masters[0])], 0.5};
      spread[n][1] = {m.dof_of_node[static_cast<size_t>(c.masters[1])], 0.5};
      spread_len[n] = 2;
    }
  }

  void add_element(const int nid[4], const double ke[4][4], const double fe[4]) {
    for (int i = 0; i < 4; ++i) {
      const auto ni = static_cast<size_t>(nid[i]);
      for (int a = 0; a < spread_len[ni]; ++a) {
        const auto [di, wi] = spread[ni][a];
        rhs[static_cast<size_t>(di)] += wi * fe[i];
        for (int j = 0; j < 4; ++j) {
          const auto nj = static_cast<size_t>(nid[j]);
          for (int b = 0; b < spread_len[nj]; ++b) {
            const auto [dj, wj] = spread[nj][b];
            idx.push_back({di, dj});
            vals.push_back(wi * wj * ke[i][j]);
          }
        }
      }
    }
  }

  // volume terms: alpha grad(v).grad(u) and alpha v f, one adaptive pass
  void volume(const MeshCell& cell, double ke[4][4], double fe[4]) const {
    auto integrand = [&](Point p, std::array<double, 14>& out) {
      const ShapeValues v = shape_at(cell.box, p);
      int k = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) out[static_cast<size_t>(k++)] = v.gx[i] * v.gx[j] + v.gy[i] * v.gy[j];
      const double f = prob.source(p);
      for (int i = 0; i < 4; ++i) out[static_cast<size_t>(10 + i)] = v.phi[i] * f;
    };
    std::array<double, 14> acc{};
    if (cell.cls == CellClass::cut) {
      acc = integrate_cell_multi<14>(integrand, cell.box,
                                     [this](Point p) { return prob.boundary.inside(p); },
                                     make_polyline_cut_predicate(cell.cut->pieces,
                                                                 prob.boundary.inside),
                                     params);
    } else {
      const LeafMark mark = cell.cls == CellClass::inside ? LeafMark::inside : LeafMark::outside;
      acc = integrate_cell_multi<14>(integrand, cell.box, [](Point) { return true; },
                                     [mark](const Box&) { return mark; }, params);
    }
    int k = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) {
        ke[i][j] += acc[static_cast<size_t>(k)];
        if (i != j) ke[j][i] += acc[static_cast<size_t>(k)];
        ++k;
      }
    for (int i = 0; i < 4; ++i) fe[i] += acc[static_cast<size_t>(10 + i)];
  }

  // weak Dirichlet terms on one chord: lambda v u - v (grad u . n) - u (grad v . n),
  // with the matching right-hand side; n is the outward normal of the
  // physical domain (the chord keeps it on the right)
  void chord_terms(const Box& box, Point a, Point b, double lam_s, double ke[4][4],
                   double fe[4]) const {
    const double len = dist(a, b);
    if (len <= kDegenerateLen) return;
    const Point t{(b.x - a.x) / len, (b.y - a.y) / len};
    const Point n{-t.y, t.x};
    const GaussRule g = gauss_rule(params.n_gauss_seg);
    const Point mid = 0.5 * (a + b);
    const Point half = 0.5 * (b - a);
    for (int q = 0; q < g.n; ++q) {
      const Point p = mid + g.x[q] * half;
      const double w = 0.5 * len * g.w[q];
      const ShapeValues v = shape_at(box, p);
      double gn[4];
      for (int i = 0; i < 4; ++i) gn[i] = v.gx[i] * n.x + v.gy[i] * n.y;
      const double gval = prob.dirichlet(p);
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j)
          ke[i][j] += w * (lam_s * v.phi[i] * v.phi[j] - v.phi[i] * gn[j] - v.phi[j] * gn[i]);
        fe[i] += w * gval * (lam_s * v.phi[i] - gn[i]);
      }
    }
  }

  void neumann_terms(const Box& box, Point a, Point b, double fe[4]) const {
    const double len = dist(a, b);
    if (len <= kDegenerateLen) return;
    const GaussRule g = gauss_rule(params.n_gauss_seg);
    const Point mid = 0.5 * (a + b);
    const Point half = 0.5 * (b - a);
    for (int q = 0; q < g.n; ++q) {
      const Point p = mid + g.x[q] * half;
      const double w = 0.5 * len * g.w[q];
      const ShapeValues v = shape_at(box, p);
      const double hval = prob.neumann(p);
      for (int i = 0; i < 4; ++i) fe[i] += w * v.phi[i] * hval;
    }
  }

  bool is_neumann(Point a, Point b) const {
    if (!prob.neumann || !prob.neumann_region) return false;
    return prob.neumann_region(0.5 * (a + b));
  }
};

}  // namespace detail

// Element-by-element assembly in deterministic leaf order. Cut cells add the
// weak Dirichlet (or Neumann) terms for each chord of their extracted cut; in
// conforming box mode the boundary cells do the same on their box edges.
// Hanging nodes are eliminated by substitution during insertion, so the
// system couples free DOFs only.
inline FcmSystem assemble(const QuadtreeMesh& mesh, const PoissonProblem& prob,
                          const LambdaProvider& provider, double safety = 2.0,
                          const IntegrationParams& params = {}) {
  validate(params);
  require(safety > 0.0, Errc::bad_input, "safety factor must be positive");
  require(static_cast<bool>(prob.dirichlet), Errc::bad_input, "problem needs dirichlet data");
  require(static_cast<bool>(prob.source), Errc::bad_input, "problem needs a source term");
  require(static_cast<bool>(provider), Errc::bad_input, "lambda provider is not set");
  const bool conforming = !prob.boundary.gamma;

  FcmSystem sys;
  sys.dof_count = mesh.dof_count;
  sys.safety = safety;
  detail::Assembler as(mesh, prob, safety, params);

  size_t ordinal = 0;
  for (size_t li = 0; li < mesh.leaves.size(); ++li) {
    const MeshCell& cell = mesh.leaves[li];
    double ke[4][4] = {};
    double fe[4] = {};
    as.volume(cell, ke, fe);

    auto stabilized = [&](const MeshCell& c) {
      try {
        return provider(ordinal, c);
      } catch (const Error& e) {
        char where[96];
        std::snprintf(where, sizeof where, " on cell level=%d ix=%" PRId64 " iy=%" PRId64,
                      c.level, c.ix, c.iy);
        fail(e.code(), std::string(e.what()) + where);
      }
    };

    if (cell.cls == CellClass::cut) {
      const LambdaValue lam = stabilized(cell);
      sys.lambdas.push_back({li, lam.lambda, lam.method});
      ++ordinal;
      for (const CutPiece& piece : cell.cut->pieces) {
        if (as.is_neumann(piece.a, piece.b))
          as.neumann_terms(cell.box, piece.a, piece.b, fe);
        else
          as.chord_terms(cell.box, piece.a, piece.b, lam.lambda * safety, ke, fe);
      }
    } else if (conforming) {
      const int64_t n = int64_t{1} << cell.level;
      const bool touches[4] = {cell.iy == 0, cell.iy == n - 1, cell.ix == 0, cell.ix == n - 1};
      for (int edge = 0; edge < 4; ++edge) {
        if (!touches[edge]) continue;
        MeshCell synth = cell;
        synth.cls = CellClass::cut;
        synth.cut = detail::edge_cut(cell.box, edge);
        const LambdaValue lam = stabilized(synth);
        sys.lambdas.push_back({li, lam.lambda, lam.method});
        ++ordinal;
        const CutExtraction& ec = *synth.cut;
        if (as.is_neumann(ec.a, ec.b))
          as.neumann_terms(cell.box, ec.a, ec.b, fe);
        else
          as.chord_terms(cell.box, ec.a, ec.b, lam.lambda * safety, ke, fe);
      }
    }

    int nid[4];
    detail::cell_nodes(mesh, cell, nid);
    as.add_element(nid, ke, fe);
  }

  sys.A = csr_from_triplets(mesh.dof_count, as.idx, as.vals);
  sys.b = std::move(as.rhs);
  return sys;
}

struct FcmSolution {
  std::vector<double> u;  // one value per mesh node, hanging nodes reconstructed
  CgResult cg;
};

inline FcmSolution solve(const QuadtreeMesh& mesh, const FcmSystem& sys, double rel_tol = 1e-10,
                         int max_iter = 0) {
  FcmSolution sol;
  sol.cg = jacobi_pcg(sys.A, sys.b, rel_tol, max_iter);
  sol.u.assign(mesh.node_keys.size(), 0.0);
  for (size_t n = 0; n < mesh.node_keys.size(); ++n) {
    const int dof = mesh.dof_of_node[n];
    if (dof >= 0) sol.u[n] = sol.cg.x[static_cast<size_t>(dof)];
  }
  for (const NodeConstraint& c : mesh.constraints)
    sol.u[static_cast<size_t>(c.node)] =
        0.5 * (sol.u[static_cast<size_t>(c.masters[0])] + sol.u[static_cast<size_t>(c.masters[1])]);
  return sol;
}

namespace detail {

// sqrt of the alpha-masked integral of (u_h - ref)^2; ref = null measures u_h
inline double l2_masked(const QuadtreeMesh& mesh, const PoissonProblem& prob,
                        const std::vector<double>& u_node,
                        const std::function<double(Point)>& ref, const IntegrationParams& params) {
  double acc = 0.0;
  for (const MeshCell& cell : mesh.leaves) {
    int nid[4];
    cell_nodes(mesh, cell, nid);
    const double un[4] = {u_node[static_cast<size_t>(nid[0])], u_node[static_cast<size_t>(nid[1])],
                          u_node[static_cast<size_t>(nid[2])], u_node[static_cast<size_t>(nid[3])]};
    auto integrand = [&](Point p, std::array<double, 1>& out) {
      const ShapeValues v = shape_at(cell.box, p);
      double uh = 0.0;
      for (int i = 0; i < 4; ++i) uh += un[i] * v.phi[i];
      const double d = ref ? uh - ref(p) : uh;
      out[0] = d * d;
    };
    std::array<double, 1> cell_val{};
    if (cell.cls == CellClass::cut) {
      cell_val = integrate_cell_multi<1>(integrand, cell.box,
                                         [&prob](Point p) { return prob.boundary.inside(p); },
                                         make_polyline_cut_predicate(cell.cut->pieces,
                                                                     prob.boundary.inside),
                                         params);
    } else {
      const LeafMark mark = cell.cls == CellClass::inside ? LeafMark::inside : LeafMark::outside;
      cell_val = integrate_cell_multi<1>(integrand, cell.box, [](Point) { return true; },
                                         [mark](const Box&) { return mark; }, params);
    }
    acc += cell_val[0];
  }
  return std::sqrt(acc);
}

}  // namespace detail

inline double l2_error(const QuadtreeMesh& mesh, const PoissonProblem& prob,
                       const std::vector<double>& u_node, const IntegrationParams& params = {}) {
  require(static_cast<bool>(prob.exact), Errc::bad_input,
          "problem has no exact solution to compare against");
  return detail::l2_masked(mesh, prob, u_node, prob.exact, params);
}

// Benchmark geometry: a five-petal flower centered in the box, giving a rich
// variety of cut configurations at any refinement level.
inline Boundary flower_boundary(Point center = {0.0, 0.0}, double r0 = 0.7, double amp = 0.12,
                                int petals = 5, int scan = 8192) {
  Boundary bd;
  bd.gamma = [center, r0, amp, petals](double t) {
    const double th = 2.0 * std::numbers::pi * t;
    const double r = r0 + amp * std::cos(petals * th);
    return Point{center.x + r * std::cos(th), center.y + r * std::sin(th)};
  };
  bd.inside = [center, r0, amp, petals](Point p) {
    const double dx = p.x - center.x, dy = p.y - center.y;
    const double th = std::atan2(dy, dx);
    return std::hypot(dx, dy) <= r0 + amp * std::cos(petals * th);
  };
  bd.scan_samples = scan;
  return bd;
}

struct SolveSettings {
  int l_min = 5;
  int l_max = 7;
  double safety = 2.0;
  IntegrationParams params;
  EstimatePolicy policy;
  double rel_tol = 1e-10;
  int max_iter = 0;
  int threads = 1;
};

struct LambdaComparison {
  size_t cutcells = 0;
  int fallback_count = 0;       // network pass cells that used the eigen path
  double max_rel_diff = 0.0;    // per-cell |nn - oracle| / oracle
  double median_rel_diff = 0.0;
  double l2_rel_diff = 0.0;     // relative L2 distance of the two solutions
  double seconds_oracle = 0.0;  // wall clock of each lambda pass
  double seconds_nn = 0.0;
  int iterations_oracle = 0;
  int iterations_nn = 0;
};

// Solves the same problem with oracle and network stabilization (both scaled
// by the safety factor) and reports how far the two runs are apart.
inline LambdaComparison compare_lambda_sources(const PoissonProblem& prob, const MlpModel& model,
                                               const SolveSettings& s = {}) {
  using clock = std::chrono::steady_clock;
  const QuadtreeMesh mesh = build_mesh(prob, s.l_min, s.l_max);

  LambdaComparison rep;
  std::vector<LambdaValue> oracle;
  const auto t0 = clock::now();
  for (const MeshCell& cell : mesh.leaves)
    if (cell.cls == CellClass::cut) {
      const EstimateResult r =
          eigen_estimate(cell.box, prob.boundary, *cell.cut, s.policy.fallback_n_ai);
      oracle.push_back({r.lambda_raw, r.method});
    }
  const auto t1 = clock::now();
  const std::vector<LambdaValue> nn =
      batch_lambdas(mesh, prob.boundary, model, s.policy, s.threads);
  const auto t2 = clock::now();
  rep.seconds_oracle = std::chrono::duration<double>(t1 - t0).count();
  rep.seconds_nn = std::chrono::duration<double>(t2 - t1).count();
  rep.cutcells = oracle.size();

  std::vector<double> rel;
  rel.reserve(oracle.size());
  for (size_t i = 0; i < oracle.size(); ++i) {
    if (nn[i].method == EstimateMethod::eigen_fallback) ++rep.fallback_count;
    if (oracle[i].lambda > 0.0)
      rel.push_back(std::abs(nn[i].lambda - oracle[i].lambda) / oracle[i].lambda);
  }
  if (!rel.empty()) {
    rep.max_rel_diff = *std::max_element(rel.begin(), rel.end());
    const size_t mid = rel.size() / 2;
    std::nth_element(rel.begin(), rel.begin() + static_cast<long>(mid), rel.end());
    rep.median_rel_diff = rel[mid];
  }

  const FcmSystem sys_or =
      assemble(mesh, prob, make_table_provider(oracle), s.safety, s.params);
  const FcmSystem sys_nn = assemble(mesh, prob, make_table_provider(nn), s.safety, s.params);
  const FcmSolution sol_or = solve(mesh, sys_or, s.rel_tol, s.max_iter);
  const FcmSolution sol_nn = solve(mesh, sys_nn, s.rel_tol, s.max_iter);
  rep.iterations_oracle = sol_or.cg.iterations;
  rep.iterations_nn = sol_nn.cg.iterations;

  std::vector<double> diff(sol_or.u.size());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] = sol_nn.u[i] - sol_or.u[i];
  const double den = detail::l2_masked(mesh, prob, sol_or.u, nullptr, s.params);
  const double num = detail::l2_masked(mesh, prob, diff, nullptr, s.params);
  rep.l2_rel_diff = den > 0.0 ? num / den : num;
  return rep;
}

// Nodal solution export: one row per mesh node, physical-domain nodes flagged.
inline void write_solution_csv(const std::string& path, const QuadtreeMesh& mesh,
                               const PoissonProblem& prob, const std::vector<double>& u_node) {
  require(u_node.size() == mesh.node_keys.size(), Errc::bad_input,
          "solution vector does not match the mesh");
  FILE* f = std::fopen(path.c_str(), "w");
  require(f != nullptr, Errc::bad_input, "cannot open for writing: " + path);
  std::fputs("x,y,u,physical\n", f);
  for (size_t n = 0; n < mesh.node_keys.size(); ++n) {
    const Point p = mesh.node_coord(static_cast<int>(n));
    const bool phys = prob.boundary.inside ? prob.boundary.inside(p) : true;
    std::fprintf(f, "%.17g,%.17g,%.17g,%d\n", p.x, p.y, u_node[n], phys ? 1 : 0);
  }
  const bool ok = std::fflush(f) == 0 && !std::ferror(f);
  std::fclose(f);
  require(ok, Errc::bad_input, "write failed: " + path);
}

}  // namespace fcmstab
