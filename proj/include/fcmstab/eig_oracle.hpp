#pragma once

// Ground-truth stabilization parameter for one cutcell: assemble the local
// 4x4 pencil (K, M) for the bilinear basis and return its largest generalized
// eigenvalue. K is the boundary normal-gradient matrix over the Dirichlet
// segment, M the alpha-weighted stiffness over the cell.
//
// Both matrices carry the cell's physical scale: gradients pick up 2/l, the
// segment measure l/2, the area measure (l/2)^2. Net effect K ~ (2/l)*K_std
// and M ~ M_std, so the eigenvalue scales as lambda(l) = (2/l)*lambda_std.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "fcmstab/core.hpp"
#include "fcmstab/geometry.hpp"
#include "fcmstab/linalg.hpp"
#include "fcmstab/quadrature.hpp"

namespace fcmstab {

struct EigenPencil {
  // row-major 4x4, both symmetric PSD with (1,1,1,1) in the null space
  std::array<double, 16> K{};
  std::array<double, 16> M{};
};

struct OracleResult {
  double lambda = 0.0;
  int n_ai_used = 0;
  EigenPencil pencil;
};

// Bilinear nodal basis on [-1,1]^2, nodes ordered (-1,-1),(1,-1),(1,1),(-1,1).
inline std::array<double, 4> q1_basis_values(Point xi) {
  return {0.25 * (1.0 - xi.x) * (1.0 - xi.y), 0.25 * (1.0 + xi.x) * (1.0 - xi.y),
          0.25 * (1.0 + xi.x) * (1.0 + xi.y), 0.25 * (1.0 - xi.x) * (1.0 + xi.y)};
}

inline std::array<Point, 4> q1_basis_gradients(Point xi) {
  return {Point{-0.25 * (1.0 - xi.y), -0.25 * (1.0 - xi.x)},
          Point{+0.25 * (1.0 - xi.y), -0.25 * (1.0 + xi.x)},
          Point{+0.25 * (1.0 + xi.y), +0.25 * (1.0 + xi.x)},
          Point{-0.25 * (1.0 + xi.y), +0.25 * (1.0 - xi.x)}};
}

namespace detail {

// K contribution of one oriented segment in standard-cell coordinates,
// accumulated without the physical scale factor (applied once by the caller).
inline void accumulate_boundary_matrix(std::array<double, 16>& K, Point a, Point b,
                                       int n_gauss_seg) {
  const double len = dist(a, b);
  if (len <= 0.0) return;
  const Point dir = (1.0 / len) * (b - a);
  const Point n{-dir.y, dir.x};  // +90 degrees; sign cancels in the product
  const GaussRule g = gauss_rule(n_gauss_seg);
  const Point mid = 0.5 * (a + b);
  const Point half = 0.5 * (b - a);
  for (int q = 0; q < g.n; ++q) {
    const Point xi = mid + g.x[q] * half;
    const auto grads = q1_basis_gradients(xi);
    const double w = 0.5 * len * g.w[q];
    double gn[4];
    for (int i = 0; i < 4; ++i) gn[i] = dot(grads[i], n);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) K[static_cast<size_t>(4 * i + j)] += w * gn[i] * gn[j];
  }
}

// M over the standard cell via the adaptive rule; the integrand is the 10
// upper-triangle entries of the gradient Gram matrix, alpha applied by the
// quadrature.
template <class Classify, class CutPred>
std::array<double, 16> stiffness_matrix(Classify classify, CutPred cut_pred,
                                        const IntegrationParams& p) {
  auto f = [](Point xi, std::array<double, 10>& out) {
    const auto g = q1_basis_gradients(xi);
    size_t k = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) out[k++] = dot(g[i], g[j]);
  };
  const auto tri = integrate_cell_multi<10>(f, standard_cell(), classify, cut_pred, p);
  std::array<double, 16> M{};
  size_t k = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      M[static_cast<size_t>(4 * i + j)] = tri[k];
      M[static_cast<size_t>(4 * j + i)] = tri[k];
      ++k;
    }
  return M;
}

inline void scale_matrix(std::array<double, 16>& m, double s) {
  for (double& v : m) v *= s;
}

}  // namespace detail

// Pencil for a straight chord cut on a cell of physical side l. The config
// lives on the standard cell; only the scale factor distinguishes cells.
inline EigenPencil assemble_pencil(const CutConfig& c, double cell_side,
                                   const IntegrationParams& p) {
  validate(p);
  require(cell_side > 0.0, Errc::bad_input, "cell_side must be positive");
  require(dist(c.a, c.b) > kDegenerateLen, Errc::degenerate_cut,
          "cut endpoints coincide");
  EigenPencil out;
  detail::accumulate_boundary_matrix(out.K, c.a, c.b, p.n_gauss_seg);
  detail::scale_matrix(out.K, 2.0 / cell_side);
  auto classify = [&c](Point pt) { return physical_side(pt, c) == Region::physical; };
  out.M = detail::stiffness_matrix(classify, make_chord_cut_predicate(c), p);
  return out;
}

// Pencil for an arbitrary in-cell boundary given as polyline pieces plus a
// point classifier, both in standard-cell coordinates. Used when a single
// chord does not represent the cut (multiple pieces, strong curvature).
template <class Inside>
EigenPencil assemble_pencil_general(const std::vector<CutPiece>& pieces, Inside inside,
                                    double cell_side, const IntegrationParams& p) {
  validate(p);
  require(cell_side > 0.0, Errc::bad_input, "cell_side must be positive");
  require(!pieces.empty(), Errc::bad_input, "no boundary pieces in cell");
  EigenPencil out;
  for (const auto& piece : pieces)
    for (size_t i = 1; i < piece.polyline.size(); ++i)
      detail::accumulate_boundary_matrix(out.K, piece.polyline[i - 1], piece.polyline[i],
                                         p.n_gauss_seg);
  detail::scale_matrix(out.K, 2.0 / cell_side);
  auto classify = [&inside](Point pt) { return inside(pt); };
  out.M = detail::stiffness_matrix(classify, make_polyline_cut_predicate(pieces, inside), p);
  return out;
}

// Largest generalized eigenvalue of K v = Lambda M v, handling the shared
// rank deficiency by a spectral cutoff on M: M = Q D Q^T, keep D_i > tau_abs,
// then take the top eigenvalue of S = D^{-1/2} Q^T K Q D^{-1/2}.
inline double max_gen_eig(const EigenPencil& p,
                          std::optional<double> tau_abs = std::nullopt) {
  const SymEig me = jacobi_eig(p.M.data(), 4);
  double max_diag = 0.0;
  for (int i = 0; i < 4; ++i) max_diag = std::max(max_diag, p.M[static_cast<size_t>(5 * i)]);
  const double tau = tau_abs ? *tau_abs : 1e-14 * max_diag;

  int kept[4], m = 0;
  for (int i = 0; i < 4; ++i)
    if (me.values[static_cast<size_t>(i)] > tau) kept[m++] = i;
  if (m == 0) fail(Errc::singular_pencil, "all M modes below spectral cutoff");

  // B = Q_kept * D_kept^{-1/2}; S = B^T K B
  double B[16];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < m; ++c)
      B[r * m + c] = me.vectors[static_cast<size_t>(r * 4 + kept[c])] /
                     std::sqrt(me.values[static_cast<size_t>(kept[c])]);
  double KB[16];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < m; ++c) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += p.K[static_cast<size_t>(4 * r + k)] * B[k * m + c];
      KB[r * m + c] = s;
    }
  double S[16];
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += B[k * m + r] * KB[k * m + c];
      S[r * m + c] = s;
    }
  // exact symmetry guards the Jacobi sweep against accumulation noise
  for (int r = 0; r < m; ++r)
    for (int c = r + 1; c < m; ++c) {
      const double v = 0.5 * (S[r * m + c] + S[c * m + r]);
      S[r * m + c] = v;
      S[c * m + r] = v;
    }
  const SymEig se = jacobi_eig(S, m);
  return std::max(se.values[0], 0.0);
}

inline OracleResult lambda_oracle(const CutConfig& c, double cell_side = 2.0, int n_ai = 8) {
  IntegrationParams p;
  p.n_ai = n_ai;
  OracleResult out;
  out.pencil = assemble_pencil(c, cell_side, p);
  out.lambda = max_gen_eig(out.pencil);
  out.n_ai_used = n_ai;
  return out;
}

struct ConvergedLambda {
  double lambda = 0.0;   // the n_ref reference value
  int n_ai_required = 0;  // first depth within rel_tol of it
};

// Reference eigenvalue at depth n_ref plus the smallest depth from n_start on
// whose eigenvalue is within rel_tol of that reference.
inline ConvergedLambda lambda_converged(const CutConfig& c, double rel_tol = 0.01,
                                        int n_ref = 20, int n_start = 3) {
  require(rel_tol > 0.0, Errc::bad_input, "rel_tol must be positive");
  require(n_start >= 0 && n_ref >= n_start, Errc::bad_input,
          "need 0 <= n_start <= n_ref");
  const double ref = lambda_oracle(c, 2.0, n_ref).lambda;
  if (ref == 0.0) return {0.0, n_start};
  for (int n = n_start; n < n_ref; ++n) {
    const double ln = lambda_oracle(c, 2.0, n).lambda;
    if (std::abs(ln - ref) / ref < rel_tol) return {ref, n};
  }
  return {ref, n_ref};
}

}  // namespace fcmstab
