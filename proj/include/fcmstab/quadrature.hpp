#pragma once

// Gauss-Legendre rules on segments and adaptive quadtree quadrature on cells.
//
// Cut leaves are bisected into 4 children up to n_ai levels; at the bottom the
// remaining cut leaves integrate with per-point weights (1 on the physical
// side, alpha_fict on the fictitious side). Traversal is depth-first in a
// fixed child order, so the accumulation order (and hence the result) is
// reproducible run to run.

#include <array>
#include <cstddef>

#include "fcmstab/core.hpp"
#include "fcmstab/geometry.hpp"

namespace fcmstab {

struct IntegrationParams {
  int n_ai = 8;             // adaptive bisection depth, 0..24
  int n_gauss = 2;          // points per direction on each leaf
  int n_gauss_seg = 3;      // points on boundary segments
  double alpha_fict = 1e-10;
};

inline void validate(const IntegrationParams& p) {
  require(p.n_ai >= 0 && p.n_ai <= 24, Errc::bad_input, "n_ai out of range [0,24]");
  require(p.n_gauss >= 1 && p.n_gauss <= 10, Errc::bad_input, "n_gauss out of range [1,10]");
  require(p.n_gauss_seg >= 1 && p.n_gauss_seg <= 10, Errc::bad_input, "n_gauss_seg out of range");
  require(p.alpha_fict > 0.0 && p.alpha_fict <= 1e-4, Errc::bad_input,
          "alpha_fict out of range (0, 1e-4]");
}

struct GaussRule {
  const double* x;
  const double* w;
  int n;
};

// Nodes/weights on [-1,1], positive-x half mirrored. Verified against the
// Legendre recurrence in the test suite.
inline GaussRule gauss_rule(int n) {
  static const double x1[] = {0.0};
  static const double w1[] = {2.0};
  static const double x2[] = {-0.57735026918962576, 0.57735026918962576};
  static const double w2[] = {1.0, 1.0};
  static const double x3[] = {-0.77459666924148338, 0.0, 0.77459666924148338};
  static const double w3[] = {0.55555555555555556, 0.88888888888888889, 0.55555555555555556};
  static const double x4[] = {-0.86113631159405258, -0.33998104358485626, 0.33998104358485626,
                              0.86113631159405258};
  static const double w4[] = {0.34785484513745386, 0.65214515486254614, 0.65214515486254614,
                              0.34785484513745386};
  static const double x5[] = {-0.90617984593866399, -0.53846931010568309, 0.0,
                              0.53846931010568309, 0.90617984593866399};
  static const double w5[] = {0.23692688505618909, 0.47862867049936647, 0.56888888888888889,
                              0.47862867049936647, 0.23692688505618909};
  static const double x6[] = {-0.93246951420315203, -0.66120938646626451, -0.23861918608319691,
                              0.23861918608319691, 0.66120938646626451, 0.93246951420315203};
  static const double w6[] = {0.17132449237917035, 0.36076157304813861, 0.46791393457269105,
                              0.46791393457269105, 0.36076157304813861, 0.17132449237917035};
  static const double x7[] = {-0.94910791234275852, -0.74153118559939444, -0.40584515137739717,
                              0.0,                  0.40584515137739717,  0.74153118559939444,
                              0.94910791234275852};
  static const double w7[] = {0.12948496616886969, 0.27970539148927667, 0.38183005050511894,
                              0.41795918367346939, 0.38183005050511894, 0.27970539148927667,
                              0.12948496616886969};
  static const double x8[] = {-0.96028985649753623, -0.79666647741362674, -0.52553240991632899,
                              -0.18343464249564980, 0.18343464249564980,  0.52553240991632899,
                              0.79666647741362674,  0.96028985649753623};
  static const double w8[] = {0.10122853629037626, 0.22238103445337447, 0.31370664587788729,
                              0.36268378337836198, 0.36268378337836198, 0.31370664587788729,
                              0.22238103445337447, 0.10122853629037626};
  static const double x9[] = {-0.96816023950762609, -0.83603110732663580, -0.61337143270059040,
                              -0.32425342340380893, 0.0,                  0.32425342340380893,
                              0.61337143270059040,  0.83603110732663580,  0.96816023950762609};
  static const double w9[] = {0.081274388361574412, 0.18064816069485740, 0.26061069640293546,
                              0.31234707704000284,  0.33023935500125976, 0.31234707704000284,
                              0.26061069640293546,  0.18064816069485740, 0.081274388361574412};
  static const double x10[] = {-0.97390652851717172, -0.86506336668898451, -0.67940956829902441,
                               -0.43339539412924719, -0.14887433898163121, 0.14887433898163121,
                               0.43339539412924719,  0.67940956829902441,  0.86506336668898451,
                               0.97390652851717172};
  static const double w10[] = {0.066671344308688138, 0.14945134915058059, 0.21908636251598204,
                               0.26926671930999636,  0.29552422471475287, 0.29552422471475287,
                               0.26926671930999636,  0.21908636251598204, 0.14945134915058059,
                               0.066671344308688138};
  switch (n) {
    case 1: return {x1, w1, 1};
    case 2: return {x2, w2, 2};
    case 3: return {x3, w3, 3};
    case 4: return {x4, w4, 4};
    case 5: return {x5, w5, 5};
    case 6: return {x6, w6, 6};
    case 7: return {x7, w7, 7};
    case 8: return {x8, w8, 8};
    case 9: return {x9, w9, 9};
    case 10: return {x10, w10, 10};
  }
  fail(Errc::bad_input, "gauss rule order must be in [1,10]");
}

template <class F>
double integrate_segment(F&& f, Point a, Point b, int n) {
  const double len = dist(a, b);
  require(len > 0.0, Errc::bad_input, "segment has zero length");
  const GaussRule g = gauss_rule(n);
  const Point mid = 0.5 * (a + b);
  const Point half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < g.n; ++i) s += g.w[i] * f(mid + g.x[i] * half);
  return 0.5 * len * s;
}

enum class LeafMark { inside, outside, cut };

// Leaf classifier for a straight chord: corner sides must agree and the
// chord segment must miss the box, otherwise the leaf is cut. Corner checks
// alone miss slivers that enter and leave through one edge's neighborhood.
inline auto make_chord_cut_predicate(const CutConfig& c) {
  return [c](const Box& leaf) -> LeafMark {
    if (segment_intersects_box(c.a, c.b, leaf)) return LeafMark::cut;
    const Point lo = leaf.lo(), hi = leaf.hi();
    const Region r0 = physical_side({lo.x, lo.y}, c);
    const Region r1 = physical_side({hi.x, lo.y}, c);
    const Region r2 = physical_side({hi.x, hi.y}, c);
    const Region r3 = physical_side({lo.x, hi.y}, c);
    if (r0 == r1 && r1 == r2 && r2 == r3)
      return r0 == Region::physical ? LeafMark::inside : LeafMark::outside;
    return LeafMark::cut;
  };
}

// Same contract for a curved boundary described by in-cell polyline pieces.
template <class Inside>
inline auto make_polyline_cut_predicate(const std::vector<CutPiece>& pieces, Inside inside) {
  return [&pieces, inside](const Box& leaf) -> LeafMark {
    for (const auto& piece : pieces)
      for (size_t i = 1; i < piece.polyline.size(); ++i)
        if (segment_intersects_box(piece.polyline[i - 1], piece.polyline[i], leaf))
          return LeafMark::cut;
    const Point lo = leaf.lo(), hi = leaf.hi();
    const bool b0 = inside(Point{lo.x, lo.y});
    if (inside(Point{hi.x, lo.y}) != b0 || inside(Point{hi.x, hi.y}) != b0 ||
        inside(Point{lo.x, hi.y}) != b0)
      return LeafMark::cut;
    return b0 ? LeafMark::inside : LeafMark::outside;
  };
}

namespace detail {

template <size_t N, class F, class Classify, class CutPred>
void integrate_cell_rec(F& f, Classify& classify, CutPred& cut_pred, const Box& cell, int depth,
                        const IntegrationParams& p, const GaussRule& g,
                        std::array<double, N>& acc) {
  const LeafMark mark = cut_pred(cell);
  if (mark == LeafMark::cut && depth < p.n_ai) {
    const double q = 0.25 * cell.side;
    const double s = 0.5 * cell.side;
    // SW, SE, NW, NE
    const Box kids[4] = {{{cell.center.x - q, cell.center.y - q}, s},
                         {{cell.center.x + q, cell.center.y - q}, s},
                         {{cell.center.x - q, cell.center.y + q}, s},
                         {{cell.center.x + q, cell.center.y + q}, s}};
    for (const Box& kid : kids) integrate_cell_rec<N>(f, classify, cut_pred, kid, depth + 1, p, g, acc);
    return;
  }
  const double h = 0.5 * cell.side;
  const double jac = h * h;
  std::array<double, N> val;
  for (int i = 0; i < g.n; ++i) {
    const double px = cell.center.x + h * g.x[i];
    for (int j = 0; j < g.n; ++j) {
      const Point pt{px, cell.center.y + h * g.x[j]};
      double alpha;
      if (mark == LeafMark::inside)
        alpha = 1.0;
      else if (mark == LeafMark::outside)
        alpha = p.alpha_fict;
      else
        alpha = classify(pt) ? 1.0 : p.alpha_fict;
      const double wt = alpha * jac * g.w[i] * g.w[j];
      f(pt, val);
      for (size_t k = 0; k < N; ++k) acc[k] += wt * val[k];
    }
  }
}

}  // namespace detail

// N-component adaptive cell integration; all components share one traversal.
// f(point, out) fills out[0..N); classify(point) -> bool (true = physical).
template <size_t N, class F, class Classify, class CutPred>
std::array<double, N> integrate_cell_multi(F f, const Box& cell, Classify classify,
                                           CutPred cut_pred, const IntegrationParams& p) {
  validate(p);
  std::array<double, N> acc{};
  const GaussRule g = gauss_rule(p.n_gauss);
  detail::integrate_cell_rec<N>(f, classify, cut_pred, cell, 0, p, g, acc);
  return acc;
}

template <class F, class Classify, class CutPred>
double integrate_cell(F f, const Box& cell, Classify classify, CutPred cut_pred,
                      const IntegrationParams& p) {
  auto wrap = [&f](Point pt, std::array<double, 1>& out) { out[0] = f(pt); };
  return integrate_cell_multi<1>(wrap, cell, classify, cut_pred, p)[0];
}

}  // namespace fcmstab
