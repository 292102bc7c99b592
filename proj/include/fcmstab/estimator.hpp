#pragma once
// Production-facing stabilization estimates: cut extraction, feature
// normalization, batched network inference, and the 2/l cell scaling, with an
// eigenvalue fallback for cuts a single chord cannot represent.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eig_oracle.hpp"
#include "geometry.hpp"
#include "mlp.hpp"

namespace fcmstab {

enum class EstimateMethod { data_driven, eigen_fallback };

struct EstimatePolicy {
  double quality_threshold = 0.995;  // line quality q below this falls back
  double safety_factor = 2.0;        // applied by the consumer, never here
  int fallback_n_ai = 20;            // adaptive depth for the fallback pencil
  size_t batch_size = 8192;          // rows per inference pass
};

inline void validate(const EstimatePolicy& p) {
  require(p.quality_threshold > 0.0 && p.quality_threshold <= 1.0, Errc::bad_input,
          "quality_threshold out of range (0, 1]");
  require(p.safety_factor > 0.0, Errc::bad_input, "safety_factor must be positive");
  require(p.fallback_n_ai >= 0 && p.fallback_n_ai <= 24, Errc::bad_input,
          "fallback_n_ai out of range [0,24]");
  require(p.batch_size >= 1, Errc::bad_input, "batch_size must be at least 1");
}

struct EstimateResult {
  double lambda_raw = 0.0;  // scaled to the cell, no safety factor
  EstimateMethod method = EstimateMethod::data_driven;
  double quality = 0.0;  // line quality q; 0 when the cut has several pieces
};

// One slot of an estimate_batch answer. Failed cells carry the error instead
// of a result; the batch itself never throws for per-cell conditions.
struct BatchEstimate {
  std::optional<EstimateResult> result;
  std::optional<Errc> error_code;
  std::string error;
  bool ok() const { return result.has_value(); }
};

namespace detail {

// Features for the chord path, or nothing if the policy demands the fallback.
// The chord is mapped to the standard cell, rotated so A sits on the top edge,
// and reduced to the distance features the model was trained on.
inline std::optional<FeatureVector> chord_features(const Box& cell, const CutExtraction& ext,
                                                   const EstimatePolicy& pol) {
  if (ext.segment_count != 1 || ext.q < pol.quality_threshold) return std::nullopt;
  const CutConfig std_cut{to_standard_cell(cell, ext.a), to_standard_cell(cell, ext.b)};
  return cut_distances(normalize_config(std_cut).config);
}

inline EstimateResult finish_data_driven(double prediction, const Box& cell, double q) {
  require(prediction > 0.0 && std::isfinite(prediction), Errc::bad_input,
          "model produced a non-positive stabilization value");
  return {prediction * (2.0 / cell.side), EstimateMethod::data_driven, q};
}

inline CutPiece to_standard_piece(const Box& cell, const CutPiece& p) {
  CutPiece s;
  s.a = to_standard_cell(cell, p.a);
  s.b = to_standard_cell(cell, p.b);
  s.arclength = p.arclength * (2.0 / cell.side);
  s.polyline.reserve(p.polyline.size());
  for (Point q : p.polyline) s.polyline.push_back(to_standard_cell(cell, q));
  return s;
}

}  // namespace detail

// Generalized eigenvalue problem on the actual cut: pieces and the inside
// classifier move to standard coordinates, the pencil scaling restores the
// physical cell, so the result needs no further 2/l factor. This is the
// fallback path of estimate_cell and the reference side of solver-level
// comparisons, given a cut already extracted for the cell.
inline EstimateResult eigen_estimate(const Box& cell, const Boundary& bd,
                                     const CutExtraction& ext, int n_ai = 20) {
  std::vector<CutPiece> pieces;
  pieces.reserve(ext.pieces.size());
  for (const auto& p : ext.pieces) pieces.push_back(detail::to_standard_piece(cell, p));
  const auto inside_std = [&bd, cell](Point s) {
    return bd.inside({cell.center.x + 0.5 * cell.side * s.x,
                      cell.center.y + 0.5 * cell.side * s.y});
  };
  IntegrationParams params;
  params.n_ai = n_ai;
  const EigenPencil pencil = assemble_pencil_general(pieces, inside_std, cell.side, params);
  return {max_gen_eig(pencil), EstimateMethod::eigen_fallback, ext.q};
}

namespace detail {

inline EstimateResult fallback_estimate(const Box& cell, const Boundary& bd,
                                        const CutExtraction& ext, const EstimatePolicy& pol) {
  return eigen_estimate(cell, bd, ext, pol.fallback_n_ai);
}

}  // namespace detail

// Stabilization estimate for one cut cell. Chord-quality cuts go through the
// network with the 2/l scaling; everything else solves the eigenvalue problem
// on the actual cut geometry. Cells the boundary misses are an error.
inline EstimateResult estimate_cell(const Box& cell, const Boundary& bd, const MlpModel& model,
                                    const EstimatePolicy& pol = {}) {
  validate(pol);
  require(cell.side > 0.0, Errc::bad_input, "cell side must be positive");
  const auto ext = extract_cut(cell, bd);
  require(ext.has_value(), Errc::not_a_cutcell, "boundary does not cut this cell");
  if (const auto x = detail::chord_features(cell, *ext, pol))
    return detail::finish_data_driven(forward(model, *x), cell, ext->q);
  return detail::fallback_estimate(cell, bd, *ext, pol);
}

// Batch variant: identical results to per-cell estimate_cell, order
// preserved, with all chord-path inference gathered into one batched forward
// pass. Per-cell failures land in the corresponding slot, not as exceptions.
inline std::vector<BatchEstimate> estimate_batch(const std::vector<Box>& cells,
                                                 const Boundary& bd, const MlpModel& model,
                                                 const EstimatePolicy& pol = {},
                                                 int threads = 1) {
  validate(pol);
  std::vector<BatchEstimate> out(cells.size());
  std::vector<size_t> chord_slot;
  std::vector<FeatureVector> chord_x;
  std::vector<double> chord_q;
  for (size_t i = 0; i < cells.size(); ++i) {
    try {
      const Box& cell = cells[i];
      require(cell.side > 0.0, Errc::bad_input, "cell side must be positive");
      const auto ext = extract_cut(cell, bd);
      require(ext.has_value(), Errc::not_a_cutcell, "boundary does not cut this cell");
      if (auto x = detail::chord_features(cell, *ext, pol)) {
        chord_slot.push_back(i);
        chord_x.push_back(*x);
        chord_q.push_back(ext->q);
      } else {
        out[i].result = detail::fallback_estimate(cell, bd, *ext, pol);
      }
    } catch (const Error& e) {
      out[i].error_code = e.code();
      out[i].error = e.what();
    }
  }
  if (!chord_slot.empty()) {
    const std::vector<double> pred =
        forward_batch(model, chord_x.data(), chord_x.size(), pol.batch_size, threads);
    for (size_t j = 0; j < chord_slot.size(); ++j) {
      const size_t i = chord_slot[j];
      try {
        out[i].result = detail::finish_data_driven(pred[j], cells[i], chord_q[j]);
      } catch (const Error& e) {
        out[i].error_code = e.code();
        out[i].error = e.what();
      }
    }
  }
  return out;
}

}  // namespace fcmstab
