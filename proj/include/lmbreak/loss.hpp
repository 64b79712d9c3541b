#pragma once

#include "lmbreak/heatmap.hpp"

namespace lmb {

/// Denominator stabiliser of the cosine heat-map loss.
inline constexpr double kCosineDelta = 1e-8;

/// Sum over maps of cos(pred_i, ref_i) with each map flattened to a vector:
/// (pred_i . ref_i) / (|pred_i| |ref_i| + delta). Lies in [-k, k].
double heatmap_cosine_loss(const HeatmapSet& pred, const HeatmapSet& ref, double delta = kCosineDelta);

struct LossWithGradient {
  double loss = 0.0;
  HeatmapSet d_pred;  // dL/dpred, same shape as pred
};

LossWithGradient heatmap_cosine_loss_grad(const HeatmapSet& pred, const HeatmapSet& ref, double delta = kCosineDelta);

/// Same formula evaluated in single precision, as a float32 network would.
/// At pred == ref the delta contribution is below float resolution, so the
/// result there is rounding residue rather than the exact derivative.
LossWithGradient heatmap_cosine_loss_grad_f32(const HeatmapSet& pred, const HeatmapSet& ref,
                                              double delta = kCosineDelta);

}  // namespace lmb
