#pragma once

// Detection losses. Every function returns a scalar tensor wired into the
// autodiff graph of its prediction inputs.

#include <cstdint>
#include <span>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/tensor.hpp"

namespace cvf {

struct LossWeights {
  double beta1 = 1.0;
  double beta2 = 2.0;
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbEpsilon = 1e-12;

/// Probabilities below the epsilon clamp seen by focal_loss since startup.
std::size_t focal_clamp_warnings();

/// Mean over non-ignored boxes of -a(1-p)^g log p for label 1 and
/// -(1-a)p^g log(1-p) for label 0; label -1 is skipped.
Tensor focal_loss(const Tensor& prob, std::span<const std::int8_t> label, const LossWeights& w);

/// Smooth-L1 (beta 1) on the six location residuals, summed over dims and
/// averaged over rows of pred[P,7].
Tensor reg_loss_loc(const Tensor& pred, std::span<const Residual> target);

/// Smooth-L1 of sin(pred_yaw - target_yaw), averaged over rows of pred[P,7].
Tensor reg_loss_angle(const Tensor& pred, std::span<const Residual> target);

/// Soft confidence target from 3D IoU: clamp((iou - lo) / (hi - lo), 0, 1).
double iou_soft_target(double iou, double lo = 0.25, double hi = 0.75);

/// Mean binary cross-entropy between sigmoid(logit[K]) and soft targets,
/// offset by the target entropy so the minimum is exactly zero.
Tensor iou_confidence_loss(const Tensor& logit, std::span<const double> target);

/// beta1 * first + beta2 * (angle + loc); used for both stages.
Tensor weighted_detection_loss(const Tensor& first, const Tensor& angle, const Tensor& loc,
                               const LossWeights& w);

}  // namespace cvf
