#pragma once

// First stage: anchors on the BEV grid, the proposal head, decoding, rotated
// NMS and anchor target assignment.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/layers.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

/// Car anchor: fixed size and height, one anchor per yaw.
struct AnchorConfig {
  double width = 1.6;
  double length = 3.9;
  double height = 1.56;
  double z_center = -1.0;
  std::vector<double> yaws{0.0, kPi / 2};
};

struct AnchorSet {
  std::vector<Box3D> boxes;  // index (a * height + row) * width + col
  std::size_t per_cell = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return boxes.size(); }
  std::size_t index(std::size_t a, std::size_t row, std::size_t col) const {
    return (a * height + row) * width + col;
  }
};

/// One anchor per yaw at the center of every stride-8 BEV cell.
AnchorSet make_anchors(const VoxelGridSpec& spec, const AnchorConfig& config);

struct RpnOutput {
  Tensor logits;     // [A, H, W]
  Tensor residuals;  // [7A, H, W]; channel a * 7 + k
};

struct RpnHead {
  Conv2dLayer hidden;  // 3x3 + ReLU
  Conv2dLayer cls;     // 1x1 -> A, zero init
  Conv2dLayer reg;     // 1x1 -> 7A, zero init

  static RpnHead create(ParameterStore& store, const std::string& name, std::size_t in_channels,
                        std::size_t hidden_channels, std::size_t anchors_per_cell,
                        std::mt19937_64& rng);
  RpnOutput operator()(const Tensor& joint) const;
};

/// Flat offsets of anchor `index`'s seven residual channels in RpnOutput::residuals.
std::array<std::size_t, 7> residual_offsets(const AnchorSet& anchors, std::size_t index);

struct Proposal {
  Box3D box;
  double score = 0;
  std::size_t anchor = 0;
};

/// Decodes every anchor, keeps the `top_k` highest scores (ties by index).
/// Log-size residuals are clipped to +-4 before decoding.
std::vector<Proposal> decode_proposals(const RpnOutput& out, const AnchorSet& anchors,
                                       std::size_t top_k);

/// Greedy suppression by BEV rotated IoU in descending score order, earlier
/// index first on ties. Returns indices into `proposals`.
std::vector<std::size_t> nms(const std::vector<Proposal>& proposals, double iou_threshold,
                             std::size_t max_keep);

struct TargetAssignment {
  std::vector<std::int8_t> label;     // 1 positive, 0 negative, -1 ignored
  std::vector<std::int32_t> matched;  // gt index for positives, else -1
  std::vector<Residual> residual;     // encode(gt, anchor) for positives

  std::size_t positives() const;
};

/// BEV IoU >= pos_iou is positive, <= neg_iou negative, otherwise ignored;
/// each gt additionally claims its best anchor.
TargetAssignment assign_targets(const AnchorSet& anchors, const std::vector<Box3D>& gts,
                                double pos_iou = 0.6, double neg_iou = 0.45);

}  // namespace cvf
