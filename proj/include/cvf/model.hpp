#pragma once

// The assembled two-stage detector: LiDAR backbone, auto-calibrated camera
// projection, gated fusion, proposal head and RoI fusion refinement, plus the
// joint loss and a fixed-rate Adam trainer.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "cvf/config.hpp"
#include "cvf/cross_view.hpp"
#include "cvf/detect.hpp"
#include "cvf/eval.hpp"
#include "cvf/fusion.hpp"
#include "cvf/losses.hpp"
#include "cvf/params.hpp"
#include "cvf/roi.hpp"
#include "cvf/synthetic.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

/// Per-scene constants derived once: voxel inputs, camera inputs, in-range gts
/// and the anchor targets.
struct PreparedScene {
  VoxelInputs voxels;
  std::vector<CameraInput> cameras;
  std::vector<Box3D> gts;
  TargetAssignment targets;
};

struct ForwardPass {
  BevBackboneOutput lidar;
  std::vector<CameraView> views;  // stride-8 camera features
  Tensor camera_bev;              // [C_c, H, W]
  FusionOutput fusion;
  RpnOutput rpn;
};

struct RefineInputs {
  std::vector<Box3D> boxes;
  bool mask_camera = false;  // zero the pooled camera vector
};

struct LossBreakdown {
  Tensor total;  // scalar, differentiable
  double rpn = 0, refine = 0;
  double rpn_cls = 0, rpn_angle = 0, rpn_loc = 0;
  double ref_iou = 0, ref_angle = 0, ref_loc = 0;
  std::size_t positives = 0, refine_positives = 0;
};

class CvfModel {
 public:
  /// Parameters are drawn from `config.seed`; two models built from the same
  /// config are identical.
  explicit CvfModel(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const AnchorSet& anchors() const { return anchors_; }
  const CameraVoxelGrid& camera_grid() const { return grid_; }
  const OffsetField& offsets() const { return offsets_; }

  PreparedScene prepare(const SceneSample& sample) const;

  ForwardPass forward(const PreparedScene& scene) const;

  /// Stride-8 features of one camera input.
  Tensor camera_features(const CameraInput& cam) const;
  /// Projected camera map at twice the BEV resolution, before compression.
  ProjectedCameraBev project_camera(const std::vector<CameraView>& views, bool use_offsets) const;

  /// First-stage proposals after decoding and NMS.
  std::vector<Proposal> proposals(const ForwardPass& pass) const;

  RefineOutput refine(const ForwardPass& pass, const RefineInputs& inputs) const;

  /// Joint loss; the second stage refines this pass's proposals plus the gts.
  /// Proposal boxes are constants of the graph.
  LossBreakdown loss(const PreparedScene& scene) const;
  /// Same, with the second-stage proposals given.
  LossBreakdown loss(const PreparedScene& scene, std::span<const Box3D> proposals) const;

  /// Refined, rescored and suppressed detections.
  std::vector<Detection> detect(const PreparedScene& scene) const;

 private:
  LossBreakdown loss(const PreparedScene& scene, const ForwardPass& pass,
                     std::span<const Box3D> proposals) const;

  RunConfig config_;
  ParameterStore params_;
  AnchorSet anchors_;
  CameraVoxelGrid grid_;
  std::unique_ptr<LidarBackbone> lidar_;
  std::unique_ptr<CameraBackbone> camera_backbone_;
  OffsetField offsets_;
  CameraBevCompressor compressor_;
  GatedFusion fusion_;
  RpnHead rpn_;
  std::vector<SetEncoder> lidar_pool_;
  SetEncoder camera_pool_;
  RefineHead head_;
};

/// Fixed-rate Adam over the full two-stage loss.
class Trainer {
 public:
  Trainer(CvfModel& model, double learning_rate);

  /// One step on one scene; returns the loss values before the update.
  LossBreakdown step(const PreparedScene& scene);
  std::uint64_t steps() const { return adam_.steps(); }

 private:
  CvfModel& model_;
  Adam adam_;
};

/// Mean of the camera attention map.
double mean_camera_attention(const ForwardPass& pass);

}  // namespace cvf
