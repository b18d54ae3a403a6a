#pragma once

// Run configuration: a flat `key = value` text file over typed defaults. The
// defaults are the KITTI car setup; configs/desk.cfg scales it down.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cvf/detect.hpp"
#include "cvf/losses.hpp"
#include "cvf/synthetic.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

struct ModelConfig {
  BackboneConfig lidar{16, {32, 64, 128}};
  std::array<std::size_t, 3> camera_backbone{16, 32, 64};  // raw-image stand-in
  std::size_t camera_channels = 64;      // camera feature channels at stride 8
  std::size_t camera_bev_channels = 64;  // after the stride-2 compressor
  std::size_t camera_slabs = 4;
  std::size_t cameras = 1;  // camera inputs per scene
  std::size_t offset_tiles_y = 8, offset_tiles_x = 8;
  bool use_offsets = true;
  bool use_camera = true;
  std::size_t rpn_hidden = 128;
  std::size_t roi_encoder_width = 32;
  std::size_t refine_hidden = 128;
  std::size_t roi_r = 3;
  std::size_t roi_grid = 6;
};

struct DetectConfig {
  double assign_pos_iou = 0.6;
  double assign_neg_iou = 0.45;
  std::size_t pre_nms_top_k = 1000;
  double rpn_nms_iou = 0.7;
  std::size_t rpn_max_keep = 100;
  double refine_pos_iou = 0.55;  // 3D IoU for a refinement regression target
  double iou_target_lo = 0.25, iou_target_hi = 0.75;
  double final_nms_iou = 0.1;
  double score_threshold = 0.1;
  std::size_t max_detections = 50;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t steps = 500;
  std::size_t scenes = 1;  // synthetic training scenes, seeds seed .. seed + scenes - 1
  bool augment = false;
};

struct RunConfig {
  VoxelGridSpec voxel = VoxelGridSpec::kitti();
  AnchorConfig anchors;
  LossWeights loss;
  ModelConfig model;
  DetectConfig detect;
  TrainConfig train;
  AugmentBounds augment;
  SyntheticConfig synth;
  std::uint64_t seed = 0;
  double eval_iou = 0.7;
};

/// Overrides `base` with the assignments in `text`. Blank lines and `#`
/// comments are ignored; unknown keys, repeated keys and malformed values are
/// ParseErrors naming the line.
RunConfig parse_run_config(std::string_view text, const RunConfig& base = {},
                           const std::string& source = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Every key with its current value, one per line, in a fixed order; parsing
/// the result reproduces the config exactly.
std::string format_run_config(const RunConfig& config);

}  // namespace cvf
