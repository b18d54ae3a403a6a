#pragma once

// Detection metrics: greedy 3D-IoU matching, 41-point interpolated AP,
// range-binned AP, and grayscale dumps of feature or attention maps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/io.hpp"
#include "cvf/tensor.hpp"

namespace cvf {

struct Detection {
  Box3D box;
  double score = 0;
  std::string label = "Car";
};

/// Indices ordered by score descending, insertion order on ties.
std::vector<std::size_t> score_order(std::span<const Detection> dets);

/// Greedy matching in score order; each detection takes the unmatched gt of
/// highest 3D IoU, provided it reaches the threshold. Returns the matched gt
/// per detection, or -1.
std::vector<std::int64_t> match_detections(std::span<const Detection> dets,
                                           std::span<const Box3D> gts, double iou_threshold);

struct SceneResult {
  std::vector<Detection> detections;
  std::vector<Box3D> gts;
};

inline constexpr std::size_t kRecallLevels = 41;

struct ApResult {
  double ap = 0;
  std::size_t num_gt = 0, num_det = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<double> precision, recall;          // one sample per ranked detection
  std::array<double, kRecallLevels> interpolated{};  // at recall k / 40
  bool empty_warning = false;                     // no gts and no detections
};

/// Matching runs per scene; the ranked list pools every scene's detections
/// (score descending, then scene order, then insertion order).
ApResult average_precision_41pt(std::span<const SceneResult> scenes, double iou_threshold);
ApResult average_precision_41pt(std::span<const Detection> dets, std::span<const Box3D> gts,
                                double iou_threshold);

/// Range bins [0, 20), [20, 40), [40, inf) over BEV distance from the sensor.
inline constexpr std::array<double, 3> kRangeBinStarts{0.0, 20.0, 40.0};
inline constexpr std::array<const char*, 3> kRangeBinNames{"0-20m", "20-40m", "40-70m"};

std::size_t range_bin(const Vec3& center);

/// Splits every scene by bin: gts by their own range, detections by the range
/// of the gt they match (scene-wide matching) or their own when unmatched.
std::array<std::vector<SceneResult>, 3> partition_by_range(std::span<const SceneResult> scenes,
                                                            double iou_threshold);

std::array<ApResult, 3> distance_binned_eval(std::span<const SceneResult> scenes,
                                             double iou_threshold);

/// JSON report: overall and per-bin AP with counts and the interpolated curve.
std::string format_eval_report(const ApResult& overall, const std::array<ApResult, 3>* bins,
                               double iou_threshold);

/// [H, W] as-is, or [C, H, W] reduced by the L2 norm over channels, min-max
/// scaled to 0..255 with rounding. A constant map renders as 128.
GrayImage render_map(const Tensor& map);
void dump_bev_image(const Tensor& map, const std::filesystem::path& path);

}  // namespace cvf
