#pragma once

// Scene samples, the synthetic scene generator and joint augmentation of
// points, boxes and calibrations.

#include <cstdint>
#include <string>
#include <vector>

#include "cvf/cross_view.hpp"
#include "cvf/geometry.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

struct CameraInput {
  CameraView view;        // stride 8 features, or a raw image at stride 1
  bool raw_image = false;
  std::size_t image_width = 0, image_height = 0;
};

struct SceneSample {
  std::vector<LidarPoint> points;
  std::vector<CameraInput> cameras;
  std::vector<Box3D> gt_boxes;
  std::vector<std::string> gt_classes;
};

/// True when the box footprint lies inside the spec's x/y range.
bool box_in_range(const Box3D& box, const VoxelGridSpec& spec, double margin = 0.0);

/// KITTI-style front camera: focal 721.5 px, 1242 x 375 image, camera axes
/// (right, down, forward) = (-y, -z, x) of the LiDAR frame.
Calibration default_front_calibration();

enum class CameraMode { Signature, Noise };

struct SyntheticConfig {
  std::size_t n_objects = 3;
  double min_range = 6.0;   // BEV distance of box centers from the sensor
  double max_range = 60.0;
  double clearance = 0.5;   // minimum footprint gap between objects
  double ground_z = -1.73;
  /// Surface points per box: clamp(surface_density / r^2, min, max).
  double surface_density = 25000.0;
  std::size_t min_surface_points = 4;
  std::size_t max_surface_points = 1500;
  std::size_t ground_points = 3000;
  /// Car-sized decoys with their own camera signature, placed beyond
  /// clutter_min_range.
  std::size_t clutter_objects = 0;
  double clutter_min_range = 40.0;
  std::size_t camera_channels = 8;
  std::size_t image_width = 1242, image_height = 375;
  double camera_stride = 8;
  double camera_signal = 1.0;
  double camera_noise = 0.1;
  CameraMode camera_mode = CameraMode::Signature;
};

/// Pure function of (seed, config, spec). Objects are non-overlapping cars
/// fully visible in the front camera; points lie on the faces that see the
/// sensor, plus a ground plane whose density falls off as 1 / range.
SceneSample generate_synthetic_scene(std::uint64_t seed, const SyntheticConfig& config,
                                     const VoxelGridSpec& spec);

/// Surface point count of an object at BEV range r under `config`.
std::size_t surface_point_count(double range, const SyntheticConfig& config);

struct AugmentBounds {
  double flip_probability = 0.5;
  double max_rotation = kPi / 4;
  double scale_min = 0.95;
  double scale_max = 1.05;
};

struct AugmentDraw {
  bool flip = false;
  double rotation = 0;
  double scale = 1;

  /// Flip, then rotation, then scale.
  std::vector<CloudTransform> ops() const;
};

AugmentDraw draw_augmentation(std::uint64_t seed, const AugmentBounds& bounds);

/// Applies the ops to points and boxes, and adjusts every calibration so the
/// camera features stay registered with the moved points.
SceneSample apply_augmentation(const SceneSample& sample, const AugmentDraw& draw);

inline SceneSample augment(const SceneSample& sample, std::uint64_t seed,
                           const AugmentBounds& bounds = {}) {
  return apply_augmentation(sample, draw_augmentation(seed, bounds));
}

}  // namespace cvf
