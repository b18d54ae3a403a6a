#pragma once

// Camera-view features mapped into the BEV plane. Every cell of a grid at
// twice the LiDAR BEV resolution projects a few 3D centers into each camera,
// shifts them by a learnable per-tile offset and interpolates the feature map
// at the shifted position.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/layers.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

enum class InterpMode { InverseDistance, Bilinear };

using CornerWeights = std::array<double, 4>;

/// Inverse-Euclidean-distance weights of the four lattice corners, normalized
/// to sum to one. A position within 1e-12 of a corner gets a one-hot weight.
CornerWeights interp_weights(const Vec2& pos, const std::array<Vec2, 4>& corners);

/// Product-of-fractions weights; corners in (x0,y0), (x1,y0), (x0,y1), (x1,y1) order.
CornerWeights bilinear_weights(const Vec2& pos, const std::array<Vec2, 4>& corners);

struct SampledFeatures {
  Tensor values;                     // [N, C]; zero rows where invalid
  std::vector<std::uint8_t> valid;   // 1 when all four neighbors are inside the map

  std::size_t valid_count() const;
};

/// Interpolates feature[C,H,W] at positions[N,2] given as (column, row)
/// lattice coordinates. Differentiable in both the features and the positions.
SampledFeatures sample_feature_map(const Tensor& feature, const Tensor& positions,
                                   InterpMode mode = InterpMode::InverseDistance);

/// Continuous feature-map coordinates (column, row) of a LiDAR point, or
/// nullopt when it lies behind the camera.
std::optional<Vec2> project_to_feature(const Vec3& lidar_point, const Calibration& calib,
                                       double stride);

struct CameraVoxelGrid {
  std::size_t height = 0;  // rows along y
  std::size_t width = 0;   // columns along x
  double origin_x = 0, origin_y = 0;
  double cell_x = 1, cell_y = 1;
  std::vector<double> slab_z;

  /// Grid at half the BEV cell size of `spec`, with `slabs` evenly spaced
  /// centers over the z range.
  static CameraVoxelGrid from_spec(const VoxelGridSpec& spec, std::size_t slabs = 4);

  std::size_t num_cells() const { return height * width; }
  Vec3 center(std::size_t row, std::size_t col, std::size_t slab) const {
    return {origin_x + (static_cast<double>(col) + 0.5) * cell_x,
            origin_y + (static_cast<double>(row) + 0.5) * cell_y, slab_z[slab]};
  }
};

struct OffsetField {
  Tensor offsets;  // [T_y, T_x, 2] in feature pixels, (dx, dy)

  static OffsetField create(ParameterStore& store, const std::string& name,
                            std::size_t tiles_y = 8, std::size_t tiles_x = 8);
  std::size_t tiles_y() const { return offsets.dim(0); }
  std::size_t tiles_x() const { return offsets.dim(1); }
  /// Tile owning a grid cell.
  std::size_t tile_of(std::size_t row, std::size_t col, const CameraVoxelGrid& grid) const;
};

struct CameraView {
  Tensor features;  // [C, H_f, W_f]
  Calibration calib;
  double stride = 8;
};

struct ProjectionOptions {
  InterpMode mode = InterpMode::InverseDistance;
  bool use_offsets = true;
};

struct ProjectedCameraBev {
  Tensor features;                        // [C, grid.height, grid.width]
  std::vector<std::uint32_t> contributors;  // per cell, count of valid samples
};

/// Projects each grid center into every camera and averages the interpolated
/// features over all valid (slab, camera) samples of a cell.
ProjectedCameraBev auto_calibrated_project(std::span<const CameraView> cameras,
                                           const CameraVoxelGrid& grid,
                                           const OffsetField* offsets,
                                           const ProjectionOptions& options = {});

/// Stride-2 convolution + ReLU bringing the projected map to BEV resolution.
struct CameraBevCompressor {
  Conv2dLayer conv;

  static CameraBevCompressor create(ParameterStore& store, const std::string& name,
                                    std::size_t c_in, std::size_t c_out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& projected) const;
};

/// Small convolution stack standing in for an image backbone: three stride-2
/// stages, so the output stride is 8.
class CameraBackbone {
 public:
  CameraBackbone(ParameterStore& store, std::size_t in_channels,
                 std::array<std::size_t, 3> widths, std::mt19937_64& rng);
  Tensor operator()(const Tensor& image) const;
  std::size_t out_channels() const { return stages_.back().out_channels(); }

 private:
  std::vector<Conv2dLayer> stages_;
};

}  // namespace cvf
