#pragma once

// Voxelization of LiDAR clouds and the dense stand-in for the sparse 3D
// backbone: per-voxel set encoding, summation over z, then three stride-2
// convolutions down to the stride-8 BEV feature map.

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cvf/geometry.hpp"
#include "cvf/layers.hpp"

namespace cvf {

inline constexpr std::size_t kBevStride = 8;

struct VoxelGridSpec {
  Vec3 range_min = Vec3::Zero();
  Vec3 range_max = Vec3::Zero();
  Vec3 voxel_size = Vec3::Ones();
  std::size_t max_points_per_voxel = 5;
  std::array<std::size_t, 3> dims{};  // (n_x, n_y, n_z)

  /// Validates the partition: each extent must divide into whole voxels
  /// (within 1e-9) and n_x, n_y must be multiples of 8.
  static VoxelGridSpec make(const Vec3& range_min, const Vec3& range_max, const Vec3& voxel_size,
                            std::size_t max_points_per_voxel);
  /// [0,70.4] x [-40,40] x [-3,1] m at 0.05 x 0.05 x 0.1 m.
  static VoxelGridSpec kitti();

  static constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t bev_height() const { return ny() / kBevStride; }
  std::size_t bev_width() const { return nx() / kBevStride; }

  /// Voxel of a point under the lower-inclusive, upper-exclusive convention.
  std::optional<std::array<std::size_t, 3>> voxel_of(const Vec3& p) const;
  Vec3 voxel_min_corner(const std::array<std::size_t, 3>& idx) const;
};

struct Voxel {
  std::array<std::size_t, 3> index{};
  std::vector<LidarPoint> points;  // sorted, at most max_points_per_voxel
};

struct VoxelizedScene {
  std::vector<Voxel> voxels;  // ordered by (z, y, x) linear index
  std::size_t out_of_range = 0;
  std::size_t overflow_dropped = 0;

  std::size_t dropped() const { return out_of_range + overflow_dropped; }
  std::size_t point_count() const;
};

/// Bins points into voxels. Overflowing voxels keep a seeded uniform subset;
/// the result does not depend on input order.
VoxelizedScene voxelize(std::span<const LidarPoint> points, const VoxelGridSpec& spec,
                        std::uint64_t seed);

/// Per-point encoder inputs: offsets from the voxel's point centroid,
/// intensity, and height normalized over the z range.
inline constexpr std::size_t kPointFeatureWidth = 5;

/// Constant encoder inputs derived once per voxelized scene.
struct VoxelInputs {
  Tensor point_features;                  // [N_points, kPointFeatureWidth]
  std::vector<std::int64_t> point_voxel;  // voxel ordinal of each point
  std::vector<std::int64_t> voxel_cell;   // iy * n_x + ix of each voxel
  std::size_t num_voxels = 0;
};

VoxelInputs prepare_voxel_inputs(const VoxelizedScene& scene, const VoxelGridSpec& spec);

struct BackboneConfig {
  std::size_t encoder_width = 16;
  std::array<std::size_t, 3> stage_widths{32, 64, 128};
};

struct BevFeatureMap {
  Tensor features;  // [C, H, W]; row = y cell, column = x cell
  double origin_x = 0;
  double origin_y = 0;
  double cell_x = 1;
  double cell_y = 1;

  std::size_t channels() const { return features.dim(0); }
  std::size_t height() const { return features.dim(1); }
  std::size_t width() const { return features.dim(2); }
  /// Continuous lattice coordinates (column, row) of a metric BEV position;
  /// integer values sit on cell centers.
  Vec2 lattice_of(double x, double y) const {
    return {(x - origin_x) / cell_x - 0.5, (y - origin_y) / cell_y - 0.5};
  }
};

struct BevBackboneOutput {
  std::vector<BevFeatureMap> scales;  // strides 2, 4, 8
  const BevFeatureMap& final() const { return scales.back(); }
};

class LidarBackbone {
 public:
  LidarBackbone(ParameterStore& store, const VoxelGridSpec& spec, const BackboneConfig& config,
                std::mt19937_64& rng);

  /// Per-voxel feature vectors [num_voxels, encoder_width].
  Tensor encode_voxels(const VoxelInputs& inputs) const;
  /// Z-collapse + stride-2 convolution stages.
  BevBackboneOutput bev(const Tensor& voxel_features, const VoxelInputs& inputs) const;
  BevBackboneOutput operator()(const VoxelInputs& inputs) const {
    return bev(encode_voxels(inputs), inputs);
  }

  const VoxelGridSpec& spec() const { return spec_; }
  const SetEncoder& encoder() const { return encoder_; }
  std::size_t out_channels() const { return stages_.back().out_channels(); }
  std::array<std::size_t, 3> stage_channels() const;

 private:
  VoxelGridSpec spec_;
  SetEncoder encoder_;
  std::vector<Conv2dLayer> stages_;
};

}  // namespace cvf
