#pragma once

// Second stage: features pooled inside each proposal box and the head that
// rescores and refines it.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvf/cross_view.hpp"
#include "cvf/geometry.hpp"
#include "cvf/layers.hpp"
#include "cvf/voxel.hpp"

namespace cvf {

/// Box-frame offsets ((i + 0.5) / n - 0.5) * extent for i in [0, n).
std::vector<double> grid_offsets(std::size_t n, double extent);

/// World BEV positions of the G x G sample grid of a box, row-major over
/// (lateral j, heading i).
std::vector<Vec2> roi_sample_points(const Box3D& box, std::size_t grid);

/// Features at the G x G grid of every box: [K, G*G*C], point-major.
Tensor roi_align_rows(const BevFeatureMap& map, std::span<const Box3D> boxes, std::size_t grid,
                      InterpMode mode = InterpMode::InverseDistance);

/// Single-box form: [C, G, G] indexed (channel, lateral j, heading i).
Tensor rotated_roi_align(const BevFeatureMap& map, const Box3D& box, std::size_t grid,
                         InterpMode mode = InterpMode::InverseDistance);

/// r^3 points inside the box, inset by half a step, ordered (i, j, k) over
/// (heading, lateral, vertical).
std::vector<Vec3> roi_grid_points(const Box3D& box, std::size_t r);

/// Per camera: gather at projected grid points, encode, max-pool per box;
/// concatenated over cameras -> [K, cameras * E]. Boxes no camera sees pool to zero.
Tensor roi_grid_camera_pool(std::span<const Box3D> boxes, std::size_t r,
                            std::span<const CameraView> cameras,
                            std::span<const SetEncoder> encoders,
                            InterpMode mode = InterpMode::InverseDistance);

/// Per scale: RoI-align samples, encode, max-pool per box; concatenated over
/// scales -> [K, S * E].
Tensor roi_lidar_pool(std::span<const BevFeatureMap> scales, std::span<const Box3D> boxes,
                      std::size_t grid, std::span<const SetEncoder> encoders,
                      InterpMode mode = InterpMode::InverseDistance);

struct RefineOutput {
  Tensor confidence;  // [K] logits
  Tensor residuals;   // [K, 7]
};

struct RefineHead {
  LinearLayer hidden;
  LinearLayer out;  // -> 8 (confidence, 7 residuals), zero init

  static RefineHead create(ParameterStore& store, const std::string& name, std::size_t in,
                           std::size_t hidden_width, std::mt19937_64& rng);
  /// Concatenates the pieces column-wise and applies the affine stack.
  RefineOutput operator()(std::span<const Tensor> pieces) const;
};

/// Column `c` of x[N,D] as a flat [N] tensor.
Tensor column(const Tensor& x, std::size_t c);
/// Columns [first, first + count) of x[N,D].
Tensor columns(const Tensor& x, std::size_t first, std::size_t count);

}  // namespace cvf
