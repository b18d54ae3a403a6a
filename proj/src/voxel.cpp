#include "cvf/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>

namespace cvf {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool point_less(const LidarPoint& a, const LidarPoint& b) {
  return std::tie(a.x, a.y, a.z, a.intensity) < std::tie(b.x, b.y, b.z, b.intensity);
}

}  // namespace

VoxelGridSpec VoxelGridSpec::make(const Vec3& range_min, const Vec3& range_max,
                                  const Vec3& voxel_size, std::size_t max_points_per_voxel) {
  VoxelGridSpec spec;
  spec.range_min = range_min;
  spec.range_max = range_max;
  spec.voxel_size = voxel_size;
  spec.max_points_per_voxel = max_points_per_voxel;
  if (max_points_per_voxel == 0) throw std::invalid_argument("max_points_per_voxel must be >= 1");
  static constexpr const char* kAxis[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    const double extent = range_max[a] - range_min[a];
    if (!(voxel_size[a] > 0) || !(extent > 0)) {
      throw std::invalid_argument(std::string("voxel grid: empty range or size on ") + kAxis[a]);
    }
    const double ratio = extent / voxel_size[a];
    const double n = std::round(ratio);
    if (std::abs(ratio - n) > 1e-9 * std::max(1.0, n)) {
      throw std::invalid_argument(std::string("voxel grid: range not divisible by voxel size on ") +
                                  kAxis[a]);
    }
    spec.dims[a] = static_cast<std::size_t>(n);
  }
  if (spec.dims[0] % kBevStride != 0 || spec.dims[1] % kBevStride != 0) {
    throw std::invalid_argument("voxel grid: x/y dims (" + std::to_string(spec.dims[0]) + ", " +
                                std::to_string(spec.dims[1]) + ") must be multiples of 8");
  }
  return spec;
}

VoxelGridSpec VoxelGridSpec::kitti() {
  return make(Vec3(0, -40, -3), Vec3(70.4, 40, 1), Vec3(0.05, 0.05, 0.1), 5);
}

std::optional<std::array<std::size_t, 3>> VoxelGridSpec::voxel_of(const Vec3& p) const {
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(p[a])) return std::nullopt;
    const double f = std::floor((p[a] - range_min[a]) / voxel_size[a]);
    if (f < 0 || f >= static_cast<double>(dims[a]) || p[a] >= range_max[a]) return std::nullopt;
    idx[a] = static_cast<std::size_t>(f);
  }
  return idx;
}

Vec3 VoxelGridSpec::voxel_min_corner(const std::array<std::size_t, 3>& idx) const {
  return {range_min.x() + static_cast<double>(idx[0]) * voxel_size.x(),
          range_min.y() + static_cast<double>(idx[1]) * voxel_size.y(),
          range_min.z() + static_cast<double>(idx[2]) * voxel_size.z()};
}

std::size_t VoxelizedScene::point_count() const {
  std::size_t n = 0;
  for (const auto& v : voxels) n += v.points.size();
  return n;
}

VoxelizedScene voxelize(std::span<const LidarPoint> points, const VoxelGridSpec& spec,
                        std::uint64_t seed) {
  VoxelizedScene scene;
  std::unordered_map<std::uint64_t, std::vector<LidarPoint>> buckets;
  for (const auto& p : points) {
    auto idx = spec.voxel_of(p.xyz());
    if (!idx) {
      ++scene.out_of_range;
      continue;
    }
    const std::uint64_t key = ((*idx)[2] * spec.ny() + (*idx)[1]) * spec.nx() + (*idx)[0];
    buckets[key].push_back(p);
  }
  std::vector<std::uint64_t> keys;
  keys.reserve(buckets.size());
  for (const auto& [key, _] : buckets) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  scene.voxels.reserve(keys.size());
  for (std::uint64_t key : keys) {
    auto& pts = buckets[key];
    std::sort(pts.begin(), pts.end(), point_less);
    if (pts.size() > spec.max_points_per_voxel) {
      std::mt19937_64 rng(splitmix(seed ^ splitmix(key)));
      std::shuffle(pts.begin(), pts.end(), rng);
      scene.overflow_dropped += pts.size() - spec.max_points_per_voxel;
      pts.resize(spec.max_points_per_voxel);
      std::sort(pts.begin(), pts.end(), point_less);
    }
    Voxel v;
    v.index = {key % spec.nx(), (key / spec.nx()) % spec.ny(), key / (spec.nx() * spec.ny())};
    v.points = std::move(pts);
    scene.voxels.push_back(std::move(v));
  }
  return scene;
}

VoxelInputs prepare_voxel_inputs(const VoxelizedScene& scene, const VoxelGridSpec& spec) {
  VoxelInputs in;
  in.num_voxels = scene.voxels.size();
  const std::size_t n = scene.point_count();
  std::vector<double> feats;
  feats.reserve(n * kPointFeatureWidth);
  const double z0 = spec.range_min.z(), zspan = spec.range_max.z() - spec.range_min.z();
  for (std::size_t v = 0; v < scene.voxels.size(); ++v) {
    const auto& vox = scene.voxels[v];
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : vox.points) centroid += p.xyz();
    centroid /= static_cast<double>(vox.points.size());
    for (const auto& p : vox.points) {
      feats.push_back(p.x - centroid.x());
      feats.push_back(p.y - centroid.y());
      feats.push_back(p.z - centroid.z());
      feats.push_back(p.intensity);
      feats.push_back((p.z - z0) / zspan);
      in.point_voxel.push_back(static_cast<std::int64_t>(v));
    }
    in.voxel_cell.push_back(static_cast<std::int64_t>(vox.index[1] * spec.nx() + vox.index[0]));
  }
  in.point_features = Tensor::from({n, kPointFeatureWidth}, std::move(feats));
  return in;
}

// ---------------------------------------------------------------------------

LidarBackbone::LidarBackbone(ParameterStore& store, const VoxelGridSpec& spec,
                             const BackboneConfig& config, std::mt19937_64& rng)
    : spec_(spec),
      encoder_(SetEncoder::create(store, "lidar.encoder", kPointFeatureWidth, config.encoder_width, rng)) {
  std::size_t c_in = config.encoder_width;
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    stages_.push_back(Conv2dLayer::create(store, "lidar.stage" + std::to_string(s), c_in,
                                          config.stage_widths[s], 3, 2, 1, rng));
    c_in = config.stage_widths[s];
  }
}

std::array<std::size_t, 3> LidarBackbone::stage_channels() const {
  return {stages_[0].out_channels(), stages_[1].out_channels(), stages_[2].out_channels()};
}

Tensor LidarBackbone::encode_voxels(const VoxelInputs& inputs) const {
  if (inputs.num_voxels == 0) return Tensor::zeros({0, encoder_.width()});
  return encoder_(inputs.point_features, inputs.point_voxel, inputs.num_voxels);
}

BevBackboneOutput LidarBackbone::bev(const Tensor& voxel_features, const VoxelInputs& inputs) const {
  Tensor x;
  if (inputs.num_voxels == 0) {
    x = Tensor::zeros({encoder_.width(), spec_.ny(), spec_.nx()});
  } else {
    x = scatter_to_grid(voxel_features, inputs.voxel_cell, spec_.ny(), spec_.nx());
  }
  BevBackboneOutput out;
  double cell_x = spec_.voxel_size.x(), cell_y = spec_.voxel_size.y();
  for (const auto& stage : stages_) {
    x = relu(stage(x));
    cell_x *= 2;
    cell_y *= 2;
    out.scales.push_back({x, spec_.range_min.x(), spec_.range_min.y(), cell_x, cell_y});
  }
  return out;
}

}  // namespace cvf
