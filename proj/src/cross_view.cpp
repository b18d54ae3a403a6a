#include "cvf/cross_view.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace cvf {

namespace {

constexpr double kSingular = 1e-12;

// Lattice corners of the cell used for `pos` in a map of the given size, or
// nullopt when the 4-neighborhood leaves the map. A position exactly on the
// last row or column reuses the cell below it so it stays sampleable.
std::optional<std::array<long, 2>> cell_origin(const Vec2& pos, std::size_t height,
                                               std::size_t width) {
  if (!std::isfinite(pos.x()) || !std::isfinite(pos.y())) return std::nullopt;
  if (width < 2 || height < 2) return std::nullopt;
  const double max_x = static_cast<double>(width - 1), max_y = static_cast<double>(height - 1);
  if (pos.x() < 0 || pos.y() < 0 || pos.x() > max_x || pos.y() > max_y) return std::nullopt;
  long x0 = std::min(static_cast<long>(std::floor(pos.x())), static_cast<long>(width) - 2);
  long y0 = std::min(static_cast<long>(std::floor(pos.y())), static_cast<long>(height) - 2);
  return std::array<long, 2>{x0, y0};
}

std::array<Vec2, 4> corners_of(long x0, long y0) {
  const double x = static_cast<double>(x0), y = static_cast<double>(y0);
  return {Vec2(x, y), Vec2(x + 1, y), Vec2(x, y + 1), Vec2(x + 1, y + 1)};
}

// d(weights . f)/d(pos) for the four corner values f.
Vec2 weight_gradient(const Vec2& pos, const std::array<Vec2, 4>& corners,
                     const std::array<double, 4>& f, InterpMode mode) {
  if (mode == InterpMode::Bilinear) {
    const double fx = pos.x() - corners[0].x(), fy = pos.y() - corners[0].y();
    return {(1 - fy) * (f[1] - f[0]) + fy * (f[3] - f[2]),
            (1 - fx) * (f[2] - f[0]) + fx * (f[3] - f[1])};
  }
  std::array<double, 4> inv{};
  std::array<Vec2, 4> dinv{};
  double s = 0;
  for (int k = 0; k < 4; ++k) {
    const Vec2 d = pos - corners[k];
    const double r = d.norm();
    if (r < kSingular) return Vec2::Zero();
    inv[k] = 1.0 / r;
    dinv[k] = -d / (r * r * r);
    s += inv[k];
  }
  double u = 0;
  for (int k = 0; k < 4; ++k) u += f[k] * inv[k];
  u /= s;
  Vec2 g = Vec2::Zero();
  for (int k = 0; k < 4; ++k) g += (f[k] - u) * dinv[k];
  return g / s;
}

}  // namespace

CornerWeights interp_weights(const Vec2& pos, const std::array<Vec2, 4>& corners) {
  CornerWeights w{};
  for (int k = 0; k < 4; ++k) {
    if ((pos - corners[k]).norm() < kSingular) {
      w[k] = 1.0;
      return w;
    }
  }
  double s = 0;
  for (int k = 0; k < 4; ++k) {
    w[k] = 1.0 / (pos - corners[k]).norm();
    s += w[k];
  }
  for (auto& v : w) v /= s;
  return w;
}

CornerWeights bilinear_weights(const Vec2& pos, const std::array<Vec2, 4>& corners) {
  const double fx = pos.x() - corners[0].x(), fy = pos.y() - corners[0].y();
  return {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
}

std::size_t SampledFeatures::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

SampledFeatures sample_feature_map(const Tensor& feature, const Tensor& positions,
                                   InterpMode mode) {
  if (feature.rank() != 3) throw ShapeError("sample_feature_map: feature must be [C,H,W]");
  if (positions.rank() != 2 || positions.dim(1) != 2) {
    throw ShapeError("sample_feature_map: positions must be [N,2]");
  }
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const std::size_t n = positions.dim(0), plane = h * w;

  struct Sample {
    long x0 = -1, y0 = -1;
    CornerWeights weights{};
  };
  auto samples = std::make_shared<std::vector<Sample>>(n);
  SampledFeatures out;
  out.valid.assign(n, 0);
  std::vector<double> values(n * c, 0.0);
  auto fv = feature.values();
  auto pv = positions.values();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 pos(pv[2 * i], pv[2 * i + 1]);
    auto origin = cell_origin(pos, h, w);
    if (!origin) continue;
    auto& s = (*samples)[i];
    s.x0 = (*origin)[0];
    s.y0 = (*origin)[1];
    const auto corners = corners_of(s.x0, s.y0);
    s.weights = mode == InterpMode::Bilinear ? bilinear_weights(pos, corners)
                                             : interp_weights(pos, corners);
    out.valid[i] = 1;
    const std::size_t base = static_cast<std::size_t>(s.y0) * w + static_cast<std::size_t>(s.x0);
    const std::array<std::size_t, 4> idx{base, base + 1, base + w, base + w + 1};
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += s.weights[k] * fv[ch * plane + idx[k]];
      values[i * c + ch] = acc;
    }
  }
  out.values = Tensor::make_op(
      "sample_feature_map", {n, c}, std::move(values), {feature, positions},
      [samples, c, h, w, mode](std::span<const double> g, GradSink& sink) {
        const std::size_t plane = h * w;
        auto fv = sink.input_values(0);
        auto pv = sink.input_values(1);
        const bool want_f = sink.wants(0), want_p = sink.wants(1);
        std::span<double> gf, gp;
        if (want_f) gf = sink.grad(0);
        if (want_p) gp = sink.grad(1);
        for (std::size_t i = 0; i < samples->size(); ++i) {
          const auto& s = (*samples)[i];
          if (s.x0 < 0) continue;
          const std::size_t base =
              static_cast<std::size_t>(s.y0) * w + static_cast<std::size_t>(s.x0);
          const std::array<std::size_t, 4> idx{base, base + 1, base + w, base + w + 1};
          const Vec2 pos(pv[2 * i], pv[2 * i + 1]);
          const auto corners = corners_of(s.x0, s.y0);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double go = g[i * c + ch];
            if (go == 0.0) continue;
            if (want_f) {
              for (int k = 0; k < 4; ++k) gf[ch * plane + idx[k]] += go * s.weights[k];
            }
            if (want_p) {
              std::array<double, 4> f{};
              for (int k = 0; k < 4; ++k) f[k] = fv[ch * plane + idx[k]];
              const Vec2 d = weight_gradient(pos, corners, f, mode);
              gp[2 * i] += go * d.x();
              gp[2 * i + 1] += go * d.y();
            }
          }
        }
      });
  return out;
}

std::optional<Vec2> project_to_feature(const Vec3& lidar_point, const Calibration& calib,
                                       double stride) {
  auto px = project_to_image(lidar_point, calib);
  if (!px) return std::nullopt;
  return Vec2(px->x / stride, px->y / stride);
}

CameraVoxelGrid CameraVoxelGrid::from_spec(const VoxelGridSpec& spec, std::size_t slabs) {
  if (slabs == 0) throw std::invalid_argument("CameraVoxelGrid: at least one z-slab required");
  CameraVoxelGrid grid;
  grid.height = 2 * spec.bev_height();
  grid.width = 2 * spec.bev_width();
  grid.origin_x = spec.range_min.x();
  grid.origin_y = spec.range_min.y();
  grid.cell_x = (spec.range_max.x() - spec.range_min.x()) / static_cast<double>(grid.width);
  grid.cell_y = (spec.range_max.y() - spec.range_min.y()) / static_cast<double>(grid.height);
  const double z0 = spec.range_min.z(), span = spec.range_max.z() - spec.range_min.z();
  for (std::size_t k = 0; k < slabs; ++k) {
    grid.slab_z.push_back(z0 + (static_cast<double>(k) + 0.5) * span / static_cast<double>(slabs));
  }
  return grid;
}

OffsetField OffsetField::create(ParameterStore& store, const std::string& name,
                                std::size_t tiles_y, std::size_t tiles_x) {
  if (tiles_y == 0 || tiles_x == 0) throw std::invalid_argument("OffsetField: empty tile grid");
  return {store.add(name, Tensor::zeros({tiles_y, tiles_x, 2}))};
}

std::size_t OffsetField::tile_of(std::size_t row, std::size_t col,
                                 const CameraVoxelGrid& grid) const {
  const std::size_t ty = std::min(row * tiles_y() / grid.height, tiles_y() - 1);
  const std::size_t tx = std::min(col * tiles_x() / grid.width, tiles_x() - 1);
  return ty * tiles_x() + tx;
}

namespace {

// positions[i] = base[i] + offsets[tile[i]]
Tensor shift_by_tiles(std::vector<double> base, const Tensor& offsets,
                      std::vector<std::size_t> tile) {
  const std::size_t n = tile.size();
  auto ov = offsets.values();
  for (std::size_t i = 0; i < n; ++i) {
    base[2 * i] += ov[2 * tile[i]];
    base[2 * i + 1] += ov[2 * tile[i] + 1];
  }
  auto tiles = std::make_shared<std::vector<std::size_t>>(std::move(tile));
  return Tensor::make_op("shift_by_tiles", {n, 2}, std::move(base), {offsets},
                         [tiles](std::span<const double> g, GradSink& sink) {
                           auto go = sink.grad(0);
                           for (std::size_t i = 0; i < tiles->size(); ++i) {
                             go[2 * (*tiles)[i]] += g[2 * i];
                             go[2 * (*tiles)[i] + 1] += g[2 * i + 1];
                           }
                         });
}

}  // namespace

ProjectedCameraBev auto_calibrated_project(std::span<const CameraView> cameras,
                                           const CameraVoxelGrid& grid,
                                           const OffsetField* offsets,
                                           const ProjectionOptions& options) {
  if (cameras.empty()) throw std::invalid_argument("auto_calibrated_project: no cameras");
  const std::size_t channels = cameras[0].features.dim(0);
  for (const auto& cam : cameras) {
    if (cam.features.rank() != 3 || cam.features.dim(0) != channels) {
      throw ShapeError("auto_calibrated_project: cameras must share [C,H,W] channel count");
    }
  }
  const bool shift = options.use_offsets && offsets != nullptr;

  std::vector<Tensor> parts;
  std::vector<std::int64_t> cell_ids;
  for (const auto& cam : cameras) {
    std::vector<double> base;
    std::vector<std::size_t> tiles;
    std::vector<std::int64_t> cells;
    for (std::size_t row = 0; row < grid.height; ++row) {
      for (std::size_t col = 0; col < grid.width; ++col) {
        for (std::size_t s = 0; s < grid.slab_z.size(); ++s) {
          auto pos = project_to_feature(grid.center(row, col, s), cam.calib, cam.stride);
          if (!pos) continue;
          base.push_back(pos->x());
          base.push_back(pos->y());
          tiles.push_back(shift ? offsets->tile_of(row, col, grid) : 0);
          cells.push_back(static_cast<std::int64_t>(row * grid.width + col));
        }
      }
    }
    const std::size_t n = cells.size();
    Tensor positions = shift ? shift_by_tiles(std::move(base), offsets->offsets, std::move(tiles))
                             : Tensor::from({n, 2}, std::move(base));
    auto sampled = sample_feature_map(cam.features, positions, options.mode);
    for (std::size_t i = 0; i < n; ++i) {
      cell_ids.push_back(sampled.valid[i] ? cells[i] : -1);
    }
    parts.push_back(sampled.values);
  }
  ProjectedCameraBev out;
  out.contributors.assign(grid.num_cells(), 0);
  for (auto id : cell_ids) {
    if (id >= 0) ++out.contributors[static_cast<std::size_t>(id)];
  }
  out.features = scatter_mean_to_grid(concat_rows(parts), cell_ids, grid.height, grid.width);
  return out;
}

CameraBevCompressor CameraBevCompressor::create(ParameterStore& store, const std::string& name,
                                                std::size_t c_in, std::size_t c_out,
                                                std::mt19937_64& rng) {
  return {Conv2dLayer::create(store, name, c_in, c_out, 3, 2, 1, rng)};
}

Tensor CameraBevCompressor::operator()(const Tensor& projected) const {
  if (projected.rank() != 3 || projected.dim(1) % 2 != 0 || projected.dim(2) % 2 != 0) {
    throw ShapeError("CameraBevCompressor: expected [C, 2H, 2W], got " +
                     shape_str(projected.shape()));
  }
  return relu(conv(projected));
}

CameraBackbone::CameraBackbone(ParameterStore& store, std::size_t in_channels,
                               std::array<std::size_t, 3> widths, std::mt19937_64& rng) {
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    stages_.push_back(Conv2dLayer::create(store, "camera.stage" + std::to_string(i), c,
                                          widths[i], 3, 2, 1, rng));
    c = widths[i];
  }
}

Tensor CameraBackbone::operator()(const Tensor& image) const {
  Tensor x = image;
  for (const auto& stage : stages_) x = relu(stage(x));
  return x;
}

}  // namespace cvf
