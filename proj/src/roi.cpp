#include "cvf/roi.hpp"

#include <stdexcept>

namespace cvf {

std::vector<double> grid_offsets(std::size_t n, double extent) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = ((static_cast<double>(i) + 0.5) / static_cast<double>(n) - 0.5) * extent;
  }
  return out;
}

std::vector<Vec2> roi_sample_points(const Box3D& box, std::size_t grid) {
  const auto along = grid_offsets(grid, box.l);
  const auto across = grid_offsets(grid, box.w);
  std::vector<Vec2> pts;
  pts.reserve(grid * grid);
  for (std::size_t j = 0; j < grid; ++j) {
    for (std::size_t i = 0; i < grid; ++i) {
      pts.push_back(box.to_world(Vec3(along[i], across[j], 0)).head<2>());
    }
  }
  return pts;
}

Tensor roi_align_rows(const BevFeatureMap& map, std::span<const Box3D> boxes, std::size_t grid,
                      InterpMode mode) {
  if (grid == 0) throw std::invalid_argument("roi_align: grid must be positive");
  const std::size_t k = boxes.size(), g2 = grid * grid, c = map.channels();
  std::vector<double> pos;
  pos.reserve(2 * k * g2);
  for (const auto& box : boxes) {
    for (const auto& p : roi_sample_points(box, grid)) {
      const Vec2 q = map.lattice_of(p.x(), p.y());
      pos.push_back(q.x());
      pos.push_back(q.y());
    }
  }
  auto sampled = sample_feature_map(map.features, Tensor::from({k * g2, 2}, std::move(pos)), mode);
  return reshape(sampled.values, {k, g2 * c});
}

Tensor rotated_roi_align(const BevFeatureMap& map, const Box3D& box, std::size_t grid,
                         InterpMode mode) {
  const std::size_t g2 = grid * grid, c = map.channels();
  auto rows = roi_align_rows(map, std::span<const Box3D>(&box, 1), grid, mode);
  std::vector<std::size_t> idx(c * g2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < g2; ++p) idx[ch * g2 + p] = p * c + ch;
  return gather(rows, idx, {c, grid, grid});
}

std::vector<Vec3> roi_grid_points(const Box3D& box, std::size_t r) {
  if (r == 0) throw std::invalid_argument("roi_grid_points: r must be positive");
  const auto a = grid_offsets(r, box.l), b = grid_offsets(r, box.w), c = grid_offsets(r, box.h);
  std::vector<Vec3> pts;
  pts.reserve(r * r * r);
  for (double x : a)
    for (double y : b)
      for (double z : c) pts.push_back(box.to_world(Vec3(x, y, z)));
  return pts;
}

Tensor roi_grid_camera_pool(std::span<const Box3D> boxes, std::size_t r,
                            std::span<const CameraView> cameras,
                            std::span<const SetEncoder> encoders, InterpMode mode) {
  if (encoders.size() != cameras.size()) {
    throw std::invalid_argument("roi_grid_camera_pool: one encoder per camera required");
  }
  const std::size_t k = boxes.size();
  std::vector<Tensor> pooled;
  for (std::size_t cam = 0; cam < cameras.size(); ++cam) {
    const auto& view = cameras[cam];
    std::vector<double> pos;
    std::vector<std::int64_t> owner;
    for (std::size_t b = 0; b < k; ++b) {
      for (const auto& p : roi_grid_points(boxes[b], r)) {
        auto q = project_to_feature(p, view.calib, view.stride);
        if (!q) continue;
        pos.push_back(q->x());
        pos.push_back(q->y());
        owner.push_back(static_cast<std::int64_t>(b));
      }
    }
    const std::size_t n = owner.size();
    if (n == 0) {
      pooled.push_back(Tensor::zeros({k, encoders[cam].width()}));
      continue;
    }
    auto sampled = sample_feature_map(view.features, Tensor::from({n, 2}, std::move(pos)), mode);
    for (std::size_t i = 0; i < n; ++i) {
      if (!sampled.valid[i]) owner[i] = -1;
    }
    pooled.push_back(encoders[cam](sampled.values, owner, k));
  }
  return pooled.size() == 1 ? pooled[0] : concat_columns(pooled);
}

Tensor roi_lidar_pool(std::span<const BevFeatureMap> scales, std::span<const Box3D> boxes,
                      std::size_t grid, std::span<const SetEncoder> encoders, InterpMode mode) {
  if (encoders.size() != scales.size()) {
    throw std::invalid_argument("roi_lidar_pool: one encoder per scale required");
  }
  const std::size_t k = boxes.size(), g2 = grid * grid;
  std::vector<std::int64_t> owner(k * g2);
  for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = static_cast<std::int64_t>(i / g2);
  std::vector<Tensor> pooled;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    auto rows = roi_align_rows(scales[s], boxes, grid, mode);
    auto points = reshape(rows, {k * g2, scales[s].channels()});
    pooled.push_back(encoders[s](points, owner, k));
  }
  return pooled.size() == 1 ? pooled[0] : concat_columns(pooled);
}

RefineHead RefineHead::create(ParameterStore& store, const std::string& name, std::size_t in,
                              std::size_t hidden_width, std::mt19937_64& rng) {
  return {LinearLayer::create(store, name + ".hidden", in, hidden_width, rng),
          LinearLayer::create(store, name + ".out", hidden_width, 8, rng, Init::Zero)};
}

RefineOutput RefineHead::operator()(std::span<const Tensor> pieces) const {
  const Tensor x = pieces.size() == 1 ? pieces[0] : concat_columns(pieces);
  const Tensor y = out(relu(hidden(x)));
  return {column(y, 0), columns(y, 1, 7)};
}

Tensor column(const Tensor& x, std::size_t c) {
  if (x.rank() != 2 || c >= x.dim(1)) throw ShapeError("column: index out of range");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * d + c;
  return gather(x, idx, {n});
}

Tensor columns(const Tensor& x, std::size_t first, std::size_t count) {
  if (x.rank() != 2 || first + count > x.dim(1)) throw ShapeError("columns: range out of bounds");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(n * count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < count; ++c) idx.push_back(i * d + first + c);
  return gather(x, idx, {n, count});
}

}  // namespace cvf
