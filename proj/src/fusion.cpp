#include "cvf/fusion.hpp"

namespace cvf {

GatedFusion GatedFusion::create(ParameterStore& store, const std::string& name,
                                std::size_t camera_channels, std::size_t lidar_channels,
                                std::mt19937_64& rng, Init init) {
  const std::size_t in = camera_channels + lidar_channels;
  return {Conv2dLayer::create(store, name + ".camera_gate", in, 1, 3, 1, 1, rng, init),
          Conv2dLayer::create(store, name + ".lidar_gate", in, 1, 3, 1, 1, rng, init)};
}

FusionOutput GatedFusion::operator()(const Tensor& camera, const Tensor& lidar) const {
  if (camera.rank() != 3 || lidar.rank() != 3 || camera.dim(1) != lidar.dim(1) ||
      camera.dim(2) != lidar.dim(2)) {
    throw ShapeError("gated_fuse: spatially misaligned inputs " + shape_str(camera.shape()) +
                     " and " + shape_str(lidar.shape()));
  }
  const Tensor both = concat_channels(camera, lidar);
  FusionOutput out;
  out.camera_attention = sigmoid(conv_camera(both));
  out.lidar_attention = sigmoid(conv_lidar(both));
  out.joint = concat_channels(mul(camera, out.camera_attention), mul(lidar, out.lidar_attention));
  return out;
}

}  // namespace cvf
