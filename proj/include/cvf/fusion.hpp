#pragma once

// Gated camera/LiDAR fusion: each modality gets a single-channel sigmoid
// attention map computed from both inputs, broadcast over its channels.

#include <random>
#include <string>

#include "cvf/layers.hpp"

namespace cvf {

struct FusionOutput {
  Tensor joint;             // [C_c + C_l, H, W], camera channels first
  Tensor camera_attention;  // [1, H, W]
  Tensor lidar_attention;   // [1, H, W]
};

struct GatedFusion {
  Conv2dLayer conv_camera;  // 3x3, (C_c + C_l) -> 1
  Conv2dLayer conv_lidar;

  /// Gating convolutions start at zero, so both attention maps start at 0.5.
  static GatedFusion create(ParameterStore& store, const std::string& name,
                            std::size_t camera_channels, std::size_t lidar_channels,
                            std::mt19937_64& rng, Init init = Init::Zero);

  FusionOutput operator()(const Tensor& camera, const Tensor& lidar) const;
};

}  // namespace cvf
