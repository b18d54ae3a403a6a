#pragma once

// Parameterized building blocks. Each layer holds shared handles to tensors
// that live in a ParameterStore, so updating the store updates the layer.

#include <random>
#include <string>

#include "cvf/params.hpp"
#include "cvf/tensor.hpp"

namespace cvf {

enum class Init { He, Zero };

struct Conv2dLayer {
  Tensor weight;  // [C_out, C_in, k, k]
  Tensor bias;    // [C_out], zero at init
  int stride = 1;
  int padding = 0;

  static Conv2dLayer create(ParameterStore& store, const std::string& name, std::size_t c_in,
                            std::size_t c_out, std::size_t kernel, int stride, int padding,
                            std::mt19937_64& rng, Init init = Init::He);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct LinearLayer {
  Tensor weight;  // [D, E]
  Tensor bias;    // [E], zero at init

  static LinearLayer create(ParameterStore& store, const std::string& name, std::size_t in,
                            std::size_t out, std::mt19937_64& rng, Init init = Init::He);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// Shared per-point affine + ReLU followed by a max over each point set.
struct SetEncoder {
  LinearLayer layer;

  static SetEncoder create(ParameterStore& store, const std::string& name, std::size_t in,
                           std::size_t out, std::mt19937_64& rng) {
    return {LinearLayer::create(store, name, in, out, rng)};
  }
  std::size_t width() const { return layer.out_features(); }

  /// points[N, in] grouped by `set` ids (negative = excluded) -> [num_sets, out].
  Tensor operator()(const Tensor& points, std::span<const std::int64_t> set,
                    std::size_t num_sets) const {
    return segment_max(relu(layer(points)), set, num_sets);
  }
};

}  // namespace cvf
