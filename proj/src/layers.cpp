#include "cvf/layers.hpp"

#include <cmath>

namespace cvf {

Conv2dLayer Conv2dLayer::create(ParameterStore& store, const std::string& name, std::size_t c_in,
                                std::size_t c_out, std::size_t kernel, int stride, int padding,
                                std::mt19937_64& rng, Init init) {
  Shape shape{c_out, c_in, kernel, kernel};
  Tensor w = init == Init::Zero
                 ? Tensor::zeros(shape)
                 : normal_init(shape, std::sqrt(2.0 / static_cast<double>(c_in * kernel * kernel)), rng);
  Conv2dLayer layer;
  layer.weight = store.add(name + ".weight", w);
  layer.bias = store.add(name + ".bias", Tensor::zeros({c_out}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

LinearLayer LinearLayer::create(ParameterStore& store, const std::string& name, std::size_t in,
                                std::size_t out, std::mt19937_64& rng, Init init) {
  Shape shape{in, out};
  Tensor w = init == Init::Zero ? Tensor::zeros(shape)
                                : normal_init(shape, std::sqrt(2.0 / static_cast<double>(in)), rng);
  LinearLayer layer;
  layer.weight = store.add(name + ".weight", w);
  layer.bias = store.add(name + ".bias", Tensor::zeros({out}));
  return layer;
}

}  // namespace cvf
