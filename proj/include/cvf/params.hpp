#pragma once

// Named parameter sets, gradient-descent updates and the binary checkpoint
// container. The checkpoint byte layout is documented in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "cvf/tensor.hpp"

namespace cvf {

/// Error raised by binary readers; carries the byte offset of the fault.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Ordered name -> leaf tensor map. Iteration order is lexicographic, which
/// keeps checkpoints and updates deterministic.
class ParameterStore {
 public:
  /// Registers a fresh requires-grad leaf; throws on duplicate names.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t total_elements() const;

  /// Copies values from `other` for every name present in both stores; shapes
  /// must agree. Returns the number of tensors copied.
  std::size_t assign_from(const ParameterStore& other);

 private:
  std::map<std::string, Tensor> params_;
};

/// Leaf tensor with values drawn from N(0, stddev^2).
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

/// p <- p - lr * grad(p), then clears every gradient. Throws std::logic_error
/// if any parameter has no gradient.
void sgd_step(ParameterStore& params, double learning_rate);

/// Adam with optional decoupled weight decay.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(Options options) : options_(options) {}

  /// Parameters without a gradient are skipped; gradients are cleared.
  void step(ParameterStore& params);
  std::uint64_t steps() const { return t_; }

 private:
  Options options_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

inline constexpr char kCheckpointMagic[] = "CVFPARAMS\x01";
inline constexpr std::size_t kCheckpointMagicSize = 10;

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params);
ParameterStore load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ParameterStore& params);
ParameterStore decode_checkpoint(const std::string& bytes);

}  // namespace cvf
