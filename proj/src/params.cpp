#include "cvf/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cvf {

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto leaf = Tensor::from(value.shape(),
                           std::vector<double>(value.values().begin(), value.values().end()), true);
  return params_.emplace(name, std::move(leaf)).first->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.clear_grad();
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.numel();
  return n;
}

std::size_t ParameterStore::assign_from(const ParameterStore& other) {
  std::size_t copied = 0;
  for (auto& [name, p] : params_) {
    if (!other.contains(name)) continue;
    const Tensor& src = other.at(name);
    if (src.shape() != p.shape()) {
      throw ShapeError("parameter '" + name + "': checkpoint shape " + shape_str(src.shape()) +
                       " vs model " + shape_str(p.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), p.mutable_values().begin());
    ++copied;
  }
  return copied;
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

void sgd_step(ParameterStore& params, double learning_rate) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) throw std::logic_error("sgd_step: parameter '" + name + "' has no gradient");
  }
  for (auto& [_, p] : params) {
    auto v = p.mutable_values();
    auto g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
    p.clear_grad();
  }
}

void Adam::step(ParameterStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    auto w = p.mutable_values();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon);
      w[i] -= options_.learning_rate * (update + options_.weight_decay * w[i]);
    }
    p.clear_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterStore& params) {
  std::string out(kCheckpointMagic, kCheckpointMagicSize);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) put<std::uint64_t>(out, d);
    for (double v : p.values()) put<double>(out, v);
  }
  return out;
}

ParameterStore decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(kCheckpointMagicSize, "magic") != std::string(kCheckpointMagic, kCheckpointMagicSize)) {
    throw FormatError("bad checkpoint magic", 0);
  }
  const auto count = in.get<std::uint32_t>("entry count");
  ParameterStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = in.get<std::uint32_t>("name length");
    const std::size_t name_at = in.pos();
    std::string name = in.take(name_len, "name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank), in.pos() - 4);
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint64_t>("extent");
      if (d == 0 || d > (1ull << 32)) throw FormatError("invalid extent", in.pos() - 8);
    }
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = in.get<double>("payload");
    if (store.contains(name)) throw FormatError("duplicate parameter '" + name + "'", name_at);
    store.add(name, Tensor::from(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw FormatError("trailing bytes after last entry", in.pos());
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cvf
