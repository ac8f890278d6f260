#pragma once

// Named parameter storage and the two plain layers (dense, conv) used by every
// network. Weights are stored unit-variance and scaled at runtime by
// 1/sqrt(fan_in) (equalized learning rate), so the effective weight is
// normal(0, 1/sqrt(fan_in)) at init.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "togan/ops.hpp"

namespace togan {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; combines a seed with a stream tag into a new seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_string(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace togan

namespace togan::nn {

template <typename T>
class ParamStore {
 public:
  ad::Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(ad::leaf(std::move(init), true));
    return vars_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const ad::Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return vars_[it->second];
  }
  ad::Var<T>& get(const std::string& name) {
    return const_cast<ad::Var<T>&>(static_cast<const ParamStore&>(*this).get(name));
  }

  size_t size() const { return vars_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ad::Var<T>>& vars() const { return vars_; }
  std::vector<ad::Var<T>>& vars() { return vars_; }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& v : vars_) n += v.size();
    return n;
  }

  /// Copies values from a store with identical names and shapes (any dtype).
  template <typename U>
  void assign_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw ContractError("parameter count mismatch in assign_from");
    for (size_t i = 0; i < vars_.size(); ++i) {
      const auto& src = other.get(names_[i]).value();
      if (src.shape() != vars_[i].shape()) throw ContractError("shape mismatch for " + names_[i]);
      vars_[i].mutable_value() = src.template cast<T>();
    }
  }

  /// FNV-1a over the raw parameter bytes in name order.
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& v : vars_) {
      const auto* p = reinterpret_cast<const unsigned char*>(v.value().data());
      for (size_t i = 0; i < v.value().vec().size() * sizeof(T); ++i) h = (h ^ p[i]) * 1099511628211ULL;
    }
    return h;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<ad::Var<T>> vars_;
};

/// Unit normal tensor drawn in double precision so float and double models
/// built from the same seed agree up to rounding.
template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor<T> t(shape);
  for (auto& v : t.vec()) v = static_cast<T>(nd(rng));
  return t;
}

template <typename T>
inline constexpr T kLreluGain = T(1.4142135623730951);

template <typename T>
inline ad::Var<T> lrelu(const ad::Var<T>& x) {
  return ad::leaky_relu(x, T(0.2), kLreluGain<T>);
}

/// y = x * (gain * W) + bias_gain * b with W stored as in x out.
template <typename T>
struct Dense {
  ad::Var<T> weight, bias;
  T weight_gain = 1, bias_gain = 1;

  Dense() = default;
  Dense(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng, double bias_init = 0.0,
        double lr_mul = 1.0)
      : weight_gain(static_cast<T>(lr_mul / std::sqrt(static_cast<double>(in)))), bias_gain(static_cast<T>(lr_mul)) {
    weight = ps.add(name + "/weight", randn<T>({in, out}, rng, 1.0 / lr_mul));
    bias = ps.add(name + "/bias", Tensor<T>({out}, static_cast<T>(bias_init / lr_mul)));
  }

  int64_t in_features() const { return weight.dim(0); }
  int64_t out_features() const { return weight.dim(1); }

  ad::Var<T> forward(const ad::Var<T>& x) const {
    ad::Var<T> w = weight_gain == T(1) ? weight : ad::scale(weight, weight_gain);
    ad::Var<T> b = bias_gain == T(1) ? bias : ad::scale(bias, bias_gain);
    return ad::matmul_bias(x, w, b);
  }
};

/// Plain convolution with optional bias; padding keeps the extent for stride 1.
template <typename T>
struct Conv {
  ad::Var<T> weight, bias;
  T gain = 1;
  int stride = 1;

  Conv() = default;
  Conv(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t k, Rng& rng, bool with_bias = true,
       int stride_ = 1)
      : gain(static_cast<T>(1.0 / std::sqrt(static_cast<double>(in * k * k)))), stride(stride_) {
    weight = ps.add(name + "/weight", randn<T>({out, in, k, k}, rng));
    if (with_bias) bias = ps.add(name + "/bias", Tensor<T>({out}));
  }

  int64_t in_channels() const { return weight.dim(1); }
  int64_t out_channels() const { return weight.dim(0); }
  int64_t kernel() const { return weight.dim(2); }

  ad::Var<T> effective_weight() const { return ad::scale(weight, gain); }

  ad::Var<T> forward(const ad::Var<T>& x) const {
    ad::Var<T> y = ad::conv2d(x, effective_weight(), stride, static_cast<int>(kernel() / 2));
    return bias ? ad::add_bias(y, bias) : y;
  }
};

}  // namespace togan::nn
