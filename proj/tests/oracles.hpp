#pragma once

// Reference implementations and gradient-check fixtures shared by the unit
// tests and the acceptance binary.

#include <Eigen/Dense>

#include "test_util.hpp"
#include "togan/generator.hpp"
#include "togan/metrics.hpp"

namespace togan::testing {

// Six nested loops, zero padding, cross-correlation.
template <typename T>
inline Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0), k = w.dim(2);
  const int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> y(Shape{n, o, ho, wo});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          T acc = 0;
          for (int64_t ic = 0; ic < c; ++ic)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x[((b * c + ic) * h + iy) * wd + ix] * w[((oc * c + ic) * k + ky) * k + kx];
              }
          y[((b * o + oc) * ho + oy) * wo + ox] = acc;
        }
  return y;
}

struct PrimitiveCase {
  const char* name;
  std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)> f;
  std::vector<Shape> shapes;
  double lo = -1, hi = 1;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using namespace ad;
  return {
      {"add", [](const auto& v) { return project(add(v[0], v[1])); }, {{3, 4}, {3, 4}}},
      {"sub", [](const auto& v) { return project(sub(v[0], v[1])); }, {{3, 4}, {3, 4}}},
      {"mul", [](const auto& v) { return project(mul(v[0], v[1])); }, {{3, 4}, {3, 4}}},
      {"scale", [](const auto& v) { return project(scale(v[0], -1.7)); }, {{5}}},
      {"add_const", [](const auto& v) { return project(add_const(v[0], 0.3)); }, {{5}}},
      {"mul_const",
       [](const auto& v) {
         return project(mul_const(v[0], std::make_shared<const Tensor<double>>(rand_tensor({2, 3}, 77))));
       },
       {{2, 3}}},
      {"leaky_relu", [](const auto& v) { return project(leaky_relu(v[0], 0.2, 1.4)); }, {{4, 6}}},
      {"rsqrt", [](const auto& v) { return project(rsqrt(v[0])); }, {{6}}, 0.5, 2.0},
      {"sigmoid", [](const auto& v) { return project(sigmoid(v[0])); }, {{6}}, -4, 4},
      {"softplus", [](const auto& v) { return project(softplus(v[0])); }, {{6}}, -4, 4},
      {"sum", [](const auto& v) { return sum(mul(v[0], v[0])); }, {{2, 3}}},
      {"mean", [](const auto& v) { return mean(mul(v[0], v[0])); }, {{2, 3}}},
      {"expand_scalar", [](const auto& v) { return project(expand_scalar(v[0], Shape{2, 2})); }, {{1}}},
      {"matmul", [](const auto& v) { return project(matmul(v[0], v[1])); }, {{3, 4}, {4, 2}}},
      {"matmul_ta", [](const auto& v) { return project(matmul(v[0], v[1], true, false)); }, {{4, 3}, {4, 2}}},
      {"matmul_tb", [](const auto& v) { return project(matmul(v[0], v[1], false, true)); }, {{3, 4}, {2, 4}}},
      {"matmul_tab", [](const auto& v) { return project(matmul(v[0], v[1], true, true)); }, {{4, 3}, {2, 4}}},
      {"matmul_bias", [](const auto& v) { return project(matmul_bias(v[0], v[1], v[2])); }, {{3, 4}, {4, 2}, {2}}},
      {"add_bias", [](const auto& v) { return project(add_bias(v[0], v[1])); }, {{2, 3, 2, 2}, {3}}},
      {"channel_sum", [](const auto& v) { return project(channel_sum(v[0])); }, {{2, 3, 2, 2}}},
      {"broadcast_channels", [](const auto& v) { return project(broadcast_channels(v[0], Shape{2, 3, 2})); }, {{3}}},
      {"mul_channels", [](const auto& v) { return project(mul_channels(v[0], v[1])); }, {{2, 3, 2, 2}, {2, 3}}},
      {"channel_dot", [](const auto& v) { return project(channel_dot(v[0], v[1])); }, {{2, 3, 4}, {2, 3, 4}}},
      {"spatial_sum", [](const auto& v) { return project(spatial_sum(v[0])); }, {{2, 3, 2, 2}}},
      {"expand_spatial", [](const auto& v) { return project(expand_spatial(v[0], Shape{2, 3, 2, 2})); }, {{2, 3}}},
      {"conv3x3", [](const auto& v) { return project(conv2d(v[0], v[1], 1, 1)); }, {{2, 3, 5, 5}, {4, 3, 3, 3}}},
      {"conv3x3_s2", [](const auto& v) { return project(conv2d(v[0], v[1], 2, 1)); }, {{2, 3, 6, 6}, {2, 3, 3, 3}}},
      {"conv1x1", [](const auto& v) { return project(conv2d(v[0], v[1], 1, 0)); }, {{2, 3, 4, 4}, {5, 3, 1, 1}}},
      {"conv_big", [](const auto& v) { return project(conv2d(v[0], v[1], 1, 1)); }, {{1, 2, 10, 10}, {2, 2, 3, 3}}},
      {"conv_input_grad",
       [](const auto& v) { return project(conv2d_input_grad(v[0], v[1], 2, 1, 6, 6)); },
       {{2, 4, 3, 3}, {4, 3, 3, 3}}},
      {"conv_weight_grad",
       [](const auto& v) { return project(conv2d_weight_grad(v[0], v[1], 1, 1, 3)); },
       {{2, 3, 4, 4}, {2, 2, 4, 4}}},
      {"resample_up", [](const auto& v) { return project(resample2x(v[0], Resample::Up)); }, {{1, 2, 3, 4}}},
      {"resample_down", [](const auto& v) { return project(resample2x(v[0], Resample::Down)); }, {{1, 2, 4, 6}}},
      {"concat", [](const auto& v) { return project(concat_channels<double>({v[0], v[1]})); },
       {{2, 3, 2, 2}, {2, 1, 2, 2}}},
      {"slice", [](const auto& v) { return project(slice_channels(v[0], 1, 3)); }, {{2, 4, 2}}},
      {"reshape", [](const auto& v) { return project(reshape(v[0], Shape{6, 2})); }, {{3, 4}}},
      {"normalize_2nd_moment", [](const auto& v) { return project(normalize_2nd_moment(v[0])); }, {{3, 5}}},
  };
}

inline GeneratorConfig toy_config(bool conditioned, FusionMode fusion = FusionMode::Concat) {
  GeneratorConfig c;
  c.resolution = 8;
  c.latent_dim = 4;
  c.mapping_depth = 2;
  c.channels = {{4, 3}, {8, 2}};
  c.conditioned = conditioned;
  c.fusion = fusion;
  c.pose = PoseEncoderConfig::defaults(8);
  c.pose.channels = {{4, 2}, {8, 2}};
  return c;
}

inline PoseKeypoints random_pose(uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  PoseKeypoints kp;
  for (int j = 0; j < kNumJoints; ++j) kp.joints.push_back({u(rng), u(rng), 1});
  return kp;
}

inline std::vector<PoseKeypoints> random_poses(int n, uint64_t seed) {
  std::vector<PoseKeypoints> out;
  for (int i = 0; i < n; ++i) out.push_back(random_pose(seed * 1000 + i));
  return out;
}

// Central differences over every entry of every parameter in the store.
template <typename F>
GradCheckResult param_grad_check(nn::ParamStore<double>& ps, F loss_fn, double h = 1e-5) {
  auto grads = ad::backward(loss_fn(), ps.vars());
  GradCheckResult res;
  for (size_t p = 0; p < ps.size(); ++p) {
    auto& var = ps.vars()[p];
    for (int64_t k = 0; k < var.size(); ++k) {
      const double orig = var.value()[k];
      auto eval = [&](double v) {
        var.mutable_value()[k] = v;
        ad::NoGrad ng;
        return loss_fn().value().item();
      };
      const double num = (eval(orig + h) - eval(orig - h)) / (2 * h);
      var.mutable_value()[k] = orig;
      const double ana = grads[p][k];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = ps.names()[p] + "[" + std::to_string(k) + "] analytic " + std::to_string(ana) + " numeric " +
                    std::to_string(num);
      }
    }
  }
  return res;
}

// Zero-initialized biases on sparse heatmap inputs put pre-activations exactly
// on the leaky ReLU kink, where central differences are meaningless.
inline void jitter_biases(nn::ParamStore<double>& ps, uint64_t seed) {
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& name = ps.names()[i];
    if (name.size() < 5 || name.compare(name.size() - 5, 5, "/bias") != 0) continue;
    ps.vars()[i].mutable_value() = rand_tensor(ps.vars()[i].shape(), seed + i, -0.2, 0.2);
  }
}

inline Eigen::MatrixXd random_matrix(int64_t r, int64_t c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(r, c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

inline GaussianStats diag_stats(std::vector<double> mean, std::vector<double> var) {
  GaussianStats s;
  s.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<int64_t>(mean.size()));
  s.cov = Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(var.data(), static_cast<int64_t>(var.size()))).asDiagonal();
  s.count = 100;
  return s;
}

}  // namespace togan::testing
