#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "togan/nn.hpp"

namespace togan {

/// Frozen random convolutional embedder standing in for Inception: four
/// stride-2 3x3 conv + leaky ReLU stages, then a global average pool.
class FeatureExtractor {
 public:
  static constexpr const char* kDefaultName = "togan-fid-extractor-v1";
  static constexpr int kFeatures = 64;

  explicit FeatureExtractor(const std::string& name = kDefaultName);

  /// images: N x 3 x H x W (H, W >= 16) -> N x 64. Differentiable in the images.
  ad::Var<float> forward(const ad::Var<float>& images) const;
  /// Batched, gradient-free extraction.
  Tensor<float> extract(const Tensor<float>& images, int64_t chunk = 64) const;

  uint64_t hash() const { return hash_; }
  const nn::ParamStore<float>& params() const { return params_; }

 private:
  nn::ParamStore<float> params_;
  std::vector<nn::Conv<float>> stages_;
  uint64_t hash_ = 0;
};

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int64_t count = 0;
};

/// Sample mean and unbiased covariance of the rows (N >= 2), symmetrized.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);
GaussianStats fit_gaussian(const Tensor<float>& features);

struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns
  int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// tol * ||A||_F or max_sweeps is reached.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a, double tol = 1e-10, int max_sweeps = 100);

/// V diag(sqrt(max(lambda, 0))) V^T. Throws ContractError when |A - A^T| > 1e-6.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a);

double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct FidResult {
  double value = 0;
  int64_t n_real = 0, n_fake = 0;
  uint64_t extractor_hash = 0;
};

/// Produces `count` images starting at sample index `start`.
using ImageSampler = std::function<Tensor<float>(int64_t start, int64_t count)>;

GaussianStats image_stats(const FeatureExtractor& fx, const ImageSampler& sampler, int64_t n, int64_t chunk = 64);
FidResult fid(const FeatureExtractor& fx, const GaussianStats& real, const ImageSampler& fake, int64_t n);

/// Stats cache: one JSON header line, then little-endian f32 mean and covariance.
void save_stats(const std::string& path, const GaussianStats& s, uint64_t dataset_hash, uint64_t extractor_hash);
/// Returns false when the file is missing or keyed differently.
bool load_stats(const std::string& path, uint64_t dataset_hash, uint64_t extractor_hash, GaussianStats& out);

}  // namespace togan
