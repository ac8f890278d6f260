#include "togan/metrics.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace togan {

FeatureExtractor::FeatureExtractor(const std::string& name) : hash_(hash_string(name)) {
  Rng rng(hash_);
  const int widths[] = {3, 16, 32, 64, kFeatures};
  for (int i = 0; i < 4; ++i)
    stages_.emplace_back(params_, "fx/s" + std::to_string(i), widths[i], widths[i + 1], 3, rng, true, 2);
  // Frozen: the layers see constants, so no graph is recorded for them.
  for (auto& s : stages_) {
    s.weight = ad::constant(s.weight.value());
    s.bias = ad::constant(s.bias.value());
  }
}

ad::Var<float> FeatureExtractor::forward(const ad::Var<float>& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) < 16 || images.dim(3) < 16)
    throw ContractError("feature extractor expects N x 3 x H x W images with H, W >= 16, got " +
                        shape_str(images.shape()));
  ad::Var<float> x = images;
  for (const auto& s : stages_) x = nn::lrelu(s.forward(x));
  const float inv = 1.0f / static_cast<float>(x.dim(2) * x.dim(3));
  return ad::scale(ad::spatial_sum(x), inv);
}

Tensor<float> FeatureExtractor::extract(const Tensor<float>& images, int64_t chunk) const {
  ad::NoGrad ng;
  const int64_t n = images.dim(0), per = images.size() / std::max<int64_t>(n, 1);
  Tensor<float> out(Shape{n, kFeatures});
  for (int64_t s = 0; s < n; s += chunk) {
    const int64_t c = std::min(chunk, n - s);
    Shape sh = images.shape();
    sh[0] = c;
    Tensor<float> part(sh, std::vector<float>(images.data() + s * per, images.data() + (s + c) * per));
    auto f = forward(ad::constant(std::move(part)));
    std::copy(f.value().data(), f.value().data() + c * kFeatures, out.data() + s * kFeatures);
  }
  return out;
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ContractError("fit_gaussian needs at least 2 samples");
  GaussianStats s;
  s.count = x.rows();
  s.mean = x.colwise().mean().transpose();
  Eigen::MatrixXd c = x.rowwise() - s.mean.transpose();
  s.cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  return s;
}

GaussianStats fit_gaussian(const Tensor<float>& features) {
  Eigen::MatrixXd m(features.dim(0), features.dim(1));
  for (int64_t i = 0; i < features.dim(0); ++i)
    for (int64_t j = 0; j < features.dim(1); ++j) m(i, j) = features[i * features.dim(1) + j];
  return fit_gaussian(m);
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input, double tol, int max_sweeps) {
  const int64_t n = input.rows();
  Eigen::MatrixXd a = input;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), 1e-300);
  SymmetricEigen out;
  for (out.sweeps = 0; out.sweeps < max_sweeps; ++out.sweeps) {
    double off = 0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) off += 2 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * scale) break;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  out.values = a.diagonal();
  out.vectors = std::move(v);
  return out;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ContractError("matrix_sqrt_psd: matrix is not square");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-6) throw ContractError("matrix_sqrt_psd: matrix is not symmetric");
  auto e = jacobi_eigen(0.5 * (a + a.transpose()));
  Eigen::VectorXd r = e.values.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd out = e.vectors * r.asDiagonal() * e.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) throw ContractError("frechet_distance: feature dimensions differ");
  const Eigen::MatrixXd sa = matrix_sqrt_psd(a.cov);
  Eigen::MatrixXd m = sa * b.cov * sa;
  m = 0.5 * (m + m.transpose()).eval();
  const double cross = matrix_sqrt_psd(m).trace();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2 * cross;
  return std::max(d, 0.0);
}

GaussianStats image_stats(const FeatureExtractor& fx, const ImageSampler& sampler, int64_t n, int64_t chunk) {
  Eigen::MatrixXd feats(n, FeatureExtractor::kFeatures);
  for (int64_t s = 0; s < n; s += chunk) {
    const int64_t c = std::min(chunk, n - s);
    auto f = fx.extract(sampler(s, c));
    for (int64_t i = 0; i < c; ++i)
      for (int j = 0; j < FeatureExtractor::kFeatures; ++j) feats(s + i, j) = f[i * FeatureExtractor::kFeatures + j];
  }
  return fit_gaussian(feats);
}

FidResult fid(const FeatureExtractor& fx, const GaussianStats& real, const ImageSampler& fake, int64_t n) {
  if (n < 2) throw ContractError("fid needs at least 2 samples");
  auto stats = image_stats(fx, fake, n);
  return FidResult{frechet_distance(real, stats), real.count, n, fx.hash()};
}

void save_stats(const std::string& path, const GaussianStats& s, uint64_t dataset_hash, uint64_t extractor_hash) {
  nlohmann::json h{{"version", 1},
                   {"dim", s.mean.size()},
                   {"count", s.count},
                   {"dataset_hash", std::to_string(dataset_hash)},
                   {"extractor_hash", std::to_string(extractor_hash)}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << h.dump() << "\n";
    std::vector<float> buf;
    for (int64_t i = 0; i < s.mean.size(); ++i) buf.push_back(static_cast<float>(s.mean[i]));
    for (int64_t i = 0; i < s.cov.size(); ++i) buf.push_back(static_cast<float>(s.cov.data()[i]));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("cannot write stats cache " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

bool load_stats(const std::string& path, uint64_t dataset_hash, uint64_t extractor_hash, GaussianStats& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  std::string line;
  std::getline(f, line);
  nlohmann::json h = nlohmann::json::parse(line, nullptr, false);
  if (h.is_discarded() || h.value("version", 0) != 1) return false;
  if (h.value("dataset_hash", "") != std::to_string(dataset_hash) ||
      h.value("extractor_hash", "") != std::to_string(extractor_hash))
    return false;
  const int64_t d = h["dim"].get<int64_t>();
  std::vector<float> buf(static_cast<size_t>(d + d * d));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) return false;
  out.count = h["count"].get<int64_t>();
  out.mean.resize(d);
  out.cov.resize(d, d);
  for (int64_t i = 0; i < d; ++i) out.mean[i] = buf[static_cast<size_t>(i)];
  for (int64_t i = 0; i < d * d; ++i) out.cov.data()[i] = buf[static_cast<size_t>(d + i)];
  return true;
}

}  // namespace togan
