#include "togan/discriminator.hpp"

#include <algorithm>
#include <cmath>

namespace togan {

DiscriminatorConfig DiscriminatorConfig::mirror(const GeneratorConfig& g) {
  DiscriminatorConfig d;
  d.resolution = g.resolution;
  d.channels = g.channels;
  d.conditioned = g.conditioned;
  d.fusion = g.fusion;
  d.pose = g.pose;
  return d;
}

int DiscriminatorConfig::channels_at(int r) const {
  auto it = channels.find(r);
  if (it == channels.end()) throw ContractError("no channel count for resolution " + std::to_string(r));
  return it->second;
}

std::vector<int> DiscriminatorConfig::fused_resolutions() const {
  return conditioned ? pose.injected() : std::vector<int>{};
}

void DiscriminatorConfig::validate() const {
  num_style_inputs(resolution);
  for (int r = 4; r <= resolution; r *= 2) channels_at(r);
  if (conditioned && pose.max_resolution != resolution)
    throw ContractError("discriminator pose resolution does not match image resolution");
  if (mbstd_group < 0) throw ContractError("mbstd_group must be >= 0");
}

uint64_t DiscriminatorConfig::hash() const {
  GeneratorConfig g;
  g.resolution = resolution;
  g.channels = channels;
  g.conditioned = conditioned;
  g.fusion = fusion;
  g.pose = pose;
  return mix_seed(g.hash(), static_cast<uint64_t>(mbstd_group) + 17);
}

template <typename T>
ad::Var<T> minibatch_stddev(const ad::Var<T>& x, int group) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (group < 1 || n % group != 0)
    throw ContractError("minibatch_stddev: batch " + std::to_string(n) + " not divisible by group " +
                        std::to_string(group));
  const int64_t m = n / group, f = c * h * w;
  Tensor<T> avg(Shape{n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (i % m == j % m) avg[i * n + j] = T(1) / static_cast<T>(group);
  auto a = ad::constant(std::move(avg));
  auto flat = ad::reshape(x, Shape{n, f});
  auto d = ad::sub(flat, ad::matmul(a, flat));
  auto var = ad::add_const(ad::matmul(a, ad::square(d)), T(1e-8));
  auto sd = ad::mul(var, ad::rsqrt(var));
  auto s = ad::matmul(sd, ad::constant(Tensor<T>(Shape{f, 1}, T(1) / static_cast<T>(f))));
  return ad::concat_channels<T>({x, ad::expand_spatial(s, Shape{n, 1, h, w})});
}

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(seed, hash_string("discriminator")));
  if (cfg_.conditioned) pose_encoder_ = PoseEncoder<T>(params_, "disc/pose", cfg_.pose, rng);
  const auto fused = cfg_.fused_resolutions();
  auto widened = [&](int r, int64_t base) -> int64_t {
    const bool f = std::find(fused.begin(), fused.end(), r) != fused.end();
    return (f && cfg_.fusion == FusionMode::Concat) ? base + cfg_.pose.channels_at(r) : base;
  };
  auto projection = [&](int r, const std::string& name) {
    const bool f = std::find(fused.begin(), fused.end(), r) != fused.end();
    if (!f || cfg_.fusion != FusionMode::Add) return nn::Conv<T>();
    return nn::Conv<T>(params_, name + "/pose_proj", cfg_.pose.channels_at(r), cfg_.channels_at(r), 1, rng);
  };

  const int top = cfg_.resolution;
  from_rgb_ = nn::Conv<T>(params_, "disc/fromrgb", 3, cfg_.channels_at(top), 1, rng);
  for (int r = top; r >= 8; r /= 2) {
    const std::string name = "disc/b" + std::to_string(r);
    const int64_t in = widened(r, cfg_.channels_at(r));
    Block b;
    b.resolution = r;
    b.pose_proj = projection(r, name);
    b.conv0 = nn::Conv<T>(params_, name + "/conv0", in, cfg_.channels_at(r), 3, rng);
    b.conv1 = nn::Conv<T>(params_, name + "/conv1", cfg_.channels_at(r), cfg_.channels_at(r / 2), 3, rng);
    b.skip = nn::Conv<T>(params_, name + "/skip", in, cfg_.channels_at(r / 2), 1, rng, false);
    blocks_.push_back(std::move(b));
  }
  const int64_t c4 = cfg_.channels_at(4);
  epi_pose_proj_ = projection(4, "disc/b4");
  const int64_t epi_in = widened(4, c4) + (cfg_.mbstd_group > 0 ? 1 : 0);
  epi_conv_ = nn::Conv<T>(params_, "disc/b4/conv", epi_in, c4, 3, rng);
  epi_fc_ = nn::Dense<T>(params_, "disc/b4/fc", c4 * 16, c4, rng);
  epi_out_ = nn::Dense<T>(params_, "disc/b4/out", c4, 1, rng);
}

template <typename T>
int64_t Discriminator<T>::block_input_channels(int r) const {
  if (r == 4) return epi_conv_.in_channels();
  for (const auto& b : blocks_)
    if (b.resolution == r) return b.conv0.in_channels();
  throw ContractError("no discriminator block at resolution " + std::to_string(r));
}

template <typename T>
PosePyramid<T> Discriminator<T>::encode_pose(const std::vector<PoseKeypoints>& poses) const {
  if (!cfg_.conditioned) throw ContractError("encode_pose on an unconditioned discriminator");
  return pose_encoder_.encode(poses);
}

template <typename T>
ad::Var<T> Discriminator<T>::score(const ad::Var<T>& images, const PosePyramid<T>* pose) const {
  const int r0 = cfg_.resolution;
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != r0 || images.dim(3) != r0)
    throw ContractError("score: expected N x 3 x " + std::to_string(r0) + " x " + std::to_string(r0) + " images, got " +
                        shape_str(images.shape()));
  if (cfg_.conditioned && !pose) throw ContractError("score: pose-conditioned discriminator needs a pose");
  if (!cfg_.conditioned && pose) throw ContractError("score: unconditioned discriminator takes no pose");
  auto maybe_fuse = [&](const ad::Var<T>& x, int r, const nn::Conv<T>& proj) {
    if (!cfg_.conditioned || !pose->has(r)) return x;
    return fuse(x, pose->at(r), cfg_.fusion, proj.weight ? &proj : nullptr);
  };

  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  ad::Var<T> x = nn::lrelu(from_rgb_.forward(images));
  for (const auto& b : blocks_) {
    x = maybe_fuse(x, b.resolution, b.pose_proj);
    ad::Var<T> main = nn::lrelu(b.conv0.forward(x));
    main = nn::lrelu(b.conv1.forward(ad::resample2x(main, ad::Resample::Down)));
    ad::Var<T> skip = b.skip.forward(ad::resample2x(x, ad::Resample::Down));
    x = ad::scale(ad::add(main, skip), inv_sqrt2);
  }
  x = maybe_fuse(x, 4, epi_pose_proj_);
  if (cfg_.mbstd_group > 0) x = minibatch_stddev(x, std::min<int>(cfg_.mbstd_group, static_cast<int>(x.dim(0))));
  x = nn::lrelu(epi_conv_.forward(x));
  x = ad::reshape(x, Shape{x.dim(0), x.dim(1) * 16});
  x = nn::lrelu(epi_fc_.forward(x));
  return epi_out_.forward(x);
}

template <typename T>
ad::Var<T> Discriminator<T>::score(const ad::Var<T>& images, const std::vector<PoseKeypoints>* poses) const {
  if (cfg_.conditioned) {
    if (!poses) throw ContractError("score: pose-conditioned discriminator needs a pose");
    auto pyr = encode_pose(*poses);
    return score(images, &pyr);
  }
  if (poses) throw ContractError("score: unconditioned discriminator takes no pose");
  return score(images, static_cast<const PosePyramid<T>*>(nullptr));
}

template class Discriminator<float>;
template class Discriminator<double>;
template ad::Var<float> minibatch_stddev(const ad::Var<float>&, int);
template ad::Var<double> minibatch_stddev(const ad::Var<double>&, int);

}  // namespace togan
