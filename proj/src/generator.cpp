#include "togan/generator.hpp"

#include <algorithm>
#include <bit>

namespace togan {

int num_style_inputs(int resolution) {
  if (resolution < 4 || !std::has_single_bit(static_cast<unsigned>(resolution)))
    throw ContractError("resolution must be a power of two >= 4, got " + std::to_string(resolution));
  return 2 * std::bit_width(static_cast<unsigned>(resolution)) - 4;
}

GeneratorConfig GeneratorConfig::desk(int r, bool conditioned, FusionMode fusion) {
  GeneratorConfig c;
  c.resolution = r;
  c.conditioned = conditioned;
  c.fusion = fusion;
  c.pose = PoseEncoderConfig::defaults(r);
  return c;
}

GeneratorConfig GeneratorConfig::full_scale() {
  GeneratorConfig c;
  c.resolution = 256;
  c.latent_dim = 512;
  c.mapping_depth = 8;
  c.channels = {{4, 512}, {8, 512}, {16, 512}, {32, 512}, {64, 512}, {128, 256}, {256, 128}};
  c.pose = PoseEncoderConfig::defaults(256);
  return c;
}

int GeneratorConfig::num_style_inputs() const { return togan::num_style_inputs(resolution); }
int GeneratorConfig::num_blocks() const { return num_style_inputs() / 2; }

int GeneratorConfig::channels_at(int r) const {
  auto it = channels.find(r);
  if (it == channels.end()) throw ContractError("no channel count for resolution " + std::to_string(r));
  return it->second;
}

std::vector<int> GeneratorConfig::fused_resolutions() const {
  std::vector<int> out;
  if (!conditioned) return out;
  for (int r : pose.injected())
    if (r != 4) out.push_back(r);
  return out;
}

void GeneratorConfig::validate() const {
  num_style_inputs();
  if (latent_dim < 1 || mapping_depth < 1) throw ContractError("latent_dim and mapping_depth must be positive");
  for (int r = 4; r <= resolution; r *= 2) channels_at(r);
  if (conditioned && pose.max_resolution != resolution)
    throw ContractError("pose encoder resolution " + std::to_string(pose.max_resolution) +
                        " != generator resolution " + std::to_string(resolution));
}

uint64_t GeneratorConfig::hash() const {
  uint64_t h = mix_seed(static_cast<uint64_t>(resolution), static_cast<uint64_t>(latent_dim));
  h = mix_seed(h, static_cast<uint64_t>(mapping_depth));
  for (auto [r, c] : channels)
    if (r <= resolution) h = mix_seed(h, static_cast<uint64_t>(r) * 100003u + static_cast<uint64_t>(c));
  h = mix_seed(h, conditioned ? (fusion == FusionMode::Concat ? 2 : 3) : 1);
  if (conditioned) {
    h = mix_seed(h, static_cast<uint64_t>(pose.joints));
    for (int r : pose.injected()) h = mix_seed(h, static_cast<uint64_t>(r) * 7919u + pose.channels_at(r));
  }
  return h;
}

template <typename T>
ad::Var<T> modulated_conv(const ad::Var<T>& x, const ad::Var<T>& styles, const ad::Var<T>& weight, bool demodulate) {
  if (x.value().rank() != 4 || weight.value().rank() != 4 || x.dim(1) != weight.dim(1) ||
      styles.shape() != Shape({x.dim(0), x.dim(1)}))
    throw ContractError("modulated_conv: channel mismatch (input " + shape_str(x.shape()) + ", styles " +
                        shape_str(styles.shape()) + ", weight " + shape_str(weight.shape()) + ")");
  const int64_t o = weight.dim(0), i = weight.dim(1), k = weight.dim(2);
  ad::Var<T> y = ad::conv2d(ad::mul_channels(x, styles), weight, 1, static_cast<int>(k / 2));
  if (!demodulate) return y;
  ad::Var<T> w3 = ad::reshape(weight, Shape{o, i, k * k});
  ad::Var<T> wsq = ad::channel_dot(w3, w3);  // O x I
  ad::Var<T> norm2 = ad::matmul(ad::square(styles), wsq, false, true);  // N x O
  return ad::mul_channels(y, ad::rsqrt(ad::add_const(norm2, T(1e-8))));
}

template <typename T>
Tensor<T> effective_filters(const Tensor<T>& styles, const Tensor<T>& weight, bool demodulate) {
  const int64_t n = styles.dim(0), o = weight.dim(0), i = weight.dim(1), kk = weight.dim(2) * weight.dim(3);
  Tensor<T> out(Shape{n, o, i, weight.dim(2), weight.dim(3)});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < o; ++oc) {
      T* f = out.data() + (b * o + oc) * i * kk;
      double ss = 0;
      for (int64_t ic = 0; ic < i; ++ic)
        for (int64_t t = 0; t < kk; ++t) {
          f[ic * kk + t] = weight[(oc * i + ic) * kk + t] * styles[b * i + ic];
          ss += static_cast<double>(f[ic * kk + t]) * f[ic * kk + t];
        }
      if (demodulate) {
        const T d = static_cast<T>(1.0 / std::sqrt(ss + 1e-8));
        for (int64_t t = 0; t < i * kk; ++t) f[t] *= d;
      }
    }
  return out;
}

template <typename T>
ModConvLayer<T>::ModConvLayer(nn::ParamStore<T>& ps, const std::string& name, int64_t latent_dim, int64_t in,
                              int64_t out, int64_t k, bool demod, bool act, Rng& rng)
    : affine(ps, name + "/affine", latent_dim, in, rng, 1.0),
      gain(static_cast<T>(1.0 / std::sqrt(static_cast<double>(in * k * k)))),
      demodulate(demod),
      activate(act) {
  weight = ps.add(name + "/weight", nn::randn<T>({out, in, k, k}, rng));
  bias = ps.add(name + "/bias", Tensor<T>({out}));
}

template <typename T>
ad::Var<T> ModConvLayer<T>::styles(const ad::Var<T>& w) const {
  return affine.forward(w);
}

template <typename T>
ad::Var<T> ModConvLayer<T>::forward_styles(const ad::Var<T>& x, const ad::Var<T>& s) const {
  ad::Var<T> y = ad::add_bias(modulated_conv(x, s, ad::scale(weight, gain), demodulate), bias);
  return activate ? nn::lrelu(y) : y;
}

template <typename T>
ad::Var<T> ModConvLayer<T>::forward(const ad::Var<T>& x, const ad::Var<T>& w) const {
  return forward_styles(x, styles(w));
}

template <typename T>
Generator<T>::Generator(GeneratorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(seed, hash_string("generator")));
  const int64_t d = cfg_.latent_dim;
  for (int i = 0; i < cfg_.mapping_depth; ++i)
    mapping_.emplace_back(params_, "gen/mapping/fc" + std::to_string(i), d, d, rng, 0.0, cfg_.mapping_lr_mul);

  int64_t in = 0;
  if (cfg_.conditioned) {
    pose_encoder_ = PoseEncoder<T>(params_, "gen/pose", cfg_.pose, rng);
    in = cfg_.pose.channels_at(4);
  } else {
    in = cfg_.channels_at(4);
    const_head_ = params_.add("gen/const", nn::randn<T>({in, 4, 4}, rng));
  }

  const auto fused = cfg_.fused_resolutions();
  for (int r = 4; r <= cfg_.resolution; r *= 2) {
    const std::string name = "gen/b" + std::to_string(r);
    const int64_t c = cfg_.channels_at(r);
    Block b;
    b.resolution = r;
    b.convs[0] = ModConvLayer<T>(params_, name + "/conv0", d, in, c, 3, true, true, rng);
    b.convs[1] = ModConvLayer<T>(params_, name + "/conv1", d, c, c, 3, true, true, rng);
    int64_t out = c;
    if (std::find(fused.begin(), fused.end(), r) != fused.end()) {
      const int64_t p = cfg_.pose.channels_at(r);
      if (cfg_.fusion == FusionMode::Concat)
        out += p;
      else
        b.pose_proj = nn::Conv<T>(params_, name + "/pose_proj", p, c, 1, rng);
    }
    b.to_rgb = ModConvLayer<T>(params_, name + "/torgb", d, out, 3, 1, false, false, rng);
    blocks_.push_back(std::move(b));
    in = out;
  }
}

template <typename T>
ad::Var<T> Generator<T>::map(const ad::Var<T>& z) const {
  if (z.value().rank() != 2 || z.dim(1) != cfg_.latent_dim)
    throw ContractError("map: z must be N x " + std::to_string(cfg_.latent_dim) + ", got " + shape_str(z.shape()));
  ad::Var<T> x = ad::normalize_2nd_moment(z);
  for (size_t i = 0; i < mapping_.size(); ++i) {
    x = mapping_[i].forward(x);
    if (i + 1 < mapping_.size()) x = nn::lrelu(x);
  }
  return x;
}

template <typename T>
LatentCode Generator<T>::map_latent(const LatentCode& z) const {
  if (z.space != LatentSpace::Z) throw ContractError("map_latent: input must be a Z-space code");
  ad::NoGrad ng;
  auto w = map(ad::constant(z.values.template cast<T>().reshaped(Shape{1, z.values.size()})));
  return LatentCode{w.value().template cast<float>().reshaped(Shape{cfg_.latent_dim}), LatentSpace::W};
}

template <typename T>
PosePyramid<T> Generator<T>::encode_pose(const std::vector<PoseKeypoints>& poses) const {
  if (!cfg_.conditioned) throw ContractError("encode_pose on an unconditioned generator");
  return pose_encoder_.encode(poses);
}

template <typename T>
ad::Var<T> Generator<T>::synthesize(const std::vector<ad::Var<T>>& ws, const PosePyramid<T>* pose) const {
  if (static_cast<int>(ws.size()) != num_ws())
    throw ContractError("synthesize: expected " + std::to_string(num_ws()) + " latents, got " +
                        std::to_string(ws.size()));
  const int64_t n = ws[0].dim(0);
  for (const auto& w : ws)
    if (w.shape() != Shape({n, cfg_.latent_dim})) throw ContractError("synthesize: latent shape " + shape_str(w.shape()));
  if (cfg_.conditioned && !pose) throw ContractError("synthesize: pose-conditioned generator needs a pose");
  if (!cfg_.conditioned && pose) throw ContractError("synthesize: unconditioned generator takes no pose");

  ad::Var<T> x;
  if (cfg_.conditioned) {
    x = pose->at(4);
    if (x.dim(0) != n) throw ContractError("synthesize: pose batch size differs from latent batch size");
  } else {
    const int64_t c = const_head_.dim(0);
    auto ones = ad::constant(Tensor<T>(Shape{n, 1}, T(1)));
    x = ad::reshape(ad::matmul(ones, ad::reshape(const_head_, Shape{1, c * 16})), Shape{n, c, 4, 4});
  }

  ad::Var<T> img;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    if (i > 0) x = ad::resample2x(x, ad::Resample::Up);
    x = b.convs[0].forward(x, ws[2 * i]);
    x = b.convs[1].forward(x, ws[2 * i + 1]);
    if (cfg_.conditioned && pose->has(b.resolution) && b.resolution != 4)
      x = fuse(x, pose->at(b.resolution), cfg_.fusion, b.pose_proj.weight ? &b.pose_proj : nullptr);
    ad::Var<T> rgb = b.to_rgb.forward(x, ws[2 * i + 1]);
    img = img ? ad::add(ad::resample2x(img, ad::Resample::Up), rgb) : rgb;
  }
  return img;
}

template <typename T>
ad::Var<T> Generator<T>::synthesize(const std::vector<ad::Var<T>>& ws, const std::vector<PoseKeypoints>* poses) const {
  if (cfg_.conditioned) {
    if (!poses) throw ContractError("synthesize: pose-conditioned generator needs a pose");
    auto pyr = encode_pose(*poses);
    return synthesize(ws, &pyr);
  }
  if (poses) throw ContractError("synthesize: unconditioned generator takes no pose");
  return synthesize(ws, static_cast<const PosePyramid<T>*>(nullptr));
}

template <typename T>
ad::Var<T> Generator<T>::generate(const ad::Var<T>& z, const std::vector<PoseKeypoints>* poses) const {
  ad::Var<T> w = map(z);
  return synthesize(std::vector<ad::Var<T>>(static_cast<size_t>(num_ws()), w), poses);
}

template <typename T>
Tensor<T> Generator<T>::mean_w(int count, uint64_t seed) const {
  ad::NoGrad ng;
  Rng rng(seed);
  std::vector<double> acc(static_cast<size_t>(cfg_.latent_dim), 0.0);
  int done = 0;
  while (done < count) {
    const int chunk = std::min(256, count - done);
    auto w = map(ad::constant(sample_z<T>(chunk, cfg_.latent_dim, rng)));
    for (int r = 0; r < chunk; ++r)
      for (int c = 0; c < cfg_.latent_dim; ++c) acc[c] += w.value()[r * cfg_.latent_dim + c];
    done += chunk;
  }
  Tensor<T> out(Shape{1, cfg_.latent_dim});
  for (int c = 0; c < cfg_.latent_dim; ++c) out[c] = static_cast<T>(acc[c] / count);
  return out;
}

template <typename T>
Tensor<T> sample_z(int64_t n, int64_t d, Rng& rng) {
  return nn::randn<T>({n, d}, rng);
}

template <typename T>
std::vector<std::string> layer_audit(const nn::ParamStore<T>& ps) {
  std::vector<std::string> out;
  for (size_t i = 0; i < ps.size(); ++i) out.push_back(ps.names()[i] + " " + shape_str(ps.vars()[i].shape()));
  return out;
}

#define TOGAN_INSTANTIATE_GEN(T)                                                                             \
  template ad::Var<T> modulated_conv(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&, bool);         \
  template Tensor<T> effective_filters(const Tensor<T>&, const Tensor<T>&, bool);                            \
  template struct ModConvLayer<T>;                                                                           \
  template class Generator<T>;                                                                               \
  template Tensor<T> sample_z<T>(int64_t, int64_t, Rng&);                                                    \
  template std::vector<std::string> layer_audit(const nn::ParamStore<T>&);

TOGAN_INSTANTIATE_GEN(float)
TOGAN_INSTANTIATE_GEN(double)

}  // namespace togan
