#pragma once

#include <map>
#include <string>
#include <vector>

#include "togan/nn.hpp"
#include "togan/pose.hpp"

namespace togan {

enum class LatentSpace { Z, W };

/// A single latent vector tagged with the space it lives in.
struct LatentCode {
  Tensor<float> values;  // [D]
  LatentSpace space = LatentSpace::Z;
};

struct GeneratorConfig {
  int resolution = 64;
  int latent_dim = 64;
  int mapping_depth = 3;
  std::map<int, int> channels = {{4, 128}, {8, 128}, {16, 64}, {32, 64}, {64, 32}};
  bool conditioned = false;
  FusionMode fusion = FusionMode::Concat;
  PoseEncoderConfig pose = PoseEncoderConfig::defaults(64);
  double mapping_lr_mul = 0.01;

  /// Desk defaults at resolution r (pose encoder sized to match).
  static GeneratorConfig desk(int r, bool conditioned = false, FusionMode fusion = FusionMode::Concat);
  /// The published 256x256 layout with a 4x4x512 learned head.
  static GeneratorConfig full_scale();

  int num_style_inputs() const;
  int num_blocks() const;
  int channels_at(int r) const;
  /// Resolutions whose block outputs receive a pose level (the 4x4 level is
  /// the head instead).
  std::vector<int> fused_resolutions() const;
  void validate() const;
  /// Stable hash of every field that affects parameter shapes.
  uint64_t hash() const;
};

/// 2 * log2(R) - 2: two modulated convs per resolution block from 4x4 to R.
int num_style_inputs(int resolution);

/// Conv of x (scaled per input channel by `styles`) with `weight`; when
/// demodulating, each output channel is divided by the L2 norm of its
/// effective filter. Bias and activation are applied by the caller.
template <typename T>
ad::Var<T> modulated_conv(const ad::Var<T>& x, const ad::Var<T>& styles, const ad::Var<T>& weight, bool demodulate);

/// Per-sample effective filters W * s (* demodulation), shape N x O x I x k x k.
template <typename T>
Tensor<T> effective_filters(const Tensor<T>& styles, const Tensor<T>& weight, bool demodulate);

template <typename T>
struct ModConvLayer {
  nn::Dense<T> affine;
  ad::Var<T> weight, bias;
  T gain = 1;
  bool demodulate = true;
  bool activate = true;

  ModConvLayer() = default;
  ModConvLayer(nn::ParamStore<T>& ps, const std::string& name, int64_t latent_dim, int64_t in, int64_t out, int64_t k,
               bool demod, bool act, Rng& rng);

  ad::Var<T> styles(const ad::Var<T>& w) const;
  ad::Var<T> forward(const ad::Var<T>& x, const ad::Var<T>& w) const;
  /// Forward with an explicit style tensor (bypasses the affine layer).
  ad::Var<T> forward_styles(const ad::Var<T>& x, const ad::Var<T>& s) const;
};

/// Style-based synthesis network: mapping MLP, learned constant or pose head,
/// per-resolution blocks of two modulated convs, RGB skip outputs summed
/// through upsampling.
template <typename T>
class Generator {
 public:
  Generator(GeneratorConfig cfg, uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  int num_ws() const { return cfg_.num_style_inputs(); }

  /// z: N x D -> w: N x D
  ad::Var<T> map(const ad::Var<T>& z) const;
  LatentCode map_latent(const LatentCode& z) const;

  /// ws: num_ws entries, each N x D. pose must be given iff conditioned.
  ad::Var<T> synthesize(const std::vector<ad::Var<T>>& ws, const PosePyramid<T>* pose) const;
  ad::Var<T> synthesize(const std::vector<ad::Var<T>>& ws, const std::vector<PoseKeypoints>* poses) const;

  /// map, broadcast to every style input, synthesize.
  ad::Var<T> generate(const ad::Var<T>& z, const std::vector<PoseKeypoints>* poses) const;

  PosePyramid<T> encode_pose(const std::vector<PoseKeypoints>& poses) const;
  const PoseEncoder<T>* pose_encoder() const { return cfg_.conditioned ? &pose_encoder_ : nullptr; }

  /// Average of map(z) over `count` draws of z ~ N(0, I).
  Tensor<T> mean_w(int count, uint64_t seed) const;

  const ModConvLayer<T>& layer(int block, int which) const { return blocks_.at(block).convs[which]; }

 private:
  struct Block {
    int resolution;
    ModConvLayer<T> convs[2];
    ModConvLayer<T> to_rgb;
    nn::Conv<T> pose_proj;
  };
  GeneratorConfig cfg_;
  nn::ParamStore<T> params_;
  std::vector<nn::Dense<T>> mapping_;
  ad::Var<T> const_head_;
  PoseEncoder<T> pose_encoder_;
  std::vector<Block> blocks_;
};

/// Standard normal z batch, N x D.
template <typename T>
Tensor<T> sample_z(int64_t n, int64_t d, Rng& rng);

/// "name shape" lines for every parameter, in registration order.
template <typename T>
std::vector<std::string> layer_audit(const nn::ParamStore<T>& ps);

}  // namespace togan
