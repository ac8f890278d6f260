#pragma once

#include <map>
#include <vector>

#include "togan/generator.hpp"

namespace togan {

struct DiscriminatorConfig {
  int resolution = 64;
  std::map<int, int> channels = {{4, 128}, {8, 128}, {16, 64}, {32, 64}, {64, 32}};
  bool conditioned = false;
  FusionMode fusion = FusionMode::Concat;
  PoseEncoderConfig pose = PoseEncoderConfig::defaults(64);
  /// Minibatch standard-deviation feature at 4x4; 0 disables it. When
  /// enabled, the batch size must be a multiple of the group size.
  int mbstd_group = 0;

  /// Mirrors a generator's resolution, channel table and conditioning.
  static DiscriminatorConfig mirror(const GeneratorConfig& g);

  int channels_at(int r) const;
  /// Resolutions where a pose level enters the feature stream (same set the
  /// generator injects, including 4x4).
  std::vector<int> fused_resolutions() const;
  void validate() const;
  uint64_t hash() const;
};

/// Residual convolutional critic producing one logit per image.
template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// images: N x 3 x R x R -> logits N x 1
  ad::Var<T> score(const ad::Var<T>& images, const PosePyramid<T>* pose) const;
  ad::Var<T> score(const ad::Var<T>& images, const std::vector<PoseKeypoints>* poses) const;
  PosePyramid<T> encode_pose(const std::vector<PoseKeypoints>& poses) const;

  /// Input channel count of the block (or epilogue at 4) consuming resolution r.
  int64_t block_input_channels(int r) const;

 private:
  struct Block {
    int resolution;
    nn::Conv<T> conv0, conv1, skip, pose_proj;
  };
  DiscriminatorConfig cfg_;
  nn::ParamStore<T> params_;
  PoseEncoder<T> pose_encoder_;
  nn::Conv<T> from_rgb_;
  std::vector<Block> blocks_;  // R down to 8
  nn::Conv<T> epi_conv_, epi_pose_proj_;
  nn::Dense<T> epi_fc_, epi_out_;
};

/// Appends the per-group standard deviation (averaged over features) as one
/// extra channel. Twice differentiable.
template <typename T>
ad::Var<T> minibatch_stddev(const ad::Var<T>& x, int group);

}  // namespace togan
