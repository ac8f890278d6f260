#pragma once

#include <map>
#include <string>
#include <vector>

#include "togan/nn.hpp"

namespace togan {

/// Normalized joint position; pixel coordinate is x * R (pixel centers sit on integers).
struct Joint {
  double x = 0, y = 0;
  int visible = 0;
};

enum JointId : int { kHead = 0, kNeck, kLShoulder, kRShoulder, kLHand, kRHand, kPelvis, kFeet, kNumJoints };

const char* joint_name(int j);

struct PoseKeypoints {
  std::vector<Joint> joints;

  int count_visible() const;
  /// Clamps coordinates to [0,1] and checks that at least one joint is visible.
  void validate();
};

/// `{"joints": [[x,y,v], ...]}`
std::string keypoints_to_json(const PoseKeypoints& kp);
PoseKeypoints keypoints_from_json(const std::string& text);

struct HeatmapStack {
  int resolution = 0;
  double sigma = 0;
  Tensor<float> maps;  // J x R x R
};

/// Gaussian splat per visible joint, normalized so each map peaks at exactly 1
/// on the joint's nearest pixel. Invisible joints give zero maps.
HeatmapStack splat_heatmaps(const PoseKeypoints& kp, int resolution, double sigma);

/// Default splat width: 2 px at R = 64, proportional otherwise.
inline double default_sigma(int resolution) { return 2.0 * resolution / 64.0; }

/// Stacks per-sample heatmaps into N x J x R x R.
template <typename T>
Tensor<T> heatmap_batch(const std::vector<PoseKeypoints>& poses, int resolution, double sigma);

enum class FusionMode { Concat, Add };
const char* fusion_name(FusionMode m);
FusionMode parse_fusion(const std::string& s);

struct PoseEncoderConfig {
  int joints = kNumJoints;
  int max_resolution = 64;
  bool inject_all_resolutions = false;
  std::map<int, int> channels;  // trunk/level channels per resolution
  double sigma = 2.0;

  static PoseEncoderConfig defaults(int max_resolution);
  /// {4, 8, 16, R_max}, or every power of two in [4, R_max].
  std::vector<int> injected() const;
  int channels_at(int r) const;
};

template <typename T>
struct PosePyramid {
  std::map<int, ad::Var<T>> levels;
  std::vector<int> injected;

  bool has(int r) const { return levels.count(r) > 0; }
  const ad::Var<T>& at(int r) const { return levels.at(r); }
};

/// Shared conv trunk over the heatmaps; the trunk output at each injected
/// resolution is that level of the pyramid. Each stage is two 3x3 convs with
/// leaky ReLU, and stages are separated by binomial downsampling.
template <typename T>
class PoseEncoder {
 public:
  PoseEncoder() = default;
  PoseEncoder(nn::ParamStore<T>& ps, const std::string& prefix, PoseEncoderConfig cfg, Rng& rng);

  const PoseEncoderConfig& config() const { return cfg_; }
  PosePyramid<T> encode(const ad::Var<T>& heatmaps) const;
  PosePyramid<T> encode(const std::vector<PoseKeypoints>& poses) const;

 private:
  struct Stage {
    int resolution;
    nn::Conv<T> conv0, conv1;
  };
  PoseEncoderConfig cfg_;
  std::vector<Stage> stages_;  // highest resolution first
};

/// CONCAT appends pose channels after the feature channels; ADD sums the
/// features with a 1x1 projection of the pose level.
template <typename T>
ad::Var<T> fuse(const ad::Var<T>& features, const ad::Var<T>& pose_level, FusionMode mode,
                const nn::Conv<T>* projection = nullptr);

}  // namespace togan
