#include "togan/pose.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace togan {

const char* joint_name(int j) {
  static const char* names[] = {"head", "neck", "l_shoulder", "r_shoulder", "l_hand", "r_hand", "pelvis", "feet"};
  return (j >= 0 && j < kNumJoints) ? names[j] : "joint";
}

int PoseKeypoints::count_visible() const {
  return static_cast<int>(std::count_if(joints.begin(), joints.end(), [](const Joint& j) { return j.visible != 0; }));
}

void PoseKeypoints::validate() {
  for (auto& j : joints) {
    j.x = std::clamp(j.x, 0.0, 1.0);
    j.y = std::clamp(j.y, 0.0, 1.0);
    j.visible = j.visible ? 1 : 0;
  }
  if (count_visible() == 0) throw ContractError("pose has no visible joints");
}

std::string keypoints_to_json(const PoseKeypoints& kp) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& j : kp.joints) arr.push_back({j.x, j.y, j.visible});
  return nlohmann::json{{"joints", arr}}.dump();
}

PoseKeypoints keypoints_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("keypoint record: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("joints") || !doc["joints"].is_array())
    throw ContractError("keypoint record: missing \"joints\" array");
  PoseKeypoints kp;
  for (const auto& e : doc["joints"]) {
    if (!e.is_array() || e.size() != 3) throw ContractError("keypoint record: joint must be [x, y, v]");
    kp.joints.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>() != 0 ? 1 : 0});
  }
  return kp;
}

HeatmapStack splat_heatmaps(const PoseKeypoints& kp, int resolution, double sigma) {
  if (resolution < 4) throw ContractError("heatmap resolution must be >= 4");
  if (!(sigma > 0)) throw ContractError("heatmap sigma must be positive");
  if (kp.count_visible() == 0) throw ContractError("pose has no visible joints");
  const int64_t j_count = static_cast<int64_t>(kp.joints.size());
  HeatmapStack hm{resolution, sigma, Tensor<float>(Shape{j_count, resolution, resolution})};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int64_t j = 0; j < j_count; ++j) {
    const Joint& jt = kp.joints[static_cast<size_t>(j)];
    if (!jt.visible) continue;
    const double u = jt.x * resolution, v = jt.y * resolution;
    const double nu = std::clamp(std::round(u), 0.0, resolution - 1.0);
    const double nv = std::clamp(std::round(v), 0.0, resolution - 1.0);
    const double d0 = (nu - u) * (nu - u) + (nv - v) * (nv - v);
    float* map = hm.maps.data() + j * resolution * resolution;
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        const double d = (x - u) * (x - u) + (y - v) * (y - v);
        map[y * resolution + x] = static_cast<float>(std::exp(-(d - d0) * inv));
      }
  }
  return hm;
}

template <typename T>
Tensor<T> heatmap_batch(const std::vector<PoseKeypoints>& poses, int resolution, double sigma) {
  if (poses.empty()) throw ContractError("heatmap_batch: empty batch");
  const int64_t j_count = static_cast<int64_t>(poses[0].joints.size());
  Tensor<T> out(Shape{static_cast<int64_t>(poses.size()), j_count, resolution, resolution});
  const int64_t stride = j_count * resolution * resolution;
  for (size_t i = 0; i < poses.size(); ++i) {
    if (static_cast<int64_t>(poses[i].joints.size()) != j_count)
      throw ContractError("heatmap_batch: joint count differs within batch");
    auto hm = splat_heatmaps(poses[i], resolution, sigma);
    std::copy(hm.maps.vec().begin(), hm.maps.vec().end(), out.data() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

const char* fusion_name(FusionMode m) { return m == FusionMode::Concat ? "concat" : "add"; }

FusionMode parse_fusion(const std::string& s) {
  if (s == "concat") return FusionMode::Concat;
  if (s == "add") return FusionMode::Add;
  throw ContractError("unknown fusion mode '" + s + "' (expected concat or add)");
}

PoseEncoderConfig PoseEncoderConfig::defaults(int max_resolution) {
  PoseEncoderConfig c;
  c.max_resolution = max_resolution;
  c.channels = {{4, 32}, {8, 16}, {16, 16}, {32, 8}, {64, 8}, {128, 8}, {256, 8}};
  c.sigma = default_sigma(max_resolution);
  return c;
}

std::vector<int> PoseEncoderConfig::injected() const {
  std::vector<int> out;
  for (int r = 4; r <= max_resolution; r *= 2)
    if (inject_all_resolutions || r == 4 || r == 8 || r == 16 || r == max_resolution) out.push_back(r);
  return out;
}

int PoseEncoderConfig::channels_at(int r) const {
  auto it = channels.find(r);
  if (it == channels.end()) throw ContractError("pose encoder: no channel count for resolution " + std::to_string(r));
  return it->second;
}

template <typename T>
PoseEncoder<T>::PoseEncoder(nn::ParamStore<T>& ps, const std::string& prefix, PoseEncoderConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  if (cfg_.max_resolution < 4 || (cfg_.max_resolution & (cfg_.max_resolution - 1)))
    throw ContractError("pose encoder: max resolution must be a power of two >= 4");
  int64_t in = cfg_.joints;
  for (int r = cfg_.max_resolution; r >= 4; r /= 2) {
    const int64_t c = cfg_.channels_at(r);
    const std::string name = prefix + "/s" + std::to_string(r);
    Stage s{r, nn::Conv<T>(ps, name + "/conv0", in, c, 3, rng), nn::Conv<T>(ps, name + "/conv1", c, c, 3, rng)};
    stages_.push_back(std::move(s));
    in = c;
  }
}

template <typename T>
PosePyramid<T> PoseEncoder<T>::encode(const ad::Var<T>& heatmaps) const {
  if (heatmaps.value().rank() != 4 || heatmaps.dim(1) != cfg_.joints || heatmaps.dim(2) != cfg_.max_resolution ||
      heatmaps.dim(3) != cfg_.max_resolution)
    throw ContractError("pose encoder: heatmaps " + shape_str(heatmaps.shape()) + " do not match config (J=" +
                        std::to_string(cfg_.joints) + ", R=" + std::to_string(cfg_.max_resolution) + ")");
  PosePyramid<T> out;
  out.injected = cfg_.injected();
  ad::Var<T> x = heatmaps;
  for (size_t i = 0; i < stages_.size(); ++i) {
    if (i > 0) x = ad::resample2x(x, ad::Resample::Down);
    x = nn::lrelu(stages_[i].conv0.forward(x));
    x = nn::lrelu(stages_[i].conv1.forward(x));
    const int r = stages_[i].resolution;
    if (std::find(out.injected.begin(), out.injected.end(), r) != out.injected.end()) out.levels[r] = x;
  }
  return out;
}

template <typename T>
PosePyramid<T> PoseEncoder<T>::encode(const std::vector<PoseKeypoints>& poses) const {
  return encode(ad::constant(heatmap_batch<T>(poses, cfg_.max_resolution, cfg_.sigma)));
}

template <typename T>
ad::Var<T> fuse(const ad::Var<T>& features, const ad::Var<T>& pose_level, FusionMode mode,
                const nn::Conv<T>* projection) {
  const auto& f = features.shape();
  const auto& p = pose_level.shape();
  if (f.size() != 4 || p.size() != 4 || f[0] != p[0] || f[2] != p[2] || f[3] != p[3])
    throw ContractError("fuse: spatial mismatch " + shape_str(f) + " vs " + shape_str(p));
  if (mode == FusionMode::Concat) return ad::concat_channels<T>({features, pose_level});
  if (!projection) {
    if (p[1] != f[1]) throw ContractError("fuse: ADD without projection needs equal channels");
    return ad::add(features, pose_level);
  }
  return ad::add(features, projection->forward(pose_level));
}

template class PoseEncoder<float>;
template class PoseEncoder<double>;
template Tensor<float> heatmap_batch<float>(const std::vector<PoseKeypoints>&, int, double);
template Tensor<double> heatmap_batch<double>(const std::vector<PoseKeypoints>&, int, double);
template ad::Var<float> fuse(const ad::Var<float>&, const ad::Var<float>&, FusionMode, const nn::Conv<float>*);
template ad::Var<double> fuse(const ad::Var<double>&, const ad::Var<double>&, FusionMode, const nn::Conv<double>*);

}  // namespace togan
