#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "togan/nn.hpp"
#include "togan/pose.hpp"

namespace togan {

enum class SpriteDistribution { Standard, FaceHeavy };
const char* distribution_name(SpriteDistribution d);
SpriteDistribution parse_distribution(const std::string& s);

enum class GarmentRegion { TopOnly, Dress, TwoPiece };
const char* region_name(GarmentRegion r);
GarmentRegion parse_region(const std::string& s);

struct Garment {
  double hue = 0;  // degrees in [0, 360)
  double saturation = 0.55, value = 0.6;
  double length = 0;  // hem position between pelvis (0) and feet (1)
  GarmentRegion region = GarmentRegion::TopOnly;
};

/// Saturation/value bands shared by the renderer and the oracles. Markers are
/// drawn at full saturation and value, garments inside the band, skin and
/// background below it.
inline constexpr double kGarmentSatLo = 0.45, kGarmentSatHi = 0.65;
inline constexpr double kGarmentValLo = 0.5, kGarmentValHi = 0.7;
/// Marker disc radius as a fraction of the image side.
inline constexpr double kMarkerRadius = 0.055;
/// Identification hue of joint j.
inline double marker_hue(int j) { return 45.0 * j; }

/// Everything needed to draw one sprite. `pose` lives in figure space; the
/// view (zoom about `view_center`) maps it into the frame.
struct SpriteSpec {
  PoseKeypoints pose;
  Garment garment;
  int skin = 0;        // palette id
  int background = 0;  // palette id
  double scale = 1;    // limb widths and head size
  double head_scale = 1;
  double zoom = 1;
  double view_x = 0.5, view_y = 0.5;
  SpriteDistribution distribution = SpriteDistribution::Standard;
};

std::string spec_to_json(const SpriteSpec& s);
SpriteSpec spec_from_json(const std::string& text);

/// Deterministic given the rng state. STANDARD keeps every joint at least
/// 2 px (at R = 32) inside the frame with non-overlapping markers.
SpriteSpec sample_spec(Rng& rng, SpriteDistribution dist);

/// Shifts the figure by (dx, dy) in normalized image units.
SpriteSpec translate_spec(const SpriteSpec& s, double dx, double dy);

enum SegLabel : uint8_t { kSegBackground = 0, kSegSkin = 1, kSegGarment = 2, kSegMarker = 3 };

struct Sprite {
  Tensor<float> image;  // 3 x R x R in [-1, 1]
  PoseKeypoints keypoints;
  std::vector<uint8_t> mask;  // R x R SegLabel
};

/// Keypoints are the view-mapped joints; joints whose marker would not fit
/// inside the frame are marked invisible and not drawn.
Sprite render_sprite(const SpriteSpec& spec, int resolution);

/// Per-joint hue-band segmentation of saturated pixels, then centroid.
/// Fewer than 4 pixels makes the joint invisible. Accepts 3 x R x R.
PoseKeypoints detect_keypoints(const Tensor<float>& image);
/// Same on image `index` of an N x 3 x R x R batch.
PoseKeypoints detect_keypoints(const Tensor<float>& batch, int64_t index);

struct GarmentMeasure {
  std::optional<double> hue;     // circular median over garment pixels
  std::optional<double> length;  // needs visible pelvis and feet
  std::optional<GarmentRegion> region;
  int64_t pixels = 0;
};
GarmentMeasure measure_garment(const Tensor<float>& image);
GarmentMeasure measure_garment(const Tensor<float>& batch, int64_t index);

/// Signed smallest difference a - b in degrees, in (-180, 180].
double hue_difference(double a, double b);

/// Max and mean joint error in pixels over joints visible in `truth`; a joint
/// the detector misses counts as R / 2.
struct JointError {
  double max_px = 0, mean_px = 0;
  int missed = 0, compared = 0;
};
JointError joint_error(const PoseKeypoints& truth, const PoseKeypoints& found, int resolution);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

}  // namespace togan
