#include "togan/sprites.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "json.hpp"

namespace togan {

namespace {

constexpr double kPi = 3.14159265358979323846;
double rad(double deg) { return deg * kPi / 180.0; }

struct Vec2 {
  double x = 0, y = 0;
};
Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

Vec2 joint(const PoseKeypoints& p, int j) { return {p.joints[j].x, p.joints[j].y}; }

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + t * ab));
}

// Convex polygon, either winding.
bool inside_convex(Vec2 p, const std::vector<Vec2>& poly) {
  int sign = 0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const double c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    const int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb hsv(double h, double s, double v) {
  Rgb c;
  hsv_to_rgb(h, s, v, c.r, c.g, c.b);
  return c;
}

const std::array<std::array<double, 3>, 4> kSkin = {{{25, 0.22, 0.92}, {28, 0.28, 0.8}, {20, 0.18, 0.86}, {32, 0.3, 0.72}}};
const std::array<double, 3> kBackground = {0.3, 0.4, 0.22};

// Figure-space geometry derived from the joints, shared by rendering and tests.
struct Figure {
  Vec2 head, neck, lsh, rsh, lhand, rhand, pelvis, feet;
  Vec2 shoulder_base, up, perp;
  double s = 1, head_r = 0;
};

Figure figure_of(const SpriteSpec& spec) {
  const auto& p = spec.pose;
  Figure f;
  f.head = joint(p, kHead);
  f.neck = joint(p, kNeck);
  f.lsh = joint(p, kLShoulder);
  f.rsh = joint(p, kRShoulder);
  f.lhand = joint(p, kLHand);
  f.rhand = joint(p, kRHand);
  f.pelvis = joint(p, kPelvis);
  f.feet = joint(p, kFeet);
  f.s = spec.scale;
  const Vec2 d = f.neck - f.pelvis;
  const double n = norm(d);
  f.up = n > 0 ? (1.0 / n) * d : Vec2{0, -1};
  f.perp = {-f.up.y, f.up.x};
  f.shoulder_base = 0.5 * (f.lsh + f.rsh);
  f.head_r = 0.075 * f.s * spec.head_scale;
  return f;
}

}  // namespace

const char* distribution_name(SpriteDistribution d) {
  return d == SpriteDistribution::Standard ? "standard" : "face_heavy";
}

SpriteDistribution parse_distribution(const std::string& s) {
  if (s == "standard") return SpriteDistribution::Standard;
  if (s == "face_heavy" || s == "face-heavy") return SpriteDistribution::FaceHeavy;
  throw ContractError("unknown sprite distribution '" + s + "' (expected standard or face_heavy)");
}

const char* region_name(GarmentRegion r) {
  switch (r) {
    case GarmentRegion::TopOnly: return "top_only";
    case GarmentRegion::Dress: return "dress";
    case GarmentRegion::TwoPiece: return "two_piece";
  }
  return "?";
}

GarmentRegion parse_region(const std::string& s) {
  if (s == "top_only") return GarmentRegion::TopOnly;
  if (s == "dress") return GarmentRegion::Dress;
  if (s == "two_piece") return GarmentRegion::TwoPiece;
  throw ContractError("unknown garment region '" + s + "'");
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), c = mx - mn;
  v = mx;
  s = mx > 0 ? c / mx : 0;
  if (c <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = 60 * std::fmod((g - b) / c + 6, 6.0);
  else if (mx == g) h = 60 * ((b - r) / c + 2);
  else h = 60 * ((r - g) / c + 4);
  if (h >= 360) h -= 360;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s, hp = h / 60, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1)), m = v - c;
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp)) {
    case 0: r1 = c, g1 = x; break;
    case 1: r1 = x, g1 = c; break;
    case 2: g1 = c, b1 = x; break;
    case 3: g1 = x, b1 = c; break;
    case 4: r1 = x, b1 = c; break;
    default: r1 = c, b1 = x; break;
  }
  r = r1 + m, g = g1 + m, b = b1 + m;
}

double hue_difference(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d <= -180) d += 360;
  if (d > 180) d -= 360;
  return d;
}

std::string spec_to_json(const SpriteSpec& s) {
  nlohmann::json pose = nlohmann::json::array();
  for (const auto& j : s.pose.joints) pose.push_back({j.x, j.y, j.visible});
  nlohmann::json doc{{"pose", pose},
                     {"garment",
                      {{"hue", s.garment.hue},
                       {"saturation", s.garment.saturation},
                       {"value", s.garment.value},
                       {"length", s.garment.length},
                       {"region", region_name(s.garment.region)}}},
                     {"skin", s.skin},
                     {"background", s.background},
                     {"scale", s.scale},
                     {"head_scale", s.head_scale},
                     {"zoom", s.zoom},
                     {"view", {s.view_x, s.view_y}},
                     {"distribution", distribution_name(s.distribution)}};
  return doc.dump();
}

SpriteSpec spec_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    SpriteSpec s;
    for (const auto& e : doc.at("pose")) s.pose.joints.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<int>()});
    const auto& g = doc.at("garment");
    s.garment.hue = g.at("hue").get<double>();
    s.garment.saturation = g.at("saturation").get<double>();
    s.garment.value = g.at("value").get<double>();
    s.garment.length = g.at("length").get<double>();
    s.garment.region = parse_region(g.at("region").get<std::string>());
    s.skin = doc.at("skin").get<int>();
    s.background = doc.at("background").get<int>();
    s.scale = doc.at("scale").get<double>();
    s.head_scale = doc.at("head_scale").get<double>();
    s.zoom = doc.at("zoom").get<double>();
    s.view_x = doc.at("view").at(0).get<double>();
    s.view_y = doc.at("view").at(1).get<double>();
    s.distribution = parse_distribution(doc.at("distribution").get<std::string>());
    if (static_cast<int>(s.pose.joints.size()) != kNumJoints) throw ContractError("sprite spec needs 8 joints");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("sprite spec: ") + e.what());
  }
}

SpriteSpec sample_spec(Rng& rng, SpriteDistribution dist) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto u = [&](double a, double b) { return a + (b - a) * unit(rng); };
  const double min_sep = 2 * kMarkerRadius + 0.02;
  const bool face = dist == SpriteDistribution::FaceHeavy;

  SpriteSpec spec;
  spec.distribution = dist;
  for (;;) {
    const double s = u(0.9, 1.0);
    const double lean = rad(u(-30, 30));
    const Vec2 pelvis{u(0.4, 0.6), u(0.5, 0.55)};
    const Vec2 up{std::sin(lean), -std::cos(lean)}, perp{std::cos(lean), std::sin(lean)};
    const Vec2 neck = pelvis + 0.27 * s * up;
    const Vec2 head = neck + 0.15 * s * up;
    const Vec2 base = neck - 0.03 * s * up;
    const Vec2 lsh = base + 0.15 * s * perp, rsh = base - 0.15 * s * perp;
    const double al = rad(u(-90, 90)), ar = rad(u(-90, 90));
    const Vec2 down = -1.0 * up;
    const Vec2 lhand = lsh + 0.24 * s * (std::cos(al) * down + std::sin(al) * perp);
    const Vec2 rhand = rsh + 0.24 * s * (std::cos(ar) * down - std::sin(ar) * perp);
    const double phi = rad(u(-10, 10));
    const Vec2 feet = pelvis + 0.34 * s * Vec2{std::sin(phi), std::cos(phi)};
    const std::array<Vec2, kNumJoints> js = {head, neck, lsh, rsh, lhand, rhand, pelvis, feet};

    const double zoom = face ? 2.0 : 1.0;
    bool ok = true;
    for (int a = 0; a < kNumJoints && ok; ++a) {
      if (!face && (js[a].x < 0.07 || js[a].x > 0.9 || js[a].y < 0.07 || js[a].y > 0.9)) ok = false;
      for (int b = a + 1; b < kNumJoints && ok; ++b)
        if (zoom * norm(js[a] - js[b]) < min_sep) ok = false;
    }
    if (!ok) continue;

    spec.pose.joints.clear();
    for (const auto& j : js) spec.pose.joints.push_back({j.x, j.y, 1});
    spec.scale = s;
    if (face) {
      spec.zoom = zoom;
      spec.head_scale = 1.3;
      const Vec2 c = neck + 0.05 * s * up;
      spec.view_x = c.x;
      spec.view_y = c.y;
    }
    break;
  }
  auto& g = spec.garment;
  g.hue = u(0, 360);
  g.saturation = u(kGarmentSatLo, kGarmentSatHi);
  g.value = u(kGarmentValLo, kGarmentValHi);
  g.region = static_cast<GarmentRegion>(std::uniform_int_distribution<int>(0, 2)(rng));
  g.length = g.region == GarmentRegion::TopOnly ? 0.0 : u(0.15, 1.0);
  spec.skin = std::uniform_int_distribution<int>(0, static_cast<int>(kSkin.size()) - 1)(rng);
  spec.background = std::uniform_int_distribution<int>(0, static_cast<int>(kBackground.size()) - 1)(rng);
  return spec;
}

SpriteSpec translate_spec(const SpriteSpec& s, double dx, double dy) {
  SpriteSpec out = s;
  for (auto& j : out.pose.joints) {
    j.x += dx / s.zoom;
    j.y += dy / s.zoom;
  }
  return out;
}

Sprite render_sprite(const SpriteSpec& spec, int resolution) {
  if (resolution < 8) throw ContractError("sprite resolution must be >= 8");
  if (static_cast<int>(spec.pose.joints.size()) != kNumJoints) throw ContractError("sprite spec needs 8 joints");
  const int r = resolution;
  const Figure f = figure_of(spec);
  const double s = f.s;
  const auto& g = spec.garment;
  const Vec2 vc{spec.view_x, spec.view_y};
  auto to_image = [&](Vec2 p) {
    return spec.zoom == 1 ? p + (Vec2{0.5, 0.5} - vc) : spec.zoom * (p - vc) + Vec2{0.5, 0.5};
  };
  auto to_figure = [&](Vec2 q) { return (1.0 / spec.zoom) * (q - Vec2{0.5, 0.5}) + vc; };

  const auto& sk = kSkin[static_cast<size_t>(std::clamp(spec.skin, 0, static_cast<int>(kSkin.size()) - 1))];
  const Rgb skin = hsv(sk[0], sk[1], sk[2]);
  const double bgv = kBackground[static_cast<size_t>(std::clamp(spec.background, 0, static_cast<int>(kBackground.size()) - 1))];
  const Rgb bg{bgv, bgv, bgv};
  const Rgb cloth = hsv(g.hue, g.saturation, g.value);

  const Vec2 hip_l{f.pelvis.x + 0.05 * s, f.pelvis.y}, hip_r{f.pelvis.x - 0.05 * s, f.pelvis.y};
  const Vec2 foot_l{f.feet.x + 0.055 * s, f.feet.y}, foot_r{f.feet.x - 0.055 * s, f.feet.y};
  const std::vector<Vec2> torso = {f.shoulder_base + 0.16 * s * f.perp, Vec2{f.pelvis.x + 0.11 * s, f.pelvis.y},
                                   Vec2{f.pelvis.x - 0.11 * s, f.pelvis.y}, f.shoulder_base - 0.16 * s * f.perp};
  const double hem = f.pelvis.y + g.length * (f.feet.y - f.pelvis.y);
  const double top_cut = g.region == GarmentRegion::TwoPiece ? 0.35 * f.shoulder_base.y + 0.65 * f.pelvis.y : 1e9;

  // Painter's order, topmost first.
  auto classify = [&](Vec2 p, Rgb& c) -> SegLabel {
    if (norm(p - f.head) <= f.head_r || segment_distance(p, f.neck, f.head) <= 0.035 * s) {
      c = skin;
      return kSegSkin;
    }
    bool garment = inside_convex(p, torso) && p.y <= top_cut;
    if (!garment && g.region != GarmentRegion::TopOnly && p.y >= f.pelvis.y && p.y <= hem) {
      const double t = (p.y - f.pelvis.y) / std::max(1e-9, f.feet.y - f.pelvis.y);
      if (g.region == GarmentRegion::Dress) {
        const double cx = f.pelvis.x + t * (f.feet.x - f.pelvis.x);
        garment = std::abs(p.x - cx) <= 0.11 * s + 0.12 * s * t;
      } else {
        garment = segment_distance(p, hip_l, foot_l) <= 0.045 * s || segment_distance(p, hip_r, foot_r) <= 0.045 * s ||
                  (p.y <= f.pelvis.y + 0.03 * s && std::abs(p.x - f.pelvis.x) <= 0.1 * s);
      }
    }
    if (garment) {
      c = cloth;
      return kSegGarment;
    }
    if (inside_convex(p, torso) || segment_distance(p, f.lsh, f.lhand) <= 0.03 * s ||
        segment_distance(p, f.rsh, f.rhand) <= 0.03 * s || segment_distance(p, hip_l, foot_l) <= 0.035 * s ||
        segment_distance(p, hip_r, foot_r) <= 0.035 * s) {
      c = skin;
      return kSegSkin;
    }
    c = bg;
    return kSegBackground;
  };

  Sprite out;
  out.image = Tensor<float>(Shape{3, r, r});
  out.mask.assign(static_cast<size_t>(r) * r, kSegBackground);
  constexpr int kSub = 4;
  const int64_t plane = static_cast<int64_t>(r) * r;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      Rgb acc;
      int counts[4] = {0, 0, 0, 0};
      for (int a = 0; a < kSub; ++a)
        for (int b = 0; b < kSub; ++b) {
          const Vec2 q{(j + (b + 0.5) / kSub - 0.5) / r, (i + (a + 0.5) / kSub - 0.5) / r};
          Rgb c;
          ++counts[classify(to_figure(q), c)];
          acc.r += c.r, acc.g += c.g, acc.b += c.b;
        }
      const double inv = 1.0 / (kSub * kSub);
      const int64_t at = static_cast<int64_t>(i) * r + j;
      out.image[at] = static_cast<float>(2 * acc.r * inv - 1);
      out.image[plane + at] = static_cast<float>(2 * acc.g * inv - 1);
      out.image[2 * plane + at] = static_cast<float>(2 * acc.b * inv - 1);
      out.mask[static_cast<size_t>(at)] = static_cast<uint8_t>(std::max_element(counts, counts + 3) - counts);
    }

  // Markers are hard-edged so no partially covered pixel mixes their hue into
  // the garment band.
  const double mr = kMarkerRadius * r, lo = std::max(2.0, mr), hi = r - 1 - lo;
  for (int jt = 0; jt < kNumJoints; ++jt) {
    const Vec2 q = to_image(joint(spec.pose, jt));
    const Vec2 m{q.x * r, q.y * r};
    const bool visible = spec.pose.joints[jt].visible && m.x >= lo && m.x <= hi && m.y >= lo && m.y <= hi;
    out.keypoints.joints.push_back({q.x, q.y, visible ? 1 : 0});
    if (!visible) continue;
    Rgb c = hsv(marker_hue(jt), 1, 1);
    for (int i = std::max(0, static_cast<int>(m.y - mr) - 1); i <= std::min(r - 1, static_cast<int>(m.y + mr) + 1); ++i)
      for (int j = std::max(0, static_cast<int>(m.x - mr) - 1); j <= std::min(r - 1, static_cast<int>(m.x + mr) + 1); ++j) {
        if ((j - m.x) * (j - m.x) + (i - m.y) * (i - m.y) > mr * mr) continue;
        const int64_t at = static_cast<int64_t>(i) * r + j;
        out.image[at] = static_cast<float>(2 * c.r - 1);
        out.image[plane + at] = static_cast<float>(2 * c.g - 1);
        out.image[2 * plane + at] = static_cast<float>(2 * c.b - 1);
        out.mask[static_cast<size_t>(at)] = kSegMarker;
      }
  }
  return out;
}

namespace {

struct Hsv {
  double h, s, v;
};

void check_image(const Tensor<float>& batch, int64_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != batch.dim(3))
    throw ContractError("expected an N x 3 x R x R image batch, got " + shape_str(batch.shape()));
  if (index < 0 || index >= batch.dim(0)) throw ContractError("image index out of range");
}

Hsv pixel_hsv(const float* img, int64_t plane, int64_t at) {
  auto unit = [](float x) { return std::clamp((static_cast<double>(x) + 1) / 2, 0.0, 1.0); };
  Hsv o{};
  rgb_to_hsv(unit(img[at]), unit(img[plane + at]), unit(img[2 * plane + at]), o.h, o.s, o.v);
  return o;
}

bool is_marker(const Hsv& c) { return c.s >= 0.75 && c.v >= 0.75; }
bool is_garment(const Hsv& c) { return c.s >= 0.38 && c.s < 0.75 && c.v >= 0.4 && c.v <= 0.78; }

Tensor<float> as_batch(const Tensor<float>& image) {
  if (image.rank() != 3) throw ContractError("expected a 3 x R x R image, got " + shape_str(image.shape()));
  return Tensor<float>(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, image.vec());
}

}  // namespace

PoseKeypoints detect_keypoints(const Tensor<float>& image) { return detect_keypoints(as_batch(image), 0); }

PoseKeypoints detect_keypoints(const Tensor<float>& batch, int64_t index) {
  check_image(batch, index);
  const int64_t r = batch.dim(2), plane = r * r;
  const float* img = batch.data() + index * 3 * plane;
  double sx[kNumJoints] = {}, sy[kNumJoints] = {};
  int n[kNumJoints] = {};
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < r; ++j) {
      const Hsv c = pixel_hsv(img, plane, i * r + j);
      if (!is_marker(c)) continue;
      const int jt = static_cast<int>(std::lround(c.h / 45.0)) % kNumJoints;
      if (std::abs(hue_difference(c.h, marker_hue(jt))) > 20) continue;
      sx[jt] += static_cast<double>(j);
      sy[jt] += static_cast<double>(i);
      ++n[jt];
    }
  PoseKeypoints kp;
  for (int jt = 0; jt < kNumJoints; ++jt) {
    if (n[jt] < 4) kp.joints.push_back({0, 0, 0});
    else kp.joints.push_back({sx[jt] / n[jt] / static_cast<double>(r), sy[jt] / n[jt] / static_cast<double>(r), 1});
  }
  return kp;
}

GarmentMeasure measure_garment(const Tensor<float>& image) { return measure_garment(as_batch(image), 0); }

GarmentMeasure measure_garment(const Tensor<float>& batch, int64_t index) {
  check_image(batch, index);
  const int64_t r = batch.dim(2), plane = r * r;
  const float* img = batch.data() + index * 3 * plane;
  std::vector<double> hues;
  std::vector<int> rows(static_cast<size_t>(r), 0);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < r; ++j) {
      const Hsv c = pixel_hsv(img, plane, i * r + j);
      if (!is_garment(c)) continue;
      hues.push_back(c.h);
      ++rows[static_cast<size_t>(i)];
    }
  GarmentMeasure m;
  m.pixels = static_cast<int64_t>(hues.size());
  if (hues.size() < 4) return m;

  double cx = 0, cy = 0;
  for (double h : hues) cx += std::cos(rad(h)), cy += std::sin(rad(h));
  const double mean = std::atan2(cy, cx) * 180 / kPi;
  std::vector<double> d;
  for (double h : hues) d.push_back(hue_difference(h, mean));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  double med = mean + d[d.size() / 2];
  med = std::fmod(std::fmod(med, 360.0) + 360.0, 360.0);
  m.hue = med;

  const auto kp = detect_keypoints(batch, index);
  const auto& pelvis = kp.joints[kPelvis];
  const auto& feet = kp.joints[kFeet];
  if (!pelvis.visible || !feet.visible) return m;
  const double py = pelvis.y * static_cast<double>(r), fy = feet.y * static_cast<double>(r);
  int64_t first = -1, last = -1;
  for (int64_t i = 0; i < r; ++i)
    if (rows[static_cast<size_t>(i)] >= 2) {
      if (first < 0) first = i;
      last = i;
    }
  if (last < 0 || fy - py < 2) return m;
  // A row only passes the band test once it is mostly covered, so the hem
  // sits past the center of the last passing row.
  const double edge = static_cast<double>(last) + 0.6;
  m.length = std::clamp((edge - py) / (fy - py), 0.0, 1.0);
  bool gap = false;
  for (int64_t i = first + 1; i < static_cast<int64_t>(py) - 1; ++i)
    if (rows[static_cast<size_t>(i)] == 0) gap = true;
  m.region = gap ? GarmentRegion::TwoPiece : (edge > py + 1.0 ? GarmentRegion::Dress : GarmentRegion::TopOnly);
  return m;
}

JointError joint_error(const PoseKeypoints& truth, const PoseKeypoints& found, int resolution) {
  if (truth.joints.size() != found.joints.size()) throw ContractError("joint_error: joint count mismatch");
  JointError e;
  double sum = 0;
  for (size_t j = 0; j < truth.joints.size(); ++j) {
    if (!truth.joints[j].visible) continue;
    double d = resolution / 2.0;
    if (found.joints[j].visible)
      d = std::hypot(truth.joints[j].x - found.joints[j].x, truth.joints[j].y - found.joints[j].y) * resolution;
    else
      ++e.missed;
    e.max_px = std::max(e.max_px, d);
    sum += d;
    ++e.compared;
  }
  e.mean_px = e.compared ? sum / e.compared : 0;
  return e;
}

}  // namespace togan
