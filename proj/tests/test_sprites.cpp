#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "test_util.hpp"
#include "togan/dataset.hpp"
#include "togan/image_io.hpp"
#include "togan/sprites.hpp"
#include "togan/trainer.hpp"

using namespace togan;
namespace tu = togan::testing;
namespace fs = std::filesystem;

namespace {

SpriteSpec spec_with_seed(uint64_t seed, SpriteDistribution d = SpriteDistribution::Standard) {
  Rng rng(seed);
  return sample_spec(rng, d);
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("togan_test_sprites_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Color, HsvKnownValues) {
  double h, s, v;
  rgb_to_hsv(1, 0, 0, h, s, v);
  EXPECT_DOUBLE_EQ(h, 0);
  EXPECT_DOUBLE_EQ(s, 1);
  rgb_to_hsv(0, 0.5, 0.5, h, s, v);
  EXPECT_DOUBLE_EQ(h, 180);
  EXPECT_DOUBLE_EQ(v, 0.5);
  rgb_to_hsv(0.3, 0.3, 0.3, h, s, v);
  EXPECT_DOUBLE_EQ(s, 0);
  for (double hue = 0; hue < 360; hue += 7.5) {
    double r, g, b, h2, s2, v2;
    hsv_to_rgb(hue, 0.55, 0.6, r, g, b);
    rgb_to_hsv(r, g, b, h2, s2, v2);
    EXPECT_NEAR(hue_difference(h2, hue), 0, 1e-9);
    EXPECT_NEAR(s2, 0.55, 1e-12);
    EXPECT_NEAR(v2, 0.6, 1e-12);
  }
  EXPECT_DOUBLE_EQ(hue_difference(350, 10), -20);
  EXPECT_DOUBLE_EQ(hue_difference(10, 350), 20);
}

TEST(SampleSpec, DeterministicAndInRange) {
  EXPECT_EQ(spec_to_json(spec_with_seed(4)), spec_to_json(spec_with_seed(4)));
  EXPECT_NE(spec_to_json(spec_with_seed(4)), spec_to_json(spec_with_seed(5)));
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::Standard);
    EXPECT_GE(s.garment.length, 0);
    EXPECT_LE(s.garment.length, 1);
    EXPECT_GE(s.garment.hue, 0);
    EXPECT_LT(s.garment.hue, 360);
    if (s.garment.region == GarmentRegion::TopOnly) EXPECT_EQ(s.garment.length, 0);
  }
}

TEST(SampleSpec, HueIsUniform) {
  constexpr int kBins = 36, kN = 10000;
  std::vector<int> hist(kBins, 0);
  Rng rng(2);
  for (int i = 0; i < kN; ++i) ++hist[static_cast<size_t>(sample_spec(rng, SpriteDistribution::Standard).garment.hue / 10)];
  double chi2 = 0;
  const double expect = static_cast<double>(kN) / kBins;
  for (int c : hist) chi2 += (c - expect) * (c - expect) / expect;
  // 99th percentile of chi-squared with 35 degrees of freedom.
  EXPECT_LT(chi2, 57.34);
}

TEST(SampleSpec, StandardJointsStayInsideFrameAndApart) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::Standard);
    auto sp = render_sprite(s, 32);
    EXPECT_EQ(sp.keypoints.count_visible(), kNumJoints);
    for (const auto& j : sp.keypoints.joints) {
      EXPECT_GE(j.x * 32, 2);
      EXPECT_LE(j.x * 32, 29);
      EXPECT_GE(j.y * 32, 2);
      EXPECT_LE(j.y * 32, 29);
    }
    for (int a = 0; a < kNumJoints; ++a)
      for (int b = a + 1; b < kNumJoints; ++b)
        EXPECT_GE(std::hypot(s.pose.joints[a].x - s.pose.joints[b].x, s.pose.joints[a].y - s.pose.joints[b].y),
                  2 * kMarkerRadius);
  }
}

TEST(SpecJson, RoundTrip) {
  auto s = spec_with_seed(9, SpriteDistribution::FaceHeavy);
  EXPECT_EQ(spec_to_json(spec_from_json(spec_to_json(s))), spec_to_json(s));
  EXPECT_THROW(spec_from_json("{\"pose\": 3}"), ContractError);
}

TEST(Render, DeterministicAndEchoesKeypoints) {
  auto s = spec_with_seed(11);
  auto a = render_sprite(s, 32), b = render_sprite(s, 32);
  EXPECT_EQ(a.image.vec(), b.image.vec());
  EXPECT_EQ(a.mask, b.mask);
  for (int j = 0; j < kNumJoints; ++j) {
    EXPECT_EQ(a.keypoints.joints[j].x, s.pose.joints[j].x);
    EXPECT_EQ(a.keypoints.joints[j].y, s.pose.joints[j].y);
  }
  for (float v : a.image.span()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Render, GarmentPixelsCarrySpecHue) {
  // Pixels the renderer labels as fully garment-covered, measured directly.
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::Standard);
    auto sp = render_sprite(s, 64);
    std::vector<double> hues;
    const int64_t plane = 64 * 64;
    for (int64_t p = 0; p < plane; ++p) {
      if (sp.mask[static_cast<size_t>(p)] != kSegGarment) continue;
      double h, sat, v;
      rgb_to_hsv((sp.image[p] + 1) / 2, (sp.image[plane + p] + 1) / 2, (sp.image[2 * plane + p] + 1) / 2, h, sat, v);
      hues.push_back(hue_difference(h, s.garment.hue));
    }
    ASSERT_GT(hues.size(), 20u);
    std::nth_element(hues.begin(), hues.begin() + static_cast<std::ptrdiff_t>(hues.size() / 2), hues.end());
    EXPECT_LE(std::abs(hues[hues.size() / 2]), 2.0);
  }
}

TEST(Render, FaceHeavyCropsToBust) {
  Rng rng(13);
  int head_visible = 0;
  for (int i = 0; i < 100; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::FaceHeavy);
    EXPECT_EQ(s.zoom, 2.0);
    auto sp = render_sprite(s, 32);
    EXPECT_FALSE(sp.keypoints.joints[kPelvis].visible);
    EXPECT_FALSE(sp.keypoints.joints[kFeet].visible);
    head_visible += sp.keypoints.joints[kHead].visible;
  }
  EXPECT_EQ(head_visible, 100);
}

TEST(Detect, BlankImageHasNoJoints) {
  Tensor<float> blank(Shape{3, 32, 32}, -0.3f);
  EXPECT_EQ(detect_keypoints(blank).count_visible(), 0);
  EXPECT_FALSE(measure_garment(blank).hue.has_value());
}

TEST(Detect, TranslationMovesJointsByTheSameOffset) {
  Rng rng(14);
  for (int i = 0; i < 40; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::Standard);
    const double dx = 3.0 / 64, dy = -2.0 / 64;
    auto moved = translate_spec(s, dx, dy);
    auto a = detect_keypoints(render_sprite(s, 64).image);
    auto b = detect_keypoints(render_sprite(moved, 64).image);
    auto truth = render_sprite(moved, 64).keypoints;
    for (int j = 0; j < kNumJoints; ++j) {
      if (!a.joints[j].visible || !truth.joints[j].visible) continue;
      ASSERT_TRUE(b.joints[j].visible);
      EXPECT_NEAR((b.joints[j].x - a.joints[j].x) * 64, 3.0, 1.0);
      EXPECT_NEAR((b.joints[j].y - a.joints[j].y) * 64, -2.0, 1.0);
    }
  }
}

TEST(Measure, FullLengthDressReadsAsOne) {
  auto s = spec_with_seed(15);
  s.garment.region = GarmentRegion::Dress;
  s.garment.length = 1.0;
  auto m = measure_garment(render_sprite(s, 64).image);
  ASSERT_TRUE(m.length.has_value());
  EXPECT_NEAR(*m.length, 1.0, 0.05);
  EXPECT_EQ(*m.region, GarmentRegion::Dress);
  s.garment.region = GarmentRegion::TopOnly;
  s.garment.length = 0;
  m = measure_garment(render_sprite(s, 64).image);
  EXPECT_NEAR(*m.length, 0.0, 0.05);
  EXPECT_EQ(*m.region, GarmentRegion::TopOnly);
}

TEST(OracleClosure, ThousandSpecsAtR64) {
  Rng rng(16);
  double worst_joint = 0, worst_hue = 0, worst_len = 0;
  int wrong_region = 0;
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_spec(rng, SpriteDistribution::Standard);
    auto sp = render_sprite(s, 64);
    auto e = joint_error(sp.keypoints, detect_keypoints(sp.image), 64);
    EXPECT_EQ(e.missed, 0);
    worst_joint = std::max(worst_joint, e.max_px);
    auto m = measure_garment(sp.image);
    ASSERT_TRUE(m.hue && m.length && m.region) << i;
    worst_hue = std::max(worst_hue, std::abs(hue_difference(*m.hue, s.garment.hue)));
    worst_len = std::max(worst_len, std::abs(*m.length - s.garment.length));
    wrong_region += *m.region != s.garment.region;
  }
  EXPECT_LE(worst_joint, 1.0);
  EXPECT_LE(worst_hue, 2.0);
  EXPECT_LE(worst_len, 0.05);
  EXPECT_EQ(wrong_region, 0);
}

TEST(JointError, MissedJointsCountHalfTheFrame) {
  auto truth = render_sprite(spec_with_seed(17), 32).keypoints;
  auto found = truth;
  found.joints[0].visible = 0;
  found.joints[1].x += 2.0 / 32;
  auto e = joint_error(truth, found, 32);
  EXPECT_EQ(e.missed, 1);
  EXPECT_DOUBLE_EQ(e.max_px, 16);
  EXPECT_NEAR(e.mean_px, 18.0 / 8, 1e-9);
}

TEST(Distributions, FaceHeavyIsSeparableFromStandard) {
  // Two-layer classifier on 8x8 average-pooled pixels.
  auto pooled = [](const ImageSet& set) {
    const int64_t n = set.size();
    Tensor<float> x(Shape{n, 192});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t by = 0; by < 8; ++by)
          for (int64_t bx = 0; bx < 8; ++bx) {
            float acc = 0;
            for (int64_t a = 0; a < 4; ++a)
              for (int64_t b = 0; b < 4; ++b) acc += set.images[((i * 3 + c) * 32 + by * 4 + a) * 32 + bx * 4 + b];
            x[i * 192 + c * 64 + by * 8 + bx] = acc / 16;
          }
    return x;
  };
  auto make = [&](int64_t n, uint64_t seed, Tensor<float>& x, Tensor<float>& sign) {
    auto std_set = render_set(sample_specs(n, seed, SpriteDistribution::Standard), 32);
    auto face_set = render_set(sample_specs(n, seed + 1, SpriteDistribution::FaceHeavy), 32);
    auto a = pooled(std_set), b = pooled(face_set);
    x = Tensor<float>(Shape{2 * n, 192});
    std::copy(a.vec().begin(), a.vec().end(), x.data());
    std::copy(b.vec().begin(), b.vec().end(), x.data() + a.size());
    sign = Tensor<float>(Shape{2 * n, 1}, -1.0f);
    for (int64_t i = n; i < 2 * n; ++i) sign[i] = 1;
  };
  Tensor<float> xtr, str, xte, ste;
  make(200, 100, xtr, str);
  make(100, 200, xte, ste);

  nn::ParamStore<float> ps;
  Rng rng(5);
  nn::Dense<float> l1(ps, "l1", 192, 32, rng), l2(ps, "l2", 32, 1, rng);
  auto logits = [&](const Tensor<float>& x) { return l2.forward(ad::leaky_relu(l1.forward(ad::constant(x)))); };
  Adam<float> opt{1e-2, 0.9, 0.999, 1e-8};
  opt.init(ps);
  for (int step = 0; step < 300; ++step) {
    auto loss = ad::mean(ad::softplus(ad::scale(ad::mul(logits(xtr), ad::constant(str)), -1.0f)));
    opt.step(ps, ad::backward(loss, ps.vars()));
  }
  ad::NoGrad ng;
  auto out = logits(xte).value();
  int correct = 0;
  for (int64_t i = 0; i < out.size(); ++i) correct += (out[i] > 0) == (ste[i] > 0);
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(out.size()), 0.95);
}

TEST(ImageIo, PngRoundTripIsQuantized) {
  auto img = tu::rand_tensor_f({3, 7, 5}, 3);
  const auto path = scratch_dir("png").string() + ".png";
  write_png(path, img);
  auto back = read_png(path);
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_EQ(back.vec(), quantize_8bit(img).vec());
  for (int64_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1.0 / 255 + 1e-6);
  fs::remove(path);
  EXPECT_THROW(read_png(path), ContractError);
}

TEST(ImageIo, GridLayout) {
  auto batch = tu::rand_tensor_f({5, 3, 4, 4}, 1);
  auto g = image_grid(batch, 3);
  EXPECT_EQ(g.shape(), (Shape{3, 2 * 5 + 1, 3 * 5 + 1}));
  EXPECT_EQ(g[(0 * 11 + 6) * 16 + 1], batch[((3 * 3 + 0) * 4 + 0) * 4 + 0]);
}

TEST(Dataset, WriteThenReadIsPixelIdentical) {
  auto specs = sample_specs(6, 21, SpriteDistribution::Standard);
  const auto dir = scratch_dir("roundtrip");
  write_dataset(specs, 32, dir.string());
  EXPECT_FALSE(fs::exists(dir.string() + ".tmp"));
  auto ds = read_dataset(dir.string());
  auto mem = render_set(specs, 32);
  EXPECT_EQ(ds.data.images.vec(), quantize_8bit(mem.images).vec());
  EXPECT_EQ(ds.manifest.count(), 6);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) files += e.path().extension() == ".png";
  EXPECT_EQ(files, ds.manifest.count());
  for (size_t i = 0; i < specs.size(); ++i) {
    ASSERT_TRUE(ds.manifest.records[i].spec.has_value());
    EXPECT_EQ(spec_to_json(*ds.manifest.records[i].spec), spec_to_json(specs[i]));
    EXPECT_EQ(keypoints_to_json(ds.data.poses[i]), keypoints_to_json(mem.poses[i]));
  }
  fs::remove_all(dir);
}

TEST(Dataset, CorruptRecordNamesItsIndex) {
  auto specs = sample_specs(5, 22, SpriteDistribution::Standard);
  const auto dir = scratch_dir("corrupt");
  write_dataset(specs, 32, dir.string());

  std::vector<std::string> lines;
  {
    std::ifstream in(dir / "keypoints.jsonl");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  lines[2] = "{\"index\": 2, \"image\": \"images/000002.png\", \"joints\": 7}";
  {
    std::ofstream out(dir / "keypoints.jsonl");
    for (const auto& l : lines) out << l << "\n";
  }
  try {
    read_dataset(dir.string());
    FAIL() << "expected a ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos) << e.what();
  }

  write_dataset(specs, 32, dir.string());
  fs::remove(dir / "images" / "000003.png");
  try {
    read_dataset(dir.string());
    FAIL() << "expected a ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("record 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_dataset((dir / "nope").string()), ContractError);
  fs::remove_all(dir);
}

TEST(Dataset, IterationOrderIsASeededPermutation) {
  auto a = iteration_order(50, 3), b = iteration_order(50, 3), c = iteration_order(50, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(std::set<int64_t>(a.begin(), a.end()).size(), 50u);
}

TEST(Dataset, SpecsArePrefixStable) {
  auto small = sample_specs(3, 8, SpriteDistribution::Standard);
  auto big = sample_specs(10, 8, SpriteDistribution::Standard);
  for (size_t i = 0; i < small.size(); ++i) EXPECT_EQ(spec_to_json(small[i]), spec_to_json(big[i]));
}
