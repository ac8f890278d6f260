#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "togan/latent.hpp"

using namespace togan;
namespace tu = togan::testing;
namespace fs = std::filesystem;

namespace {

GeneratorConfig toy(bool conditioned = false) {
  auto c = GeneratorConfig::desk(16, conditioned);
  c.latent_dim = 8;
  c.mapping_depth = 2;
  c.channels = {{4, 8}, {8, 8}, {16, 4}};
  c.pose.channels = {{4, 2}, {8, 2}, {16, 2}};
  return c;
}

LatentStack random_stack(int nw, int64_t d, uint64_t seed, uint64_t hash = 7) {
  return LatentStack{tu::rand_tensor_f({nw, d}, seed), hash};
}

}  // namespace

TEST(Interpolate, EndpointsAreExact) {
  auto a = random_stack(6, 5, 1), b = random_stack(6, 5, 2);
  for (int n : {1, 3, 7}) {
    auto seq = interpolate(a, b, n);
    ASSERT_EQ(seq.size(), static_cast<size_t>(n + 1));
    EXPECT_EQ(seq.front().rows.vec(), a.rows.vec());
    EXPECT_EQ(seq.back().rows.vec(), b.rows.vec());
  }
}

TEST(Interpolate, MidpointAndConstantStep) {
  auto a = random_stack(6, 5, 3), b = random_stack(6, 5, 4);
  auto mid = interpolate(a, b, 2)[1];
  for (int64_t k = 0; k < a.rows.size(); ++k) EXPECT_NEAR(mid.rows[k], (a.rows[k] + b.rows[k]) / 2, 1e-7);
  auto seq = interpolate(a, b, 9);
  double worst = 0;
  for (size_t i = 1; i + 1 < seq.size(); ++i)
    for (int64_t k = 0; k < a.rows.size(); ++k) {
      const double d0 = seq[1].rows[k] - seq[0].rows[k];
      worst = std::max(worst, std::abs((seq[i + 1].rows[k] - seq[i].rows[k]) - d0));
    }
  EXPECT_LE(worst, 1e-6);
}

TEST(Interpolate, Contracts) {
  auto a = random_stack(6, 5, 3);
  EXPECT_THROW(interpolate(a, random_stack(6, 4, 1), 2), ContractError);
  EXPECT_THROW(interpolate(a, random_stack(6, 5, 1, 8), 2), ContractError);
  EXPECT_THROW(interpolate(a, a, 0), ContractError);
}

TEST(MixLayers, Identities) {
  auto p = random_stack(8, 4, 5), s = random_stack(8, 4, 6);
  EXPECT_EQ(mix_layers(p, s, 0).rows.vec(), s.rows.vec());
  EXPECT_EQ(mix_layers(p, s, 8).rows.vec(), p.rows.vec());
  for (int k = 0; k <= 8; ++k) EXPECT_EQ(mix_layers(p, p, k).rows.vec(), p.rows.vec());
  EXPECT_THROW(mix_layers(p, s, -1), ContractError);
  EXPECT_THROW(mix_layers(p, s, 9), ContractError);
}

TEST(MixLayers, RowsPartitionWithoutOverlap) {
  auto a = random_stack(8, 4, 5), b = random_stack(8, 4, 6);
  for (int k = 0; k <= 8; ++k) {
    auto m1 = mix_layers(a, b, k), m2 = mix_layers(b, a, 8 - k);
    for (int row = 0; row < 8; ++row) {
      const bool from_a = row < k;
      for (int64_t c = 0; c < 4; ++c) {
        EXPECT_EQ(m1.rows[row * 4 + c], (from_a ? a : b).rows[row * 4 + c]);
        const bool m2_from_b = row < 8 - k;
        EXPECT_EQ(m2.rows[row * 4 + c], (m2_from_b ? b : a).rows[row * 4 + c]);
      }
    }
  }
}

TEST(MixLayers, DefaultSplitFollowsSixOfFourteen) {
  EXPECT_EQ(default_split(14), 6);
  EXPECT_EQ(default_split(8), 3);
  EXPECT_EQ(default_split(10), 4);
  EXPECT_EQ(default_split(12), 5);
  EXPECT_EQ(num_style_inputs(256), 6 + 8);
}

TEST(Invert, ZeroStepsReturnsInit) {
  Generator<float> g(toy(), 1);
  FeatureExtractor fx;
  InversionConfig cfg;
  cfg.steps = 0;
  cfg.mean_w_samples = 256;
  auto res = invert(tu::rand_tensor_f({2, 3, 16, 16}, 3), g, nullptr, cfg, fx);
  auto mw = g.mean_w(256, 0);
  for (const auto& s : res.latents) EXPECT_EQ(s.rows.vec(), broadcast_w(mw, g.num_ws(), g.config().hash()).rows.vec());
  EXPECT_EQ(res.trace[0].size(), 1u);
}

TEST(Invert, RecoversSelfGeneratedImageAndLeavesGeneratorAlone) {
  Generator<float> g(toy(), 2);
  FeatureExtractor fx;
  const auto before = g.params().checksum();
  Rng rng(4);
  Tensor<float> target;
  {
    ad::NoGrad ng;
    target = g.generate(ad::constant(sample_z<float>(2, 8, rng)), nullptr).value();
  }
  InversionConfig cfg;
  cfg.steps = 150;
  cfg.mean_w_samples = 512;
  auto res = invert(target, g, nullptr, cfg, fx);
  EXPECT_EQ(g.params().checksum(), before);
  EXPECT_TRUE(res.ok());
  for (size_t i = 0; i < 2; ++i) {
    const auto& tr = res.trace[i];
    ASSERT_EQ(tr.size(), 151u);
    for (size_t t = 1; t < tr.size(); ++t) EXPECT_LE(tr[t].best, tr[t - 1].best);
    EXPECT_LT(res.best_loss[i], 0.1 * tr[0].loss);
  }
  auto pixel_mse = [&](const Tensor<float>& x) {
    double m = 0;
    for (int64_t k = 0; k < x.size(); ++k) m += (x[k] - target[k]) * (x[k] - target[k]);
    return m / static_cast<double>(x.size());
  };
  const auto mw = broadcast_w(g.mean_w(512, 0), g.num_ws(), g.config().hash());
  const double start = pixel_mse(synthesize_stacks(g, {mw, mw}));
  EXPECT_LT(pixel_mse(synthesize_stacks(g, res.latents)), 0.25 * start);
}

TEST(Invert, WSpaceSharesOneRow) {
  Generator<float> g(toy(), 3);
  FeatureExtractor fx;
  InversionConfig cfg;
  cfg.steps = 5;
  cfg.space = InversionSpace::W;
  cfg.init = InversionInit::Random;
  auto res = invert(tu::rand_tensor_f({1, 3, 16, 16}, 1), g, nullptr, cfg, fx);
  const auto& rows = res.latents[0].rows;
  for (int j = 1; j < g.num_ws(); ++j)
    for (int64_t c = 0; c < 8; ++c) EXPECT_EQ(rows[j * 8 + c], rows[c]);
}

TEST(Invert, FlagsDivergenceAndChecksContracts) {
  Generator<float> g(toy(), 4);
  FeatureExtractor fx;
  InversionConfig cfg;
  cfg.steps = 3;
  cfg.lr = 50;
  cfg.divergence_factor = 1e-6;
  auto res = invert(tu::rand_tensor_f({1, 3, 16, 16}, 2), g, nullptr, cfg, fx);
  EXPECT_FALSE(res.ok());

  cfg = InversionConfig{};
  cfg.steps = -1;
  EXPECT_THROW(invert(tu::rand_tensor_f({1, 3, 16, 16}, 2), g, nullptr, cfg, fx), ContractError);
  cfg.steps = 1;
  EXPECT_THROW(invert(tu::rand_tensor_f({1, 3, 8, 8}, 2), g, nullptr, cfg, fx), ContractError);
  Generator<float> pc(toy(true), 5);
  EXPECT_THROW(invert(tu::rand_tensor_f({1, 3, 16, 16}, 2), pc, nullptr, cfg, fx), ContractError);
}

TEST(TryOn, SamePersonReconstructsAndContracts) {
  Generator<float> g(toy(), 6);
  const auto h = g.config().hash();
  auto p = random_stack(g.num_ws(), 8, 9, h), s = random_stack(g.num_ws(), 8, 10, h);
  EXPECT_EQ(try_on(g, p, p, 3).vec(), synthesize_stacks(g, {p}).vec());
  EXPECT_EQ(try_on(g, p, s, 0).vec(), synthesize_stacks(g, {s}).vec());
  EXPECT_NE(try_on(g, p, s, 3).vec(), synthesize_stacks(g, {s}).vec());
  EXPECT_THROW(try_on(g, p, random_stack(g.num_ws(), 8, 10, h + 1), 3), ContractError);
  EXPECT_THROW(synthesize_stacks(g, {random_stack(g.num_ws(), 8, 1, h + 1)}), ContractError);
  Generator<float> pc(toy(true), 7);
  auto q = random_stack(pc.num_ws(), 8, 9, pc.config().hash());
  EXPECT_THROW(try_on(pc, q, q, 3), ContractError);
}

TEST(LatentFile, RoundTripIsBitwise) {
  std::vector<LatentStack> stacks = {random_stack(8, 6, 1, 12345678901234567ULL), random_stack(8, 6, 2, 12345678901234567ULL)};
  const auto path = (fs::temp_directory_path() / "togan_test_latents.json").string();
  save_latents(path, stacks);
  auto back = load_latents(path);
  ASSERT_EQ(back.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].rows.shape(), stacks[i].rows.shape());
    EXPECT_EQ(back[i].rows.vec(), stacks[i].rows.vec());
    EXPECT_EQ(back[i].config_hash, stacks[i].config_hash);
  }
  std::ofstream(path) << "{\"format\": \"togan-latents\", \"version\": 1, \"count\": 2, \"num_ws\": 8, \"dim\": 6, "
                         "\"config_hash\": \"1\", \"data\": \"AAAA\"}";
  EXPECT_THROW(load_latents(path), ContractError);
  fs::remove(path);
  EXPECT_THROW(load_latents(path), ContractError);
}
