#pragma once

#include <string>
#include <vector>

#include "togan/generator.hpp"
#include "togan/metrics.hpp"

namespace togan {

/// One w row per style input (num_ws x D), tagged with the generator config
/// hash it belongs to.
struct LatentStack {
  Tensor<float> rows;
  uint64_t config_hash = 0;

  int num_ws() const { return static_cast<int>(rows.dim(0)); }
  int64_t dim() const { return rows.dim(1); }
};

/// Repeats a single w (shape D or 1 x D) over every style input.
LatentStack broadcast_w(const Tensor<float>& w, int num_ws, uint64_t config_hash);

/// L_i = L_start + i * (L_end - L_start) / num_latents for i = 0..num_latents;
/// the endpoints are returned as exact copies.
std::vector<LatentStack> interpolate(const LatentStack& start, const LatentStack& end, int num_latents);

/// Rows [0, k) from pose_src, rows [k, num_ws) from style_src.
LatentStack mix_layers(const LatentStack& pose_src, const LatentStack& style_src, int k);

/// 6 of 14 at the published scale, the same proportion (rounded) otherwise.
int default_split(int num_style_inputs);

/// Synthesizes a batch of stacks without recording a graph.
Tensor<float> synthesize_stacks(const Generator<float>& g, const std::vector<LatentStack>& stacks,
                                const std::vector<PoseKeypoints>* poses = nullptr);

enum class InversionSpace { W, WPlus };
enum class InversionInit { MeanW, Random };

struct InversionConfig {
  int steps = 400;
  double lr = 0.05;
  /// Fraction of the schedule over which the learning rate ramps down to 0.
  double rampdown = 0.25;
  InversionSpace space = InversionSpace::WPlus;
  double pixel_weight = 1.0, feature_weight = 1.0;
  InversionInit init = InversionInit::MeanW;
  int mean_w_samples = 4096;
  uint64_t seed = 0;
  /// A loss above divergence_factor x its initial value marks the image failed.
  double divergence_factor = 10.0;

  void validate() const;
};

struct InversionTraceRow {
  int step;
  double loss, best;
};

struct InversionResult {
  std::vector<LatentStack> latents;  // best iterate per image
  std::vector<std::vector<InversionTraceRow>> trace;
  std::vector<double> best_loss;
  std::vector<bool> diverged;

  bool ok() const;
};

/// Optimizes one latent per image against pixel MSE plus the distance between
/// extractor features. Generator parameters are read, never written. Images
/// are N x 3 x R x R; poses are required iff the generator is conditioned.
InversionResult invert(const Tensor<float>& images, const Generator<float>& g, const std::vector<PoseKeypoints>* poses,
                       const InversionConfig& cfg, const FeatureExtractor& fx);

/// synthesize(mix_layers(P, S, k)) on an unconditioned generator.
Tensor<float> try_on(const Generator<float>& g, const LatentStack& person, const LatentStack& garment, int k);

/// JSON document with a header (count, num_ws, dim, config_hash) and the f32
/// rows base64-encoded.
void save_latents(const std::string& path, const std::vector<LatentStack>& stacks);
std::vector<LatentStack> load_latents(const std::string& path);

}  // namespace togan
