#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "togan/checkpoint.hpp"
#include "togan/config.hpp"
#include "togan/discriminator.hpp"
#include "togan/generator.hpp"
#include "togan/imageset.hpp"
#include "togan/metrics.hpp"

namespace togan {

enum class InitMode { Scratch, Transfer, UcToPc };
const char* init_mode_name(InitMode m);
InitMode parse_init_mode(const std::string& s);

struct TrainConfig {
  GeneratorConfig gen = GeneratorConfig::desk(32);
  int mbstd_group = 0;
  int batch = 16;
  double lr_g = 2.5e-3, lr_d = 2.5e-3;
  double beta1 = 0.0, beta2 = 0.99, adam_eps = 1e-8;
  bool r1_enabled = true;
  double r1_gamma = 1.0;
  int r1_interval = 16;
  double kimg = 60;
  double eval_kimg = 5;
  double checkpoint_kimg = 10;
  double ema_half_life_kimg = 10;
  /// When > 0 the EMA half-life is capped at images_seen * ema_rampup.
  double ema_rampup = 0;
  uint64_t seed = 0;
  InitMode init_mode = InitMode::Scratch;
  std::string init_from;
  int fid_samples = 2048;
  uint64_t eval_seed = 20211;
  int log_every = 50;

  DiscriminatorConfig disc() const;
  void validate() const;
  ConfigMap to_map() const;
  /// Starts from the defaults for `model.resolution` and applies every key;
  /// unknown keys are rejected.
  static TrainConfig from_map(const ConfigMap& m);
};

/// Non-saturating logistic losses.
template <typename T>
ad::Var<T> d_loss(const ad::Var<T>& real_logits, const ad::Var<T>& fake_logits);
template <typename T>
ad::Var<T> g_loss(const ad::Var<T>& fake_logits);
/// (gamma / 2) * mean over the batch of |d sum(logits) / d images|^2, built
/// with a differentiable gradient so it can itself be differentiated.
template <typename T>
ad::Var<T> r1_penalty(const ad::Var<T>& images, const ad::Var<T>& logits, double gamma);

template <typename T>
struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor<T>> m, v;

  void init(const nn::ParamStore<T>& ps);
  void step(nn::ParamStore<T>& ps, const std::vector<Tensor<T>>& grads);
};

struct TrainState {
  int64_t step = 0;
  int64_t images_seen = 0;
  std::vector<std::pair<int64_t, double>> fid_history;
};

struct StepStats {
  double d_loss = 0, g_loss = 0;
  std::optional<double> r1;
  double real_logit = 0, fake_logit = 0;
};

struct InitReport {
  int matched = 0, fresh = 0, total = 0;
  std::vector<std::string> shape_mismatch, missing;
  std::string summary() const;
};

/// Adversarial trainer owning G, D, the EMA copy of G and both optimizers.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return *g_; }
  Generator<float>& ema() { return *ema_; }
  Discriminator<float>& discriminator() { return *d_; }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const Adam<float>& adam_g() const { return adam_g_; }
  const Adam<float>& adam_d() const { return adam_d_; }

  /// Applies cfg.init_mode: SCRATCH keeps the seeded init; TRANSFER and
  /// UC_TO_PC copy name- and shape-matching weights from cfg.init_from.
  InitReport init_weights();
  InitReport init_from_checkpoint(const Checkpoint& ck, InitMode mode);

  /// One D update (lazy R1 on schedule), one G update, EMA update. Fakes use
  /// the real batch's poses. Throws NumericalError on a non-finite loss
  /// before any parameter changes.
  StepStats train_step(const Tensor<float>& reals, const std::vector<PoseKeypoints>& poses);
  /// Draws the batch from `data` with the step's deterministic stream.
  StepStats train_step(const ImageSet& data);

  Checkpoint snapshot() const;
  void save(const std::string& dir) const;
  /// Restores parameters, optimizer moments, EMA and counters from a
  /// checkpoint written by a trainer with the same model config.
  void restore(const Checkpoint& ck);
  static Trainer resume(const std::string& dir);

  /// Combined checksum of G, D, EMA parameters and optimizer moments.
  uint64_t checksum() const;

 private:
  Rng step_rng(uint64_t stream) const;
  void update_ema();

  TrainConfig cfg_;
  std::unique_ptr<Generator<float>> g_, ema_;
  std::unique_ptr<Discriminator<float>> d_;
  Adam<float> adam_g_, adam_d_;
  TrainState state_;
};

using FidHistory = std::vector<std::pair<int64_t, double>>;

/// `images_seen,fid` CSV, written to a temp file and renamed.
void write_history(const std::string& path, const FidHistory& h);
FidHistory read_history(const std::string& path);
/// One column per run aligned on images_seen; cells are empty where a run has
/// no evaluation at that point.
void write_history_table(const std::string& path, const std::vector<std::string>& names,
                         const std::vector<FidHistory>& runs);

/// Loads the EMA (or raw) generator from a checkpoint directory.
Generator<float> load_generator(const std::string& dir, bool use_ema = true);
TrainConfig checkpoint_config(const Checkpoint& ck);

/// Images from `g` for FID: sample i uses z from a stream keyed by
/// (eval_seed, i) and pose i modulo the pose list when conditioned.
ImageSampler generator_sampler(const Generator<float>& g, uint64_t eval_seed, const std::vector<PoseKeypoints>& poses);

struct RunHooks {
  std::function<void(const Trainer&, const StepStats&)> on_log;
  std::function<void(const Trainer&, double fid)> on_eval;
};

/// Trains until cfg.kimg, evaluating FID of the EMA generator every
/// eval_kimg and at the end, writing `out/fid.csv`, `out/log.csv`,
/// periodic `out/checkpoints/<images>` and `out/final`. On a non-finite
/// loss the pre-step state is dumped to `out/nan-dump` and the error rethrown.
std::vector<std::pair<int64_t, double>> run_experiment(Trainer& trainer, const ImageSet& data,
                                                       const GaussianStats& real_stats,
                                                       const std::vector<PoseKeypoints>& eval_poses,
                                                       const std::string& out_dir, const RunHooks& hooks = {});

}  // namespace togan
