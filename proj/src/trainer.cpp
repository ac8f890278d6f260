#include "togan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace fs = std::filesystem;

namespace togan {

const char* init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::Scratch: return "scratch";
    case InitMode::Transfer: return "transfer";
    case InitMode::UcToPc: return "uc_to_pc";
  }
  return "?";
}

InitMode parse_init_mode(const std::string& s) {
  if (s == "scratch") return InitMode::Scratch;
  if (s == "transfer") return InitMode::Transfer;
  if (s == "uc_to_pc" || s == "uc-to-pc") return InitMode::UcToPc;
  throw ContractError("unknown init mode '" + s + "' (expected scratch, transfer or uc_to_pc)");
}

// ---------------------------------------------------------------- config

DiscriminatorConfig TrainConfig::disc() const {
  auto d = DiscriminatorConfig::mirror(gen);
  d.mbstd_group = mbstd_group;
  return d;
}

void TrainConfig::validate() const {
  gen.validate();
  disc().validate();
  if (batch < 2) throw ContractError("train.batch must be >= 2");
  if (!(kimg > 0)) throw ContractError("train.kimg must be > 0");
  if (!(eval_kimg > 0) || !(checkpoint_kimg > 0)) throw ContractError("eval and checkpoint intervals must be > 0");
  if (r1_interval < 1) throw ContractError("train.r1_interval must be >= 1");
  if (lr_g < 0 || lr_d < 0) throw ContractError("learning rates must be >= 0");
  if (!(ema_half_life_kimg > 0) || ema_rampup < 0) throw ContractError("invalid EMA settings");
  if (mbstd_group > 0 && batch % mbstd_group != 0) throw ContractError("train.batch must be a multiple of disc.mbstd_group");
  if (fid_samples < 2 * FeatureExtractor::kFeatures)
    throw ContractError("eval.fid_samples must be >= " + std::to_string(2 * FeatureExtractor::kFeatures));
  if (init_mode != InitMode::Scratch && init_from.empty()) throw ContractError("train.init_from is required for " +
                                                                               std::string(init_mode_name(init_mode)));
  if (log_every < 1) throw ContractError("train.log_every must be >= 1");
}

ConfigMap TrainConfig::to_map() const {
  ConfigMap m;
  m["model.resolution"] = std::to_string(gen.resolution);
  m["model.latent_dim"] = std::to_string(gen.latent_dim);
  m["model.mapping_depth"] = std::to_string(gen.mapping_depth);
  m["model.mapping_lr_mul"] = format_double(gen.mapping_lr_mul);
  m["model.channels"] = format_int_table(gen.channels);
  m["model.conditioning"] = gen.conditioned ? fusion_name(gen.fusion) : "none";
  m["pose.channels"] = format_int_table(gen.pose.channels);
  m["pose.inject_all"] = gen.pose.inject_all_resolutions ? "true" : "false";
  m["pose.sigma"] = format_double(gen.pose.sigma);
  m["disc.mbstd_group"] = std::to_string(mbstd_group);
  m["train.batch"] = std::to_string(batch);
  m["train.lr_g"] = format_double(lr_g);
  m["train.lr_d"] = format_double(lr_d);
  m["train.beta1"] = format_double(beta1);
  m["train.beta2"] = format_double(beta2);
  m["train.adam_eps"] = format_double(adam_eps);
  m["train.r1_enabled"] = r1_enabled ? "true" : "false";
  m["train.r1_gamma"] = format_double(r1_gamma);
  m["train.r1_interval"] = std::to_string(r1_interval);
  m["train.kimg"] = format_double(kimg);
  m["train.eval_kimg"] = format_double(eval_kimg);
  m["train.checkpoint_kimg"] = format_double(checkpoint_kimg);
  m["train.ema_half_life_kimg"] = format_double(ema_half_life_kimg);
  m["train.ema_rampup"] = format_double(ema_rampup);
  m["train.seed"] = std::to_string(seed);
  m["train.init_mode"] = init_mode_name(init_mode);
  m["train.init_from"] = init_from;
  m["train.log_every"] = std::to_string(log_every);
  m["eval.fid_samples"] = std::to_string(fid_samples);
  m["eval.seed"] = std::to_string(eval_seed);
  return m;
}

TrainConfig TrainConfig::from_map(const ConfigMap& m) {
  TrainConfig c;
  int res = 32;
  if (auto it = m.find("model.resolution"); it != m.end()) res = static_cast<int>(parse_int(it->first, it->second));
  c.gen = GeneratorConfig::desk(res);
  for (const auto& [k, v] : m) {
    if (k == "model.resolution") continue;
    else if (k == "model.latent_dim") c.gen.latent_dim = static_cast<int>(parse_int(k, v));
    else if (k == "model.mapping_depth") c.gen.mapping_depth = static_cast<int>(parse_int(k, v));
    else if (k == "model.mapping_lr_mul") c.gen.mapping_lr_mul = parse_double(k, v);
    else if (k == "model.channels") c.gen.channels = parse_int_table(k, v);
    else if (k == "model.conditioning") {
      c.gen.conditioned = v != "none";
      if (c.gen.conditioned) c.gen.fusion = parse_fusion(v);
    } else if (k == "pose.channels") c.gen.pose.channels = parse_int_table(k, v);
    else if (k == "pose.inject_all") c.gen.pose.inject_all_resolutions = parse_bool(k, v);
    else if (k == "pose.sigma") c.gen.pose.sigma = parse_double(k, v);
    else if (k == "disc.mbstd_group") c.mbstd_group = static_cast<int>(parse_int(k, v));
    else if (k == "train.batch") c.batch = static_cast<int>(parse_int(k, v));
    else if (k == "train.lr_g") c.lr_g = parse_double(k, v);
    else if (k == "train.lr_d") c.lr_d = parse_double(k, v);
    else if (k == "train.beta1") c.beta1 = parse_double(k, v);
    else if (k == "train.beta2") c.beta2 = parse_double(k, v);
    else if (k == "train.adam_eps") c.adam_eps = parse_double(k, v);
    else if (k == "train.r1_enabled") c.r1_enabled = parse_bool(k, v);
    else if (k == "train.r1_gamma") c.r1_gamma = parse_double(k, v);
    else if (k == "train.r1_interval") c.r1_interval = static_cast<int>(parse_int(k, v));
    else if (k == "train.kimg") c.kimg = parse_double(k, v);
    else if (k == "train.eval_kimg") c.eval_kimg = parse_double(k, v);
    else if (k == "train.checkpoint_kimg") c.checkpoint_kimg = parse_double(k, v);
    else if (k == "train.ema_half_life_kimg") c.ema_half_life_kimg = parse_double(k, v);
    else if (k == "train.ema_rampup") c.ema_rampup = parse_double(k, v);
    else if (k == "train.seed") c.seed = static_cast<uint64_t>(parse_int(k, v));
    else if (k == "train.init_mode") c.init_mode = parse_init_mode(v);
    else if (k == "train.init_from") c.init_from = v;
    else if (k == "train.log_every") c.log_every = static_cast<int>(parse_int(k, v));
    else if (k == "eval.fid_samples") c.fid_samples = static_cast<int>(parse_int(k, v));
    else if (k == "eval.seed") c.eval_seed = static_cast<uint64_t>(parse_int(k, v));
    else throw ContractError("unknown config key '" + k + "'");
  }
  return c;
}

// ---------------------------------------------------------------- losses

template <typename T>
ad::Var<T> d_loss(const ad::Var<T>& real_logits, const ad::Var<T>& fake_logits) {
  if (real_logits.shape() != fake_logits.shape())
    throw ContractError("d_loss: real and fake logits differ in shape");
  return ad::add(ad::mean(ad::softplus(ad::scale(real_logits, T(-1)))), ad::mean(ad::softplus(fake_logits)));
}

template <typename T>
ad::Var<T> g_loss(const ad::Var<T>& fake_logits) {
  return ad::mean(ad::softplus(ad::scale(fake_logits, T(-1))));
}

template <typename T>
ad::Var<T> r1_penalty(const ad::Var<T>& images, const ad::Var<T>& logits, double gamma) {
  ad::GradMode on(true);
  auto g = ad::grad(ad::sum(logits), {images}, true)[0];
  return ad::scale(ad::sum(ad::square(g)), static_cast<T>(gamma / 2 / static_cast<double>(images.dim(0))));
}

template ad::Var<float> d_loss(const ad::Var<float>&, const ad::Var<float>&);
template ad::Var<double> d_loss(const ad::Var<double>&, const ad::Var<double>&);
template ad::Var<float> g_loss(const ad::Var<float>&);
template ad::Var<double> g_loss(const ad::Var<double>&);
template ad::Var<float> r1_penalty(const ad::Var<float>&, const ad::Var<float>&, double);
template ad::Var<double> r1_penalty(const ad::Var<double>&, const ad::Var<double>&, double);

// ---------------------------------------------------------------- Adam

template <typename T>
void Adam<T>::init(const nn::ParamStore<T>& ps) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto& p : ps.vars()) {
    m.emplace_back(p.shape());
    v.emplace_back(p.shape());
  }
}

template <typename T>
void Adam<T>::step(nn::ParamStore<T>& ps, const std::vector<Tensor<T>>& grads) {
  if (grads.size() != ps.size() || m.size() != ps.size()) throw ContractError("Adam: gradient count mismatch");
  ++t;
  const double bc1 = 1 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1 - std::pow(beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T step = static_cast<T>(lr / bc1), rb2 = static_cast<T>(1 / bc2), e = static_cast<T>(eps);
  for (size_t i = 0; i < ps.size(); ++i) {
    T* p = ps.vars()[i].mutable_value().data();
    T* mi = m[i].data();
    T* vi = v[i].data();
    const T* g = grads[i].data();
    for (int64_t k = 0; k < grads[i].size(); ++k) {
      mi[k] = b1 * mi[k] + (1 - b1) * g[k];
      vi[k] = b2 * vi[k] + (1 - b2) * g[k] * g[k];
      p[k] -= step * mi[k] / (std::sqrt(vi[k] * rb2) + e);
    }
  }
}

template struct Adam<float>;
template struct Adam<double>;

// ---------------------------------------------------------------- trainer

std::string InitReport::summary() const {
  return "matched " + std::to_string(matched) + ", fresh " + std::to_string(fresh) + " of " + std::to_string(total) +
         " parameter tensors (" + std::to_string(shape_mismatch.size()) + " shape-changed, " +
         std::to_string(missing.size()) + " absent from checkpoint)";
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  g_ = std::make_unique<Generator<float>>(cfg_.gen, mix_seed(cfg_.seed, 1));
  ema_ = std::make_unique<Generator<float>>(cfg_.gen, mix_seed(cfg_.seed, 1));
  d_ = std::make_unique<Discriminator<float>>(cfg_.disc(), mix_seed(cfg_.seed, 2));
  adam_g_.lr = cfg_.lr_g;
  adam_d_.lr = cfg_.lr_d;
  for (auto* a : {&adam_g_, &adam_d_}) {
    a->beta1 = cfg_.beta1;
    a->beta2 = cfg_.beta2;
    a->eps = cfg_.adam_eps;
  }
  adam_g_.init(g_->params());
  adam_d_.init(d_->params());
}

InitReport Trainer::init_weights() {
  if (cfg_.init_mode == InitMode::Scratch) {
    InitReport r;
    r.total = r.fresh = static_cast<int>(g_->params().size() + d_->params().size());
    return r;
  }
  return init_from_checkpoint(load_checkpoint(cfg_.init_from), cfg_.init_mode);
}

InitReport Trainer::init_from_checkpoint(const Checkpoint& ck, InitMode mode) {
  if (mode == InitMode::UcToPc) {
    const auto src = checkpoint_config(ck);
    if (src.gen.conditioned) throw ContractError("uc_to_pc needs an unconditioned source checkpoint");
    if (!cfg_.gen.conditioned) throw ContractError("uc_to_pc needs a pose-conditioned target config");
  }
  InitReport r;
  auto copy_store = [&](nn::ParamStore<float>& ps, nn::ParamStore<float>* ema) {
    for (size_t i = 0; i < ps.size(); ++i) {
      const std::string& name = ps.names()[i];
      ++r.total;
      const Tensor<float>* t = ck.find(name);
      if (t && t->shape() == ps.vars()[i].shape()) {
        ps.vars()[i].mutable_value() = *t;
        ++r.matched;
        if (ema) {
          const Tensor<float>* e = ck.find("ema/" + name);
          ema->vars()[i].mutable_value() = (e && e->shape() == t->shape()) ? *e : *t;
        }
        continue;
      }
      ++r.fresh;
      (t ? r.shape_mismatch : r.missing).push_back(name);
      if (ema) ema->vars()[i].mutable_value() = ps.vars()[i].value();
    }
  };
  copy_store(g_->params(), &ema_->params());
  copy_store(d_->params(), nullptr);
  if (r.matched == 0)
    throw ContractError("no checkpoint parameter matches this model by name and shape; wrong config pairing?");
  adam_g_.init(g_->params());
  adam_d_.init(d_->params());
  state_ = TrainState{};
  return r;
}

Rng Trainer::step_rng(uint64_t stream) const {
  return Rng(mix_seed(mix_seed(cfg_.seed, static_cast<uint64_t>(state_.step)), stream));
}

StepStats Trainer::train_step(const ImageSet& data) {
  if (data.resolution != cfg_.gen.resolution) throw ContractError("dataset resolution does not match the model");
  if (data.size() == 0) throw ContractError("empty dataset");
  Rng rng = step_rng(0);
  std::uniform_int_distribution<int64_t> pick(0, data.size() - 1);
  std::vector<int64_t> idx(static_cast<size_t>(cfg_.batch));
  for (auto& i : idx) i = pick(rng);
  return train_step(data.gather(idx), data.gather_poses(idx));
}

StepStats Trainer::train_step(const Tensor<float>& reals, const std::vector<PoseKeypoints>& poses) {
  const int r = cfg_.gen.resolution;
  if (reals.rank() != 4 || reals.dim(1) != 3 || reals.dim(2) != r || reals.dim(3) != r)
    throw ContractError("train_step: expected N x 3 x " + std::to_string(r) + " x " + std::to_string(r) + " reals, got " +
                        shape_str(reals.shape()));
  const int64_t n = reals.dim(0);
  const bool cond = cfg_.gen.conditioned;
  if (cond && static_cast<int64_t>(poses.size()) != n) throw ContractError("train_step: need one pose per real image");
  const std::vector<PoseKeypoints>* pp = cond ? &poses : nullptr;
  const int64_t dim = cfg_.gen.latent_dim;
  Rng zrng = step_rng(1);
  StepStats st;

  auto mean_of = [](const Tensor<float>& t) {
    double s = 0;
    for (float v : t.span()) s += v;
    return s / static_cast<double>(t.size());
  };

  // Discriminator.
  Tensor<float> fakes;
  {
    ad::NoGrad ng;
    fakes = g_->generate(ad::constant(sample_z<float>(n, dim, zrng)), pp).value();
  }
  const bool do_r1 = cfg_.r1_enabled && state_.step % cfg_.r1_interval == 0;
  std::optional<PosePyramid<float>> dpose;
  if (cond) dpose = d_->encode_pose(poses);
  const PosePyramid<float>* dp = dpose ? &*dpose : nullptr;
  auto real = ad::leaf(reals, do_r1);
  auto real_logits = d_->score(real, dp);
  auto fake_logits = d_->score(ad::constant(std::move(fakes)), dp);
  auto loss_d = d_loss(real_logits, fake_logits);
  st.d_loss = loss_d.value().item();
  st.real_logit = mean_of(real_logits.value());
  st.fake_logit = mean_of(fake_logits.value());
  if (do_r1) {
    auto pen = r1_penalty(real, real_logits, cfg_.r1_gamma);
    st.r1 = pen.value().item();
    loss_d = ad::add(loss_d, ad::scale(pen, static_cast<float>(cfg_.r1_interval)));
  }
  if (!std::isfinite(loss_d.value().item()))
    throw NumericalError("non-finite discriminator loss at step " + std::to_string(state_.step));
  auto d_grads = ad::backward(loss_d, d_->params().vars());

  // Generator, scored by the freshly updated discriminator.
  adam_d_.step(d_->params(), d_grads);
  auto fake = g_->generate(ad::constant(sample_z<float>(n, dim, zrng)), pp);
  auto loss_g = g_loss(d_->score(fake, pp));
  st.g_loss = loss_g.value().item();
  if (!std::isfinite(st.g_loss)) throw NumericalError("non-finite generator loss at step " + std::to_string(state_.step));
  auto g_grads = ad::backward(loss_g, g_->params().vars());
  adam_g_.step(g_->params(), g_grads);

  state_.images_seen += n;
  ++state_.step;
  update_ema();
  return st;
}

void Trainer::update_ema() {
  double half = cfg_.ema_half_life_kimg * 1000.0;
  if (cfg_.ema_rampup > 0) half = std::min(half, static_cast<double>(state_.images_seen) * cfg_.ema_rampup);
  const float beta = half > 0 ? static_cast<float>(std::pow(0.5, cfg_.batch / half)) : 0.0f;
  auto& src = g_->params().vars();
  auto& dst = ema_->params().vars();
  for (size_t i = 0; i < src.size(); ++i) {
    const float* p = src[i].value().data();
    float* e = dst[i].mutable_value().data();
    for (int64_t k = 0; k < src[i].size(); ++k) e[k] = p[k] + beta * (e[k] - p[k]);
  }
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.config = cfg_.to_map();
  ck.step = state_.step;
  ck.images_seen = state_.images_seen;
  ck.fid_history = state_.fid_history;
  ck.counters["adam_g_t"] = adam_g_.t;
  ck.counters["adam_d_t"] = adam_d_.t;
  auto add_store = [&](const std::string& prefix, const nn::ParamStore<float>& ps) {
    for (size_t i = 0; i < ps.size(); ++i) ck.tensors.emplace_back(prefix + ps.names()[i], ps.vars()[i].value());
  };
  auto add_moments = [&](const nn::ParamStore<float>& ps, const Adam<float>& a) {
    for (size_t i = 0; i < ps.size(); ++i) ck.tensors.emplace_back("opt/m/" + ps.names()[i], a.m[i]);
    for (size_t i = 0; i < ps.size(); ++i) ck.tensors.emplace_back("opt/v/" + ps.names()[i], a.v[i]);
  };
  add_store("", g_->params());
  add_store("", d_->params());
  add_store("ema/", ema_->params());
  add_moments(g_->params(), adam_g_);
  add_moments(d_->params(), adam_d_);
  return ck;
}

void Trainer::save(const std::string& dir) const { save_checkpoint(dir, snapshot()); }

void Trainer::restore(const Checkpoint& ck) {
  const auto src = checkpoint_config(ck);
  if (src.gen.hash() != cfg_.gen.hash() || src.disc().hash() != cfg_.disc().hash())
    throw ContractError("checkpoint model config differs from this trainer's");
  auto load = [&](const std::string& name, Tensor<float>& dst) {
    const Tensor<float>* t = ck.find(name);
    if (!t) throw ContractError("checkpoint lacks tensor " + name);
    if (t->shape() != dst.shape()) throw ContractError("checkpoint tensor " + name + " has the wrong shape");
    dst = *t;
  };
  auto load_store = [&](const std::string& prefix, nn::ParamStore<float>& ps) {
    for (size_t i = 0; i < ps.size(); ++i) load(prefix + ps.names()[i], ps.vars()[i].mutable_value());
  };
  auto load_moments = [&](nn::ParamStore<float>& ps, Adam<float>& a) {
    for (size_t i = 0; i < ps.size(); ++i) load("opt/m/" + ps.names()[i], a.m[i]);
    for (size_t i = 0; i < ps.size(); ++i) load("opt/v/" + ps.names()[i], a.v[i]);
  };
  load_store("", g_->params());
  load_store("", d_->params());
  load_store("ema/", ema_->params());
  load_moments(g_->params(), adam_g_);
  load_moments(d_->params(), adam_d_);
  adam_g_.t = ck.counters.count("adam_g_t") ? ck.counters.at("adam_g_t") : 0;
  adam_d_.t = ck.counters.count("adam_d_t") ? ck.counters.at("adam_d_t") : 0;
  state_.step = ck.step;
  state_.images_seen = ck.images_seen;
  state_.fid_history = ck.fid_history;
}

Trainer Trainer::resume(const std::string& dir) {
  auto ck = load_checkpoint(dir);
  auto cfg = checkpoint_config(ck);
  cfg.init_mode = InitMode::Scratch;
  Trainer t(cfg);
  t.restore(ck);
  return t;
}

uint64_t Trainer::checksum() const {
  uint64_t h = mix_seed(static_cast<uint64_t>(state_.step), static_cast<uint64_t>(state_.images_seen));
  h = mix_seed(h, g_->params().checksum());
  h = mix_seed(h, d_->params().checksum());
  h = mix_seed(h, ema_->params().checksum());
  for (const auto* a : {&adam_g_, &adam_d_})
    for (const auto* vec : {&a->m, &a->v})
      for (const auto& t : *vec) {
        const auto* p = reinterpret_cast<const unsigned char*>(t.data());
        for (size_t i = 0; i < t.vec().size() * sizeof(float); ++i) h = (h ^ p[i]) * 1099511628211ULL;
      }
  return h;
}

TrainConfig checkpoint_config(const Checkpoint& ck) { return TrainConfig::from_map(ck.config); }

Generator<float> load_generator(const std::string& dir, bool use_ema) {
  auto ck = load_checkpoint(dir);
  auto cfg = checkpoint_config(ck);
  Generator<float> g(cfg.gen, 0);
  for (size_t i = 0; i < g.params().size(); ++i) {
    const std::string name = (use_ema ? "ema/" : "") + g.params().names()[i];
    const Tensor<float>* t = ck.find(name);
    if (!t || t->shape() != g.params().vars()[i].shape()) throw ContractError("checkpoint lacks tensor " + name);
    g.params().vars()[i].mutable_value() = *t;
  }
  return g;
}

ImageSampler generator_sampler(const Generator<float>& g, uint64_t eval_seed, const std::vector<PoseKeypoints>& poses) {
  if (g.config().conditioned && poses.empty()) throw ContractError("a pose-conditioned sampler needs poses");
  return [&g, eval_seed, &poses](int64_t start, int64_t count) {
    ad::NoGrad ng;
    const int64_t d = g.config().latent_dim;
    Tensor<float> z(Shape{count, d});
    std::vector<PoseKeypoints> batch;
    for (int64_t i = 0; i < count; ++i) {
      Rng rng(mix_seed(eval_seed, static_cast<uint64_t>(start + i)));
      auto row = sample_z<float>(1, d, rng);
      std::copy_n(row.data(), d, z.data() + i * d);
      if (g.config().conditioned) batch.push_back(poses[static_cast<size_t>(start + i) % poses.size()]);
    }
    return g.generate(ad::constant(std::move(z)), g.config().conditioned ? &batch : nullptr).value();
  };
}

namespace {

std::string format_fid(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_atomically(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << text;
    if (!f) throw ContractError("cannot write " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_history(const std::string& path, const FidHistory& h) {
  std::string text = "images_seen,fid\n";
  for (const auto& [n, v] : h) text += std::to_string(n) + "," + format_fid(v) + "\n";
  write_atomically(path, text);
}

FidHistory read_history(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "images_seen,fid") throw ContractError(path + ": missing images_seen,fid header");
  FidHistory h;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ContractError(path + ":" + std::to_string(lineno) + ": expected two fields");
    h.emplace_back(parse_int("images_seen", line.substr(0, comma)), parse_double("fid", line.substr(comma + 1)));
  }
  return h;
}

void write_history_table(const std::string& path, const std::vector<std::string>& names,
                         const std::vector<FidHistory>& runs) {
  if (names.size() != runs.size()) throw ContractError("one name per run");
  std::map<int64_t, std::vector<std::string>> rows;
  for (size_t r = 0; r < runs.size(); ++r)
    for (const auto& [n, v] : runs[r]) {
      auto& row = rows[n];
      row.resize(runs.size());
      row[r] = format_fid(v);
    }
  std::string text = "images_seen";
  for (const auto& n : names) text += "," + n;
  text += "\n";
  for (auto& [n, row] : rows) {
    row.resize(runs.size());
    text += std::to_string(n);
    for (const auto& cell : row) text += "," + cell;
    text += "\n";
  }
  write_atomically(path, text);
}

std::vector<std::pair<int64_t, double>> run_experiment(Trainer& trainer, const ImageSet& data,
                                                       const GaussianStats& real_stats,
                                                       const std::vector<PoseKeypoints>& eval_poses,
                                                       const std::string& out_dir, const RunHooks& hooks) {
  const auto& cfg = trainer.config();
  fs::create_directories(out_dir);
  const int64_t budget = std::llround(cfg.kimg * 1000);
  const int64_t eval_every = std::max<int64_t>(1, std::llround(cfg.eval_kimg * 1000));
  const int64_t ckpt_every = std::max<int64_t>(1, std::llround(cfg.checkpoint_kimg * 1000));
  auto& st = trainer.state();
  int64_t next_eval = (st.images_seen / eval_every + 1) * eval_every;
  int64_t next_ckpt = (st.images_seen / ckpt_every + 1) * ckpt_every;

  FeatureExtractor fx;
  const std::string log_path = (fs::path(out_dir) / "log.csv").string();
  const bool fresh_log = !fs::exists(log_path) || st.step == 0;
  std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (fresh_log) log << "step,images_seen,d_loss,g_loss,r1,real_logit,fake_logit\n";

  int64_t last_eval = st.fid_history.empty() ? -1 : st.fid_history.back().first;
  while (st.images_seen < budget) {
    StepStats s;
    try {
      s = trainer.train_step(data);
    } catch (const NumericalError&) {
      trainer.save((fs::path(out_dir) / "nan-dump").string());
      throw;
    }
    if (st.step % cfg.log_every == 0 || st.step == 1) {
      log << st.step << "," << st.images_seen << "," << s.d_loss << "," << s.g_loss << ","
          << (s.r1 ? std::to_string(*s.r1) : "") << "," << s.real_logit << "," << s.fake_logit << "\n";
      log.flush();
      if (hooks.on_log) hooks.on_log(trainer, s);
    }
    if (st.images_seen >= next_eval || st.images_seen >= budget) {
      auto r = fid(fx, real_stats, generator_sampler(trainer.ema(), cfg.eval_seed, eval_poses), cfg.fid_samples);
      st.fid_history.emplace_back(st.images_seen, r.value);
      last_eval = st.images_seen;
      write_history((fs::path(out_dir) / "fid.csv").string(), st.fid_history);
      if (hooks.on_eval) hooks.on_eval(trainer, r.value);
      while (next_eval <= st.images_seen) next_eval += eval_every;
    }
    if (st.images_seen >= next_ckpt) {
      char name[32];
      std::snprintf(name, sizeof name, "%08lld", static_cast<long long>(st.images_seen));
      trainer.save((fs::path(out_dir) / "checkpoints" / name).string());
      while (next_ckpt <= st.images_seen) next_ckpt += ckpt_every;
    }
  }
  (void)last_eval;
  write_history((fs::path(out_dir) / "fid.csv").string(), st.fid_history);
  trainer.save((fs::path(out_dir) / "final").string());
  return st.fid_history;
}

}  // namespace togan
