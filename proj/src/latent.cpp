#include "togan/latent.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "togan/trainer.hpp"

namespace togan {

namespace {

void check_same_shape(const LatentStack& a, const LatentStack& b, const char* what) {
  if (a.rows.shape() != b.rows.shape())
    throw ContractError(std::string(what) + ": latent stacks differ in shape (" + shape_str(a.rows.shape()) + " vs " +
                        shape_str(b.rows.shape()) + ")");
  if (a.config_hash != b.config_hash) throw ContractError(std::string(what) + ": latent stacks come from different generators");
}

const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* p, size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (size_t i = 0; i < n; i += 3) {
    const uint32_t v = (uint32_t{p[i]} << 16) | (i + 1 < n ? uint32_t{p[i + 1]} << 8 : 0) | (i + 2 < n ? p[i + 2] : 0);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < n ? kB64[(v >> 6) & 63] : '=';
    out += i + 2 < n ? kB64[v & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
  int lut[256];
  std::fill(std::begin(lut), std::end(lut), -1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  if (s.size() % 4 != 0) throw ContractError("latent file: base64 payload has a bad length");
  std::vector<unsigned char> out;
  for (size_t i = 0; i < s.size(); i += 4) {
    uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<size_t>(k)];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = lut[static_cast<unsigned char>(c)];
      if (d < 0 || pad) throw ContractError("latent file: invalid base64 payload");
      v = (v << 6) | static_cast<uint32_t>(d);
    }
    out.push_back(static_cast<unsigned char>(v >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 255));
  }
  return out;
}

}  // namespace

LatentStack broadcast_w(const Tensor<float>& w, int num_ws, uint64_t config_hash) {
  const int64_t d = w.size();
  if (!(w.rank() == 1 || (w.rank() == 2 && w.dim(0) == 1))) throw ContractError("broadcast_w expects a single w");
  LatentStack s{Tensor<float>(Shape{num_ws, d}), config_hash};
  for (int i = 0; i < num_ws; ++i) std::copy_n(w.data(), d, s.rows.data() + i * d);
  return s;
}

std::vector<LatentStack> interpolate(const LatentStack& start, const LatentStack& end, int num_latents) {
  check_same_shape(start, end, "interpolate");
  if (num_latents < 1) throw ContractError("interpolate: num_latents must be >= 1");
  std::vector<LatentStack> out;
  out.push_back(start);
  for (int i = 1; i < num_latents; ++i) {
    LatentStack s{Tensor<float>(start.rows.shape()), start.config_hash};
    for (int64_t k = 0; k < s.rows.size(); ++k) {
      const double a = start.rows[k], b = end.rows[k];
      s.rows[k] = static_cast<float>(a + i * (b - a) / num_latents);
    }
    out.push_back(std::move(s));
  }
  out.push_back(end);
  return out;
}

LatentStack mix_layers(const LatentStack& pose_src, const LatentStack& style_src, int k) {
  check_same_shape(pose_src, style_src, "mix_layers");
  if (k < 0 || k > pose_src.num_ws())
    throw ContractError("mix_layers: k = " + std::to_string(k) + " outside [0, " + std::to_string(pose_src.num_ws()) + "]");
  LatentStack out = style_src;
  std::copy_n(pose_src.rows.data(), k * pose_src.dim(), out.rows.data());
  return out;
}

int default_split(int num_style_inputs) {
  if (num_style_inputs < 1) throw ContractError("default_split needs at least one style input");
  return static_cast<int>(std::lround(num_style_inputs * 6.0 / 14.0));
}

Tensor<float> synthesize_stacks(const Generator<float>& g, const std::vector<LatentStack>& stacks,
                                const std::vector<PoseKeypoints>* poses) {
  if (stacks.empty()) throw ContractError("synthesize_stacks: no latents");
  const int nw = g.num_ws();
  const int64_t d = g.config().latent_dim, n = static_cast<int64_t>(stacks.size());
  for (const auto& s : stacks) {
    if (s.rows.shape() != Shape{nw, d})
      throw ContractError("latent stack " + shape_str(s.rows.shape()) + " does not fit this generator (" +
                          std::to_string(nw) + "x" + std::to_string(d) + ")");
    if (s.config_hash != g.config().hash()) throw ContractError("latent stack was made for a different generator config");
  }
  ad::NoGrad ng;
  std::vector<ad::Var<float>> ws;
  for (int j = 0; j < nw; ++j) {
    Tensor<float> t(Shape{n, d});
    for (int64_t i = 0; i < n; ++i) std::copy_n(stacks[static_cast<size_t>(i)].rows.data() + j * d, d, t.data() + i * d);
    ws.push_back(ad::constant(std::move(t)));
  }
  return g.synthesize(ws, poses).value();
}

void InversionConfig::validate() const {
  if (steps < 0) throw ContractError("inversion steps must be >= 0");
  if (!(lr > 0)) throw ContractError("inversion learning rate must be > 0");
  if (!(rampdown > 0 && rampdown <= 1)) throw ContractError("inversion rampdown must be in (0, 1]");
  if (pixel_weight < 0 || feature_weight < 0 || pixel_weight + feature_weight <= 0)
    throw ContractError("inversion loss weights must be non-negative and not both zero");
  if (mean_w_samples < 1) throw ContractError("mean_w_samples must be >= 1");
}

bool InversionResult::ok() const {
  for (bool d : diverged)
    if (d) return false;
  return true;
}

InversionResult invert(const Tensor<float>& images, const Generator<float>& g, const std::vector<PoseKeypoints>* poses,
                       const InversionConfig& cfg, const FeatureExtractor& fx) {
  cfg.validate();
  const auto& gc = g.config();
  const int r = gc.resolution;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != r || images.dim(3) != r)
    throw ContractError("invert: expected N x 3 x " + std::to_string(r) + " x " + std::to_string(r) + " images, got " +
                        shape_str(images.shape()));
  const int64_t n = images.dim(0), d = gc.latent_dim, pixels = 3LL * r * r;
  if (gc.conditioned != (poses != nullptr)) throw ContractError("invert: pose must be given iff the generator is conditioned");
  if (poses && static_cast<int64_t>(poses->size()) != n) throw ContractError("invert: need one pose per image");
  const int nw = g.num_ws();
  const uint64_t hash = gc.hash();

  Tensor<float> init(Shape{n, d});
  {
    ad::NoGrad ng;
    if (cfg.init == InversionInit::MeanW) {
      const auto mw = g.mean_w(cfg.mean_w_samples, cfg.seed);
      for (int64_t i = 0; i < n; ++i) std::copy_n(mw.data(), d, init.data() + i * d);
    } else {
      Tensor<float> z(Shape{n, d});
      for (int64_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(i)));
        auto row = sample_z<float>(1, d, rng);
        std::copy_n(row.data(), d, z.data() + i * d);
      }
      init = g.map(ad::constant(std::move(z))).value();
    }
  }

  nn::ParamStore<float> latents;
  const int leaves = cfg.space == InversionSpace::W ? 1 : nw;
  for (int j = 0; j < leaves; ++j) latents.add("w" + std::to_string(j), init);
  auto current_stack = [&](int64_t i) {
    LatentStack s{Tensor<float>(Shape{nw, d}), hash};
    for (int j = 0; j < nw; ++j)
      std::copy_n(latents.vars()[static_cast<size_t>(std::min(j, leaves - 1))].value().data() + i * d, d,
                  s.rows.data() + j * d);
    return s;
  };

  Tensor<float> target_features;
  std::optional<PosePyramid<float>> pyramid;
  {
    ad::NoGrad ng;
    target_features = fx.forward(ad::constant(images)).value();
    if (poses) pyramid = g.encode_pose(*poses);
  }
  const int64_t nf = target_features.dim(1);
  const auto target = ad::constant(images);
  const auto target_f = ad::constant(target_features);

  InversionResult res;
  res.trace.resize(static_cast<size_t>(n));
  res.best_loss.assign(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  res.diverged.assign(static_cast<size_t>(n), false);
  for (int64_t i = 0; i < n; ++i) res.latents.push_back(current_stack(i));
  std::vector<double> initial(static_cast<size_t>(n), 0);

  Adam<float> opt;
  opt.beta1 = 0.9;
  opt.beta2 = 0.999;
  opt.init(latents);
  for (int step = 0;; ++step) {
    std::vector<ad::Var<float>> ws;
    for (int j = 0; j < nw; ++j) ws.push_back(latents.vars()[static_cast<size_t>(std::min(j, leaves - 1))]);
    auto img = g.synthesize(ws, pyramid ? &*pyramid : nullptr);
    auto diff = ad::sub(img, target);
    auto fdiff = ad::sub(fx.forward(img), target_f);

    const auto& dv = diff.value();
    const auto& fv = fdiff.value();
    for (int64_t i = 0; i < n; ++i) {
      double pix = 0, feat = 0;
      for (int64_t k = 0; k < pixels; ++k) pix += static_cast<double>(dv[i * pixels + k]) * dv[i * pixels + k];
      for (int64_t k = 0; k < nf; ++k) feat += static_cast<double>(fv[i * nf + k]) * fv[i * nf + k];
      const double loss = cfg.pixel_weight * pix / static_cast<double>(pixels) + cfg.feature_weight * feat / static_cast<double>(nf);
      const auto si = static_cast<size_t>(i);
      if (step == 0) initial[si] = loss;
      if (!std::isfinite(loss) || (step > 0 && loss > cfg.divergence_factor * initial[si])) res.diverged[si] = true;
      if (loss < res.best_loss[si]) {
        res.best_loss[si] = loss;
        res.latents[si] = current_stack(i);
      }
      res.trace[si].push_back({step, loss, res.best_loss[si]});
    }
    if (step == cfg.steps) break;

    auto total = ad::add(ad::scale(ad::sum(ad::square(diff)), static_cast<float>(cfg.pixel_weight / static_cast<double>(pixels))),
                         ad::scale(ad::sum(ad::square(fdiff)), static_cast<float>(cfg.feature_weight / static_cast<double>(nf))));
    auto grads = ad::backward(total, latents.vars());
    const double t = static_cast<double>(step) / cfg.steps;
    const double ramp = std::min(1.0, (1.0 - t) / cfg.rampdown);
    opt.lr = cfg.lr * 0.5 * (1.0 - std::cos(M_PI * ramp));
    opt.step(latents, grads);
  }
  return res;
}

Tensor<float> try_on(const Generator<float>& g, const LatentStack& person, const LatentStack& garment, int k) {
  if (g.config().conditioned) throw ContractError("try_on needs an unconditioned generator; pose lives in the latents");
  return synthesize_stacks(g, {mix_layers(person, garment, k)});
}

void save_latents(const std::string& path, const std::vector<LatentStack>& stacks) {
  if (stacks.empty()) throw ContractError("save_latents: nothing to save");
  const auto& first = stacks.front();
  std::vector<float> flat;
  for (const auto& s : stacks) {
    check_same_shape(first, s, "save_latents");
    flat.insert(flat.end(), s.rows.vec().begin(), s.rows.vec().end());
  }
  nlohmann::json doc{{"format", "togan-latents"},
                     {"version", 1},
                     {"count", stacks.size()},
                     {"num_ws", first.num_ws()},
                     {"dim", first.dim()},
                     {"config_hash", std::to_string(first.config_hash)},
                     {"dtype", "f32"},
                     {"data", base64_encode(reinterpret_cast<const unsigned char*>(flat.data()), flat.size() * sizeof(float))}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f << doc.dump() << "\n";
  }
  std::rename(tmp.c_str(), path.c_str());
}

std::vector<LatentStack> load_latents(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot read latent file " + path);
  auto doc = nlohmann::json::parse(f, nullptr, false);
  if (doc.is_discarded() || doc.value("format", "") != "togan-latents") throw ContractError("not a latent file: " + path);
  try {
    if (doc.at("version").get<int>() != 1) throw ContractError("unsupported latent file version");
    const auto count = doc.at("count").get<int64_t>();
    const auto nw = doc.at("num_ws").get<int64_t>();
    const auto dim = doc.at("dim").get<int64_t>();
    const uint64_t hash = std::stoull(doc.at("config_hash").get<std::string>());
    const auto bytes = base64_decode(doc.at("data").get<std::string>());
    if (count < 1 || nw < 1 || dim < 1 || bytes.size() != static_cast<size_t>(count * nw * dim) * sizeof(float))
      throw ContractError("latent file payload does not match its header");
    std::vector<LatentStack> out;
    const auto* p = reinterpret_cast<const float*>(bytes.data());
    for (int64_t i = 0; i < count; ++i) {
      LatentStack s{Tensor<float>(Shape{nw, dim}), hash};
      std::copy_n(p + i * nw * dim, nw * dim, s.rows.data());
      out.push_back(std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed latent file: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ContractError(std::string("malformed latent file: ") + e.what());
  }
}

}  // namespace togan
