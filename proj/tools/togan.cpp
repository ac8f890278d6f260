// togan: command-line front end.
//
// Exit codes: 0 ok, 2 usage, 3 contract violation, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "togan/dataset.hpp"
#include "togan/image_io.hpp"
#include "togan/latent.hpp"
#include "togan/trainer.hpp"

using namespace togan;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- output helpers

std::string temp_sibling(const std::string& path) {
  const fs::path p(path);
  return (p.parent_path() / (".tmp-" + p.filename().string())).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void commit(const std::string& tmp, const std::string& path) { fs::rename(tmp, path); }

void write_png_atomic(const std::string& path, const Tensor<float>& image) {
  ensure_parent(path);
  const auto tmp = temp_sibling(path);
  write_png(tmp, image);
  commit(tmp, path);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  ensure_parent(path);
  const auto tmp = temp_sibling(path);
  {
    std::ofstream f(tmp, std::ios::binary);
    f << text;
    if (!f) throw ContractError("cannot write " + path);
  }
  commit(tmp, path);
}

struct GridSpec {
  int rows = 0, cols = 0;
  Tensor<float> images;  // N x 3 x R x R, row-major cells
  std::vector<std::string> captions;

  void validate() const {
    if (rows < 1 || cols < 1) throw ContractError("grid needs at least one row and column");
    if (static_cast<int64_t>(rows) * cols < images.dim(0)) throw ContractError("grid has fewer cells than images");
    if (!captions.empty() && static_cast<int64_t>(captions.size()) != images.dim(0))
      throw ContractError("one caption per grid cell");
  }
};

// Captions go to a sidecar `<png>.txt`, one per cell in row-major order.
void write_grid(const std::string& path, const GridSpec& g) {
  g.validate();
  write_png_atomic(path, image_grid(g.images, g.cols));
  if (!g.captions.empty()) {
    std::string text;
    for (const auto& c : g.captions) text += c + "\n";
    write_text_atomic(path + ".txt", text);
  }
}

Tensor<float> stack_images(const std::vector<Tensor<float>>& imgs) {
  if (imgs.empty()) throw ContractError("no images");
  const auto& s = imgs[0].shape();
  const int64_t per = imgs[0].size();
  Shape shape{static_cast<int64_t>(imgs.size())};
  for (size_t i = s.size() == 4 ? 1 : 0; i < s.size(); ++i) shape.push_back(s[i]);
  Tensor<float> out(shape);
  for (size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i].size() != per) throw ContractError("images differ in size");
    std::copy_n(imgs[i].data(), per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

Tensor<float> one_image(const Tensor<float>& batch, int64_t i) {
  const int64_t per = batch.size() / batch.dim(0);
  return Tensor<float>(Shape{1, batch.dim(1), batch.dim(2), batch.dim(3)},
                       std::vector<float>(batch.data() + i * per, batch.data() + (i + 1) * per));
}

// ---------------------------------------------------------------- inputs

void require_exists(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw ContractError(what + " not found: " + path);
}

bool is_dataset_dir(const std::string& path) { return fs::is_directory(path) && fs::exists(fs::path(path) / "manifest.json"); }

// PNG files or one dataset directory. Poses come from the manifest when
// available and from the keypoint detector otherwise.
ImageSet load_images(const std::vector<std::string>& inputs) {
  if (inputs.size() == 1 && is_dataset_dir(inputs[0])) return read_dataset(inputs[0]).data;
  std::vector<Tensor<float>> imgs;
  for (const auto& p : inputs) {
    require_exists(p, "image");
    imgs.push_back(read_png(p));
  }
  ImageSet set;
  set.images = stack_images(imgs);
  set.resolution = static_cast<int>(set.images.dim(2));
  for (int64_t i = 0; i < set.size(); ++i) set.poses.push_back(detect_keypoints(set.images, i));
  return set;
}

Generator<float> load_ckpt_generator(const std::string& ckpt, bool raw) {
  require_exists(ckpt, "checkpoint");
  return load_generator(ckpt, !raw);
}

struct InversionFlags {
  int steps = 400;
  double lr = 0.05;
  std::string space = "wplus";

  void add(CLI::App* app, const std::string& steps_flag = "--steps") {
    app->add_option(steps_flag, steps, "inversion optimizer steps")->check(CLI::NonNegativeNumber);
    app->add_option("--lr", lr, "inversion learning rate")->check(CLI::PositiveNumber);
    app->add_option("--space", space, "latent space")->check(CLI::IsMember({"w", "wplus"}));
  }
  InversionConfig config(uint64_t seed) const {
    InversionConfig c;
    c.steps = steps;
    c.lr = lr;
    c.space = space == "w" ? InversionSpace::W : InversionSpace::WPlus;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct Inverted {
  std::vector<LatentStack> latents;
  std::vector<PoseKeypoints> poses;
  InversionResult result;
};

Inverted invert_set(const ImageSet& set, const Generator<float>& g, const InversionConfig& cfg) {
  FeatureExtractor fx;
  Inverted out;
  out.poses = set.poses;
  out.result = invert(set.images, g, g.config().conditioned ? &out.poses : nullptr, cfg, fx);
  out.latents = out.result.latents;
  for (size_t i = 0; i < out.result.diverged.size(); ++i)
    if (out.result.diverged[i]) std::cerr << "warning: inversion of image " << i << " diverged\n";
  return out;
}

// A latent file (first stack) or an image to invert.
std::pair<LatentStack, PoseKeypoints> latent_source(const std::string& arg, const Generator<float>& g,
                                                    const InversionConfig& cfg) {
  require_exists(arg, "input");
  if (fs::path(arg).extension() == ".json") {
    auto stacks = load_latents(arg);
    if (stacks.empty()) throw ContractError(arg + " holds no latents");
    if (g.config().conditioned) throw ContractError("a latent file carries no pose; pass an image for a PC generator");
    return {stacks[0], PoseKeypoints{}};
  }
  auto inv = invert_set(load_images({arg}), g, cfg);
  return {inv.latents[0], inv.poses[0]};
}

Tensor<float> render(const Generator<float>& g, const std::vector<LatentStack>& stacks,
                     const std::vector<PoseKeypoints>& poses) {
  return synthesize_stacks(g, stacks, g.config().conditioned ? &poses : nullptr);
}

SpriteDistribution parse_dist(const std::string& s) {
  return s == "face-heavy" ? SpriteDistribution::FaceHeavy : SpriteDistribution::Standard;
}

// ---------------------------------------------------------------- commands

struct Common {
  uint64_t seed = 0;
  bool raw = false;
};

int cmd_make_data(int64_t count, int res, const std::string& dist, const std::string& out, const Common& c) {
  if (count < 1) throw ContractError("--count must be positive");
  if (fs::exists(out)) throw ContractError("output exists: " + out);
  auto specs = sample_specs(count, c.seed, parse_dist(dist));
  write_dataset(specs, res, out);
  std::cout << "wrote " << count << " sprites at " << res << "x" << res << " ("
            << (dist == "face-heavy" ? "FACE_HEAVY" : "STANDARD") << ", seed " << c.seed << ") to " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string config, data, out, init_from, init_mode;
  std::vector<std::string> sets;
  double kimg = -1;
};

int cmd_train(const TrainFlags& f, const Common& c, bool seed_given) {
  require_exists(f.data, "dataset");
  ConfigMap file;
  if (!f.config.empty()) {
    require_exists(f.config, "config");
    file = load_config_file(f.config);
  }
  auto ds = read_dataset(f.data);
  const std::string res = file.count("model.resolution") ? file.at("model.resolution") : std::to_string(ds.manifest.resolution);
  ConfigMap m = TrainConfig::from_map({{"model.resolution", res}}).to_map();
  merge_config(m, file);
  apply_env_overrides(m);
  ConfigMap flags;
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
    flags[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (f.kimg > 0) flags["train.kimg"] = format_double(f.kimg);
  if (seed_given) flags["train.seed"] = std::to_string(c.seed);
  if (!f.init_from.empty()) flags["train.init_from"] = f.init_from;
  if (!f.init_mode.empty()) flags["train.init_mode"] = f.init_mode;
  merge_config(m, flags);
  auto cfg = TrainConfig::from_map(m);
  if (cfg.gen.resolution != ds.manifest.resolution)
    throw ContractError("model resolution " + std::to_string(cfg.gen.resolution) + " does not match dataset resolution " +
                        std::to_string(ds.manifest.resolution));
  if (cfg.init_mode != InitMode::Scratch) require_exists(cfg.init_from, "init checkpoint");
  if (fs::exists(fs::path(f.out) / "final")) throw ContractError("output already holds a finished run: " + f.out);

  Trainer t(cfg);
  std::cout << "generator layers:\n";
  for (const auto& line : layer_audit(t.generator().params())) std::cout << "  " << line << "\n";
  std::cout << "discriminator layers:\n";
  for (const auto& line : layer_audit(t.discriminator().params())) std::cout << "  " << line << "\n";
  auto rep = t.init_weights();
  std::cout << "init " << init_mode_name(cfg.init_mode) << ": " << rep.summary() << "\n";

  fs::create_directories(f.out);
  write_text_atomic((fs::path(f.out) / "config.txt").string(), format_config(cfg.to_map()));
  FeatureExtractor fx;
  auto real = image_stats(fx, [&](int64_t s, int64_t n) { return ds.data.slice(s, n); }, ds.data.size());
  RunHooks hooks;
  hooks.on_log = [](const Trainer& tr, const StepStats& s) {
    if (tr.state().step % 500 == 0)
      std::cout << "step " << tr.state().step << " images " << tr.state().images_seen << " d_loss " << s.d_loss
                << " g_loss " << s.g_loss << std::endl;
  };
  hooks.on_eval = [](const Trainer& tr, double v) {
    std::cout << "fid " << v << " at " << tr.state().images_seen << " images" << std::endl;
  };
  auto hist = run_experiment(t, ds.data, real, ds.data.poses, f.out, hooks);
  std::cout << "done: " << t.state().images_seen << " images, final fid " << hist.back().second << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt, int64_t count, int cols, const std::string& poses_dir, const std::string& out,
                 const Common& c) {
  if (count < 1) throw ContractError("--count must be positive");
  auto g = load_ckpt_generator(ckpt, c.raw);
  std::vector<PoseKeypoints> poses;
  if (g.config().conditioned) {
    if (!poses_dir.empty()) {
      require_exists(poses_dir, "pose dataset");
      poses = read_dataset(poses_dir).data.poses;
    } else {
      poses = render_set(sample_specs(count, c.seed, SpriteDistribution::Standard), g.config().resolution).poses;
    }
  }
  auto imgs = generator_sampler(g, c.seed, poses)(0, count);
  write_grid(out, {static_cast<int>((count + cols - 1) / cols), cols, imgs, {}});
  std::cout << "wrote " << count << " samples to " << out << "\n";
  return 0;
}

int cmd_invert(const std::string& ckpt, const std::vector<std::string>& images, const InversionFlags& inv,
               const std::string& out, const std::string& grid, const std::string& trace, const Common& c) {
  auto g = load_ckpt_generator(ckpt, c.raw);
  auto set = load_images(images);
  auto r = invert_set(set, g, inv.config(c.seed));
  ensure_parent(out);
  const auto tmp = temp_sibling(out);
  save_latents(tmp, r.latents);
  commit(tmp, out);
  if (!grid.empty()) {
    auto recon = render(g, r.latents, r.poses);
    const int64_t n = set.size();
    std::vector<Tensor<float>> cells;
    for (int64_t i = 0; i < n; ++i) cells.push_back(one_image(set.images, i));
    for (int64_t i = 0; i < n; ++i) cells.push_back(one_image(recon, i));
    write_grid(grid, {2, static_cast<int>(n), stack_images(cells), {}});
  }
  if (!trace.empty()) {
    std::string text = "image,step,loss,best\n";
    for (size_t i = 0; i < r.result.trace.size(); ++i)
      for (const auto& row : r.result.trace[i])
        text += std::to_string(i) + "," + std::to_string(row.step) + "," + format_double(row.loss) + "," +
                format_double(row.best) + "\n";
    write_text_atomic(trace, text);
  }
  for (size_t i = 0; i < r.result.best_loss.size(); ++i)
    std::cout << "image " << i << " loss " << r.result.best_loss[i] << (r.result.diverged[i] ? " (diverged)" : "")
              << "\n";
  return r.result.ok() ? 0 : 4;
}

int cmd_interpolate(const std::string& ckpt, const std::string& a, const std::string& b, int steps,
                    const InversionFlags& inv, const std::string& out, const Common& c) {
  if (steps < 1) throw ContractError("--steps must be >= 1");
  auto g = load_ckpt_generator(ckpt, c.raw);
  const auto icfg = inv.config(c.seed);
  auto [la, pa] = latent_source(a, g, icfg);
  auto [lb, pb] = latent_source(b, g, icfg);
  (void)pb;
  auto seq = interpolate(la, lb, steps);
  // A PC generator renders every cell in the first image's pose.
  std::vector<PoseKeypoints> poses(seq.size(), pa);
  auto imgs = render(g, seq, poses);
  write_grid(out, {1, steps + 1, imgs, {}});
  std::cout << "wrote " << steps + 1 << " cells to " << out << "\n";
  return 0;
}

int cmd_mix(const std::string& ckpt, const std::string& pose_src, const std::string& style_src, int k, bool try_on_mode,
            const InversionFlags& inv, const std::string& out, const std::string& grid, const Common& c) {
  auto g = load_ckpt_generator(ckpt, c.raw);
  if (try_on_mode && g.config().conditioned) throw ContractError("try-on needs an unconditioned generator");
  if (k < 0) k = default_split(g.num_ws());
  if (k > g.num_ws()) throw ContractError("--k must be in [0, " + std::to_string(g.num_ws()) + "]");
  const auto icfg = inv.config(c.seed);
  auto [lp, pp] = latent_source(pose_src, g, icfg);
  auto [ls, ps] = latent_source(style_src, g, icfg);
  (void)ps;
  auto img = try_on_mode ? try_on(g, lp, ls, k) : render(g, {mix_layers(lp, ls, k)}, {pp});
  write_png_atomic(out, Tensor<float>(Shape{img.dim(1), img.dim(2), img.dim(3)}, img.vec()));
  if (!grid.empty()) {
    auto recon = render(g, {lp, ls}, {pp, pp});
    write_grid(grid, {1, 3, stack_images({one_image(recon, 0), one_image(recon, 1), img}),
                      {"reconstruction of " + pose_src, "reconstruction of " + style_src, "mix k=" + std::to_string(k)}});
  }
  std::cout << "wrote " << out << " (k = " << k << " of " << g.num_ws() << ")\n";
  return 0;
}

ImageSampler dataset_sampler(const ImageSet& set) {
  return [&set](int64_t s, int64_t n) { return set.slice(s, n); };
}

int cmd_fid(const std::string& real_dir, const std::string& fake_dir, const std::string& ckpt, int64_t count,
            const Common& c) {
  require_exists(real_dir, "real dataset");
  if (fake_dir.empty() == ckpt.empty()) throw ContractError("pass exactly one of --fake or --ckpt");
  auto real = read_dataset(real_dir).data;
  const int64_t n = count > 0 ? count : real.size();
  if (n > real.size()) throw ContractError("--count exceeds the real dataset size");
  FeatureExtractor fx;
  auto stats = image_stats(fx, dataset_sampler(real), n);
  FidResult r;
  if (!fake_dir.empty()) {
    require_exists(fake_dir, "fake dataset");
    auto fake = read_dataset(fake_dir).data;
    if (n > fake.size()) throw ContractError("--count exceeds the fake dataset size");
    r = fid(fx, stats, dataset_sampler(fake), n);
  } else {
    auto g = load_ckpt_generator(ckpt, c.raw);
    r = fid(fx, stats, generator_sampler(g, c.seed, real.poses), n);
  }
  std::cout << "fid " << format_double(r.value) << " (" << r.n_real << " real, " << r.n_fake << " fake)\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<std::string> names;
  std::vector<FidHistory> hists;
  for (const auto& r : runs) {
    const auto csv = fs::is_directory(r) ? (fs::path(r) / "fid.csv").string() : r;
    require_exists(csv, "fid history");
    hists.push_back(read_history(csv));
    auto name = fs::is_directory(r) ? fs::path(r).filename().string() : fs::path(r).parent_path().filename().string();
    if (name.empty()) name = "run" + std::to_string(names.size());
    names.push_back(name);
  }
  write_history_table(out, names, hists);
  std::cout << "wrote " << out << " with " << runs.size() << " runs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"togan: pose-conditioned StyleGAN2 try-on at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "seed for every random choice")->capture_default_str();
  app.add_flag("--raw", common.raw, "use the raw generator weights instead of the EMA copy");

  int64_t count = 0;
  int res = 64, cols = 8, steps = 4, k = -1;
  std::string dist = "standard", out, ckpt, a, b, grid, trace, poses_dir, real_dir, fake_dir;
  std::vector<std::string> images, runs;
  InversionFlags inv;
  TrainFlags tf;

  auto* make = app.add_subcommand("make-data", "render a sprite dataset");
  make->add_option("--count", count, "number of sprites")->required();
  make->add_option("--res", res, "resolution")->check(CLI::Range(8, 1024));
  make->add_option("--dist", dist, "distribution")->check(CLI::IsMember({"standard", "face-heavy"}));
  make->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a generator/discriminator pair");
  train->add_option("--config", tf.config, "key = value config file");
  train->add_option("--data", tf.data, "dataset directory")->required();
  train->add_option("--out", tf.out, "run directory")->required();
  train->add_option("--init-from", tf.init_from, "checkpoint to initialize from");
  train->add_option("--init-mode", tf.init_mode, "scratch | transfer | uc_to_pc");
  train->add_option("--kimg", tf.kimg, "training budget in thousands of images");
  train->add_option("--set", tf.sets, "config override key=value (repeatable)");

  auto* gen = app.add_subcommand("generate", "sample a grid from a checkpoint");
  gen->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  int64_t gen_count = 16;
  gen->add_option("--count", gen_count, "number of samples")->capture_default_str();
  gen->add_option("--cols", cols, "grid columns")->check(CLI::PositiveNumber);
  gen->add_option("--poses", poses_dir, "dataset whose poses drive a PC generator");
  gen->add_option("--out", out, "grid PNG")->required();

  auto* invc = app.add_subcommand("invert", "project images into latent stacks");
  invc->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  invc->add_option("--images", images, "PNG files or one dataset directory")->required();
  invc->add_option("--out", out, "latent file (.json)")->required();
  invc->add_option("--grid", grid, "originals over reconstructions PNG");
  invc->add_option("--trace", trace, "loss trace CSV");
  inv.add(invc);

  auto* interp = app.add_subcommand("interpolate", "interpolate between two inverted images");
  interp->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  interp->add_option("--image-a", a, "start image or latent file")->required();
  interp->add_option("--image-b", b, "end image or latent file")->required();
  interp->add_option("--steps", steps, "intervals; the grid has steps + 1 cells");
  interp->add_option("--out", out, "grid PNG")->required();
  InversionFlags inv_interp;
  inv_interp.add(interp, "--inversion-steps");

  auto* tryon = app.add_subcommand("try-on", "person P wearing the garment of S");
  tryon->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  tryon->add_option("--target", a, "person image or latent file")->required();
  tryon->add_option("--source", b, "garment image or latent file")->required();
  tryon->add_option("--k", k, "rows taken from the target (default: 6/14 of the stack)");
  tryon->add_option("--out", out, "output PNG")->required();
  tryon->add_option("--grid", grid, "reconstructions and result PNG");
  InversionFlags inv_try;
  inv_try.add(tryon, "--inversion-steps");

  auto* mix = app.add_subcommand("mix", "layer-split mixing of two latents");
  mix->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  mix->add_option("--pose-src", a, "pose source image or latent file")->required();
  mix->add_option("--style-src", b, "style source image or latent file")->required();
  mix->add_option("--k", k, "rows taken from the pose source")->required();
  mix->add_option("--out", out, "output PNG")->required();
  mix->add_option("--grid", grid, "reconstructions and result PNG");
  InversionFlags inv_mix;
  inv_mix.add(mix, "--inversion-steps");

  auto* fidc = app.add_subcommand("fid", "Frechet distance between two image sources");
  fidc->add_option("--real", real_dir, "real dataset directory")->required();
  fidc->add_option("--fake", fake_dir, "fake dataset directory");
  fidc->add_option("--ckpt", ckpt, "checkpoint to sample fakes from");
  fidc->add_option("--count", count, "images per side (default: whole real set)");

  auto* report = app.add_subcommand("report", "align FID curves of several runs");
  report->add_option("--runs", runs, "run directories or fid.csv files")->required();
  report->add_option("--out", out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*make) return cmd_make_data(count, res, dist, out, common);
    if (*train) return cmd_train(tf, common, app.count("--seed") > 0);
    if (*gen) return cmd_generate(ckpt, gen_count, cols, poses_dir, out, common);
    if (*invc) return cmd_invert(ckpt, images, inv, out, grid, trace, common);
    if (*interp) return cmd_interpolate(ckpt, a, b, steps, inv_interp, out, common);
    if (*tryon) return cmd_mix(ckpt, a, b, k, true, inv_try, out, grid, common);
    if (*mix) return cmd_mix(ckpt, a, b, k, false, inv_mix, out, grid, common);
    if (*fidc) return cmd_fid(real_dir, fake_dir, ckpt, count, common);
    if (*report) return cmd_report(runs, out);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
