#include "togan/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "togan/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace togan {

std::vector<SpriteSpec> sample_specs(int64_t count, uint64_t seed, SpriteDistribution dist) {
  std::vector<SpriteSpec> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    out.push_back(sample_spec(rng, dist));
  }
  return out;
}

ImageSet render_set(const std::vector<SpriteSpec>& specs, int resolution) {
  ImageSet set;
  set.resolution = resolution;
  set.images = Tensor<float>(Shape{static_cast<int64_t>(specs.size()), 3, resolution, resolution});
  const int64_t per = set.pixels_per_image();
  for (size_t i = 0; i < specs.size(); ++i) {
    auto sp = render_sprite(specs[i], resolution);
    std::copy(sp.image.vec().begin(), sp.image.vec().end(), set.images.data() + static_cast<int64_t>(i) * per);
    set.poses.push_back(std::move(sp.keypoints));
  }
  return set;
}

namespace {

json joints_json(const PoseKeypoints& kp) {
  json arr = json::array();
  for (const auto& j : kp.joints) arr.push_back({j.x, j.y, j.visible});
  return arr;
}

std::string image_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06lld.png", static_cast<long long>(i));
  return buf;
}

}  // namespace

void write_image_dataset(const ImageSet& set, const std::string& dir, const std::vector<std::optional<SpriteSpec>>& specs) {
  if (set.size() != static_cast<int64_t>(set.poses.size())) throw ContractError("dataset needs one pose per image");
  if (!specs.empty() && specs.size() != set.poses.size()) throw ContractError("dataset needs one spec per image");
  const fs::path target(dir), tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "images");
  json records = json::array();
  std::ofstream kp(tmp / "keypoints.jsonl");
  const int64_t per = set.pixels_per_image();
  for (int64_t i = 0; i < set.size(); ++i) {
    const std::string name = image_name(i);
    Tensor<float> img(Shape{3, set.resolution, set.resolution});
    std::copy_n(set.images.data() + i * per, per, img.data());
    write_png((tmp / name).string(), img);
    const auto& pose = set.poses[static_cast<size_t>(i)];
    json rec{{"image", name}, {"keypoints", {{"joints", joints_json(pose)}}}};
    if (!specs.empty() && specs[static_cast<size_t>(i)]) rec["spec"] = json::parse(spec_to_json(*specs[static_cast<size_t>(i)]));
    records.push_back(rec);
    kp << json{{"index", i}, {"image", name}, {"joints", joints_json(pose)}}.dump() << "\n";
  }
  kp.close();
  json manifest{{"format", "togan-dataset"},
                {"version", kDatasetVersion},
                {"count", set.size()},
                {"resolution", set.resolution},
                {"records", records}};
  std::ofstream(tmp / "manifest.json") << manifest.dump(1) << "\n";
  fs::remove_all(target);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::rename(tmp, target);
}

void write_dataset(const std::vector<SpriteSpec>& specs, int resolution, const std::string& dir) {
  std::vector<std::optional<SpriteSpec>> opt(specs.begin(), specs.end());
  write_image_dataset(render_set(specs, resolution), dir, opt);
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf) throw ContractError("no dataset manifest at " + (root / "manifest.json").string());
  json m = json::parse(mf, nullptr, false);
  if (m.is_discarded() || !m.is_object() || m.value("format", "") != "togan-dataset")
    throw ContractError("malformed dataset manifest in " + dir);
  Dataset ds;
  ds.manifest.version = m.value("version", -1);
  if (ds.manifest.version != kDatasetVersion)
    throw ContractError("dataset version " + std::to_string(ds.manifest.version) + " is not supported");
  int64_t count = 0;
  try {
    ds.manifest.resolution = m.at("resolution").get<int>();
    count = m.at("count").get<int64_t>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (!m.contains("records") || !m["records"].is_array() || static_cast<int64_t>(m["records"].size()) != count)
    throw ContractError("dataset manifest count " + std::to_string(count) + " does not match its records");

  const int r = ds.manifest.resolution;
  ds.data.resolution = r;
  ds.data.images = Tensor<float>(Shape{count, 3, r, r});
  const int64_t per = ds.data.pixels_per_image();
  std::ifstream kpf(root / "keypoints.jsonl");
  if (!kpf) throw ContractError("missing keypoints.jsonl in " + dir);
  std::string line;
  for (int64_t i = 0; i < count; ++i) {
    const std::string where = "dataset record " + std::to_string(i) + ": ";
    try {
      const auto& rec = m["records"][static_cast<size_t>(i)];
      DatasetRecord out;
      out.image = rec.at("image").get<std::string>();
      if (!std::getline(kpf, line)) throw ContractError("keypoints.jsonl has fewer lines than records");
      const json kl = json::parse(line);
      if (kl.at("index").get<int64_t>() != i || kl.at("image").get<std::string>() != out.image)
        throw ContractError("keypoints.jsonl line does not match the manifest");
      out.keypoints = keypoints_from_json(json{{"joints", kl.at("joints")}}.dump());
      if (static_cast<int>(out.keypoints.joints.size()) != kNumJoints) throw ContractError("expected 8 joints");
      if (rec.contains("spec")) out.spec = spec_from_json(rec["spec"].dump());
      const fs::path img_path = root / out.image;
      if (!fs::exists(img_path)) throw ContractError("missing image " + out.image);
      const auto img = read_png(img_path.string());
      if (img.dim(1) != r || img.dim(2) != r)
        throw ContractError("image " + out.image + " is " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(1)) +
                            ", manifest says " + std::to_string(r));
      std::copy_n(img.data(), per, ds.data.images.data() + i * per);
      ds.data.poses.push_back(out.keypoints);
      ds.manifest.records.push_back(std::move(out));
    } catch (const ContractError& e) {
      throw ContractError(where + e.what());
    } catch (const json::exception& e) {
      throw ContractError(where + e.what());
    }
  }
  if (std::getline(kpf, line) && !line.empty()) throw ContractError("keypoints.jsonl has more lines than records");
  return ds;
}

std::vector<int64_t> iteration_order(int64_t n, uint64_t seed) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace togan
