#include "togan/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace togan {

static_assert(std::endian::native == std::endian::little, "params.bin is written in native little-endian order");

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
  const fs::path target(dir);
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  nlohmann::json index = nlohmann::json::array();
  int64_t offset = 0;
  {
    std::ofstream bin(tmp / "params.bin", std::ios::binary);
    for (const auto& [name, t] : ck.tensors) {
      index.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}, {"count", t.size()}});
      bin.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      offset += t.size() * static_cast<int64_t>(sizeof(float));
    }
    if (!bin) throw std::runtime_error("failed writing " + (tmp / "params.bin").string());
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [n, f] : ck.fid_history) hist.push_back({n, f});
  nlohmann::json m{{"format", "togan-checkpoint"},
                   {"version", ck.version},
                   {"config", ck.config},
                   {"state",
                    {{"step", ck.step}, {"images_seen", ck.images_seen}, {"counters", ck.counters}, {"fid_history", hist}}},
                   {"params", index},
                   {"params_bytes", offset}};
  {
    std::ofstream f(tmp / "manifest.json");
    f << m.dump(2) << "\n";
    if (!f) throw std::runtime_error("failed writing manifest in " + tmp.string());
  }
  fs::remove_all(target);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf) throw ContractError("no checkpoint manifest at " + (root / "manifest.json").string());
  nlohmann::json m = nlohmann::json::parse(mf, nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw ContractError("malformed checkpoint manifest in " + dir);
  if (m.value("format", "") != "togan-checkpoint") throw ContractError("not a checkpoint manifest: " + dir);
  Checkpoint ck;
  ck.version = m.value("version", -1);
  if (ck.version != kCheckpointVersion)
    throw ContractError("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
  try {
    ck.config = m.at("config").get<ConfigMap>();
    const auto& st = m.at("state");
    ck.step = st.at("step").get<int64_t>();
    ck.images_seen = st.at("images_seen").get<int64_t>();
    ck.counters = st.at("counters").get<std::map<std::string, int64_t>>();
    for (const auto& row : st.at("fid_history")) ck.fid_history.emplace_back(row.at(0).get<int64_t>(), row.at(1).get<double>());

    std::ifstream bin(root / "params.bin", std::ios::binary | std::ios::ate);
    if (!bin) throw ContractError("missing params.bin in " + dir);
    const int64_t bytes = static_cast<int64_t>(bin.tellg());
    if (bytes != m.at("params_bytes").get<int64_t>())
      throw ContractError("params.bin size " + std::to_string(bytes) + " does not match manifest");
    for (const auto& e : m.at("params")) {
      if (e.at("dtype").get<std::string>() != "f32") throw ContractError("unsupported dtype in checkpoint");
      Tensor<float> t(e.at("shape").get<Shape>());
      const int64_t off = e.at("offset").get<int64_t>();
      if (t.size() != e.at("count").get<int64_t>() || off < 0 || off + t.size() * 4 > bytes)
        throw ContractError("checkpoint entry " + e.at("name").get<std::string>() + " is inconsistent");
      bin.seekg(off);
      bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace togan
