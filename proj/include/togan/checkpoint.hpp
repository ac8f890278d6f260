#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "togan/config.hpp"
#include "togan/tensor.hpp"

namespace togan {

inline constexpr int kCheckpointVersion = 1;

/// Snapshot of named f32 tensors plus scalar training state.
struct Checkpoint {
  int version = kCheckpointVersion;
  ConfigMap config;
  int64_t step = 0;
  int64_t images_seen = 0;
  std::map<std::string, int64_t> counters;  // optimizer step counts etc.
  std::vector<std::pair<int64_t, double>> fid_history;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;  // index order

  const Tensor<float>* find(const std::string& name) const;
};

/// Writes `dir/manifest.json` and `dir/params.bin` via a sibling temp
/// directory renamed into place, replacing any previous checkpoint there.
void save_checkpoint(const std::string& dir, const Checkpoint& ck);
/// Throws ContractError on a missing directory, malformed manifest,
/// size mismatch or unsupported version.
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace togan
