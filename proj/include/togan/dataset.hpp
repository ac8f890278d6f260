#pragma once

#include <optional>
#include <string>
#include <vector>

#include "togan/imageset.hpp"
#include "togan/sprites.hpp"

namespace togan {

inline constexpr int kDatasetVersion = 1;

struct DatasetRecord {
  std::string image;  // path relative to the dataset directory
  PoseKeypoints keypoints;
  std::optional<SpriteSpec> spec;
};

struct DatasetManifest {
  int version = kDatasetVersion;
  int resolution = 0;
  std::vector<DatasetRecord> records;

  int64_t count() const { return static_cast<int64_t>(records.size()); }
};

struct Dataset {
  DatasetManifest manifest;
  ImageSet data;
};

/// Spec i is drawn from its own stream keyed by (seed, i), so any prefix of a
/// larger draw is identical to a smaller draw.
std::vector<SpriteSpec> sample_specs(int64_t count, uint64_t seed, SpriteDistribution dist);
/// Renders specs in memory (no 8-bit quantization).
ImageSet render_set(const std::vector<SpriteSpec>& specs, int resolution);

/// Writes `images/NNNNNN.png`, `keypoints.jsonl` and `manifest.json` into a
/// sibling temp directory and renames it to `dir`.
void write_dataset(const std::vector<SpriteSpec>& specs, int resolution, const std::string& dir);
/// Same layout for arbitrary images with keypoints.
void write_image_dataset(const ImageSet& set, const std::string& dir,
                         const std::vector<std::optional<SpriteSpec>>& specs = {});

/// Validates the manifest against the files; errors name the record index.
Dataset read_dataset(const std::string& dir);

/// Seeded permutation of [0, n).
std::vector<int64_t> iteration_order(int64_t n, uint64_t seed);

}  // namespace togan
