#pragma once

#include <algorithm>
#include <vector>

#include "togan/pose.hpp"

namespace togan {

/// In-memory image batch source: N x 3 x R x R pixels in [-1, 1] with one
/// keypoint record per image.
struct ImageSet {
  int resolution = 0;
  Tensor<float> images;
  std::vector<PoseKeypoints> poses;

  int64_t size() const { return images.rank() ? images.dim(0) : 0; }
  int64_t pixels_per_image() const { return 3LL * resolution * resolution; }

  Tensor<float> gather(const std::vector<int64_t>& idx) const {
    const int64_t per = pixels_per_image();
    Tensor<float> out(Shape{static_cast<int64_t>(idx.size()), 3, resolution, resolution});
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= size()) throw ContractError("image index out of range");
      std::copy_n(images.data() + idx[i] * per, per, out.data() + static_cast<int64_t>(i) * per);
    }
    return out;
  }

  std::vector<PoseKeypoints> gather_poses(const std::vector<int64_t>& idx) const {
    std::vector<PoseKeypoints> out;
    for (int64_t i : idx) out.push_back(poses.at(static_cast<size_t>(i)));
    return out;
  }

  Tensor<float> slice(int64_t start, int64_t count) const {
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
    return gather(idx);
  }

  ImageSet subset(int64_t start, int64_t count) const {
    ImageSet s;
    s.resolution = resolution;
    s.images = slice(start, count);
    s.poses.assign(poses.begin() + start, poses.begin() + start + count);
    return s;
  }

  /// FNV-1a over the pixel bytes; keys cached statistics.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ULL ^ static_cast<uint64_t>(resolution);
    const auto* p = reinterpret_cast<const unsigned char*>(images.data());
    for (size_t i = 0; i < images.vec().size() * sizeof(float); ++i) h = (h ^ p[i]) * 1099511628211ULL;
    return h;
  }
};

}  // namespace togan
