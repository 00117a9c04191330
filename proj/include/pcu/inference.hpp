#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcu/network.hpp"
#include "pcu/patches.hpp"
#include "pcu/point_cloud.hpp"

namespace pcu {

struct UpsampleOptions {
  Index patch_size = 0;  // 0: the network's training patch size
  // Receives diagnostics such as the whole-cloud fallback warning.
  std::function<void(const std::string&)> warn;
};

struct UpsampleResult {
  PointCloud cloud;
  std::vector<std::pair<Index, Index>> provenance;  // (patch, row within that patch's output)
  Index patches = 0;
  std::size_t degenerate_normals = 0;
};

// Patch-based upsampling of a whole cloud to exactly up_ratio * n points.
// Patches are seeded by FPS from index 0, normalized, run through the
// network, mapped back and merged; FPS reduces the union to the target size.
inline UpsampleResult upsample_cloud(const PointCloud& cloud, const net::Network& network,
                                     const UpsampleOptions& options = {}) {
  validate(cloud, "upsample input");
  const Index n = cloud.size();
  Index patch_size = options.patch_size > 0 ? options.patch_size : network.config().patch_size;
  if (n < patch_size) {
    if (options.warn) {
      options.warn("cloud has " + std::to_string(n) + " points, fewer than patch size " + std::to_string(patch_size) +
                   "; upsampling it as a single patch");
    }
    patch_size = n;
  }

  // A patch spanning the whole cloud is used once.
  const Index count = patch_size == n ? 1 : default_patch_count(n, patch_size);
  const PatchSet set = extract_patches(cloud, patch_size, count);
  std::vector<UpsampledPatch> outputs;
  outputs.reserve(set.patches.size());
  UpsampleResult result;
  for (const Patch& patch : set.patches) {
    const NormalizedPatch local = normalize_patch(select(cloud, patch.members));
    const net::Prediction pred = net::predict_normalized(network.predict(net::to_input(local.cloud)));
    result.degenerate_normals += pred.degenerate_normals;
    outputs.push_back({pred.cloud, local.transform});
  }
  MergedCloud merged = merge_and_consolidate(outputs, network.config().up_ratio * n);
  result.cloud = std::move(merged.cloud);
  result.provenance = std::move(merged.provenance);
  result.patches = static_cast<Index>(set.patches.size());
  return result;
}

}  // namespace pcu
