#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/spatial.hpp"

namespace pcu {

struct Patch {
  std::vector<Index> members;  // members[0] is the seed
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;

  Normalization transform() const { return {centroid, scale}; }
};

struct PatchSet {
  std::vector<Patch> patches;
  Index source_size = 0;
};

// Overlap factor 2: enough seeds that the patches cover the cloud about twice.
inline Index default_patch_count(Index n, Index patch_size) {
  return std::max<Index>(1, (2 * n + patch_size - 1) / patch_size);
}

// Seeds num_patches patches by FPS (from index 0); each patch is its seed plus
// the seed's patch_size - 1 nearest other points. If a point is left
// uncovered, FPS continues over the uncovered points until every index
// belongs to some patch, so the result may hold more than num_patches.
inline PatchSet extract_patches(const PointCloud& cloud, Index patch_size, Index num_patches) {
  const Index n = cloud.size();
  detail::require(patch_size >= 1, "extract_patches: patch_size must be positive");
  detail::require(patch_size <= n, "extract_patches: patch_size exceeds cloud size");
  detail::require(num_patches >= 1, "extract_patches: num_patches must be positive");

  const std::vector<Index> fps = farthest_point_sample(cloud.positions, std::min(num_patches, n), 0);
  std::vector<Index> seeds(fps.begin(), fps.end());

  PatchSet out;
  out.source_size = n;
  std::vector<char> covered(static_cast<std::size_t>(n), 0);
  // Seed-to-point distances for continuing FPS over uncovered points.
  std::vector<double> seed_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());

  auto build = [&](Index seed) {
    Patch patch;
    patch.members.push_back(seed);
    if (patch_size > 1) {
      const Points query = cloud.positions.row(seed);
      const NeighborIndex nn = knn_search(cloud.positions, query, patch_size, false);
      for (Index j = 0; j < patch_size && static_cast<Index>(patch.members.size()) < patch_size; ++j) {
        if (nn.index(0, j) != seed) patch.members.push_back(nn.index(0, j));
      }
    }
    Points pos(patch_size, 3);
    for (Index j = 0; j < patch_size; ++j) {
      const Index m = patch.members[static_cast<std::size_t>(j)];
      pos.row(j) = cloud.positions.row(m);
      covered[static_cast<std::size_t>(m)] = 1;
    }
    const Normalization t = compute_normalization(pos);
    patch.centroid = t.centroid;
    patch.scale = t.scale;
    for (Index i = 0; i < n; ++i) {
      seed_dist[static_cast<std::size_t>(i)] = std::min(
          seed_dist[static_cast<std::size_t>(i)], detail::sq_distance(cloud.positions, i, cloud.positions, seed));
    }
    out.patches.push_back(std::move(patch));
  };

  for (Index seed : seeds) build(seed);
  for (;;) {
    Index next = -1;
    double best = -1.0;
    for (Index i = 0; i < n; ++i) {
      if (!covered[static_cast<std::size_t>(i)] && seed_dist[static_cast<std::size_t>(i)] > best) {
        best = seed_dist[static_cast<std::size_t>(i)];
        next = i;
      }
    }
    if (next < 0) break;
    build(next);
  }
  return out;
}

struct UpsampledPatch {
  PointCloud cloud;         // in the patch's normalized frame
  Normalization transform;  // maps the normalized frame back to model units
};

struct MergedCloud {
  PointCloud cloud;
  // Per output point: the patch it came from and its row within that patch.
  std::vector<std::pair<Index, Index>> provenance;
};

// De-normalizes every patch, concatenates them and reduces the union to
// exactly target_count points with FPS from the first merged point. Normals
// travel with their points and are renormalized.
inline MergedCloud merge_and_consolidate(const std::vector<UpsampledPatch>& patches, Index target_count) {
  detail::require(target_count >= 1, "merge_and_consolidate: target_count must be positive");
  Index total = 0;
  for (const auto& p : patches) total += p.cloud.size();
  detail::require(total >= target_count, "merge_and_consolidate: " + std::to_string(total) +
                                             " merged points cannot provide " + std::to_string(target_count));

  PointCloud merged(total);
  std::vector<std::pair<Index, Index>> origin;
  origin.reserve(static_cast<std::size_t>(total));
  Index row = 0;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const PointCloud& c = patches[p].cloud;
    merged.positions.middleRows(row, c.size()) = invert(patches[p].transform, c.positions);
    merged.normals.middleRows(row, c.size()) = c.normals;
    for (Index j = 0; j < c.size(); ++j) origin.emplace_back(static_cast<Index>(p), j);
    row += c.size();
  }

  const std::vector<Index> keep = farthest_point_sample(merged.positions, target_count, 0);
  MergedCloud out;
  out.cloud = select(merged, keep);
  renormalize_normals(out.cloud.normals);
  out.provenance.reserve(keep.size());
  for (Index i : keep) out.provenance.push_back(origin[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace pcu
