#pragma once

#include <random>
#include <string>
#include <vector>

#include "pcup/network.hpp"

namespace pcup {

struct Patch {
  PointCloud cloud;       // normalized to the unit sphere
  Normalization inverse;  // transform back to source coordinates
  int seed_index = 0;
};

struct PatchSet {
  std::vector<Patch> patches;
  Index source_size = 0;
};

// n points sampled uniformly by surface area, deterministic under the rng.
Points generate_shape(const Surface& surface, int n, std::mt19937_64& rng);

// Seeds by farthest point sampling; each patch is the patch_size nearest
// neighbors of its seed, normalized to the unit sphere.
PatchSet extract_patches(const Points& cloud, int num_seeds, int patch_size);
// Default seed count: ceil(3*M / patch_size), so every point is covered.
int default_num_seeds(Index cloud_size, int patch_size);

// Patch-based inference: split, upsample each patch through the cascade,
// merge, reduce to exactly r_total*M points with FPS. r_total 16 applies
// the x4 model twice.
Points upsample_cloud(const Points& cloud, const NetworkParams& net, int r_total,
                      bool use_refiner, int patch_size = 256);

struct MetricRecord {
  double cd = 0;
  double hd = 0;
  std::optional<double> p2f;
};

// Metrics after jointly normalizing (gt to unit sphere, same transform
// applied to pred and surface).
MetricRecord evaluate(const Points& pred, const Points& gt,
                      const std::optional<Surface>& surface = std::nullopt);

Surface transform_surface(const Surface& s, const Normalization& n);

// Named toy surfaces for toy:// dataset URIs and tests.
Surface make_toy_surface(const std::string& name);

// Ground-truth training patches cut from synthetic shapes: each shape is
// densely sampled, then patches_per_shape local neighborhoods of gt_size
// points are extracted and normalized to the unit sphere.
std::vector<Points> toy_training_patches(const std::vector<std::string>& shapes,
                                         int patches_per_shape, int gt_size,
                                         uint64_t seed);

}  // namespace pcup
