#include "pcup/pipeline.hpp"

#include <cmath>
#include <numbers>

namespace pcup {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Points sample_sphere(const Sphere& s, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  Points pts(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVector3d d(g(rng), g(rng), g(rng));
    while (d.norm() < 1e-12) d = {g(rng), g(rng), g(rng)};
    pts.row(i) = s.center + s.radius * d.normalized();
  }
  return pts;
}

Points sample_plane(const Plane& p, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(-p.half_x, p.half_x);
  std::uniform_real_distribution<double> uy(-p.half_y, p.half_y);
  Points pts(n, 3);
  for (int i = 0; i < n; ++i)
    pts.row(i) = p.center + Eigen::RowVector3d(ux(rng), uy(rng), 0);
  return pts;
}

Points sample_torus(const Torus& t, int n, std::mt19937_64& rng) {
  // area element ~ (R + r cos v); rejection-sample v against that density
  std::uniform_real_distribution<double> ang(0, kTwoPi);
  std::uniform_real_distribution<double> unit(0, 1);
  double ratio = t.minor / t.major;
  Points pts(n, 3);
  for (int i = 0; i < n; ++i) {
    double u = ang(rng);
    double v;
    do {
      v = ang(rng);
    } while (unit(rng) >= (1 + ratio * std::cos(v)) / (1 + ratio));
    double w = t.major + t.minor * std::cos(v);
    pts.row(i) = t.center + Eigen::RowVector3d(w * std::cos(u), w * std::sin(u),
                                               t.minor * std::sin(v));
  }
  return pts;
}

Points sample_box(const Box& b, int n, std::mt19937_64& rng) {
  // faces weighted by area, then uniform on the chosen face
  double ax = b.half[1] * b.half[2];
  double ay = b.half[0] * b.half[2];
  double az = b.half[0] * b.half[1];
  std::discrete_distribution<int> face({ax, ax, ay, ay, az, az});
  std::uniform_real_distribution<double> unit(-1, 1);
  Points pts(n, 3);
  for (int i = 0; i < n; ++i) {
    int f = face(rng);
    int axis = f / 2;
    double sign = (f % 2) ? -1.0 : 1.0;
    Eigen::RowVector3d p;
    for (int a = 0; a < 3; ++a)
      p[a] = a == axis ? sign * b.half[a] : unit(rng) * b.half[a];
    pts.row(i) = b.center + p;
  }
  return pts;
}

Points sample_mesh(const TriangleMesh& m, int n, std::mt19937_64& rng) {
  if (m.faces.rows() == 0) throw ArgumentError("generate_shape: empty mesh");
  std::vector<double> areas(m.faces.rows());
  for (Index f = 0; f < m.faces.rows(); ++f) {
    Eigen::RowVector3d a = m.verts.row(m.faces(f, 0));
    Eigen::RowVector3d b = m.verts.row(m.faces(f, 1));
    Eigen::RowVector3d c = m.verts.row(m.faces(f, 2));
    areas[f] = 0.5 * (b - a).cross(c - a).norm();
  }
  std::discrete_distribution<int> face(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0, 1);
  Points pts(n, 3);
  for (int i = 0; i < n; ++i) {
    int f = face(rng);
    double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
    Eigen::RowVector3d a = m.verts.row(m.faces(f, 0));
    Eigen::RowVector3d b = m.verts.row(m.faces(f, 1));
    Eigen::RowVector3d c = m.verts.row(m.faces(f, 2));
    pts.row(i) = (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c;
  }
  return pts;
}

}  // namespace

Points generate_shape(const Surface& surface, int n, std::mt19937_64& rng) {
  if (n < 1) throw ArgumentError("generate_shape: n must be >= 1");
  return std::visit(
      [&](const auto& s) -> Points {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) return sample_sphere(s, n, rng);
        else if constexpr (std::is_same_v<T, Plane>) return sample_plane(s, n, rng);
        else if constexpr (std::is_same_v<T, Torus>) return sample_torus(s, n, rng);
        else if constexpr (std::is_same_v<T, Box>) return sample_box(s, n, rng);
        else return sample_mesh(s, n, rng);
      },
      surface);
}

int default_num_seeds(Index cloud_size, int patch_size) {
  return static_cast<int>((3 * cloud_size + patch_size - 1) / patch_size);
}

PatchSet extract_patches(const Points& cloud, int num_seeds, int patch_size) {
  const Index m = cloud.rows();
  if (patch_size < 1 || patch_size > m)
    throw ArgumentError("extract_patches: patch_size " + std::to_string(patch_size) +
                        " out of range for cloud of " + std::to_string(m) + " points");
  if (num_seeds < 1) throw ArgumentError("extract_patches: num_seeds must be >= 1");
  num_seeds = static_cast<int>(std::min<Index>(num_seeds, m));
  auto seeds = farthest_point_sample(cloud, num_seeds, 0);
  Points seed_pts(num_seeds, 3);
  for (int i = 0; i < num_seeds; ++i) seed_pts.row(i) = cloud.row(seeds[i]);
  Eigen::MatrixXi nbrs = knn_indices(cloud, seed_pts, patch_size);

  PatchSet set;
  set.source_size = m;
  for (int i = 0; i < num_seeds; ++i) {
    Points raw(patch_size, 3);
    for (int j = 0; j < patch_size; ++j) raw.row(j) = cloud.row(nbrs(i, j));
    auto [normalized, rec] = normalize_to_unit_sphere(raw);
    set.patches.push_back({std::move(normalized), rec, seeds[i]});
  }
  return set;
}

namespace {

int stages_to_run(const NetworkParams& net, bool use_refiner) {
  if (use_refiner) return net.num_stages();
  int n = 0;
  while (n < net.num_stages() && net.configs[n].r > 1) ++n;
  return std::max(n, 1);
}

Points upsample_once(const Points& cloud, const NetworkParams& net,
                     bool use_refiner, int patch_size) {
  const Index m = cloud.rows();
  int k_needed = 1;
  for (const auto& c : net.configs)
    if (c.extractor == ExtractorKind::transformer)
      k_needed = std::max(k_needed, c.k_attention);
  if (m < k_needed)
    throw ArgumentError("upsample_cloud: cloud of " + std::to_string(m) +
                        " points is smaller than k_attention=" +
                        std::to_string(k_needed));
  int ps = static_cast<int>(std::min<Index>(patch_size, m));
  PatchSet set = extract_patches(cloud, default_num_seeds(m, ps), ps);

  int limit = stages_to_run(net, use_refiner);
  int rate = 1;
  for (int s = 0; s < limit; ++s) rate *= net.configs[s].r;

  Points merged(static_cast<Index>(set.patches.size()) * ps * rate, 3);
  Index row = 0;
  for (const auto& patch : set.patches) {
    Tensor pts = Tensor::from_matrix(patch.cloud.pts);
    auto outputs = cascade_forward(pts, net, limit);
    const Tensor& out = outputs.back();
    Points up(out.extent(0), 3);
    MapM(up.data(), up.rows(), 3) = out.matrix();
    merged.middleRows(row, up.rows()) = denormalize(up, patch.inverse);
    row += up.rows();
  }
  auto picks = farthest_point_sample(merged, static_cast<int>(rate * m), 0);
  Points out(picks.size(), 3);
  for (size_t i = 0; i < picks.size(); ++i) out.row(i) = merged.row(picks[i]);
  return out;
}

}  // namespace

Points upsample_cloud(const Points& cloud, const NetworkParams& net, int r_total,
                      bool use_refiner, int patch_size) {
  if (r_total != 4 && r_total != 16)
    throw ArgumentError("upsample_cloud: rate must be 4 or 16, got " +
                        std::to_string(r_total));
  int pass_rate = 1;
  for (int s = 0; s < stages_to_run(net, use_refiner); ++s)
    pass_rate *= net.configs[s].r;
  if (pass_rate != 4)
    throw ArgumentError("upsample_cloud: checkpoint upsamples x" +
                        std::to_string(pass_rate) + " per pass, expected x4");
  Points out = upsample_once(cloud, net, use_refiner, patch_size);
  if (r_total == 16) out = upsample_once(out, net, use_refiner, patch_size);
  return out;
}

Surface transform_surface(const Surface& s, const Normalization& n) {
  Surface out = s;
  std::visit(
      [&](auto& surf) {
        using T = std::decay_t<decltype(surf)>;
        if constexpr (std::is_same_v<T, TriangleMesh>) {
          surf.verts = (surf.verts.rowwise() - n.centroid) / n.scale;
        } else {
          surf.center = (surf.center - n.centroid) / n.scale;
          if constexpr (std::is_same_v<T, Sphere>) {
            surf.radius /= n.scale;
          } else if constexpr (std::is_same_v<T, Plane>) {
            surf.half_x /= n.scale;
            surf.half_y /= n.scale;
          } else if constexpr (std::is_same_v<T, Torus>) {
            surf.major /= n.scale;
            surf.minor /= n.scale;
          } else if constexpr (std::is_same_v<T, Box>) {
            surf.half /= n.scale;
          }
        }
      },
      out);
  return out;
}

MetricRecord evaluate(const Points& pred, const Points& gt,
                      const std::optional<Surface>& surface) {
  if (pred.rows() == 0 || gt.rows() == 0)
    throw ArgumentError("evaluate: empty point set");
  auto [gt_norm, rec] = normalize_to_unit_sphere(gt);
  Points pred_norm = (pred.rowwise() - rec.centroid) / rec.scale;
  MetricRecord out;
  out.cd = chamfer(pred_norm, gt_norm.pts);
  out.hd = hausdorff(pred_norm, gt_norm.pts);
  if (surface)
    out.p2f = point_to_surface(pred_norm, transform_surface(*surface, rec));
  return out;
}

Surface make_toy_surface(const std::string& name) {
  if (name == "sphere") return Sphere{{0, 0, 0}, 1.0};
  if (name == "torus") return Torus{{0, 0, 0}, 1.0, 0.375};
  if (name == "box") return Box{{0, 0, 0}, {0.8, 0.6, 0.5}};
  if (name == "plane") return Plane{{0, 0, 0}, 1.0, 1.0};
  if (name == "sphere_small") return Sphere{{0, 0, 0}, 0.7};
  if (name == "torus_thin") return Torus{{0, 0, 0}, 1.2, 0.25};
  if (name == "box_flat") return Box{{0, 0, 0}, {1.0, 0.9, 0.3}};
  throw ArgumentError("unknown toy surface '" + name +
                      "' (sphere, torus, box, plane, sphere_small, torus_thin, "
                      "box_flat)");
}

std::vector<Points> toy_training_patches(const std::vector<std::string>& shapes,
                                         int patches_per_shape, int gt_size,
                                         uint64_t seed) {
  if (shapes.empty()) throw ArgumentError("toy_training_patches: no shapes");
  std::mt19937_64 rng(seed);
  std::vector<Points> patches;
  for (const auto& name : shapes) {
    Surface surf = make_toy_surface(name);
    int cloud_size = std::max(4 * gt_size, patches_per_shape * gt_size / 3);
    Points cloud = generate_shape(surf, cloud_size, rng);
    PatchSet set = extract_patches(cloud, patches_per_shape, gt_size);
    for (auto& p : set.patches) patches.push_back(std::move(p.cloud.pts));
  }
  return patches;
}

}  // namespace pcup
