#pragma once

#include <Eigen/Dense>
#include <optional>
#include <variant>
#include <vector>

#include "pcup/tensor.hpp"

namespace pcup {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Normalization {
  Eigen::RowVector3d centroid{0, 0, 0};
  double scale = 1.0;
};

struct PointCloud {
  Points pts;
  std::optional<Normalization> norm;

  Index size() const { return pts.rows(); }
};

// Analytic surfaces and meshes for point-to-surface evaluation.
struct Sphere {
  Eigen::RowVector3d center{0, 0, 0};
  double radius = 1.0;
};
struct Plane {  // rectangle [-hx,hx]x[-hy,hy] in z=0, shifted by center
  Eigen::RowVector3d center{0, 0, 0};
  double half_x = 1.0, half_y = 1.0;
};
struct Torus {  // axis along z
  Eigen::RowVector3d center{0, 0, 0};
  double major = 1.0, minor = 0.3;
};
struct Box {
  Eigen::RowVector3d center{0, 0, 0};
  Eigen::RowVector3d half{1, 1, 1};
};
struct TriangleMesh {
  Points verts;
  Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> faces;
};
using Surface = std::variant<Sphere, Plane, Torus, Box, TriangleMesh>;

// Exact k nearest neighbors by Euclidean distance, ascending, ties broken
// by lower index. Brute force for small clouds, grid-accelerated above;
// both paths agree exactly, ties included.
Eigen::MatrixXi knn_indices(const Points& cloud, const Points& queries, int k);

// Greedy farthest point sampling starting from seed_index; each pick
// maximizes the min distance to the chosen set, ties to the lower index.
std::vector<int> farthest_point_sample(const Points& cloud, int m, int seed_index);

// Symmetric Chamfer distance on squared Euclidean distances, mean per set.
double chamfer(const Points& p, const Points& q);

// Differentiable Chamfer against a fixed target; nearest-neighbor matches
// are held fixed at the forward pass (piecewise-constant assignment).
Tensor chamfer_loss(const Tensor& pred, const Points& target);

// Symmetric Hausdorff on Euclidean (non-squared) distances.
double hausdorff(const Points& p, const Points& q);

double surface_distance(const Eigen::RowVector3d& p, const Surface& s);
// Mean unsigned distance from each point to the surface.
double point_to_surface(const Points& p, const Surface& s);

// Centroid to origin, max norm to 1 (scale 1 if all points coincide).
std::pair<PointCloud, Normalization> normalize_to_unit_sphere(const Points& pts);
Points denormalize(const Points& pts, const Normalization& n);

double point_triangle_distance(const Eigen::RowVector3d& p,
                               const Eigen::RowVector3d& a,
                               const Eigen::RowVector3d& b,
                               const Eigen::RowVector3d& c);

}  // namespace pcup
