#include "pcup/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace pcup {

namespace {

constexpr Index kBruteForceLimit = 4096;

struct Cand {
  double d2;
  int idx;
  bool operator<(const Cand& o) const {
    return d2 < o.d2 || (d2 == o.d2 && idx < o.idx);
  }
};

void knn_brute(const Points& cloud, const Eigen::RowVector3d& q, int k,
               std::vector<Cand>& out) {
  const Index m = cloud.rows();
  out.clear();
  out.reserve(m);
  for (Index i = 0; i < m; ++i)
    out.push_back({(cloud.row(i) - q).squaredNorm(), static_cast<int>(i)});
  std::partial_sort(out.begin(), out.begin() + k, out.end());
  out.resize(k);
}

// Exact grid-accelerated search; identical results to knn_brute including
// tie-breaks because candidates are ordered by (d2, idx) and shells are
// expanded until no closer-or-tying point can remain outside.
class GridIndex {
 public:
  GridIndex(const Points& cloud) : cloud_(cloud) {
    lo_ = cloud.colwise().minCoeff();
    Eigen::RowVector3d hi = cloud.colwise().maxCoeff();
    double diag = (hi - lo_).maxCoeff();
    double target_cells = std::cbrt(static_cast<double>(cloud.rows()) / 2.0);
    cell_ = std::max(diag / std::max(target_cells, 1.0), 1e-12);
    for (Index i = 0; i < cloud.rows(); ++i)
      cells_[key(coord(cloud.row(i)))].push_back(static_cast<int>(i));
  }

  void query(const Eigen::RowVector3d& q, int k, std::vector<Cand>& best) const {
    best.clear();
    Eigen::Vector3i c0 = coord(q);
    // max shell needed to reach every occupied cell from c0
    Eigen::Vector3i lo_c = coord(lo_);
    Eigen::Vector3i hi_c = coord(cloud_.colwise().maxCoeff());
    int s_max = 1;
    for (int a = 0; a < 3; ++a)
      s_max = std::max({s_max, std::abs(c0[a] - lo_c[a]), std::abs(c0[a] - hi_c[a])});
    for (int s = 0; s <= s_max; ++s) {
      visit_shell(c0, s, [&](const std::vector<int>& pts) {
        for (int i : pts) {
          Cand c{(cloud_.row(i) - q).squaredNorm(), i};
          auto pos = std::lower_bound(best.begin(), best.end(), c);
          if (static_cast<int>(best.size()) < k ||
              pos != best.end()) {
            best.insert(pos, c);
            if (static_cast<int>(best.size()) > k) best.pop_back();
          }
        }
      });
      if (static_cast<int>(best.size()) == k) {
        double safe = static_cast<double>(s) * cell_;
        if (best.back().d2 < safe * safe) break;
      }
    }
  }

 private:
  Eigen::Vector3i coord(const Eigen::RowVector3d& p) const {
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a)
      c[a] = static_cast<int>(std::floor((p[a] - lo_[a]) / cell_));
    return c;
  }

  static int64_t key(const Eigen::Vector3i& c) {
    return (static_cast<int64_t>(c[0]) & 0x1fffff) |
           ((static_cast<int64_t>(c[1]) & 0x1fffff) << 21) |
           ((static_cast<int64_t>(c[2]) & 0x1fffff) << 42);
  }

  template <class F>
  void visit_shell(const Eigen::Vector3i& c0, int s, F&& f) const {
    auto visit = [&](int x, int y, int z) {
      auto it = cells_.find(key({c0[0] + x, c0[1] + y, c0[2] + z}));
      if (it != cells_.end()) f(it->second);
    };
    if (s == 0) {
      visit(0, 0, 0);
      return;
    }
    for (int x = -s; x <= s; ++x)
      for (int y = -s; y <= s; ++y)
        for (int z = -s; z <= s; ++z)
          if (std::max({std::abs(x), std::abs(y), std::abs(z)}) == s)
            visit(x, y, z);
  }

  const Points& cloud_;
  Eigen::RowVector3d lo_;
  double cell_;
  std::unordered_map<int64_t, std::vector<int>> cells_;
};

}  // namespace

Eigen::MatrixXi knn_indices(const Points& cloud, const Points& queries, int k) {
  const Index m = cloud.rows();
  if (k < 1 || k > m)
    throw ArgumentError("knn_indices: k=" + std::to_string(k) +
                        " out of range for cloud of " + std::to_string(m) + " points");
  Eigen::MatrixXi idx(queries.rows(), k);
  std::vector<Cand> best;
  if (m <= kBruteForceLimit) {
    for (Index qi = 0; qi < queries.rows(); ++qi) {
      knn_brute(cloud, queries.row(qi), k, best);
      for (int j = 0; j < k; ++j) idx(qi, j) = best[j].idx;
    }
  } else {
    GridIndex grid(cloud);
    for (Index qi = 0; qi < queries.rows(); ++qi) {
      grid.query(queries.row(qi), k, best);
      for (int j = 0; j < k; ++j) idx(qi, j) = best[j].idx;
    }
  }
  return idx;
}

std::vector<int> farthest_point_sample(const Points& cloud, int m, int seed_index) {
  const Index n = cloud.rows();
  if (m < 1 || m > n)
    throw ArgumentError("farthest_point_sample: m=" + std::to_string(m) +
                        " out of range for cloud of " + std::to_string(n) + " points");
  if (seed_index < 0 || seed_index >= n)
    throw ArgumentError("farthest_point_sample: seed_index out of range");
  std::vector<int> picks;
  picks.reserve(m);
  picks.push_back(seed_index);
  Eigen::VectorXd mind = (cloud.rowwise() - cloud.row(seed_index)).rowwise().squaredNorm();
  for (int t = 1; t < m; ++t) {
    int best = 0;
    for (Index i = 1; i < n; ++i)
      if (mind[i] > mind[best]) best = static_cast<int>(i);
    picks.push_back(best);
    Eigen::VectorXd d = (cloud.rowwise() - cloud.row(best)).rowwise().squaredNorm();
    mind = mind.cwiseMin(d);
  }
  return picks;
}

double chamfer(const Points& p, const Points& q) {
  if (p.rows() == 0 || q.rows() == 0)
    throw ArgumentError("chamfer: empty point set");
  double sum_p = 0, sum_q = 0;
  Eigen::VectorXd min_q = Eigen::VectorXd::Constant(q.rows(), std::numeric_limits<double>::infinity());
  for (Index i = 0; i < p.rows(); ++i) {
    Eigen::VectorXd d = (q.rowwise() - p.row(i)).rowwise().squaredNorm();
    sum_p += d.minCoeff();
    min_q = min_q.cwiseMin(d);
  }
  sum_q = min_q.sum();
  return sum_p / static_cast<double>(p.rows()) + sum_q / static_cast<double>(q.rows());
}

Tensor chamfer_loss(const Tensor& pred, const Points& target) {
  if (pred.rank() != 2 || pred.extent(1) != 3)
    throw DimensionError("chamfer_loss: pred must be [N,3], got " + shape_str(pred.shape()));
  const Index n = pred.extent(0);
  const Index m = target.rows();
  if (n == 0 || m == 0) throw ArgumentError("chamfer_loss: empty point set");

  auto pn = pred.node();
  CMapM P(pn->data.data(), n, 3);

  auto nn_p = std::make_shared<std::vector<int>>(n);   // nearest target per pred
  auto nn_q = std::make_shared<std::vector<int>>(m);   // nearest pred per target
  double sum_p = 0;
  Eigen::VectorXd min_q = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVector3d pi = P.row(i);
    Eigen::VectorXd d = (target.rowwise() - pi).rowwise().squaredNorm();
    Index j;
    sum_p += d.minCoeff(&j);
    (*nn_p)[i] = static_cast<int>(j);
    for (Index t = 0; t < m; ++t)
      if (d[t] < min_q[t]) {
        min_q[t] = d[t];
        (*nn_q)[t] = static_cast<int>(i);
      }
  }
  double loss = sum_p / static_cast<double>(n) + min_q.sum() / static_cast<double>(m);

  auto out = std::make_shared<detail::Node>();
  out->shape = {};
  out->data = Eigen::VectorXd::Constant(1, loss);
  out->requires_grad = pn->requires_grad;
  if (out->requires_grad) {
    out->parents = {pn};
    auto tgt = std::make_shared<Points>(target);
    detail::Node* o = out.get();
    out->backprop = [o, pn, tgt, nn_p, nn_q, n, m]() {
      double g = o->grad[0];
      pn->ensure_grad();
      MapM gP(pn->grad.data(), n, 3);
      CMapM P2(pn->data.data(), n, 3);
      double wp = 2.0 * g / static_cast<double>(n);
      double wq = 2.0 * g / static_cast<double>(m);
      for (Index i = 0; i < n; ++i)
        gP.row(i) += wp * (P2.row(i) - tgt->row((*nn_p)[i]));
      for (Index t = 0; t < m; ++t) {
        Index i = (*nn_q)[t];
        gP.row(i) += wq * (P2.row(i) - tgt->row(t));
      }
    };
  }
  return Tensor(out);
}

double hausdorff(const Points& p, const Points& q) {
  if (p.rows() == 0 || q.rows() == 0)
    throw ArgumentError("hausdorff: empty point set");
  double max_p = 0;
  Eigen::VectorXd min_q = Eigen::VectorXd::Constant(q.rows(), std::numeric_limits<double>::infinity());
  for (Index i = 0; i < p.rows(); ++i) {
    Eigen::VectorXd d = (q.rowwise() - p.row(i)).rowwise().squaredNorm();
    max_p = std::max(max_p, d.minCoeff());
    min_q = min_q.cwiseMin(d);
  }
  return std::sqrt(std::max(max_p, min_q.maxCoeff()));
}

double point_triangle_distance(const Eigen::RowVector3d& p,
                               const Eigen::RowVector3d& a,
                               const Eigen::RowVector3d& b,
                               const Eigen::RowVector3d& c) {
  // Ericson, Real-Time Collision Detection, closest point on triangle
  Eigen::RowVector3d ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();
  Eigen::RowVector3d bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }
  Eigen::RowVector3d cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return (p - (a + v * ab + w * ac)).norm();
}

double surface_distance(const Eigen::RowVector3d& p, const Surface& s) {
  return std::visit(
      [&](const auto& surf) -> double {
        using T = std::decay_t<decltype(surf)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return std::abs((p - surf.center).norm() - surf.radius);
        } else if constexpr (std::is_same_v<T, Plane>) {
          Eigen::RowVector3d q = p - surf.center;
          double dx = std::max(std::abs(q[0]) - surf.half_x, 0.0);
          double dy = std::max(std::abs(q[1]) - surf.half_y, 0.0);
          return std::sqrt(dx * dx + dy * dy + q[2] * q[2]);
        } else if constexpr (std::is_same_v<T, Torus>) {
          Eigen::RowVector3d q = p - surf.center;
          double rho = std::hypot(q[0], q[1]);
          double d = std::hypot(rho - surf.major, q[2]);
          return std::abs(d - surf.minor);
        } else if constexpr (std::is_same_v<T, Box>) {
          Eigen::RowVector3d q = (p - surf.center).cwiseAbs() - surf.half;
          if ((q.array() > 0).any()) return q.cwiseMax(0.0).norm();
          return -q.maxCoeff();
        } else {  // TriangleMesh
          if (surf.faces.rows() == 0)
            throw ArgumentError("surface_distance: empty mesh");
          double best = std::numeric_limits<double>::infinity();
          for (Index f = 0; f < surf.faces.rows(); ++f) {
            best = std::min(best, point_triangle_distance(
                                      p, surf.verts.row(surf.faces(f, 0)),
                                      surf.verts.row(surf.faces(f, 1)),
                                      surf.verts.row(surf.faces(f, 2))));
          }
          return best;
        }
      },
      s);
}

double point_to_surface(const Points& p, const Surface& s) {
  if (p.rows() == 0) throw ArgumentError("point_to_surface: empty point set");
  double sum = 0;
  for (Index i = 0; i < p.rows(); ++i) sum += surface_distance(p.row(i), s);
  return sum / static_cast<double>(p.rows());
}

std::pair<PointCloud, Normalization> normalize_to_unit_sphere(const Points& pts) {
  if (pts.rows() == 0)
    throw ArgumentError("normalize_to_unit_sphere: empty point set");
  Normalization rec;
  rec.centroid = pts.colwise().mean();
  Points centered = pts.rowwise() - rec.centroid;
  double maxnorm = centered.rowwise().norm().maxCoeff();
  rec.scale = maxnorm > 0 ? maxnorm : 1.0;
  PointCloud out;
  out.pts = centered / rec.scale;
  out.norm = rec;
  return {std::move(out), rec};
}

Points denormalize(const Points& pts, const Normalization& n) {
  return (pts * n.scale).rowwise() + n.centroid;
}

}  // namespace pcup
