#include "pcup/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace pcup {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index e : s) n *= e;
  return n;
}

namespace {

using detail::Node;
using detail::NodePtr;

NodePtr make_node(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = Eigen::VectorXd::Zero(shape_size(n->shape));
  n->requires_grad = requires_grad;
  return n;
}

// Like make_node but leaves the data uninitialized; callers must fill every
// element.
NodePtr make_node_uninit(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data.resize(shape_size(n->shape));
  n->requires_grad = requires_grad;
  return n;
}

// Result node of an op: requires_grad if any parent does; only then the
// parents and backprop closure are recorded on the tape. Every op writes the
// result in full, so the buffer starts uninitialized.
NodePtr make_result(Shape shape, std::vector<NodePtr> parents,
                    std::function<void()> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = make_node_uninit(std::move(shape), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

CMapM as_matrix(const Node& n, Index rows, Index cols) {
  return CMapM(n.data.data(), rows, cols);
}

MapM grad_matrix(Node& n, Index rows, Index cols) {
  n.ensure_grad();
  return MapM(n.grad.data(), rows, cols);
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
}

void check_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3)
    throw DimensionError(std::string(op) + ": expected rank-3 tensor, got " +
                         shape_str(t.shape()));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
  auto n = make_node_uninit(std::move(shape), requires_grad);
  n->data.setConstant(value);
  return Tensor(n);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (static_cast<Index>(values.size()) != shape_size(shape))
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
  auto n = make_node_uninit(std::move(shape), requires_grad);
  std::copy(values.begin(), values.end(), n->data.data());
  return Tensor(n);
}

Tensor Tensor::from_matrix(const Eigen::Ref<const MatRM>& m, bool requires_grad) {
  auto n = make_node_uninit({m.rows(), m.cols()}, requires_grad);
  MapM(n->data.data(), m.rows(), m.cols()) = m;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  auto n = make_node({}, requires_grad);
  n->data[0] = v;
  return Tensor(n);
}

double Tensor::value() const {
  if (size() != 1)
    throw ArgumentError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return n_->data[0];
}

const Eigen::VectorXd& Tensor::grad() const {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  n_->ensure_grad();
  n_->grad.setZero();
}

CMapM Tensor::matrix() const {
  Index rows, cols;
  if (rank() == 1) {
    rows = 1;
    cols = extent(0);
  } else if (rank() == 2) {
    rows = extent(0);
    cols = extent(1);
  } else {
    throw DimensionError("matrix(): rank must be 1 or 2, shape " + shape_str(shape()));
  }
  return CMapM(n_->data.data(), rows, cols);
}

MapM Tensor::mutable_matrix() {
  auto m = matrix();
  return MapM(n_->data.data(), m.rows(), m.cols());
}

GradientTape::GradientTape(const detail::NodePtr& root) {
  // Iterative postorder DFS; order_ ends up reverse-topological.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  std::vector<Node*> post;
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      NodePtr next = node->parents[child++];
      if (visited.insert(next.get()).second) {
        keepalive_.push_back(next);
        stack.emplace_back(std::move(next), 0);
      }
    } else {
      post.push_back(node.get());
      stack.pop_back();
    }
  }
  order_.assign(post.rbegin(), post.rend());
  keepalive_.push_back(root);
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ArgumentError("backward: loss must be scalar, shape " +
                        shape_str(loss.shape()));
  auto root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  GradientTape tape(root);
  for (Node* n : tape.reverse_order()) {
    if (n->backprop) n->backprop();
  }
}

// --- operations ----------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2(x, "linear");
  check_rank2(w, "linear");
  if (b.rank() != 1)
    throw DimensionError("linear: bias must be rank 1, got " + shape_str(b.shape()));
  const Index n = x.extent(0), cin = x.extent(1);
  const Index cout = w.extent(1);
  if (w.extent(0) != cin || b.extent(0) != cout)
    throw DimensionError("linear: shape mismatch x" + shape_str(x.shape()) +
                         " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
  auto xn = x.node(), wn = w.node(), bn = b.node();
  auto out = make_result({n, cout}, {xn, wn, bn}, nullptr);
  {
    CMapM X = as_matrix(*xn, n, cin);
    CMapM W = as_matrix(*wn, cin, cout);
    MapM Y(out->data.data(), n, cout);
    Y.noalias() = X * W;
    Y.rowwise() += bn->data.transpose();
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, wn, bn, n, cin, cout]() {
      CMapM gY(o->grad.data(), n, cout);
      CMapM X = as_matrix(*xn, n, cin);
      CMapM W = as_matrix(*wn, cin, cout);
      if (xn->requires_grad)
        grad_matrix(*xn, n, cin).noalias() += gY * W.transpose();
      if (wn->requires_grad)
        grad_matrix(*wn, cin, cout).noalias() += X.transpose() * gY;
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad += gY.colwise().sum().transpose();
      }
    };
  }
  return Tensor(out);
}

Tensor relu(const Tensor& x) {
  auto xn = x.node();
  auto out = make_result(x.shape(), {xn}, nullptr);
  out->data = xn->data.cwiseMax(0.0);
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn]() {
      xn->ensure_grad();
      xn->grad.array() +=
          o->grad.array() * (xn->data.array() > 0.0).cast<double>();
    };
  }
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& x) {
  check_rank2(x, "softmax_rows");
  const Index n = x.extent(0), k = x.extent(1);
  if (k < 1) throw ArgumentError("softmax_rows: need at least one column");
  auto xn = x.node();
  auto out = make_result({n, k}, {xn}, nullptr);
  {
    CMapM X = as_matrix(*xn, n, k);
    MapM Y(out->data.data(), n, k);
    for (Index i = 0; i < n; ++i) {
      auto row = X.row(i);
      Eigen::RowVectorXd e = (row.array() - row.maxCoeff()).exp();
      Y.row(i) = e / e.sum();
    }
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, n, k]() {
      CMapM Y(o->data.data(), n, k);
      CMapM gY(o->grad.data(), n, k);
      MapM gX = grad_matrix(*xn, n, k);
      for (Index i = 0; i < n; ++i) {
        double dot = gY.row(i).dot(Y.row(i));
        gX.row(i).array() += Y.row(i).array() * (gY.row(i).array() - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_neighbors(const Tensor& x) {
  check_rank3(x, "softmax_neighbors");
  const Index n = x.extent(0), k = x.extent(1), c = x.extent(2);
  auto xn = x.node();
  auto out = make_result({n, k, c}, {xn}, nullptr);
  for (Index i = 0; i < n; ++i) {
    // block i viewed as K x C, softmax down each column
    CMapM X(xn->data.data() + i * k * c, k, c);
    MapM Y(out->data.data() + i * k * c, k, c);
    Eigen::RowVectorXd mx = X.colwise().maxCoeff();
    Y = (X.rowwise() - mx).array().exp();
    Eigen::RowVectorXd sums = Y.colwise().sum();
    Y.array().rowwise() /= sums.array();
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, n, k, c]() {
      xn->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        CMapM Y(o->data.data() + i * k * c, k, c);
        CMapM gY(o->grad.data() + i * k * c, k, c);
        MapM gX(xn->grad.data() + i * k * c, k, c);
        Eigen::RowVectorXd dots = (gY.array() * Y.array()).colwise().sum();
        gX.array() += Y.array() * (gY.array().rowwise() - dots.array());
      }
    };
  }
  return Tensor(out);
}

Tensor max_pool_points(const Tensor& x) {
  check_rank2(x, "max_pool_points");
  const Index n = x.extent(0), c = x.extent(1);
  if (n < 1) throw ArgumentError("max_pool_points: empty input");
  auto xn = x.node();
  auto out = make_result({c}, {xn}, nullptr);
  auto argmax = std::make_shared<std::vector<Index>>(c);
  {
    CMapM X = as_matrix(*xn, n, c);
    for (Index j = 0; j < c; ++j) {
      Index best = 0;
      for (Index i = 1; i < n; ++i)
        if (X(i, j) > X(best, j)) best = i;  // first index wins ties
      (*argmax)[j] = best;
      out->data[j] = X(best, j);
    }
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, argmax, n, c]() {
      MapM gX = grad_matrix(*xn, n, c);
      for (Index j = 0; j < c; ++j) gX((*argmax)[j], j) += o->grad[j];
    };
  }
  return Tensor(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank2(a, "concat_channels");
  check_rank2(b, "concat_channels");
  const Index n = a.extent(0), ca = a.extent(1), cb = b.extent(1);
  if (b.extent(0) != n)
    throw DimensionError("concat_channels: leading extents differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto out = make_result({n, ca + cb}, {an, bn}, nullptr);
  {
    MapM Y(out->data.data(), n, ca + cb);
    Y.leftCols(ca) = as_matrix(*an, n, ca);
    Y.rightCols(cb) = as_matrix(*bn, n, cb);
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, an, bn, n, ca, cb]() {
      CMapM gY(o->grad.data(), n, ca + cb);
      if (an->requires_grad) grad_matrix(*an, n, ca) += gY.leftCols(ca);
      if (bn->requires_grad) grad_matrix(*bn, n, cb) += gY.rightCols(cb);
    };
  }
  return Tensor(out);
}

Tensor duplicate_points(const Tensor& x, Index r) {
  check_rank2(x, "duplicate_points");
  if (r < 1) throw ArgumentError("duplicate_points: r must be >= 1");
  const Index n = x.extent(0), c = x.extent(1);
  auto xn = x.node();
  auto out = make_result({r * n, c}, {xn}, nullptr);
  {
    CMapM X = as_matrix(*xn, n, c);
    MapM Y(out->data.data(), r * n, c);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < r; ++j) Y.row(i * r + j) = X.row(i);
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, n, c, r]() {
      CMapM gY(o->grad.data(), r * n, c);
      MapM gX = grad_matrix(*xn, n, c);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < r; ++j) gX.row(i) += gY.row(i * r + j);
    };
  }
  return Tensor(out);
}

Tensor deconv1d_points(const Tensor& x, const Tensor& w, const Tensor& b, Index r) {
  check_rank2(x, "deconv1d_points");
  check_rank3(w, "deconv1d_points");
  if (r < 1) throw ArgumentError("deconv1d_points: r must be >= 1");
  const Index n = x.extent(0), cin = x.extent(1);
  const Index cout = w.extent(2);
  if (w.extent(0) != r || w.extent(1) != cin || b.extent(0) != cout)
    throw DimensionError("deconv1d_points: shape mismatch x" + shape_str(x.shape()) +
                         " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()) +
                         " r=" + std::to_string(r));
  auto xn = x.node(), wn = w.node(), bn = b.node();
  auto out = make_result({r * n, cout}, {xn, wn, bn}, nullptr);
  {
    // scalar accumulation in index order, so the result is reproducible
    // against a plain triple-loop evaluation regardless of simd width
    const double* X = xn->data.data();
    const double* W = wn->data.data();
    const double* B = bn->data.data();
    double* Y = out->data.data();
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < r; ++k)
        for (Index j = 0; j < cout; ++j) {
          double acc = 0;
          for (Index c = 0; c < cin; ++c)
            acc += X[i * cin + c] * W[(k * cin + c) * cout + j];
          Y[(i * r + k) * cout + j] = acc + B[j];
        }
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, wn, bn, n, cin, cout, r]() {
      CMapM gY(o->grad.data(), r * n, cout);
      CMapM X = as_matrix(*xn, n, cin);
      for (Index k = 0; k < r; ++k) {
        CMapM Wk(wn->data.data() + k * cin * cout, cin, cout);
        for (Index i = 0; i < n; ++i) {
          auto g = gY.row(i * r + k);
          if (xn->requires_grad)
            grad_matrix(*xn, n, cin).row(i).noalias() += g * Wk.transpose();
          if (wn->requires_grad) {
            wn->ensure_grad();
            MapM gWk(wn->grad.data() + k * cin * cout, cin, cout);
            gWk.noalias() += X.row(i).transpose() * g;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad += g.transpose();
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& x, const Eigen::MatrixXi& idx) {
  check_rank2(x, "gather_rows");
  const Index n = x.extent(0), c = x.extent(1);
  const Index q = idx.rows(), k = idx.cols();
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < k; ++j)
      if (idx(i, j) < 0 || idx(i, j) >= n)
        throw IndexError("gather_rows: index " + std::to_string(idx(i, j)) +
                         " at (" + std::to_string(i) + "," + std::to_string(j) +
                         ") out of range [0," + std::to_string(n) + ")");
  auto xn = x.node();
  auto out = make_result({q, k, c}, {xn}, nullptr);
  {
    CMapM X = as_matrix(*xn, n, c);
    MapM Y(out->data.data(), q * k, c);
    for (Index i = 0; i < q; ++i)
      for (Index j = 0; j < k; ++j) Y.row(i * k + j) = X.row(idx(i, j));
  }
  if (out->requires_grad) {
    Node* o = out.get();
    auto ids = std::make_shared<Eigen::MatrixXi>(idx);
    out->backprop = [o, xn, ids, n, c, q, k]() {
      CMapM gY(o->grad.data(), q * k, c);
      MapM gX = grad_matrix(*xn, n, c);
      for (Index i = 0; i < q; ++i)
        for (Index j = 0; j < k; ++j) gX.row((*ids)(i, j)) += gY.row(i * k + j);
    };
  }
  return Tensor(out);
}

Tensor center_minus_neighbors(const Tensor& center, const Tensor& neighbors) {
  check_rank2(center, "center_minus_neighbors");
  check_rank3(neighbors, "center_minus_neighbors");
  const Index n = center.extent(0), c = center.extent(1);
  const Index k = neighbors.extent(1);
  if (neighbors.extent(0) != n || neighbors.extent(2) != c)
    throw DimensionError("center_minus_neighbors: " + shape_str(center.shape()) +
                         " vs " + shape_str(neighbors.shape()));
  auto cn = center.node(), nn = neighbors.node();
  auto out = make_result({n, k, c}, {cn, nn}, nullptr);
  {
    CMapM C = as_matrix(*cn, n, c);
    CMapM Nb(nn->data.data(), n * k, c);
    MapM Y(out->data.data(), n * k, c);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < k; ++j)
        Y.row(i * k + j) = C.row(i) - Nb.row(i * k + j);
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, cn, nn, n, k, c]() {
      CMapM gY(o->grad.data(), n * k, c);
      if (cn->requires_grad) {
        MapM gC = grad_matrix(*cn, n, c);
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < k; ++j) gC.row(i) += gY.row(i * k + j);
      }
      if (nn->requires_grad) {
        nn->ensure_grad();
        MapM gN(nn->grad.data(), n * k, c);
        gN -= gY;
      }
    };
  }
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto out = make_result(a.shape(), {an, bn}, nullptr);
  out->data = an->data + bn->data;
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, an, bn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad += o->grad;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad += o->grad;
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto out = make_result(a.shape(), {an, bn}, nullptr);
  out->data = an->data.cwiseProduct(bn->data);
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, an, bn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad += o->grad.cwiseProduct(bn->data);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad += o->grad.cwiseProduct(an->data);
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& x, double s) {
  auto xn = x.node();
  auto out = make_result(x.shape(), {xn}, nullptr);
  out->data = s * xn->data;
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, s]() {
      xn->ensure_grad();
      xn->grad += s * o->grad;
    };
  }
  return Tensor(out);
}

Tensor sum_neighbors(const Tensor& x) {
  check_rank3(x, "sum_neighbors");
  const Index n = x.extent(0), k = x.extent(1), c = x.extent(2);
  auto xn = x.node();
  auto out = make_result({n, c}, {xn}, nullptr);
  {
    MapM Y(out->data.data(), n, c);
    CMapM X(xn->data.data(), n * k, c);
    for (Index i = 0; i < n; ++i) Y.row(i) = X.middleRows(i * k, k).colwise().sum();
  }
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn, n, k, c]() {
      CMapM gY(o->grad.data(), n, c);
      xn->ensure_grad();
      MapM gX(xn->grad.data(), n * k, c);
      for (Index i = 0; i < n; ++i)
        gX.middleRows(i * k, k).rowwise() += gY.row(i);
    };
  }
  return Tensor(out);
}

Tensor sum_all(const Tensor& x) {
  auto xn = x.node();
  auto out = make_result({}, {xn}, nullptr);
  out->data[0] = xn->data.sum();
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn]() {
      xn->ensure_grad();
      xn->grad.array() += o->grad[0];
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  auto xn = x.node();
  auto out = make_result(std::move(shape), {xn}, nullptr);
  out->data = xn->data;
  if (out->requires_grad) {
    Node* o = out.get();
    out->backprop = [o, xn]() {
      xn->ensure_grad();
      xn->grad += o->grad;
    };
  }
  return Tensor(out);
}

}  // namespace pcup
