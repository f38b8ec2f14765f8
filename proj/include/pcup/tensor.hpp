#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pcup/errors.hpp"

namespace pcup {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

std::string shape_str(const Shape& s);
Index shape_size(const Shape& s);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value on the gradient tape. `backprop` scatters this node's
// grad into the grads of `parents`.
struct Node {
  Shape shape;
  Eigen::VectorXd data;  // row-major flat storage
  Eigen::VectorXd grad;  // allocated on demand, same length as data
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void()> backprop;

  Index size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad = Eigen::VectorXd::Zero(data.size());
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor from_matrix(const Eigen::Ref<const MatRM>& m,
                            bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  Index rank() const { return static_cast<Index>(n_->shape.size()); }
  Index extent(int axis) const { return n_->shape.at(axis); }
  Index size() const { return n_->size(); }
  bool requires_grad() const { return n_->requires_grad; }

  double value() const;  // scalar tensors only
  const Eigen::VectorXd& data() const { return n_->data; }
  Eigen::VectorXd& mutable_data() { return n_->data; }
  const Eigen::VectorXd& grad() const;
  bool has_grad() const { return n_->grad.size() == n_->data.size(); }
  void zero_grad();

  // Rank-1/2 view of the flat storage as rows x cols.
  CMapM matrix() const;
  MapM mutable_matrix();

  detail::NodePtr node() const { return n_; }
  explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}

 private:
  detail::NodePtr n_;
};

// Reverse topological order over the subgraph reachable from a root.
class GradientTape {
 public:
  explicit GradientTape(const detail::NodePtr& root);
  const std::vector<detail::Node*>& reverse_order() const { return order_; }

 private:
  std::vector<detail::Node*> order_;
  std::vector<detail::NodePtr> keepalive_;
};

// --- differentiable operations -------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
// Rank-3 [N,K,C]: softmax over the K axis independently per (n,c).
Tensor softmax_neighbors(const Tensor& x);
Tensor max_pool_points(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Interleaved duplication: output rows r*n .. r*n+r-1 all equal input row n.
Tensor duplicate_points(const Tensor& x, Index r);
// Transposed 1-D convolution with kernel size r, stride r along the point
// axis: out[r*n+k, j] = sum_i x[n,i] * w[k,i,j] + b[j].
Tensor deconv1d_points(const Tensor& x, const Tensor& w, const Tensor& b, Index r);
Tensor gather_rows(const Tensor& x, const Eigen::MatrixXi& idx);
// [N,C] center minus [N,K,C] neighbors: out[n,j,:] = c[n,:] - nbr[n,j,:].
Tensor center_minus_neighbors(const Tensor& center, const Tensor& neighbors);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor sum_neighbors(const Tensor& x);  // [N,K,C] -> [N,C]
Tensor sum_all(const Tensor& x);        // -> scalar
Tensor reshape(const Tensor& x, Shape shape);

// Populates grads of every requires_grad tensor reachable from `loss`.
// Repeated calls without zero_grad accumulate.
void backward(const Tensor& loss);

}  // namespace pcup
