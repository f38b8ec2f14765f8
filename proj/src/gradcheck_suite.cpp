#include "pcup/gradcheck_suite.hpp"

#include <random>

#include "pcup/network.hpp"
#include "pcup/training.hpp"

namespace pcup {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> d(-1, 1);
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (Index i = 0; i < t.size(); ++i) t.mutable_data()[i] = d(rng);
  return t;
}

Tensor probe(const Tensor& out, const Tensor& weights) {
  return sum_all(mul(out, weights));
}

}  // namespace

std::vector<std::pair<std::string, double>> run_gradcheck_suite(
    uint64_t seed, const std::string& corrupt) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::string, double>> results;
  auto record = [&](const std::string& name, double err) {
    if (name == corrupt) err = std::max(err, 1.0);  // negative-control hook
    results.emplace_back(name, err);
  };

  {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor pw = random_tensor({3, 2}, rng, false);
    record("linear", finite_difference_check(
                         [&] { return probe(linear(x, w, b), pw); }, {x, w, b})
                         .max_rel_err);
  }
  {
    Tensor x = random_tensor({4, 3}, rng);
    for (Index i = 0; i < x.size(); ++i)
      if (std::abs(x.data()[i]) < 1e-3) x.mutable_data()[i] = 0.5;
    Tensor pw = random_tensor({4, 3}, rng, false);
    record("relu",
           finite_difference_check([&] { return probe(relu(x), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({3, 5}, rng);
    Tensor pw = random_tensor({3, 5}, rng, false);
    record("softmax_rows",
           finite_difference_check([&] { return probe(softmax_rows(x), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({2, 4, 3}, rng);
    Tensor pw = random_tensor({2, 4, 3}, rng, false);
    record("softmax_neighbors",
           finite_difference_check(
               [&] { return probe(softmax_neighbors(x), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({5, 4}, rng);
    Tensor pw = random_tensor({4}, rng, false);
    record("max_pool_points",
           finite_difference_check(
               [&] { return probe(max_pool_points(x), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
    Tensor pw = random_tensor({3, 6}, rng, false);
    record("concat_channels",
           finite_difference_check(
               [&] { return probe(concat_channels(a, b), pw); }, {a, b})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({3, 2}, rng);
    Tensor pw = random_tensor({9, 2}, rng, false);
    record("duplicate_points",
           finite_difference_check(
               [&] { return probe(duplicate_points(x, 3), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({3, 4, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor pw = random_tensor({9, 2}, rng, false);
    record("deconv1d_points",
           finite_difference_check(
               [&] { return probe(deconv1d_points(x, w, b, 3), pw); }, {x, w, b})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({5, 3}, rng);
    Eigen::MatrixXi idx(4, 3);
    idx << 0, 1, 1, 2, 2, 4, 3, 0, 0, 4, 4, 4;
    Tensor pw = random_tensor({4, 3, 3}, rng, false);
    record("gather_rows",
           finite_difference_check(
               [&] { return probe(gather_rows(x, idx), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor c = random_tensor({3, 4}, rng);
    Tensor nbr = random_tensor({3, 5, 4}, rng);
    Tensor pw = random_tensor({3, 5, 4}, rng, false);
    record("center_minus_neighbors",
           finite_difference_check(
               [&] { return probe(center_minus_neighbors(c, nbr), pw); }, {c, nbr})
               .max_rel_err);
  }
  {
    Tensor x = random_tensor({3, 5, 4}, rng);
    Tensor pw = random_tensor({3, 4}, rng, false);
    record("sum_neighbors",
           finite_difference_check(
               [&] { return probe(sum_neighbors(x), pw); }, {x})
               .max_rel_err);
  }
  {
    Tensor pred = random_tensor({6, 3}, rng);
    Points gt(5, 3);
    std::uniform_real_distribution<double> d(-1, 1);
    for (Index i = 0; i < gt.size(); ++i) gt.data()[i] = d(rng);
    record("chamfer_loss",
           finite_difference_check([&] { return chamfer_loss(pred, gt); }, {pred})
               .max_rel_err);
  }
  {
    // end-to-end three-stage cascade on 8 points, sampled parameter sweep
    StageConfig base;
    base.k_attention = 4;
    NetworkParams net = init_network(3, base, seed);
    // zero-initialized heads leave stage outputs exactly coincident, which
    // puts the Chamfer min at a tie; perturb them into generic position
    std::uniform_real_distribution<double> head(-0.1, 0.1);
    for (auto& s : net.stages) {
      for (Index i = 0; i < s.out_proj.w.size(); ++i)
        s.out_proj.w.mutable_data()[i] = head(rng);
      for (Index i = 0; i < s.rec2.w.size(); ++i)
        s.rec2.w.mutable_data()[i] = head(rng);
      for (Index i = 0; i < s.rec2.b.size(); ++i)
        s.rec2.b.mutable_data()[i] = head(rng);
    }
    Tensor pts = random_tensor({8, 3}, rng);
    Points gt(32, 3);
    std::uniform_real_distribution<double> d(-1, 1);
    for (Index i = 0; i < gt.size(); ++i) gt.data()[i] = d(rng);
    std::vector<Tensor> params{pts};
    for_each_param(net, [&](const std::string&, Tensor& t) { params.push_back(t); });
    auto fwd = [&]() {
      auto outs = cascade_forward(pts, net);
      return total_loss(outs, gt, Supervision::all_stages);
    };
    record("cascade_end_to_end",
           finite_difference_check_sampled(fwd, params, 8, seed ^ 0xabcdef)
               .max_rel_err);
  }
  return results;
}

}  // namespace pcup
