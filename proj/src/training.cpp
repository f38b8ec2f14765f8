#include "pcup/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace pcup {

Supervision parse_supervision(const std::string& s) {
  if (s == "all_stages") return Supervision::all_stages;
  if (s == "last_stage") return Supervision::last_stage;
  throw ArgumentError("unknown supervision mode '" + s +
                      "' (expected all_stages or last_stage)");
}

std::string to_string(Supervision s) {
  return s == Supervision::all_stages ? "all_stages" : "last_stage";
}

void write_report(const TrainReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open report for writing: " + path);
  os << "# epoch stage_losses... lr seconds\n";
  os << std::setprecision(17);
  for (const auto& e : r.epochs) {
    os << e.epoch;
    for (double l : e.stage_losses) os << " " << std::scientific << l;
    os << " " << std::scientific << e.lr << " " << e.seconds << "\n";
  }
}

TrainReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open report: " + path);
  TrainReport r;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.size() < 4) throw ParseError("malformed report line: " + line);
    EpochRecord e;
    e.epoch = static_cast<int>(vals[0]);
    e.stage_losses.assign(vals.begin() + 1, vals.end() - 2);
    e.lr = vals[vals.size() - 2];
    e.seconds = vals.back();
    r.epochs.push_back(std::move(e));
  }
  return r;
}

AdamState make_adam_state(NetworkParams& net) {
  AdamState s;
  for_each_param(net, [&](const std::string&, Tensor& t) {
    s.m.push_back(Eigen::VectorXd::Zero(t.size()));
    s.v.push_back(Eigen::VectorXd::Zero(t.size()));
  });
  return s;
}

void adam_step_one(Tensor& param, const Eigen::VectorXd& grad,
                   Eigen::VectorXd& m, Eigen::VectorXd& v, int64_t t, double lr,
                   double beta1, double beta2, double eps) {
  if (grad.size() != param.size() || m.size() != param.size())
    throw DimensionError("adam_step: state/grad size mismatch for shape " +
                         shape_str(param.shape()));
  m = beta1 * m + (1 - beta1) * grad;
  v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1 - std::pow(beta2, static_cast<double>(t));
  param.mutable_data().array() -=
      lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

void adam_step(NetworkParams& net, AdamState& state, double lr, double grad_scale) {
  ++state.t;
  size_t i = 0;
  for_each_param(net, [&](const std::string&, Tensor& t) {
    Eigen::VectorXd g = grad_scale * t.grad();
    adam_step_one(t, g, state.m[i], state.v[i], state.t, lr, state.beta1,
                  state.beta2, state.eps);
    ++i;
  });
}

double lr_at(int64_t iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw ArgumentError("lr_at: negative iteration");
  int64_t steps = iteration / cfg.decay_interval_iters;
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(steps));
}

Tensor total_loss(std::span<const Tensor> stage_outputs, const Points& gt,
                  Supervision mode) {
  if (stage_outputs.empty()) throw ArgumentError("total_loss: no stage outputs");
  if (mode == Supervision::last_stage)
    return chamfer_loss(stage_outputs.back(), gt);
  Tensor total = chamfer_loss(stage_outputs[0], gt);
  for (size_t i = 1; i < stage_outputs.size(); ++i)
    total = add(total, chamfer_loss(stage_outputs[i], gt));
  return total;
}

std::pair<Points, Points> sample_training_pair(const Points& gt_patch,
                                               const TrainConfig& cfg,
                                               std::mt19937_64& rng) {
  const Index m = gt_patch.rows();
  if (m != cfg.patch_gt_size)
    throw ArgumentError("sample_training_pair: patch has " + std::to_string(m) +
                        " points, expected " + std::to_string(cfg.patch_gt_size));
  // partial Fisher-Yates for a uniform subset without replacement
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 0; i < cfg.patch_input_size; ++i) {
    std::uniform_int_distribution<int> d(i, static_cast<int>(m) - 1);
    std::swap(perm[i], perm[d(rng)]);
  }
  Points input(cfg.patch_input_size, 3);
  for (int i = 0; i < cfg.patch_input_size; ++i)
    input.row(i) = gt_patch.row(perm[i]);
  return {std::move(input), gt_patch};
}

TrainResult train(const std::vector<Points>& gt_patches, const TrainConfig& cfg,
                  const StageConfig& stage_base, bool verbose) {
  if (gt_patches.empty()) throw ArgumentError("train: empty dataset");
  NetworkParams net = init_network(cfg.num_stages, stage_base, cfg.seed);
  AdamState adam = make_adam_state(net);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  // each patch is subsampled once up front, so the corpus is a fixed set of
  // input/gt pairs rather than a fresh draw per step
  std::vector<Points> inputs;
  inputs.reserve(gt_patches.size());
  for (const auto& p : gt_patches)
    inputs.push_back(sample_training_pair(p, cfg, rng).first);

  TrainReport report;
  int64_t iteration = 0;
  const int num_stages = cfg.num_stages;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(gt_patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> loss_sums(num_stages, 0.0);
    int samples = 0;
    double lr = cfg.lr0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t stop = std::min(order.size(), start + cfg.batch_size);
      for_each_param(net, [](const std::string&, Tensor& t) { t.zero_grad(); });
      std::vector<double> batch_losses(num_stages, 0.0);
      for (size_t bi = start; bi < stop; ++bi) {
        const Points& input = inputs[order[bi]];
        const Points& gt = gt_patches[order[bi]];
        Tensor pts = Tensor::from_matrix(input);
        auto outputs = cascade_forward(pts, net);
        // per-stage CDs come from the loss graph where available instead of
        // being recomputed
        std::vector<double> cds(num_stages);
        Tensor loss;
        if (cfg.supervision == Supervision::all_stages) {
          for (int s = 0; s < num_stages; ++s) {
            Tensor l = chamfer_loss(outputs[s], gt);
            cds[s] = l.value();
            loss = s ? add(loss, l) : l;
          }
        } else {
          loss = chamfer_loss(outputs.back(), gt);
          cds[num_stages - 1] = loss.value();
          for (int s = 0; s + 1 < num_stages; ++s) {
            Points out(outputs[s].extent(0), 3);
            MapM(out.data(), out.rows(), 3) = outputs[s].matrix();
            cds[s] = chamfer(out, gt);
          }
        }
        backward(loss);
        for (int s = 0; s < num_stages; ++s) {
          batch_losses[s] += cds[s];
          if (!std::isfinite(cds[s]))
            throw std::runtime_error(
                "train: non-finite loss at epoch " + std::to_string(epoch) +
                " batch " + std::to_string(start / cfg.batch_size) + " stage " +
                std::to_string(s + 1));
        }
      }
      double inv = 1.0 / static_cast<double>(stop - start);
      if (cfg.clip_gradients) {
        double sq = 0;
        for_each_param(net, [&](const std::string&, Tensor& t) {
          sq += (inv * t.grad()).squaredNorm();
        });
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) inv *= cfg.clip_norm / norm;
      }
      lr = lr_at(iteration, cfg);
      adam_step(net, adam, lr, inv);
      ++iteration;
      for (int s = 0; s < num_stages; ++s) loss_sums[s] += batch_losses[s];
      samples += static_cast<int>(stop - start);
    }
    for_each_param(net, [&](const std::string& name, Tensor& t) {
      if (!t.data().allFinite())
        throw std::runtime_error("train: parameter '" + name +
                                 "' became non-finite at epoch " +
                                 std::to_string(epoch));
    });
    EpochRecord rec;
    rec.epoch = epoch;
    for (int s = 0; s < num_stages; ++s)
      rec.stage_losses.push_back(loss_sums[s] / samples);
    rec.lr = lr;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verbose) {
      std::cout << "epoch " << epoch;
      for (double l : rec.stage_losses) std::cout << "  " << l;
      std::cout << "  lr=" << lr << "  " << rec.seconds << "s\n";
    }
    report.epochs.push_back(std::move(rec));
  }
  return {std::move(net), std::move(report)};
}

}  // namespace pcup
