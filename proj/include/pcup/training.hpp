#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "pcup/network.hpp"

namespace pcup {

enum class Supervision { all_stages, last_stage };

Supervision parse_supervision(const std::string& s);
std::string to_string(Supervision s);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lr0 = 1e-3;
  double lr_decay = 0.7;
  int decay_interval_iters = 50000;
  int patch_gt_size = 1024;
  int patch_input_size = 256;
  uint64_t seed = 0;
  Supervision supervision = Supervision::all_stages;
  bool clip_gradients = false;
  double clip_norm = 1.0;
  int num_stages = 3;
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> stage_losses;  // mean CD per stage over the epoch
  double lr = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

void write_report(const TrainReport& r, const std::string& path);
TrainReport read_report(const std::string& path);

// Adam moment state, one (m, v) pair per parameter tensor in traversal order.
struct AdamState {
  std::vector<Eigen::VectorXd> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState make_adam_state(NetworkParams& net);
// Applies one update using each parameter's accumulated grad scaled by
// grad_scale (1/batch for mean gradients). Grads are not cleared here.
void adam_step(NetworkParams& net, AdamState& state, double lr,
               double grad_scale = 1.0);
// Single-tensor variant used by unit tests.
void adam_step_one(Tensor& param, const Eigen::VectorXd& grad,
                   Eigen::VectorXd& m, Eigen::VectorXd& v, int64_t t, double lr,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

double lr_at(int64_t iteration, const TrainConfig& cfg);

Tensor total_loss(std::span<const Tensor> stage_outputs, const Points& gt,
                  Supervision mode);

// Uniform random subset (without replacement) of the ground-truth patch.
std::pair<Points, Points> sample_training_pair(const Points& gt_patch,
                                               const TrainConfig& cfg,
                                               std::mt19937_64& rng);

struct TrainResult {
  NetworkParams net;
  TrainReport report;
};

TrainResult train(const std::vector<Points>& gt_patches, const TrainConfig& cfg,
                  const StageConfig& stage_base, bool verbose = false);

}  // namespace pcup
