#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "pcup/pipeline.hpp"
#include "pcup/training.hpp"

using namespace pcup;

namespace {

std::mt19937_64 rng(31337);

Points random_cloud(Index n) {
  std::uniform_real_distribution<double> d(-1, 1);
  Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = d(rng);
  return p;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(3), v = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
  adam_step_one(p, g, m, v, 1, 0.01);
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(p.data()[2] == 0.5);
}

TEST_CASE("adam: first step moves by ~lr against the gradient sign") {
  Tensor p = Tensor::from_values({2}, {0.0, 0.0}, true);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2), v = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g(2);
  g << 3.0, -0.25;
  adam_step_one(p, g, m, v, 1, 0.01);
  // bias-corrected m/sqrt(v) is sign(g) on the first step, up to eps
  CHECK(p.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.data()[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: converges on a 2-D quadratic") {
  Tensor p = Tensor::from_values({2}, {4.0, -3.0}, true);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2), v = Eigen::VectorXd::Zero(2);
  for (int64_t t = 1; t <= 2000; ++t) {
    Eigen::VectorXd g(2);
    g << 2 * (p.data()[0] - 1.0), 8 * (p.data()[1] - 2.0);
    adam_step_one(p, g, m, v, t, 0.05);
  }
  CHECK(std::abs(p.data()[0] - 1.0) < 1e-6);
  CHECK(std::abs(p.data()[1] - 2.0) < 1e-6);
}

TEST_CASE("lr schedule: stepwise decay by 0.7") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(49999, cfg) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(50000, cfg) == doctest::Approx(0.0007).epsilon(1e-12));
  CHECK(lr_at(100000, cfg) == doctest::Approx(0.00049).epsilon(1e-12));
  double prev = lr_at(0, cfg);
  for (int64_t it = 1; it < 200000; it += 7919) {
    double cur = lr_at(it, cfg);
    CHECK(cur <= prev + 1e-18);
    prev = cur;
  }
}

TEST_CASE("sample_training_pair: subset membership and determinism") {
  TrainConfig cfg;
  cfg.patch_gt_size = 64;
  cfg.patch_input_size = 16;
  Points gt = random_cloud(64);
  std::mt19937_64 r1(5), r2(5);
  auto [in1, gt1] = sample_training_pair(gt, cfg, r1);
  auto [in2, gt2] = sample_training_pair(gt, cfg, r2);
  CHECK(in1.rows() == 16);
  CHECK(gt1.rows() == 64);
  CHECK((in1 - in2).cwiseAbs().maxCoeff() == 0.0);
  for (Index i = 0; i < in1.rows(); ++i) {
    bool found = false;
    for (Index j = 0; j < gt.rows(); ++j)
      if (in1.row(i) == gt.row(j)) found = true;
    CHECK(found);
  }
  // no repeats within a sample
  for (Index i = 0; i < in1.rows(); ++i)
    for (Index j = i + 1; j < in1.rows(); ++j)
      CHECK((in1.row(i) - in1.row(j)).norm() > 0);
}

TEST_CASE("sample_training_pair: draws are uniform (chi-square)") {
  TrainConfig cfg;
  cfg.patch_gt_size = 16;
  cfg.patch_input_size = 4;
  Points gt = random_cloud(16);
  std::mt19937_64 r(12345);
  std::vector<int> counts(16, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    auto [in, g] = sample_training_pair(gt, cfg, r);
    for (Index i = 0; i < in.rows(); ++i)
      for (Index j = 0; j < 16; ++j)
        if (in.row(i) == gt.row(j)) counts[j]++;
  }
  double expect = trials * 4.0 / 16.0;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 30.58);  // chi-square 15 dof, alpha = 0.01
}

TEST_CASE("total_loss: zero when every stage equals the target") {
  Points gt = random_cloud(12);
  Tensor t = Tensor::from_matrix(gt, true);
  std::vector<Tensor> outs{t, t, t};
  CHECK(total_loss(outs, gt, Supervision::all_stages).value() == 0.0);
  CHECK(total_loss(outs, gt, Supervision::last_stage).value() == 0.0);
}

TEST_CASE("total_loss: all-stage loss is the sum of per-stage chamfer") {
  Points gt = random_cloud(10);
  std::vector<Tensor> outs;
  double expect = 0;
  for (int s = 0; s < 3; ++s) {
    Points p = random_cloud(8 + 4 * s);
    outs.push_back(Tensor::from_matrix(p, true));
    expect += chamfer(p, gt);
  }
  double all = total_loss(outs, gt, Supervision::all_stages).value();
  CHECK(std::abs(all - expect) < 1e-12);
  double last = total_loss(outs, gt, Supervision::last_stage).value();
  Points lastp = random_cloud(0);
  CHECK(last == doctest::Approx(chamfer(Points(outs[2].matrix()), gt)).epsilon(1e-12));
}

TEST_CASE("total_loss: last_stage supervision reaches only the last output") {
  Points gt = random_cloud(10);
  std::vector<Tensor> outs;
  for (int s = 0; s < 3; ++s) {
    Tensor t = Tensor::from_matrix(random_cloud(8), true);
    outs.push_back(t);
  }
  Tensor loss = total_loss(outs, gt, Supervision::last_stage);
  backward(loss);
  CHECK(!outs[0].has_grad());
  CHECK(!outs[1].has_grad());
  REQUIRE(outs[2].has_grad());
  CHECK(outs[2].grad().cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("train report: write/read round trip") {
  TrainReport r;
  for (int e = 1; e <= 3; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.stage_losses = {0.5 / e, 0.25 / e, 0.125 / e};
    rec.lr = 0.001;
    rec.seconds = 1.5 * e;
    r.epochs.push_back(rec);
  }
  write_report(r, "report_rt.txt");
  TrainReport back = read_report("report_rt.txt");
  REQUIRE(back.epochs.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(back.epochs[e].epoch == r.epochs[e].epoch);
    REQUIRE(back.epochs[e].stage_losses.size() == 3);
    for (int s = 0; s < 3; ++s)
      CHECK(back.epochs[e].stage_losses[s] ==
            doctest::Approx(r.epochs[e].stage_losses[s]).epsilon(1e-12));
    CHECK(back.epochs[e].lr == doctest::Approx(r.epochs[e].lr).epsilon(1e-12));
  }
  std::remove("report_rt.txt");
}

TEST_CASE("supervision parsing") {
  CHECK(parse_supervision("all_stages") == Supervision::all_stages);
  CHECK(parse_supervision("last_stage") == Supervision::last_stage);
  CHECK_THROWS_AS(parse_supervision("everything"), ArgumentError);
}

TEST_CASE("train: one-epoch smoke run produces a sane report") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.patch_gt_size = 64;
  cfg.patch_input_size = 16;
  cfg.seed = 3;
  StageConfig base;
  base.k_attention = 8;
  std::vector<Points> patches = toy_training_patches({"sphere"}, 4, 64, 7);
  TrainResult res = train(patches, cfg, base);
  REQUIRE(res.report.epochs.size() == 1);
  CHECK(res.report.epochs[0].stage_losses.size() == 3);
  for (double l : res.report.epochs[0].stage_losses) {
    CHECK(std::isfinite(l));
    CHECK(l >= 0);
  }
  CHECK(res.net.num_stages() == 3);
}

TEST_CASE("train: identical configs give bitwise-identical parameters") {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.patch_gt_size = 64;
  cfg.patch_input_size = 16;
  cfg.seed = 11;
  cfg.num_stages = 2;
  StageConfig base;
  base.k_attention = 8;
  std::vector<Points> patches = toy_training_patches({"sphere"}, 4, 64, 7);
  TrainResult a = train(patches, cfg, base);
  TrainResult b = train(patches, cfg, base);
  std::vector<const Tensor*> ta, tb;
  for_each_param(a.net, [&](const std::string&, Tensor& t) { ta.push_back(&t); });
  for_each_param(b.net, [&](const std::string&, Tensor& t) { tb.push_back(&t); });
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i)
    for (Index j = 0; j < ta[i]->size(); ++j)
      CHECK(ta[i]->data()[j] == tb[i]->data()[j]);
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (size_t e = 0; e < a.report.epochs.size(); ++e)
    for (size_t s = 0; s < a.report.epochs[e].stage_losses.size(); ++s)
      CHECK(a.report.epochs[e].stage_losses[s] == b.report.epochs[e].stage_losses[s]);
}
