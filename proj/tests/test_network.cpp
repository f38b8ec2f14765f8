#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "pcup/gradcheck.hpp"
#include "pcup/network.hpp"

using namespace pcup;

namespace {

std::mt19937_64 rng(4242);

Tensor random_points(Index n, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(-1, 1);
  Tensor t = Tensor::zeros({n, 3}, requires_grad);
  for (Index i = 0; i < t.size(); ++i) t.mutable_data()[i] = d(rng);
  return t;
}

// zero-initialized heads sit exactly on relu/tie kinks; move every parameter
// into generic position before differentiating
void randomize_all(NetworkParams& net) {
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  for_each_param(net, [&](const std::string&, Tensor& t) {
    for (Index i = 0; i < t.size(); ++i) t.mutable_data()[i] = d(rng);
  });
}

StageConfig small_config() {
  StageConfig cfg;
  cfg.k_attention = 4;
  return cfg;
}

}  // namespace

TEST_CASE("stage_rates: plans per stage count") {
  CHECK(stage_rates(2) == std::vector<int>{2, 2});
  CHECK(stage_rates(3) == std::vector<int>{2, 2, 1});
  CHECK(stage_rates(4) == std::vector<int>{2, 2, 1, 1});
  CHECK_THROWS_AS(stage_rates(1), ArgumentError);
  CHECK_THROWS_AS(stage_rates(5), ArgumentError);
}

TEST_CASE("cascade_forward: output row counts 32 -> 64 -> 128 -> 128") {
  NetworkParams net = init_network(3, small_config(), 1);
  Tensor pts = random_points(32);
  auto outs = cascade_forward(pts, net);
  REQUIRE(outs.size() == 3);
  CHECK(outs[0].extent(0) == 64);
  CHECK(outs[1].extent(0) == 128);
  CHECK(outs[2].extent(0) == 128);
  for (const auto& o : outs) CHECK(o.extent(1) == 3);
  CHECK(net.total_rate() == 4);
}

TEST_CASE("cascade_forward: max_stages limits the run") {
  NetworkParams net = init_network(3, small_config(), 1);
  Tensor pts = random_points(16);
  auto outs = cascade_forward(pts, net, 2);
  CHECK(outs.size() == 2);
  CHECK(outs[1].extent(0) == 64);
  CHECK_THROWS_AS(cascade_forward(pts, net, 0), ArgumentError);
}

TEST_CASE("zero offset heads: cascade is exactly interleaved duplication") {
  NetworkParams net = init_network(3, small_config(), 9);
  zero_offset_heads(net);
  Tensor pts = random_points(16);
  auto outs = cascade_forward(pts, net);
  const auto& out = outs.back();
  REQUIRE(out.extent(0) == 64);
  for (Index n = 0; n < 16; ++n)
    for (Index j = 0; j < 4; ++j)
      for (Index c = 0; c < 3; ++c)
        CHECK(out.data()[(4 * n + j) * 3 + c] == pts.data()[n * 3 + c]);
}

TEST_CASE("permutation equivariance of a full stage") {
  NetworkParams net = init_network(3, small_config(), 21);
  randomize_all(net);
  Tensor pts = random_points(24);
  Tensor out = stage_forward(pts, net.stages[0], net.configs[0]);

  std::vector<Index> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor shuffled = Tensor::zeros({24, 3});
  for (Index n = 0; n < 24; ++n)
    for (Index c = 0; c < 3; ++c)
      shuffled.mutable_data()[perm[n] * 3 + c] = pts.data()[n * 3 + c];
  Tensor out2 = stage_forward(shuffled, net.stages[0], net.configs[0]);

  const int r = net.configs[0].r;
  for (Index n = 0; n < 24; ++n)
    for (int j = 0; j < r; ++j)
      for (Index c = 0; c < 3; ++c) {
        double a = out.data()[(r * n + j) * 3 + c];
        double b = out2.data()[(r * perm[n] + j) * 3 + c];
        CHECK(std::abs(a - b) < 1e-9);
      }
}

TEST_CASE("degenerate input: identical points stay finite") {
  NetworkParams net = init_network(2, small_config(), 3);
  randomize_all(net);
  Tensor pts = Tensor::constant({8, 3}, 0.25);
  auto outs = cascade_forward(pts, net);
  for (const auto& o : outs)
    for (Index i = 0; i < o.size(); ++i) CHECK(std::isfinite(o.data()[i]));
}

TEST_CASE("zeroed attention projection reduces to the mlp_only extractor") {
  NetworkParams net = init_network(2, small_config(), 17);
  StageParams& s = net.stages[0];
  s.out_proj.w.mutable_data().setZero();
  s.out_proj.b.mutable_data().setZero();
  Tensor pts = random_points(12);
  Tensor with_attn = extract_features(pts, s, net.configs[0]);
  StageConfig mlp = net.configs[0];
  mlp.extractor = ExtractorKind::mlp_only;
  Tensor without = extract_features(pts, s, mlp);
  REQUIRE(with_attn.size() == without.size());
  for (Index i = 0; i < with_attn.size(); ++i)
    CHECK(with_attn.data()[i] == without.data()[i]);
}

TEST_CASE("extract_features: input validation") {
  NetworkParams net = init_network(2, small_config(), 5);
  Tensor bad = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(extract_features(bad, net.stages[0], net.configs[0]), DimensionError);
  Tensor few = random_points(3);  // fewer than k_attention=4
  CHECK_THROWS_AS(extract_features(few, net.stages[0], net.configs[0]), ArgumentError);
}

TEST_CASE("residual decomposition: output = duplicated input + offsets") {
  NetworkParams net = init_network(2, small_config(), 33);
  randomize_all(net);
  Tensor pts = random_points(10);
  StageConfig with_res = net.configs[0];
  StageConfig no_res = with_res;
  no_res.use_residual = false;
  Tensor out = stage_forward(pts, net.stages[0], with_res);
  Tensor offsets = stage_forward(pts, net.stages[0], no_res);
  const int r = with_res.r;
  for (Index n = 0; n < 10; ++n)
    for (int j = 0; j < r; ++j)
      for (Index c = 0; c < 3; ++c) {
        double expect = pts.data()[n * 3 + c] + offsets.data()[(r * n + j) * 3 + c];
        CHECK(out.data()[(r * n + j) * 3 + c] ==
              doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("gradcheck: expansion block") {
  NetworkParams net = init_network(2, small_config(), 41);
  randomize_all(net);
  StageParams& s = net.stages[0];
  Tensor feat = Tensor::zeros({6, 128}, true);
  std::uniform_real_distribution<double> d(-1, 1);
  for (Index i = 0; i < feat.size(); ++i) feat.mutable_data()[i] = d(rng);
  Tensor pw = Tensor::zeros({12, 128});
  for (Index i = 0; i < pw.size(); ++i) pw.mutable_data()[i] = d(rng);
  std::vector<Tensor> params{feat, s.exp_pre.w, s.exp_pre.b, s.deconv_w,
                             s.deconv_b, s.exp_post1.w, s.exp_post1.b,
                             s.exp_post2.w, s.exp_post2.b};
  auto fwd = [&] { return sum_all(mul(expand_features(feat, s, 2), pw)); };
  auto rep = finite_difference_check_sampled(fwd, params, 16, 99);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: full stage forward") {
  NetworkParams net = init_network(2, small_config(), 43);
  randomize_all(net);
  Tensor pts = random_points(8, true);
  Tensor pw = Tensor::zeros({16, 3});
  std::uniform_real_distribution<double> d(-1, 1);
  for (Index i = 0; i < pw.size(); ++i) pw.mutable_data()[i] = d(rng);
  std::vector<Tensor> params{pts};
  for_each_param(net.stages[0], 2,
                 [&](const std::string&, Tensor& t) { params.push_back(t); });
  auto fwd = [&] {
    return sum_all(mul(stage_forward(pts, net.stages[0], net.configs[0]), pw));
  };
  auto rep = finite_difference_check_sampled(fwd, params, 6, 7);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("count_parameters matches a layer-by-layer audit") {
  auto lin = [](int64_t cin, int64_t cout) { return cin * cout + cout; };
  auto per_stage = [&](int r) {
    return lin(3, 64) + lin(64, 128)            // point mlps
           + lin(256, 128) + lin(128, 128)      // post-pool mlps
           + 3 * lin(128, 64)                   // q, k, v
           + lin(3, 64) + lin(64, 64)           // position encoding
           + lin(64, 64)                        // attention mlp
           + lin(64, 128)                       // output projection
           + lin(128, 32)                       // pre-deconv
           + int64_t(r) * 32 * 128 + 128        // deconv kernel + bias
           + lin(256, 256) + lin(256, 128)      // post-expansion mlps
           + lin(128, 64) + lin(64, 3);         // offset head
  };
  NetworkParams net3 = init_network(3, small_config(), 1);
  CHECK(count_parameters(net3) == 2 * per_stage(2) + per_stage(1));
  NetworkParams net2 = init_network(2, small_config(), 1);
  CHECK(count_parameters(net2) == 2 * per_stage(2));
  CHECK(count_parameters(net2) < count_parameters(net3));
}

TEST_CASE("checkpoint round trip preserves everything bitwise") {
  StageConfig cfg = small_config();
  cfg.use_position_encoding = false;
  NetworkParams net = init_network(3, cfg, 77);
  randomize_all(net);
  std::string path = "ckpt_roundtrip.bin";
  save_checkpoint(path, net);
  NetworkParams loaded = load_checkpoint(path);
  REQUIRE(loaded.num_stages() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(loaded.configs[i].r == net.configs[i].r);
    CHECK(loaded.configs[i].k_attention == cfg.k_attention);
    CHECK(loaded.configs[i].use_position_encoding == false);
    CHECK(loaded.configs[i].use_residual == cfg.use_residual);
  }
  std::vector<const Tensor*> a, b;
  for_each_param(net, [&](const std::string&, Tensor& t) { a.push_back(&t); });
  for_each_param(loaded, [&](const std::string&, Tensor& t) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->shape() == b[i]->shape());
    for (Index j = 0; j < a[i]->size(); ++j)
      CHECK(a[i]->data()[j] == b[i]->data()[j]);
  }
  // identical forward pass after reload
  Tensor pts = random_points(8);
  Tensor o1 = cascade_forward(pts, net).back();
  Tensor o2 = cascade_forward(pts, loaded).back();
  for (Index j = 0; j < o1.size(); ++j) CHECK(o1.data()[j] == o2.data()[j]);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: malformed files are rejected") {
  {
    std::ofstream os("ckpt_bad.bin", std::ios::binary);
    os << "NOTACKPT garbage";
  }
  CHECK_THROWS_AS(load_checkpoint("ckpt_bad.bin"), ParseError);
  std::remove("ckpt_bad.bin");
  CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), IoError);

  NetworkParams net = init_network(2, small_config(), 1);
  save_checkpoint("ckpt_trunc.bin", net);
  {
    std::ifstream is("ckpt_trunc.bin", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
    std::ofstream os("ckpt_trunc.bin", std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS(load_checkpoint("ckpt_trunc.bin"));
  std::remove("ckpt_trunc.bin");
}

TEST_CASE("extractor kinds: parsing and the unimplemented variant") {
  CHECK(parse_extractor_kind("transformer") == ExtractorKind::transformer);
  CHECK(parse_extractor_kind("mlp_only") == ExtractorKind::mlp_only);
  CHECK_THROWS_WITH_AS(parse_extractor_kind("dense_gcn"),
                       doctest::Contains("not provided"), ArgumentError);
  CHECK_THROWS_AS(parse_extractor_kind("gibberish"), ArgumentError);
}
