#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "pcup/io.hpp"
#include "pcup/pipeline.hpp"

using namespace pcup;

namespace {

std::mt19937_64 rng(2718);

Points random_cloud(Index n) {
  std::uniform_real_distribution<double> d(-1, 1);
  Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = d(rng);
  return p;
}

}  // namespace

TEST_CASE("generate_shape: points lie on their surfaces") {
  std::mt19937_64 r(1);
  Points sph = generate_shape(Sphere{{0, 0, 0}, 1.0}, 500, r);
  REQUIRE(sph.rows() == 500);
  for (Index i = 0; i < sph.rows(); ++i)
    CHECK(std::abs(sph.row(i).norm() - 1.0) < 1e-12);

  Points pl = generate_shape(Plane{{0, 0, 0}, 1, 1}, 500, r);
  for (Index i = 0; i < pl.rows(); ++i) {
    CHECK(pl(i, 2) == 0.0);
    CHECK(std::abs(pl(i, 0)) <= 1.0);
    CHECK(std::abs(pl(i, 1)) <= 1.0);
  }

  Torus torus{{0, 0, 0}, 1.0, 0.3};
  Points to = generate_shape(torus, 500, r);
  for (Index i = 0; i < to.rows(); ++i)
    CHECK(surface_distance(to.row(i), Surface{torus}) < 1e-12);

  Box box{{0, 0, 0}, {0.8, 0.6, 0.5}};
  Points bo = generate_shape(box, 500, r);
  for (Index i = 0; i < bo.rows(); ++i)
    CHECK(surface_distance(bo.row(i), Surface{box}) < 1e-12);
}

TEST_CASE("generate_shape: torus major angle is area-uniform (chi-square)") {
  std::mt19937_64 r(2);
  Points to = generate_shape(Torus{{0, 0, 0}, 1.0, 0.3}, 100000, r);
  const int bins = 16;
  std::vector<int> counts(bins, 0);
  for (Index i = 0; i < to.rows(); ++i) {
    double u = std::atan2(to(i, 1), to(i, 0));  // major angle, uniform by symmetry
    int b = std::min(bins - 1, static_cast<int>((u + M_PI) / (2 * M_PI) * bins));
    counts[b]++;
  }
  double expect = to.rows() / static_cast<double>(bins);
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 30.58);  // 15 dof, alpha = 0.01
}

TEST_CASE("generate_shape: deterministic under the rng seed") {
  std::mt19937_64 a(9), b(9);
  Points pa = generate_shape(make_toy_surface("torus"), 200, a);
  Points pb = generate_shape(make_toy_surface("torus"), 200, b);
  CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("make_toy_surface: known names only") {
  for (const char* name :
       {"sphere", "torus", "box", "plane", "sphere_small", "torus_thin", "box_flat"})
    CHECK_NOTHROW(make_toy_surface(name));
  CHECK_THROWS_AS(make_toy_surface("dodecahedron"), ArgumentError);
}

TEST_CASE("extract_patches: single patch covers the whole cloud") {
  Points cloud = random_cloud(64);
  PatchSet set = extract_patches(cloud, 1, 64);
  REQUIRE(set.patches.size() == 1);
  const Patch& p = set.patches[0];
  CHECK(p.cloud.size() == 64);
  // normalization is invertible back to the source points
  Points back = denormalize(p.cloud.pts, p.inverse);
  double worst = 0;
  for (Index i = 0; i < 64; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < 64; ++j)
      best = std::min(best, (back.row(i) - cloud.row(j)).norm());
    worst = std::max(worst, best);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("extract_patches: each patch is the kNN ball of its seed") {
  Points cloud = random_cloud(300);
  PatchSet set = extract_patches(cloud, 5, 64);
  REQUIRE(set.patches.size() == 5);
  for (const Patch& p : set.patches) {
    Points seed(1, 3);
    seed.row(0) = cloud.row(p.seed_index);
    Eigen::MatrixXi idx = knn_indices(cloud, seed, 64);
    Points expect(64, 3);
    for (int j = 0; j < 64; ++j) expect.row(j) = cloud.row(idx(0, j));
    Points back = denormalize(p.cloud.pts, p.inverse);
    CHECK((back - expect).cwiseAbs().maxCoeff() < 1e-12);
    // normalized form: centroid at origin, max radius 1
    CHECK(p.cloud.pts.colwise().mean().norm() < 1e-12);
    CHECK(p.cloud.pts.rowwise().norm().maxCoeff() == doctest::Approx(1.0));
  }
}

TEST_CASE("extract_patches: default seed count covers every point") {
  Points cloud = random_cloud(500);
  int seeds = default_num_seeds(cloud.rows(), 64);
  CHECK(seeds == (3 * 500 + 63) / 64);
  PatchSet set = extract_patches(cloud, seeds, 64);
  std::vector<bool> covered(500, false);
  for (const Patch& p : set.patches) {
    Points back = denormalize(p.cloud.pts, p.inverse);
    for (Index i = 0; i < back.rows(); ++i)
      for (Index j = 0; j < 500; ++j)
        if ((back.row(i) - cloud.row(j)).norm() < 1e-9) covered[j] = true;
  }
  for (bool c : covered) CHECK(c);
}

TEST_CASE("upsample_cloud: zero-offset network reproduces the input geometry") {
  StageConfig cfg;
  cfg.k_attention = 8;
  NetworkParams net = init_network(3, cfg, 4);
  zero_offset_heads(net);
  Points cloud = random_cloud(128);
  Points up = upsample_cloud(cloud, net, 4, true, 64);
  CHECK(up.rows() == 512);
  // all output locations coincide with input locations
  CHECK(chamfer(up, cloud) < 1e-12);

  // rate 16 composes the x4 pass twice; only the count is contractual
  Points up16 = upsample_cloud(cloud, net, 16, true, 64);
  CHECK(up16.rows() == 2048);
}

TEST_CASE("upsample_cloud: skipping the refiner changes counts not rate") {
  StageConfig cfg;
  cfg.k_attention = 8;
  NetworkParams net = init_network(3, cfg, 4);
  zero_offset_heads(net);
  Points cloud = random_cloud(96);
  Points up = upsample_cloud(cloud, net, 4, false, 48);
  CHECK(up.rows() == 384);
  CHECK_THROWS_AS(upsample_cloud(cloud, net, 8, true, 48), ArgumentError);
}

TEST_CASE("evaluate: pred equals gt gives zero metrics") {
  Points gt = random_cloud(100);
  MetricRecord m = evaluate(gt, gt);
  CHECK(m.cd == 0.0);
  CHECK(m.hd == 0.0);
  CHECK(!m.p2f.has_value());
}

TEST_CASE("evaluate: matches metrics computed after manual normalization") {
  Points gt = random_cloud(80);
  Points pred = random_cloud(120);
  auto [ngt, rec] = normalize_to_unit_sphere(gt);
  Points npred = (pred.rowwise() - rec.centroid) / rec.scale;
  MetricRecord m = evaluate(pred, gt);
  CHECK(m.cd == doctest::Approx(chamfer(npred, ngt.pts)).epsilon(1e-12));
  CHECK(m.hd == doctest::Approx(hausdorff(npred, ngt.pts)).epsilon(1e-12));

  MetricRecord ms = evaluate(pred, gt, Surface{Sphere{{0, 0, 0}, 1.0}});
  REQUIRE(ms.p2f.has_value());
  Surface tsph = transform_surface(Surface{Sphere{{0, 0, 0}, 1.0}}, rec);
  CHECK(*ms.p2f == doctest::Approx(point_to_surface(npred, tsph)).epsilon(1e-12));
}

TEST_CASE("toy_training_patches: shape and normalization contracts") {
  auto patches = toy_training_patches({"sphere", "torus"}, 3, 128, 5);
  REQUIRE(patches.size() == 6);
  for (const auto& p : patches) {
    CHECK(p.rows() == 128);
    CHECK(p.colwise().mean().norm() < 1e-12);
    CHECK(p.rowwise().norm().maxCoeff() == doctest::Approx(1.0));
  }
}

TEST_CASE("io: xyz round trip") {
  Points p = random_cloud(37);
  write_cloud(p, "rt.xyz");
  Points back = read_cloud("rt.xyz");
  REQUIRE(back.rows() == 37);
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);
  std::remove("rt.xyz");
}

TEST_CASE("io: binary ply round trip is exact") {
  Points p = random_cloud(41);
  write_cloud(p, "rt.ply", CloudFormat::ply, PlyEncoding::binary_little_endian);
  Points back = read_cloud("rt.ply");
  REQUIRE(back.rows() == 41);
  CHECK((back - p).cwiseAbs().maxCoeff() == 0.0);
  std::remove("rt.ply");
}

TEST_CASE("io: ascii ply round trip") {
  Points p = random_cloud(23);
  write_cloud(p, "rt2.ply", CloudFormat::ply, PlyEncoding::ascii);
  Points back = read_cloud("rt2.ply");
  REQUIRE(back.rows() == 23);
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);
  std::remove("rt2.ply");
}

TEST_CASE("io: parse errors name the offending line") {
  {
    std::ofstream os("bad.xyz");
    os << "0 0 0\n1 2 3\n4 five 6\n";
  }
  CHECK_THROWS_WITH_AS(read_cloud("bad.xyz"), doctest::Contains("3"), ParseError);
  std::remove("bad.xyz");
  CHECK_THROWS_AS(read_cloud("missing.xyz"), IoError);
}

TEST_CASE("io: off mesh read and point-to-surface") {
  {
    std::ofstream os("cube.off");
    os << "OFF\n8 6 0\n";
    for (int z : {-1, 1})
      for (int y : {-1, 1})
        for (int x : {-1, 1}) os << x << " " << y << " " << z << "\n";
    os << "4 0 1 3 2\n4 4 6 7 5\n4 0 4 5 1\n4 2 3 7 6\n4 0 2 6 4\n4 1 5 7 3\n";
  }
  TriangleMesh mesh = read_off_mesh("cube.off");
  CHECK(mesh.verts.rows() == 8);
  CHECK(mesh.faces.rows() == 12);  // quads fan-triangulated
  Points probe(1, 3);
  probe << 0, 0, 2;
  CHECK(point_to_surface(probe, Surface{mesh}) == doctest::Approx(1.0).epsilon(1e-12));
  Points on(1, 3);
  on << 0.3, -0.2, 1.0;
  CHECK(point_to_surface(on, Surface{mesh}) < 1e-12);
  std::remove("cube.off");
}

TEST_CASE("io: manifest parsing") {
  {
    std::ofstream os("mani.txt");
    os << "# comment\n"
       << "a.xyz\n"
       << "b.ply meshes/b.off\n"
       << "\n";
  }
  auto entries = read_manifest("mani.txt");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].cloud_path == "a.xyz");
  CHECK(entries[0].mesh_path.empty());
  CHECK(entries[1].cloud_path == "b.ply");
  CHECK(entries[1].mesh_path == "meshes/b.off");
  std::remove("mani.txt");
}
