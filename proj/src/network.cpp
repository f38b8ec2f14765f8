#include "pcup/network.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <unordered_map>

namespace pcup {

namespace {

constexpr Index kFeat = 128;    // per-point feature width
constexpr Index kHidden = 64;   // first MLP width
constexpr Index kAttn = 64;     // transformer internal width C'
constexpr Index kExpand = 32;   // pre-deconv width
constexpr Index kRecon = 64;    // offset-head hidden width

LinearParams make_linear(Index cin, Index cout, std::mt19937_64& rng,
                         bool zero_init = false) {
  LinearParams p;
  p.w = Tensor::zeros({cin, cout}, true);
  p.b = Tensor::zeros({cout}, true);
  if (!zero_init) {
    // fan-in scaled uniform for weights and biases; exact-zero biases put
    // relu preactivations on the kink for degenerate inputs (e.g. the
    // self-neighbor relative position, which is exactly zero)
    double s = std::sqrt(1.0 / static_cast<double>(cin));
    std::uniform_real_distribution<double> dist(-s, s);
    for (Index i = 0; i < p.w.size(); ++i) p.w.mutable_data()[i] = dist(rng);
    for (Index i = 0; i < p.b.size(); ++i) p.b.mutable_data()[i] = dist(rng);
  }
  return p;
}

}  // namespace

ExtractorKind parse_extractor_kind(const std::string& s) {
  if (s == "transformer") return ExtractorKind::transformer;
  if (s == "mlp_only") return ExtractorKind::mlp_only;
  if (s == "dense_gcn")
    throw ArgumentError("extractor 'dense_gcn' is a recognized config value but "
                        "its implementation is not provided; use 'transformer' "
                        "or 'mlp_only'");
  throw ArgumentError("unknown extractor kind '" + s + "'");
}

std::string to_string(ExtractorKind k) {
  return k == ExtractorKind::transformer ? "transformer" : "mlp_only";
}

int NetworkParams::total_rate() const {
  int r = 1;
  for (const auto& c : configs) r *= c.r;
  return r;
}

std::vector<int> stage_rates(int num_stages) {
  switch (num_stages) {
    case 2: return {2, 2};
    case 3: return {2, 2, 1};
    case 4: return {2, 2, 1, 1};
    default:
      throw ArgumentError("stage_rates: supported stage counts are 2, 3, 4; got " +
                          std::to_string(num_stages));
  }
}

NetworkParams init_network(int num_stages, const StageConfig& base, uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto rates = stage_rates(num_stages);
  NetworkParams net;
  for (int s = 0; s < num_stages; ++s) {
    StageConfig cfg = base;
    cfg.r = rates[s];
    StageParams p;
    p.mlp1 = make_linear(3, kHidden, rng);
    p.mlp2 = make_linear(kHidden, kFeat, rng);
    p.post1 = make_linear(2 * kFeat, kFeat, rng);
    p.post2 = make_linear(kFeat, kFeat, rng);
    p.to_q = make_linear(kFeat, kAttn, rng);
    p.to_k = make_linear(kFeat, kAttn, rng);
    p.to_v = make_linear(kFeat, kAttn, rng);
    p.pos1 = make_linear(3, kAttn, rng);
    p.pos2 = make_linear(kAttn, kAttn, rng);
    p.attn = make_linear(kAttn, kAttn, rng);
    p.out_proj = make_linear(kAttn, kFeat, rng);
    p.exp_pre = make_linear(kFeat, kExpand, rng);
    p.deconv_w = Tensor::zeros({cfg.r, kExpand, kFeat}, true);
    {
      double sc = std::sqrt(1.0 / static_cast<double>(kExpand));
      std::uniform_real_distribution<double> dist(-sc, sc);
      for (Index i = 0; i < p.deconv_w.size(); ++i)
        p.deconv_w.mutable_data()[i] = dist(rng);
    }
    p.deconv_b = Tensor::zeros({kFeat}, true);
    {
      double sc = std::sqrt(1.0 / static_cast<double>(kExpand));
      std::uniform_real_distribution<double> dist(-sc, sc);
      for (Index i = 0; i < p.deconv_b.size(); ++i)
        p.deconv_b.mutable_data()[i] = dist(rng);
    }
    p.exp_post1 = make_linear(2 * kFeat, 2 * kFeat, rng);
    p.exp_post2 = make_linear(2 * kFeat, kFeat, rng);
    p.rec1 = make_linear(kFeat, kRecon, rng);
    p.rec2 = make_linear(kRecon, 3, rng, /*zero_init=*/true);
    net.stages.push_back(std::move(p));
    net.configs.push_back(cfg);
  }
  return net;
}

void for_each_param(StageParams& s, int,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
  auto lin = [&](const std::string& name, LinearParams& p) {
    fn(name + ".w", p.w);
    fn(name + ".b", p.b);
  };
  lin("mlp1", s.mlp1);
  lin("mlp2", s.mlp2);
  lin("post1", s.post1);
  lin("post2", s.post2);
  lin("to_q", s.to_q);
  lin("to_k", s.to_k);
  lin("to_v", s.to_v);
  lin("pos1", s.pos1);
  lin("pos2", s.pos2);
  lin("attn", s.attn);
  lin("out_proj", s.out_proj);
  lin("exp_pre", s.exp_pre);
  fn("deconv.w", s.deconv_w);
  fn("deconv.b", s.deconv_b);
  lin("exp_post1", s.exp_post1);
  lin("exp_post2", s.exp_post2);
  lin("rec1", s.rec1);
  lin("rec2", s.rec2);
}

void for_each_param(NetworkParams& net,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
  for (int i = 0; i < net.num_stages(); ++i) {
    std::string prefix = "stage" + std::to_string(i) + ".";
    for_each_param(net.stages[i], net.configs[i].r,
                   [&](const std::string& n, Tensor& t) { fn(prefix + n, t); });
  }
}

void zero_offset_heads(NetworkParams& net) {
  for (auto& s : net.stages) {
    s.rec2.w.mutable_data().setZero();
    s.rec2.b.mutable_data().setZero();
  }
}

int64_t count_parameters(const NetworkParams& net) {
  int64_t n = 0;
  for_each_param(const_cast<NetworkParams&>(net),
                 [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

Tensor extract_features(const Tensor& points, const StageParams& p,
                        const StageConfig& cfg) {
  if (points.rank() != 2 || points.extent(1) != 3)
    throw DimensionError("extract_features: points must be [N,3], got " +
                         shape_str(points.shape()));
  const Index n = points.extent(0);
  Tensor h = relu(linear(points, p.mlp1.w, p.mlp1.b));
  Tensor feat = relu(linear(h, p.mlp2.w, p.mlp2.b));
  Tensor g = max_pool_points(feat);
  Tensor gdup = duplicate_points(reshape(g, {1, kFeat}), n);
  Tensor cat = concat_channels(feat, gdup);
  Tensor f = relu(linear(cat, p.post1.w, p.post1.b));
  f = relu(linear(f, p.post2.w, p.post2.b));
  if (cfg.extractor == ExtractorKind::mlp_only) return f;

  const Index k = cfg.k_attention;
  if (n < k)
    throw ArgumentError("extract_features: " + std::to_string(n) +
                        " points < k_attention=" + std::to_string(k));
  Points coords(n, 3);
  MapM(coords.data(), n, 3) = points.matrix();
  Eigen::MatrixXi idx = knn_indices(coords, coords, static_cast<int>(k));

  Tensor q = linear(f, p.to_q.w, p.to_q.b);
  Tensor key = linear(f, p.to_k.w, p.to_k.b);
  Tensor val = linear(f, p.to_v.w, p.to_v.b);
  Tensor kn = gather_rows(key, idx);
  Tensor vals = gather_rows(val, idx);
  Tensor diff = center_minus_neighbors(q, kn);
  if (cfg.use_position_encoding) {
    Tensor pn = gather_rows(points, idx);
    Tensor rel = center_minus_neighbors(points, pn);
    Tensor pe = relu(linear(reshape(rel, {n * k, 3}), p.pos1.w, p.pos1.b));
    pe = linear(pe, p.pos2.w, p.pos2.b);
    Tensor pe3 = reshape(pe, {n, k, kAttn});
    diff = add(diff, pe3);
    vals = add(vals, pe3);
  }
  Tensor logits = reshape(linear(reshape(diff, {n * k, kAttn}), p.attn.w, p.attn.b),
                          {n, k, kAttn});
  Tensor weights = softmax_neighbors(logits);
  Tensor attended = sum_neighbors(mul(weights, vals));
  Tensor projected = linear(attended, p.out_proj.w, p.out_proj.b);
  return add(f, projected);
}

Tensor expand_features(const Tensor& features, const StageParams& p, int r) {
  if (r < 1) throw ArgumentError("expand_features: r must be >= 1");
  Tensor dup = duplicate_points(features, r);
  Tensor d = relu(linear(features, p.exp_pre.w, p.exp_pre.b));
  Tensor dc = relu(deconv1d_points(d, p.deconv_w, p.deconv_b, r));
  Tensor cat = concat_channels(dup, dc);
  Tensor out = relu(linear(cat, p.exp_post1.w, p.exp_post1.b));
  return relu(linear(out, p.exp_post2.w, p.exp_post2.b));
}

Tensor reconstruct_coordinates(const Tensor& expanded, const Tensor& points,
                               const StageParams& p, const StageConfig& cfg) {
  const Index rn = expanded.extent(0);
  if (rn != cfg.r * points.extent(0))
    throw DimensionError("reconstruct_coordinates: expanded rows " +
                         std::to_string(rn) + " != r * input rows " +
                         std::to_string(cfg.r * points.extent(0)));
  Tensor h = relu(linear(expanded, p.rec1.w, p.rec1.b));
  Tensor offsets = linear(h, p.rec2.w, p.rec2.b);
  if (!cfg.use_residual) return offsets;
  return add(offsets, duplicate_points(points, cfg.r));
}

Tensor stage_forward(const Tensor& points, const StageParams& p,
                     const StageConfig& cfg) {
  Tensor f = extract_features(points, p, cfg);
  Tensor expanded = expand_features(f, p, cfg.r);
  return reconstruct_coordinates(expanded, points, p, cfg);
}

std::vector<Tensor> cascade_forward(const Tensor& points, const NetworkParams& net,
                                    int max_stages) {
  int limit = max_stages < 0 ? net.num_stages()
                             : std::min(max_stages, net.num_stages());
  if (limit < 1) throw ArgumentError("cascade_forward: no stages to run");
  std::vector<Tensor> outputs;
  Tensor cur = points;
  for (int s = 0; s < limit; ++s) {
    cur = stage_forward(cur, net.stages[s], net.configs[s]);
    outputs.push_back(cur);
  }
  return outputs;
}

// --- checkpoint i/o --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'C', 'U', 'P', 'N', 'E', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, NetworkParams& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint32_t>(net.num_stages()));
  for (const auto& c : net.configs) {
    write_pod(os, static_cast<uint32_t>(c.r));
    write_pod(os, static_cast<uint32_t>(c.extractor));
    write_pod(os, static_cast<uint32_t>(c.k_attention));
    write_pod(os, static_cast<uint8_t>(c.use_residual));
    write_pod(os, static_cast<uint8_t>(c.use_position_encoding));
  }
  uint32_t count = 0;
  for_each_param(net, [&](const std::string&, Tensor&) { ++count; });
  write_pod(os, count);
  for_each_param(net, [&](const std::string& name, Tensor& t) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.shape().size()));
    for (Index e : t.shape()) write_pod(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("not a network checkpoint: " + path);
  uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  uint32_t num_stages = read_pod<uint32_t>(is);
  std::vector<StageConfig> configs;
  for (uint32_t i = 0; i < num_stages; ++i) {
    StageConfig c;
    c.r = static_cast<int>(read_pod<uint32_t>(is));
    c.extractor = static_cast<ExtractorKind>(read_pod<uint32_t>(is));
    c.k_attention = static_cast<int>(read_pod<uint32_t>(is));
    c.use_residual = read_pod<uint8_t>(is) != 0;
    c.use_position_encoding = read_pod<uint8_t>(is) != 0;
    configs.push_back(c);
  }
  StageConfig base = configs.empty() ? StageConfig{} : configs[0];
  NetworkParams net = init_network(static_cast<int>(num_stages), base, 0);
  net.configs = configs;
  // rebuild deconv kernels in case stored rates differ from the default plan
  for (uint32_t i = 0; i < num_stages; ++i)
    net.stages[i].deconv_w = Tensor::zeros({configs[i].r, 32, 128}, true);

  uint32_t count = read_pod<uint32_t>(is);
  std::unordered_map<std::string, Tensor*> byname;
  for_each_param(net, [&](const std::string& n, Tensor& t) { byname[n] = &t; });
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = read_pod<uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    uint32_t rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<Index>(read_pod<uint64_t>(is));
    auto it = byname.find(name);
    if (it == byname.end())
      throw ParseError("checkpoint tensor '" + name + "' does not match the channel plan");
    Tensor& t = *it->second;
    if (t.shape() != shape)
      throw ParseError("checkpoint tensor '" + name + "' has shape " +
                       shape_str(shape) + ", channel plan expects " +
                       shape_str(t.shape()));
    is.read(reinterpret_cast<char*>(t.mutable_data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint: unexpected end of file in '" + name + "'");
  }
  return net;
}

}  // namespace pcup
