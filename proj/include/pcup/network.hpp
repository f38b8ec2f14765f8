#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcup/geometry.hpp"
#include "pcup/tensor.hpp"

namespace pcup {

enum class ExtractorKind { transformer, mlp_only };

ExtractorKind parse_extractor_kind(const std::string& s);
std::string to_string(ExtractorKind k);

struct StageConfig {
  int r = 2;
  int k_attention = 16;
  ExtractorKind extractor = ExtractorKind::transformer;
  bool use_residual = true;
  bool use_position_encoding = true;
};

struct LinearParams {
  Tensor w, b;
};

// Channel plan per stage: feature extraction 3->64->128, global pool +
// concat reduced 256->128->128, transformer q/k/v 128->64, position MLP
// 3->64->64, attention MLP 64->64, output projection 64->128; expansion
// 128->32, deconv kernel [r,32,128], post-concat 256->256->128;
// reconstruction 128->64->3.
struct StageParams {
  LinearParams mlp1, mlp2;
  LinearParams post1, post2;
  LinearParams to_q, to_k, to_v;
  LinearParams pos1, pos2;
  LinearParams attn;
  LinearParams out_proj;
  LinearParams exp_pre;
  Tensor deconv_w, deconv_b;
  LinearParams exp_post1, exp_post2;
  LinearParams rec1, rec2;
};

struct NetworkParams {
  std::vector<StageParams> stages;
  std::vector<StageConfig> configs;  // same length as stages

  int num_stages() const { return static_cast<int>(stages.size()); }
  int total_rate() const;
};

// Stage rate plan for a given stage count: 2 -> (2,2); 3 -> (2,2,1);
// 4 -> (2,2,1,1). Upsampling stages first, refinement stages last.
std::vector<int> stage_rates(int num_stages);

NetworkParams init_network(int num_stages, const StageConfig& base, uint64_t seed);

void for_each_param(StageParams& s, int r,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(NetworkParams& net,
                    const std::function<void(const std::string&, Tensor&)>& fn);

// Zeroes the final offset-regression layer of every stage so the cascade
// is an exact interleaved-duplication map.
void zero_offset_heads(NetworkParams& net);

int64_t count_parameters(const NetworkParams& net);

Tensor extract_features(const Tensor& points, const StageParams& p,
                        const StageConfig& cfg);
Tensor expand_features(const Tensor& features, const StageParams& p, int r);
Tensor reconstruct_coordinates(const Tensor& expanded, const Tensor& points,
                               const StageParams& p, const StageConfig& cfg);
Tensor stage_forward(const Tensor& points, const StageParams& p,
                     const StageConfig& cfg);

// Outputs of every stage in order, for multi-stage supervision. max_stages
// limits how many stages run (e.g. skip the refiner); -1 runs all.
std::vector<Tensor> cascade_forward(const Tensor& points, const NetworkParams& net,
                                    int max_stages = -1);

void save_checkpoint(const std::string& path, NetworkParams& net);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace pcup
