// pcup: point cloud upsampling CLI
//
// Subcommands: train, upsample, eval, gradcheck, ablate.
// Exit codes: 0 success, 1 user error, 2 internal invariant violation.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <iostream>
#include <sstream>

#include "pcup/gradcheck_suite.hpp"
#include "pcup/io.hpp"
#include "pcup/pipeline.hpp"
#include "pcup/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcup;

namespace {

struct RunConfig {
  TrainConfig train;
  StageConfig stage;
  std::string dataset = "toy://standard";
  int patches_per_shape = 64;
  int inference_patch_size = 256;
  std::string out_dir;  // empty -> runs/<hash>-<seed>
  int threads = 1;      // reserved; all kernels run single-threaded
  std::string supervision = "all_stages";
  std::string extractor = "transformer";
};

// key=value pairs, '#' comments; unknown keys rejected
void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto as_int = [&] { return std::stoi(val); };
    auto as_double = [&] { return std::stod(val); };
    auto as_bool = [&] {
      if (val == "true" || val == "1") return true;
      if (val == "false" || val == "0") return false;
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad boolean '" + val + "'");
    };
    if (key == "epochs") cfg.train.epochs = as_int();
    else if (key == "batch_size") cfg.train.batch_size = as_int();
    else if (key == "lr0") cfg.train.lr0 = as_double();
    else if (key == "lr_decay") cfg.train.lr_decay = as_double();
    else if (key == "decay_interval_iters") cfg.train.decay_interval_iters = as_int();
    else if (key == "patch_gt_size") cfg.train.patch_gt_size = as_int();
    else if (key == "patch_input_size") cfg.train.patch_input_size = as_int();
    else if (key == "seed") cfg.train.seed = std::stoull(val);
    else if (key == "supervision") cfg.supervision = val;
    else if (key == "stages") cfg.train.num_stages = as_int();
    else if (key == "clip_gradients") cfg.train.clip_gradients = as_bool();
    else if (key == "clip_norm") cfg.train.clip_norm = as_double();
    else if (key == "k_attention") cfg.stage.k_attention = as_int();
    else if (key == "extractor") cfg.extractor = val;
    else if (key == "use_residual") cfg.stage.use_residual = as_bool();
    else if (key == "use_position_encoding") cfg.stage.use_position_encoding = as_bool();
    else if (key == "dataset") cfg.dataset = val;
    else if (key == "patches_per_shape") cfg.patches_per_shape = as_int();
    else if (key == "inference_patch_size") cfg.inference_patch_size = as_int();
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "threads") cfg.threads = as_int();
    else
      throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
}

std::string canonical_config(const RunConfig& c) {
  std::ostringstream os;
  os << "batch_size=" << c.train.batch_size << "\n"
     << "clip_gradients=" << c.train.clip_gradients << "\n"
     << "clip_norm=" << c.train.clip_norm << "\n"
     << "dataset=" << c.dataset << "\n"
     << "decay_interval_iters=" << c.train.decay_interval_iters << "\n"
     << "epochs=" << c.train.epochs << "\n"
     << "extractor=" << c.extractor << "\n"
     << "inference_patch_size=" << c.inference_patch_size << "\n"
     << "k_attention=" << c.stage.k_attention << "\n"
     << "lr0=" << c.train.lr0 << "\n"
     << "lr_decay=" << c.train.lr_decay << "\n"
     << "patch_gt_size=" << c.train.patch_gt_size << "\n"
     << "patch_input_size=" << c.train.patch_input_size << "\n"
     << "patches_per_shape=" << c.patches_per_shape << "\n"
     << "seed=" << c.train.seed << "\n"
     << "stages=" << c.train.num_stages << "\n"
     << "supervision=" << c.supervision << "\n"
     << "threads=" << c.threads << "\n"
     << "use_position_encoding=" << c.stage.use_position_encoding << "\n"
     << "use_residual=" << c.stage.use_residual << "\n";
  return os.str();
}

std::string config_hash(const RunConfig& c) {
  // FNV-1a over the canonical listing
  uint64_t h = 1469598103934665603ull;
  for (char ch : canonical_config(c)) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf).substr(0, 8);
}

std::vector<Points> load_training_patches(const RunConfig& cfg) {
  const std::string toy_prefix = "toy://";
  if (cfg.dataset.rfind(toy_prefix, 0) == 0) {
    std::string names = cfg.dataset.substr(toy_prefix.size());
    std::vector<std::string> shapes;
    if (names == "standard") {
      shapes = {"sphere", "torus", "box"};
    } else {
      std::istringstream ss(names);
      std::string name;
      while (std::getline(ss, name, ',')) shapes.push_back(name);
    }
    return toy_training_patches(shapes, cfg.patches_per_shape,
                                cfg.train.patch_gt_size, cfg.train.seed);
  }
  auto entries = read_manifest(cfg.dataset);
  if (entries.empty()) throw ArgumentError("empty dataset manifest: " + cfg.dataset);
  std::vector<Points> patches;
  for (const auto& e : entries) {
    Points cloud = read_cloud(e.cloud_path);
    PatchSet set = extract_patches(cloud, cfg.patches_per_shape,
                                   cfg.train.patch_gt_size);
    for (auto& p : set.patches) patches.push_back(std::move(p.cloud.pts));
  }
  return patches;
}

int cmd_train(RunConfig cfg) {
  cfg.train.supervision = parse_supervision(cfg.supervision);
  cfg.stage.extractor = parse_extractor_kind(cfg.extractor);
  if (cfg.train.patch_input_size * 4 != cfg.train.patch_gt_size)
    throw ArgumentError("patch_input_size * 4 must equal patch_gt_size for x4 training");

  fs::path out = cfg.out_dir.empty()
                     ? fs::path("runs") / (config_hash(cfg) + "-" +
                                           std::to_string(cfg.train.seed))
                     : fs::path(cfg.out_dir);
  fs::create_directories(out);
  {
    std::ofstream os(out / "config.txt");
    os << canonical_config(cfg);
  }

  auto patches = load_training_patches(cfg);
  std::cout << "training on " << patches.size() << " patches ("
            << cfg.train.patch_input_size << " -> " << cfg.train.patch_gt_size
            << "), " << cfg.train.num_stages << " stages, seed "
            << cfg.train.seed << "\n";
  auto result = train(patches, cfg.train, cfg.stage, /*verbose=*/true);

  save_checkpoint((out / "checkpoint.bin").string(), result.net);
  write_report(result.report, (out / "report.txt").string());
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << "\n";
  std::cout << "report:     " << (out / "report.txt").string() << "\n";
  std::cout << "parameters: " << count_parameters(result.net) << " ("
            << count_parameters(result.net) * sizeof(double) << " bytes)\n";
  return 0;
}

int cmd_upsample(const std::string& checkpoint, const std::string& input,
                 const std::string& output, int rate, bool no_refiner,
                 int patch_size) {
  if (rate != 4 && rate != 16)
    throw ArgumentError("--rate must be 4 or 16, got " + std::to_string(rate));
  NetworkParams net = load_checkpoint(checkpoint);
  Points cloud = read_cloud(input);
  Points up = upsample_cloud(cloud, net, rate, !no_refiner, patch_size);
  write_cloud(up, output);
  std::cout << input << ": " << cloud.rows() << " -> " << up.rows()
            << " points -> " << output << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& mesh_path, const std::string& surface_name,
             bool as_json) {
  Points pred = read_cloud(pred_path);
  Points gt = read_cloud(gt_path);
  if (pred.rows() == 0 || gt.rows() == 0)
    throw ArgumentError("eval: empty point cloud");
  std::optional<Surface> surface;
  if (!mesh_path.empty()) surface = read_off_mesh(mesh_path);
  else if (!surface_name.empty()) surface = make_toy_surface(surface_name);
  MetricRecord m = evaluate(pred, gt, surface);
  // reported x10^3
  if (as_json) {
    json j{{"cd", m.cd * 1e3}, {"hd", m.hd * 1e3}};
    j["p2f"] = m.p2f ? json(*m.p2f * 1e3) : json(nullptr);
    std::cout << j.dump() << "\n";
  } else {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-12s %-12s %-12s\n", "CD(x1e3)", "HD(x1e3)",
                  "P2F(x1e3)");
    std::cout << buf;
    if (m.p2f)
      std::snprintf(buf, sizeof(buf), "%-12.3f %-12.3f %-12.3f\n", m.cd * 1e3,
                    m.hd * 1e3, *m.p2f * 1e3);
    else
      std::snprintf(buf, sizeof(buf), "%-12.3f %-12.3f %-12s\n", m.cd * 1e3,
                    m.hd * 1e3, "-");
    std::cout << buf;
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& corrupt) {
  auto results = run_gradcheck_suite(seed, corrupt);
  bool ok = true;
  for (const auto& [name, err] : results) {
    bool pass = err < kGradCheckTolerance;
    ok = ok && pass;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-24s %-10.3e %s\n", name.c_str(), err,
                  pass ? "ok" : "FAIL");
    std::cout << buf;
  }
  return ok ? 0 : 2;
}

struct AblationAxis {
  std::string name;
  double baseline;  // final CD of the reference variant
  double variant;   // final CD of the alternative (expected worse)
};

void print_axis(const AblationAxis& a) {
  double ratio = a.variant / a.baseline;
  const char* verdict = "better";
  if (ratio < 0.95) verdict = "worse";        // alternative clearly ahead
  else if (ratio <= 1.05) verdict = "inconclusive";
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%-28s reference=%.6e alternative=%.6e ratio=%.3f -> %s\n",
                a.name.c_str(), a.baseline, a.variant, ratio, verdict);
  std::cout << buf;
}

int cmd_ablate(uint64_t seed, int epochs, int patches_per_shape) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.seed = seed;
  tc.patch_gt_size = 256;
  tc.patch_input_size = 64;
  tc.decay_interval_iters = 200;
  StageConfig sc;
  sc.k_attention = 8;
  auto patches = toy_training_patches({"sphere", "torus", "box"}, patches_per_shape,
                                      tc.patch_gt_size, seed);
  auto final_cd = [](const TrainResult& r) {
    return r.report.epochs.back().stage_losses.back();
  };

  std::cout << "ablations on " << patches.size() << " patches, " << epochs
            << " epochs, seed " << seed << "\n";
  auto base = train(patches, tc, sc);
  std::cout << "reference (3 stages, residual, all-stage supervision) done\n";

  {
    TrainConfig t2 = tc;
    t2.num_stages = 2;
    auto two = train(patches, t2, sc);
    print_axis({"stage_count_3_vs_2", final_cd(base), final_cd(two)});
  }
  {
    StageConfig s2 = sc;
    s2.use_residual = false;
    auto nores = train(patches, tc, s2);
    print_axis({"residual_on_vs_off", final_cd(base), final_cd(nores)});
  }
  {
    TrainConfig t2 = tc;
    t2.supervision = Supervision::last_stage;
    auto last = train(patches, t2, sc);
    print_axis({"supervision_all_vs_last", final_cd(base), final_cd(last)});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // keep large tensor buffers on the heap instead of churning through mmap
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"cascaded point cloud upsampling (x4, patch-based)"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;

  auto* t = app.add_subcommand("train", "train the cascade on patch pairs");
  t->add_option("--config", config_path, "key=value config file; unknown keys rejected");
  t->add_option("--dataset", cfg.dataset,
                "toy://standard, toy://<shape,...> or a manifest file")
      ->capture_default_str();
  t->add_option("--epochs", cfg.train.epochs, "training epochs")->capture_default_str();
  t->add_option("--batch", cfg.train.batch_size, "patches per optimizer step")
      ->capture_default_str();
  t->add_option("--lr0", cfg.train.lr0, "initial learning rate")->capture_default_str();
  t->add_option("--lr-decay", cfg.train.lr_decay, "multiplicative decay factor")
      ->capture_default_str();
  t->add_option("--decay-interval", cfg.train.decay_interval_iters,
                "iterations between decays")
      ->capture_default_str();
  t->add_option("--seed", cfg.train.seed, "rng seed; runs are bitwise reproducible")
      ->capture_default_str();
  t->add_option("--stages", cfg.train.num_stages, "stage count (2, 3 or 4)")
      ->capture_default_str();
  t->add_option("--supervision", cfg.supervision, "all_stages or last_stage")
      ->capture_default_str();
  t->add_option("--k-attention", cfg.stage.k_attention, "attention neighborhood size")
      ->capture_default_str();
  t->add_option("--extractor", cfg.extractor, "transformer or mlp_only")
      ->capture_default_str();
  t->add_flag("--no-residual", [&cfg](int64_t) { cfg.stage.use_residual = false; },
              "regress absolute coordinates instead of offsets");
  t->add_flag("--no-position-encoding",
              [&cfg](int64_t) { cfg.stage.use_position_encoding = false; },
              "drop relative-position terms from attention");
  t->add_option("--patches-per-shape", cfg.patches_per_shape,
                "training patches cut per input shape")
      ->capture_default_str();
  t->add_option("--patch-gt-size", cfg.train.patch_gt_size, "points per ground-truth patch")
      ->capture_default_str();
  t->add_option("--patch-input-size", cfg.train.patch_input_size,
                "points per input patch (gt/4)")
      ->capture_default_str();
  t->add_option("--out", cfg.out_dir, "output directory (default runs/<hash>-<seed>)");
  t->add_option("--threads", cfg.threads, "worker threads (default 1 for reproducibility)")
      ->capture_default_str();

  std::string ckpt, input, output;
  int rate = 4;
  bool no_refiner = false;
  int patch_size = 256;
  auto* u = app.add_subcommand("upsample", "upsample a point cloud with a checkpoint");
  u->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  u->add_option("--input", input, "input cloud (.xyz/.ply/.off)")->required();
  u->add_option("--output", output, "output cloud path")->required();
  u->add_option("--rate", rate, "4, or 16 (applies the x4 model twice)")
      ->capture_default_str();
  u->add_flag("--no-refiner", no_refiner, "skip the r=1 refinement stage");
  u->add_option("--patch-size", patch_size, "inference patch size")->capture_default_str();

  std::string pred_path, gt_path, mesh_path, surface_name;
  bool as_json = false;
  auto* e = app.add_subcommand("eval", "CD/HD/P2F metrics (x1e3, jointly normalized)");
  e->add_option("--pred", pred_path, "predicted cloud")->required();
  e->add_option("--gt", gt_path, "ground-truth cloud")->required();
  e->add_option("--mesh", mesh_path, "OFF mesh for point-to-surface distance");
  e->add_option("--surface", surface_name, "analytic surface name for P2F");
  e->add_flag("--json", as_json, "machine-readable output");

  uint64_t gc_seed = 7;
  std::string corrupt;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every op");
  g->add_option("--seed", gc_seed, "rng seed")->capture_default_str();
  g->add_option("--corrupt", corrupt,
                "negative control: force the named op's result invalid");

  uint64_t ab_seed = 11;
  int ab_epochs = 10;
  int ab_patches = 16;
  auto* a = app.add_subcommand("ablate", "stage-count / residual / supervision sweeps");
  a->add_option("--seed", ab_seed, "rng seed")->capture_default_str();
  a->add_option("--epochs", ab_epochs, "epochs per variant")->capture_default_str();
  a->add_option("--patches-per-shape", ab_patches, "patches per toy shape")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      RunConfig from_file;
      apply_config_file(from_file, config_path);
      // file provides defaults; explicit CLI flags take precedence
      RunConfig merged = from_file;
      for (const auto* opt : t->get_options()) {
        if (opt->count() == 0) continue;
        (void)opt;  // flags already wrote into cfg
      }
      // copy only fields the user did not set on the command line
      auto set = [&](const std::string& flag) { return t->count(flag) > 0; };
      if (!set("--dataset")) cfg.dataset = merged.dataset;
      if (!set("--epochs")) cfg.train.epochs = merged.train.epochs;
      if (!set("--batch")) cfg.train.batch_size = merged.train.batch_size;
      if (!set("--lr0")) cfg.train.lr0 = merged.train.lr0;
      if (!set("--lr-decay")) cfg.train.lr_decay = merged.train.lr_decay;
      if (!set("--decay-interval"))
        cfg.train.decay_interval_iters = merged.train.decay_interval_iters;
      if (!set("--seed")) cfg.train.seed = merged.train.seed;
      if (!set("--stages")) cfg.train.num_stages = merged.train.num_stages;
      if (!set("--supervision")) cfg.supervision = merged.supervision;
      if (!set("--k-attention")) cfg.stage.k_attention = merged.stage.k_attention;
      if (!set("--extractor")) cfg.extractor = merged.extractor;
      if (!set("--no-residual")) cfg.stage.use_residual = merged.stage.use_residual;
      if (!set("--no-position-encoding"))
        cfg.stage.use_position_encoding = merged.stage.use_position_encoding;
      if (!set("--patches-per-shape")) cfg.patches_per_shape = merged.patches_per_shape;
      if (!set("--patch-gt-size")) cfg.train.patch_gt_size = merged.train.patch_gt_size;
      if (!set("--patch-input-size"))
        cfg.train.patch_input_size = merged.train.patch_input_size;
      if (!set("--out")) cfg.out_dir = merged.out_dir;
      if (!set("--threads")) cfg.threads = merged.threads;
      cfg.train.clip_gradients = merged.train.clip_gradients;
      cfg.train.clip_norm = merged.train.clip_norm;
    }

    if (t->parsed()) return cmd_train(cfg);
    if (u->parsed()) return cmd_upsample(ckpt, input, output, rate, no_refiner, patch_size);
    if (e->parsed()) return cmd_eval(pred_path, gt_path, mesh_path, surface_name, as_json);
    if (g->parsed()) return cmd_gradcheck(gc_seed, corrupt);
    if (a->parsed()) return cmd_ablate(ab_seed, ab_epochs, ab_patches);
  } catch (const ArgumentError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const DimensionError& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
