// mf3d: prepare target caches, pretrain, check gradients, extract features.
//
// Exit codes: 0 success, 1 user or configuration error, 2 internal error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mf3d.hpp"

namespace fs = std::filesystem;
using namespace mf3d;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<fs::path> files_with(const fs::path& dir, std::initializer_list<const char*> exts) {
  if (!fs::is_directory(dir)) throw InputError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    for (const char* x : exts)
      if (e.path().extension() == x) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string mesh_dir, xyz_dir, out;
  std::size_t samples = 50000;
  double radius = 0.1;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool meshes = !a.mesh_dir.empty();
  const auto files = meshes ? files_with(a.mesh_dir, {".off", ".obj"}) : files_with(a.xyz_dir, {".xyz"});
  if (files.empty()) throw InputError("no input files in " + (meshes ? a.mesh_dir : a.xyz_dir));
  if (a.samples < 1) throw InputError("--samples must be >= 1");
  if (!(a.radius > 0.0)) throw InputError("--radius must be > 0");
  fs::create_directories(a.out);
  TargetOptions topt;
  topt.radius = a.radius;
  std::size_t ok = 0, points = 0;
  for (const auto& f : files) {
    try {
      PointCloud cloud = meshes ? sample_surface(parse_mesh(f), a.samples, name_seed(a.seed, f.filename().string()))
                                : parse_xyz(f);
      const TargetCache cache = make_target_cache(std::move(cloud), topt);
      write_cache(cache, fs::path(a.out) / (f.stem().string() + ".mf3d"));
      ++ok;
      points += cache.size();
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
    }
  }
  std::printf("prepared %zu/%zu shapes (%zu failed), %zu points, radius %g, %.1f s\n", ok, files.size(),
              files.size() - ok, points, a.radius, seconds_since(t0));
  return ok == 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string config, resume;
  std::uint64_t max_steps = 0;
};

int cmd_pretrain(const PretrainArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  if (cfg.paths.cache_dir.empty()) throw ConfigError("paths.cache_dir is required");
  if (cfg.paths.out_dir.empty()) throw ConfigError("paths.out_dir is required");
  fs::path cache_dir = cfg.paths.cache_dir, out_dir = cfg.paths.out_dir;
  const fs::path base = fs::path(a.config).parent_path();
  if (cache_dir.is_relative()) cache_dir = base / cache_dir;
  if (out_dir.is_relative()) out_dir = base / out_dir;
  const auto data = load_caches(cache_dir);
  const auto t0 = std::chrono::steady_clock::now();
  PretrainOptions opt;
  opt.out_dir = out_dir;
  if (!a.resume.empty()) opt.resume = fs::path(a.resume);
  opt.max_steps = a.max_steps;
  opt.on_epoch = [&](const LossRecord& r) {
    json j = r.to_json();
    j["seconds"] = seconds_since(t0);
    std::cout << j.dump() << std::endl;
  };
  const auto result = pretrain(data, cfg, opt);
  std::printf("done: %zu shapes, %zu steps, epoch %zu, %.1f s%s%s\n", data.size(), result.steps.size(),
              result.final_checkpoint.state.epoch, seconds_since(t0),
              result.last_checkpoint.empty() ? "" : ", checkpoint ", result.last_checkpoint.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  double tolerance = 1e-3;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  ModelConfig model = tiny_model_config();
  if (!a.config.empty()) model = load_run_config(a.config).model();
  detail::fault_hooks().corrupt_gelu_backward = a.inject_fault;
  const GradReport ops = op_gradcheck_suite();
  const GradReport full = model_gradcheck(model);
  std::printf("per-op suite: %zu ops, max relative error %.3e (worst op: %s)\n", ops.entries.size(), ops.max_error,
              ops.worst.c_str());
  std::printf("full model: %zu parameters, max relative error %.3e (worst parameter: %s)\n",
              MaskFeatModel<double>(model, 1).parameters().scalar_count(), full.max_error, full.worst.c_str());
  const bool pass = full.max_error < a.tolerance && ops.max_error < a.tolerance;
  std::printf("%s (tolerance %.1e)\n", pass ? "PASS" : "FAIL", a.tolerance);
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct FeatureArgs {
  std::string ckpt, input, out, config;
  std::uint64_t seed = 0;
};

struct LoadedModel {
  Checkpoint ck;
  std::unique_ptr<MaskFeatModel<double>> model;
};

LoadedModel load_for_inference(const std::string& ckpt_path, const std::string& config_path) {
  LoadedModel m;
  m.ck = read_checkpoint(ckpt_path);
  std::optional<ModelConfig> expected;
  if (!config_path.empty()) expected = load_run_config(config_path).model();
  m.model = load_model<double>(m.ck, expected ? &*expected : nullptr);
  return m;
}

ShapeFeatures features_of(const LoadedModel& m, const fs::path& input, std::uint64_t seed) {
  const TrainConfig& t = m.ck.config.train;
  const PointCloud cloud = load_input_cloud(input, t.num_points, seed);
  return extract_features(*m.model, cloud.points, t.num_patches, t.patch_size, seed);
}

int cmd_features(const FeatureArgs& a) {
  const LoadedModel m = load_for_inference(a.ckpt, a.config);
  const ShapeFeatures f = features_of(m, a.input, a.seed);
  std::ofstream out(a.out);
  if (!out) throw InputError("cannot write " + a.out);
  write_features(out, f);
  std::printf("wrote %zu block rows + 1 pooled row (d_model %zu) to %s\n", f.blocks.size(), f.pooled.size(),
              a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ProbeArgs {
  std::string ckpt, train_dir, test_dir, config;
  std::uint64_t seed = 0;
};

int cmd_probe(const ProbeArgs& a) {
  const LoadedModel m = load_for_inference(a.ckpt, a.config);
  auto embed = [&](const std::string& dir, std::vector<std::vector<double>>& feats, std::vector<std::string>& labels) {
    for (const auto& lf : list_labeled(dir)) {
      feats.push_back(features_of(m, lf.path, a.seed).pooled);
      labels.push_back(lf.label);
    }
  };
  std::vector<std::vector<double>> train, test;
  std::vector<std::string> train_labels, test_labels;
  embed(a.train_dir, train, train_labels);
  embed(a.test_dir, test, test_labels);
  const double acc = nearest_neighbor_accuracy(train, train_labels, test, test_labels);
  std::printf("1-NN accuracy: %.4f (%zu train, %zu test)\n", acc, train.size(), test.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct VisualizeArgs {
  std::string cache, mode, out;
};

int cmd_visualize(const VisualizeArgs& a) {
  const ColorMode mode = a.mode == "normal" ? ColorMode::Normal : ColorMode::Variation;
  const PointCloud cloud = to_point_cloud(read_cache(a.cache));
  write_colored_ply(cloud, mode, a.out);
  std::printf("wrote %zu colored points to %s\n", cloud.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::vector<std::string> shapes;
  int variants = 1;
  bool by_class = false;
};

int cmd_synth(const SynthArgs& a) {
  const auto& names = a.shapes.empty() ? primitive_names() : a.shapes;
  if (a.variants < 1) throw InputError("--variants must be >= 1");
  std::size_t n = 0;
  for (const auto& name : names)
    for (int v = 0; v < a.variants; ++v) {
      const TriangleMesh mesh = make_primitive(name, v);
      fs::path dir = a.out;
      if (a.by_class) dir /= name;
      fs::create_directories(dir);
      write_off(mesh, dir / (name + "_" + std::to_string(v) + ".off"));
      ++n;
    }
  std::printf("wrote %zu meshes to %s\n", n, a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked point-feature pretraining toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mf3d 0.1.0");

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Sample shapes and cache their target features");
  auto* mesh_opt = p->add_option("--mesh-dir", prep.mesh_dir, "Directory of .off/.obj meshes");
  auto* xyz_opt = p->add_option("--xyz-dir", prep.xyz_dir, "Directory of .xyz point files");
  mesh_opt->excludes(xyz_opt);
  p->add_option("--out", prep.out, "Output cache directory")->required();
  p->add_option("--samples", prep.samples, "Points sampled per mesh")->capture_default_str();
  p->add_option("--radius", prep.radius, "Neighborhood radius")->capture_default_str();
  p->add_option("--seed", prep.seed, "Sampling seed")->capture_default_str();
  p->callback([&] {
    if (prep.mesh_dir.empty() && prep.xyz_dir.empty()) throw CLI::RequiredError("--mesh-dir or --xyz-dir");
  });

  PretrainArgs pre;
  auto* t = app.add_subcommand("pretrain", "Run masked-feature pretraining");
  t->add_option("--config", pre.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", pre.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_option("--max-steps", pre.max_steps, "Stop after this many optimizer steps (0: no limit)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare backward() against finite differences (64-bit)");
  g->add_option("--config", gc.config, "Model configuration (default: built-in tiny model)")
      ->check(CLI::ExistingFile);
  g->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  g->add_flag("--inject-fault", gc.inject_fault)->group("");

  FeatureArgs fa;
  auto* f = app.add_subcommand("features", "Write per-block and pooled encoder features for one cloud");
  f->add_option("--ckpt", fa.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  f->add_option("--input", fa.input, "Cloud (.xyz, .off, .obj or .mf3d)")->required()->check(CLI::ExistingFile);
  f->add_option("--out", fa.out, "Output text file")->required();
  f->add_option("--config", fa.config, "Config the checkpoint must match")->check(CLI::ExistingFile);
  f->add_option("--seed", fa.seed, "Subsampling and FPS seed")->capture_default_str();

  ProbeArgs pa;
  auto* pr = app.add_subcommand("probe", "Nearest-neighbor classification on pooled features");
  pr->add_option("--ckpt", pa.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--train-dir", pa.train_dir, "Labeled clouds: <dir>/<class>/<file>")->required();
  pr->add_option("--test-dir", pa.test_dir, "Labeled clouds: <dir>/<class>/<file>")->required();
  pr->add_option("--config", pa.config, "Config the checkpoint must match")->check(CLI::ExistingFile);
  pr->add_option("--seed", pa.seed, "Subsampling and FPS seed")->capture_default_str();

  VisualizeArgs va;
  auto* v = app.add_subcommand("visualize", "Write a target cache as a colored PLY");
  v->add_option("--cache", va.cache, "Target cache (.mf3d)")->required()->check(CLI::ExistingFile);
  v->add_option("--mode", va.mode, "normal or variation")
      ->required()
      ->check(CLI::IsMember({"normal", "variation"}));
  v->add_option("--out", va.out, "Output .ply")->required();

  SynthArgs sa;
  auto* s = app.add_subcommand("synth", "Write toy primitive meshes as OFF files");
  s->add_option("--out", sa.out, "Output directory")->required();
  s->add_option("--shapes", sa.shapes, "Primitive names (default: all)");
  s->add_option("--variants", sa.variants, "Proportion variants per shape")->capture_default_str();
  s->add_flag("--by-class", sa.by_class, "One subdirectory per shape name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*p) return cmd_prepare(prep);
    if (*t) return cmd_pretrain(pre);
    if (*g) return cmd_gradcheck(gc);
    if (*f) return cmd_features(fa);
    if (*pr) return cmd_probe(pa);
    if (*v) return cmd_visualize(va);
    if (*s) return cmd_synth(sa);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
