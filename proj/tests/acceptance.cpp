// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "oracles.hpp"

using namespace mf3d;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mf3d_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig desk_config() { return load_run_config(fs::path(MF3D_SOURCE_DIR) / "configs" / "desk.json"); }

std::vector<double> flat_params(const Checkpoint& ck) {
  std::vector<double> out;
  for (const auto& b : ck.blobs) out.insert(out.end(), b.data.begin(), b.data.end());
  return out;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

// 1 ------------------------------------------------------------------------

Outcome geometry_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t shapes = 0, points = 0, bad_normals = 0, bad_variations = 0;
  for (int variant = 0; shapes < 20; ++variant)
    for (const auto& name : primitive_names()) {
      if (shapes == 20) break;
      PrepareOptions opt;
      opt.seed = name_seed(0, name + std::to_string(variant));
      const TargetCache cache = prepare_mesh(make_primitive(name, variant), opt);
      for (std::size_t i = 0; i < cache.size(); ++i) {
        bad_normals += !(std::abs(norm(to_double(cache.normals[i])) - 1.0) <= 1e-6);
        const double v = cache.variations[i];
        bad_variations += !(v >= 0.0 && v <= 1.0 / 3.0 + 1e-6);
      }
      points += cache.size();
      ++shapes;
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = bad_normals == 0 && bad_variations == 0 && secs < 120.0;
  o.detail = fmt("%zu shapes, %zu points, %zu non-unit normals, %zu variations out of range, %.1f s", shapes, points,
                 bad_normals, bad_variations, secs);
  return o;
}

// 2 ------------------------------------------------------------------------

Outcome analytic_fixtures() {
  Rng rng(11);
  const KdTree plane(oracle::plane_points(rng, 5000));
  double plane_sigma = 0.0, plane_normal = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vec3 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), 0.0};
    const auto eig = eigh3(local_covariance(plane, p, 0.1, 8, 128));
    plane_sigma = std::max(plane_sigma, surface_variation(eig));
    const Vec3 n = estimate_normal(eig).normal;
    plane_normal = std::max(plane_normal, norm(Vec3{n[0], n[1], std::abs(n[2]) - 1.0}));
  }
  const KdTree ball(oracle::ball_points(rng, 50000));
  const double ball_sigma = surface_variation(eigh3(local_covariance(ball, {0, 0, 0}, 1.0)));
  EigenDecomp3 d;
  d.values = {1.0, 2.0, 3.0};
  const double sixth = surface_variation(d);
  Outcome o;
  o.pass = plane_sigma < 1e-9 && plane_normal < 1e-6 && std::abs(ball_sigma - 1.0 / 3.0) <= 0.01 &&
           sixth == 1.0 / 6.0;
  o.detail = fmt("plane sigma %.1e normal err %.1e; ball sigma %.4f; (1,2,3) sigma %s", plane_sigma, plane_normal,
                 ball_sigma, sixth == 1.0 / 6.0 ? "== 1/6" : "!= 1/6");
  return o;
}

// 3 ------------------------------------------------------------------------

Outcome eigensolver() {
  Rng rng(12);
  double val_err = 0.0, rec_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double s = std::pow(10.0, rng.uniform(-3, 1));
    Covariance3 c{s * rng.uniform(-1, 1), s * rng.uniform(-1, 1), s * rng.uniform(-1, 1),
                  s * rng.uniform(-1, 1), s * rng.uniform(-1, 1), s * rng.uniform(-1, 1)};
    const auto e = eigh3(c);
    const auto want = oracle::cubic_eigenvalues(c.matrix());
    for (int i = 0; i < 3; ++i) val_err = std::max(val_err, std::abs(e.values[i] - want[i]));
    const Mat3 m = c.matrix();
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) acc += e.values[i] * e.vectors[i][r] * e.vectors[i][q];
        rec_err = std::max(rec_err, std::abs(acc - m[r][q]));
      }
  }
  Outcome o;
  o.pass = val_err < 1e-8 && rec_err < 1e-7;
  o.detail = fmt("1000 matrices: max eigenvalue error %.2e, max reconstruction error %.2e", val_err, rec_err);
  return o;
}

// 4 ------------------------------------------------------------------------

Outcome rotation_equivariance() {
  Rng rng(13);
  std::vector<std::pair<std::string, int>> shapes;
  for (const auto& n : primitive_names()) shapes.push_back({n, 0});
  shapes.push_back({"ellipsoid", 1});
  double worst_angle = 0.0, worst_var = 0.0;
  bool transport_bits = true;
  for (const auto& [name, variant] : shapes) {
    PointCloud c = sample_surface(make_primitive(name, variant), 10000, name_seed(4, name));
    normalize_unit_sphere(c);
    const auto base = compute_dense_targets(c);
    PointCloud labeled = c;
    labeled.normals = base.normals;
    labeled.variations = base.variations;
    for (int r = 0; r < 5; ++r) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Mat3 R = rotation_z(angle);
      const PointCloud moved = rotate_z(labeled, angle);
      for (std::size_t i = 0; i < c.size(); ++i) {
        transport_bits &= same_bits(moved.variations[i], base.variations[i]);
        worst_angle = std::max(worst_angle, oracle::angle_up_to_sign(moved.normals[i], R * base.normals[i]));
      }
      const auto again = compute_dense_targets(PointCloud{moved.points, {}, {}});
      for (std::size_t i = 0; i < c.size(); ++i) {
        worst_angle = std::max(worst_angle, oracle::angle_up_to_sign(again.normals[i], R * base.normals[i]));
        worst_var = std::max(worst_var, std::abs(again.variations[i] - base.variations[i]));
      }
    }
  }
  Outcome o;
  o.pass = worst_angle < 1e-3 && transport_bits && worst_var < 1e-3;
  o.detail = fmt("10 shapes x 5 rotations: max normal angle %.2e rad, transported variations %s, max recomputed "
                 "variation change %.2e",
                 worst_angle, transport_bits ? "bit-identical" : "CHANGED", worst_var);
  return o;
}

// 5 ------------------------------------------------------------------------

Outcome masking_formula() {
  std::size_t mismatches = 0, checked = 0;
  for (std::size_t k = 1; k <= 256; ++k)
    for (std::size_t j = 1; j <= 99; ++j, ++checked)
      mismatches += mask_count(k, static_cast<double>(j) / 100.0) != oracle::mask_count(k, j, 100);
  Rng rng(14);
  std::size_t broken = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 256 + rng.index(768);
    const auto pts = oracle::random_points(rng, n);
    const auto plan = plan_masking(pts, {32, 16 + rng.index(24), rng.uniform(0.05, 0.95), 1.0}, rng);
    std::vector<char> member(n, 0);
    for (auto pid : plan.split.masked_patch_ids)
      for (auto idx : plan.patches.membership[pid]) member[idx] = 1;
    std::vector<int> seen(n, 0);
    for (auto i : plan.split.masked_points) seen[i] += 1;
    for (auto i : plan.split.unmasked_points) seen[i] += 2;
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) ok &= (seen[i] == 1 && member[i]) || (seen[i] == 2 && !member[i]);
    broken += !ok;
  }
  Outcome o;
  o.pass = mismatches == 0 && broken == 0;
  o.detail = fmt("%zu/%zu mask counts differ from exact evaluation; %zu/100 splits violate the partition", mismatches,
                 checked, broken);
  return o;
}

// 6 ------------------------------------------------------------------------

PointCloud random_labeled(Rng& rng, std::size_t n) {
  PointCloud c;
  c.points = oracle::random_points(rng, n);
  for (std::size_t i = 0; i < n; ++i) {
    c.normals.push_back(oracle::random_unit(rng));
    c.variations.push_back(rng.uniform(0.0, 1.0 / 3.0));
  }
  return c;
}

Outcome leakage_guard() {
  Rng rng(15);
  const MaskFeatModel<double> model(tiny_model_config(), 3);
  std::size_t bad_encoder = 0, bad_decoder = 0;
  for (int t = 0; t < 50; ++t) {
    const auto cloud = random_labeled(rng, 256);
    const auto plan = plan_masking(cloud.points, {16, 24, 0.6, rng.uniform(0.2, 1.0)}, rng);
    AccessLog log;
    forward_masked(model, cloud, plan, {}, &log);
    std::set<std::size_t> want;
    for (auto pid : plan.split.unmasked_patch_ids(plan.patches.size()))
      for (auto idx : plan.patches.membership[pid])
        if (!plan.split.is_masked[idx]) want.insert(idx);
    bad_encoder += std::set<std::size_t>(log.encoder_points.begin(), log.encoder_points.end()) != want;
    bool dec_ok = log.decoder_queries == plan.queries;
    for (auto q : log.decoder_queries) dec_ok &= plan.split.is_masked[q] != 0;
    bad_decoder += !dec_ok;
  }
  Outcome o;
  o.pass = bad_encoder == 0 && bad_decoder == 0;
  o.detail = fmt("50 masks: encoder access mismatches %zu, decoder query mismatches %zu", bad_encoder, bad_decoder);
  return o;
}

// 7 ------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = tiny_model_config();
  const std::size_t n_params = MaskFeatModel<double>(cfg, 1).parameters().scalar_count();
  const GradReport model = model_gradcheck(cfg);
  const GradReport ops = op_gradcheck_suite();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = n_params <= 2000 && model.max_error < 1e-3 && ops.max_error < 1e-4 && secs < 300.0;
  o.detail = fmt("model (%zu params) max rel error %.2e at %s; %zu ops max %.2e at %s; %.1f s", n_params,
                 model.max_error, model.worst.c_str(), ops.entries.size(), ops.max_error, ops.worst.c_str(), secs);
  return o;
}

// 8 ------------------------------------------------------------------------

Outcome cross_only_isolation() {
  auto run = [](AttentionMode mode, std::size_t& changed_others, std::size_t& unchanged_self) {
    ModelConfig cfg = tiny_model_config();
    cfg.decoder.attention_mode = mode;
    cfg.decoder.blocks = 2;
    const MaskFeatModel<double> model(cfg, 9);
    Rng rng(16);
    BlockFeatures<double> blocks;
    blocks.features = detail::random_tensor(rng, {6, cfg.decoder.d_model});
    blocks.centroids = oracle::random_points(rng, 6);
    blocks.patch_ids = {0, 1, 2, 3, 4, 5};
    const auto queries = oracle::random_points(rng, 12);
    const auto base = model.decoder().decode(blocks, queries);
    changed_others = unchanged_self = 0;
    for (std::size_t moved = 0; moved < queries.size(); ++moved) {
      auto q2 = queries;
      q2[moved] = q2[moved] + Vec3{0.2, -0.1, 0.3};
      const auto p = model.decoder().decode(blocks, q2);
      for (std::size_t r = 0; r < queries.size(); ++r) {
        bool same = same_bits(p.variations[r], base.variations[r]);
        for (int j = 0; j < 3; ++j) same &= same_bits(p.normals[3 * r + j], base.normals[3 * r + j]);
        if (r == moved)
          unchanged_self += same;
        else
          changed_others += !same;
      }
    }
  };
  std::size_t cross_changed, cross_self, sc_changed, sc_self;
  run(AttentionMode::CrossOnly, cross_changed, cross_self);
  run(AttentionMode::SelfCross, sc_changed, sc_self);
  const std::size_t pairs = 12 * 11;
  Outcome o;
  o.pass = cross_changed == 0 && cross_self == 0 && sc_changed == pairs;
  o.detail = fmt("cross-only: %zu/%zu other rows changed; self+cross: %zu/%zu other rows changed", cross_changed, pairs,
                 sc_changed, pairs);
  return o;
}

// 9 ------------------------------------------------------------------------

std::vector<TargetCache> overfit_shapes() {
  std::vector<TargetCache> data;
  for (const char* name : {"sphere", "ellipsoid", "box", "cylinder", "cone", "torus", "tetrahedron", "octahedron"}) {
    PrepareOptions opt;
    opt.samples = 20000;
    opt.seed = name_seed(9, name);
    data.push_back(prepare_mesh(make_primitive(name), opt));
  }
  return data;
}

Outcome desk_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = overfit_shapes();
  RunConfig cfg = desk_config();
  cfg.train.epochs = 200 * cfg.train.batch_size / data.size();
  cfg.train.augment = {};  // fixed set: nothing to generalize over
  const auto run = pretrain(data, cfg);
  const double initial = run.steps.front().loss, final_loss = run.steps.back().loss;
  const bool learned = run.steps.size() == 200 && final_loss < 0.3 * initial;

  RunConfig f64 = desk_config();
  f64.train.precision = Precision::F64;
  f64.train.epochs = 4 * f64.train.batch_size / data.size();
  f64.train.warmup_epochs = 1;
  const auto a = pretrain(data, f64);
  const auto b = pretrain(data, f64);
  bool identical = a.steps.size() == b.steps.size();
  for (std::size_t i = 0; identical && i < a.steps.size(); ++i) identical = same_bits(a.steps[i].loss, b.steps[i].loss);
  identical = identical && bit_equal(flat_params(a.final_checkpoint), flat_params(b.final_checkpoint));

  const auto dir = scratch("resume");
  PretrainOptions first;
  first.out_dir = dir;
  first.max_steps = a.steps.size() / 2;
  pretrain(data, f64, first);
  PretrainOptions rest;
  rest.resume = dir / "checkpoints" / "last.ckpt";
  const auto c = pretrain(data, f64, rest);
  bool resumed = c.steps.size() == a.steps.size() - first.max_steps;
  for (std::size_t i = 0; resumed && i < c.steps.size(); ++i)
    resumed = same_bits(c.steps[i].loss, a.steps[i + first.max_steps].loss);
  resumed = resumed && bit_equal(flat_params(c.final_checkpoint), flat_params(a.final_checkpoint));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = learned && identical && resumed && secs < 600.0;
  o.detail = fmt("overfit %zu steps: loss %.4f -> %.4f (ratio %.3f); 64-bit reruns %s; resume %s; %.0f s",
                 run.steps.size(), initial, final_loss, final_loss / initial, identical ? "bit-identical" : "DIFFER",
                 resumed ? "bit-identical" : "DIFFERS", secs);
  return o;
}

// 10 -----------------------------------------------------------------------

Outcome loss_fixtures() {
  Rng rng(17);
  Prediction<double> p;
  std::vector<double> n;
  for (int i = 0; i < 16; ++i)
    for (double x : oracle::random_unit(rng)) n.push_back(x);
  p.normals = Tensor<double>::from({16, 3}, n);
  p.variations = detail::random_tensor(rng, {16, 1}, 0.0, 1.0 / 3.0);
  const double perfect = masked_feature_loss(p, p.normals.clone(), p.variations.clone()).total.item();
  std::vector<double> flipped(n);
  for (auto& x : flipped) x = -x;
  const double antipodal =
      masked_feature_loss(p, Tensor<double>::from({16, 3}, flipped), p.variations.clone()).total.item();
  const LossWeights defaults;
  Outcome o;
  o.pass = perfect == 0.0 && std::abs(antipodal - 4.0 * defaults.normal) < 1e-12 && defaults.normal == 1.0 &&
           defaults.variation == 1.0;
  o.detail = fmt("perfect %.3g, antipodal %.15g (expected %.1f)", perfect, antipodal, 4.0 * defaults.normal);
  return o;
}

// 11 -----------------------------------------------------------------------

Outcome ablation_knobs() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TargetCache> data;
  for (const char* name : {"sphere", "box"}) {
    PrepareOptions opt;
    opt.samples = 4000;
    opt.seed = name_seed(11, name);
    data.push_back(prepare_mesh(make_primitive(name), opt));
  }
  RunConfig base = desk_config();
  base.train.batch_size = 1;
  base.train.epochs = 10;  // 2 shapes, 20 steps
  base.train.warmup_epochs = 1;
  std::vector<std::pair<std::string, RunConfig>> runs;
  for (std::size_t d : {1, 2, 4, 8, 12}) {
    auto c = base;
    c.decoder.blocks = d;
    runs.push_back({"blocks=" + std::to_string(d), c});
  }
  for (double m : {0.4, 0.6, 0.9}) {
    auto c = base;
    c.train.mask_ratio = m;
    runs.push_back({fmt("mask=%.1f", m), c});
  }
  for (double q : {0.25, 0.5, 0.75, 1.0}) {
    auto c = base;
    c.decoder.query_ratio = q;
    runs.push_back({fmt("query=%.2f", q), c});
  }
  std::size_t ok = 0;
  std::string failed;
  for (const auto& [name, cfg] : runs) {
    try {
      const auto r = pretrain(data, cfg);
      bool finite = r.steps.size() == 20;
      for (const auto& s : r.steps) finite &= std::isfinite(s.loss);
      ok += finite;
      if (!finite) failed += " " + name;
    } catch (const std::exception& e) {
      failed += " " + name + "(" + e.what() + ")";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = ok == runs.size();
  o.detail = fmt("%zu/%zu 20-step runs finished with finite loss%s%s; %.0f s", ok, runs.size(),
                 failed.empty() ? "" : "; failed:", failed.c_str(), secs);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"geometry invariants", geometry_invariants},
      {"analytic fixtures", analytic_fixtures},
      {"eigensolver oracle", eigensolver},
      {"rotation equivariance", rotation_equivariance},
      {"masking formula", masking_formula},
      {"leakage guard", leakage_guard},
      {"gradient correctness", gradients},
      {"cross-only isolation", cross_only_isolation},
      {"desk-scale learning", desk_learning},
      {"loss fixtures", loss_fixtures},
      {"ablation knobs", ablation_knobs},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
