#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spherebg/config.hpp"
#include "spherebg/gradcheck.hpp"
#include "spherebg/io.hpp"
#include "spherebg/mesh.hpp"
#include "spherebg/renderer.hpp"
#include "spherebg/synthetic.hpp"
#include "spherebg/trainer.hpp"

namespace spherebg::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kRuntimeError = 2 };

inline constexpr double kDefaultMeshThreshold = 0.69314718055994531 + 0.5;

/// Bad user input detected after argument parsing, such as an invalid config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

/// The parent directory of an output path must already exist.
inline const CLI::Validator kWritablePath(
    [](std::string& path) -> std::string {
      const auto parent = std::filesystem::path(path).parent_path();
      if (!parent.empty() && !std::filesystem::is_directory(parent))
        return "directory '" + parent.string() + "' does not exist";
      if (std::filesystem::is_directory(path)) return "'" + path + "' is a directory";
      return {};
    },
    "PATH");

inline bool has_extension(const std::string& path, const std::string& ext) {
  auto e = std::filesystem::path(path).extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

/// PFM is read as is, PNG is linearized unless `srgb` is false.
inline Image read_image(const std::string& path, int channels, bool srgb) {
  if (has_extension(path, ".pfm")) {
    Image img = read_pfm(path);
    require(img.channels == channels, ErrorCode::ShapeMismatch,
            "'" + path + "' has " + std::to_string(img.channels) + " channels, expected " + std::to_string(channels));
    return img;
  }
  return read_png(path, channels, srgb);
}

inline void write_image(const std::string& path, const Image& img, bool srgb) {
  if (has_extension(path, ".pfm"))
    write_pfm(path, img);
  else
    write_png(path, img, srgb);
}

inline std::string join(const std::filesystem::path& dir, const std::string& name) { return (dir / name).string(); }

}  // namespace detail

struct SynthArgs {
  std::string out;
  int resolution = 64;
  int views = 10;
  std::uint64_t seed = 0;
  std::string scene;
  double orbit_radius = 2.0;
  double focal_scale = 0.6;
};

struct TrainArgs {
  std::string data, out, config, log;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> eval_every;
  bool quiet = false;
};

struct RenderArgs {
  std::string checkpoint, out, data;
  std::optional<int> view;
  double azimuth = 0.0, elevation = 20.0, radius = 2.0, focal_scale = 0.6;
  int resolution = 64;
};

struct CompositeArgs {
  std::string foreground, alpha, background, out;
};

struct MeshArgs {
  std::string checkpoint, out;
  int resolution = 64;
  double threshold = kDefaultMeshThreshold;
  std::vector<double> bounds = {-1.0, -1.0, -1.0, 1.0, 1.0, 1.0};
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-5;
  bool batched = false;
};

struct EvaluateArgs {
  std::string checkpoint, data, split = "heldout", out;
};

inline void cmd_synth(const SynthArgs& a, std::ostream& out) {
  SceneSpec scene = a.scene.empty() ? default_scene() : scene_from_json(nlohmann::json::parse(read_file(a.scene)));
  SynthOptions o;
  o.n_views = a.views;
  o.width = o.height = a.resolution;
  o.seed = a.seed;
  o.orbit_radius = a.orbit_radius;
  o.focal_scale = a.focal_scale;
  const SsoDataset d = generate_synthetic_scene(scene, o);
  save_dataset(a.out, d, &scene);
  out << "wrote " << d.views.size() << " views (" << d.train.size() << " train, " << d.heldout.size()
      << " held out) at " << a.resolution << "x" << a.resolution << " to " << a.out << "\n";
}

inline void cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig c;
  try {
    if (!a.config.empty()) c = load_config(a.config);
    if (a.steps) c.steps = *a.steps;
    if (a.seed) c.seed = *a.seed;
    if (a.eval_every) c.eval_every = *a.eval_every;
    if (a.steps && c.effective_ramp_steps() > c.steps) c.ramp_steps = -1;
    c.validate(true);
  } catch (const Error& e) {
    throw UsageError(std::string("--config: ") + e.what());
  }
  const SsoDataset d = load_dataset(a.data);
  std::vector<LossRecord> log;
  const TrainResult r = train_sso(d, c, [&](const HistoryEntry& h, const SceneParameters&) {
    log.push_back({h.step, h.loss});
    if (a.quiet) return;
    char line[256];
    std::snprintf(line, sizeof(line), "step %d total %.6g recon %.6g l_fg %.6g l_bg %.6g", h.step, h.loss.total,
                  h.loss.recon, h.loss.l_fg, h.loss.l_bg);
    out << line;
    if (h.heldout) {
      std::snprintf(line, sizeof(line), " | held-out psnr %.3f iou %.4f binarization %.4f", h.heldout->psnr,
                    h.heldout->mask_iou, h.heldout->binarization_rate);
      out << line;
    }
    out << "\n";
  });
  save_checkpoint(a.out, {r.params, c.sampling(true)});
  if (!a.log.empty()) write_loss_csv(a.log, log);
  out << "wrote checkpoint " << a.out << " (" << r.params.size() << " parameters, " << c.steps << " steps)\n";
}

inline Camera render_camera(const RenderArgs& a) {
  if (!a.data.empty()) {
    const SsoDataset d = load_dataset(a.data);
    require(*a.view >= 0 && *a.view < static_cast<int>(d.views.size()), ErrorCode::OutOfRange,
            "--view must index a dataset view");
    return d.views[static_cast<std::size_t>(*a.view)].camera;
  }
  const double az = a.azimuth * kPi / 180.0, el = a.elevation * kPi / 180.0;
  const Vec3 pos = a.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  return Camera::look_at(pos, Vec3::Zero(), Vec3::UnitZ(), a.focal_scale * a.resolution, a.resolution, a.resolution);
}

inline void cmd_render(const RenderArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Camera cam = render_camera(a);
  require(ck.params.feature_dim() == 3, ErrorCode::ShapeMismatch, "render needs a 3-channel (RGB) scene");
  const RenderOutput full = render(ck.params, cam, RenderMode::Full, ck.sampling);
  const RenderOutput fg = render(ck.params, cam, RenderMode::ForegroundOnly, ck.sampling);
  const RenderOutput bg = render(ck.params, cam, RenderMode::BackgroundOnly, ck.sampling);
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  require(std::filesystem::is_directory(a.out), ErrorCode::IoFailure, "cannot create directory '" + a.out + "'");
  const std::filesystem::path dir(a.out);
  write_png(detail::join(dir, "full.png"), full.image);
  write_png(detail::join(dir, "foreground.png"), fg.image);
  write_pfm(detail::join(dir, "foreground.pfm"), fg.image);
  write_png(detail::join(dir, "background.png"), bg.image);
  write_png(detail::join(dir, "alpha.png"), full.alpha_map, false);
  write_pfm(detail::join(dir, "alpha.pfm"), full.alpha_map);
  write_pfm(detail::join(dir, "depth.pfm"), full.depth_map);
  out << "wrote full, foreground, background, alpha and depth maps to " << a.out << "\n";
}

inline void cmd_composite(const CompositeArgs& a, std::ostream& out) {
  const Image fg = detail::read_image(a.foreground, 3, true);
  const Image alpha = detail::read_image(a.alpha, 1, false);
  const Image bg = detail::read_image(a.background, 3, true);
  detail::write_image(a.out, composite_over(fg, alpha, bg), true);
  out << "wrote " << a.out << "\n";
}

inline void cmd_mesh(const MeshArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Aabb box{Vec3(a.bounds[0], a.bounds[1], a.bounds[2]), Vec3(a.bounds[3], a.bounds[4], a.bounds[5])};
  const DensityGrid g = sample_density_grid(ck.params, box, {a.resolution, a.resolution, a.resolution});
  const TriangleMesh m = marching_cubes(g, a.threshold);
  export_obj(m, a.out);
  out << "wrote " << m.vertices.size() << " vertices and " << m.triangles.size() << " triangles to " << a.out << "\n";
}

inline void cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions o;
  o.seed = a.seed;
  o.step = a.step;
  o.batched_route = a.batched;
  const GradCheckResult r = gradient_check(o);
  char line[256];
  std::snprintf(line, sizeof(line), "parameters %zu  loss %.9g  max relative error %.3e  max absolute error %.3e\n",
                r.parameter_count, r.loss, r.max_relative_error, r.max_absolute_error);
  out << line;
  require(r.max_relative_error < a.tolerance, ErrorCode::InvariantViolation,
          "gradient check failed at parameter " + std::to_string(r.worst_index));
}

inline void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const SsoDataset d = load_dataset(a.data);
  const Split split = a.split == "train" ? Split::Train : a.split == "all" ? Split::All : Split::HeldOut;
  SamplingConfig cfg = ck.sampling;
  cfg.deterministic = true;
  const Metrics m = evaluate(ck.params, d, split, cfg);
  const nlohmann::json j{{"split", a.split}, {"psnr", m.psnr}, {"mask_iou", m.mask_iou},
                         {"binarization_rate", m.binarization_rate}};
  if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
  out << j.dump() << "\n";
}

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on usage errors and 2 on runtime errors.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Differentiable volume renderer with an opaque spherical background", "spherebg"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Render a synthetic multi-view dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--resolution", synth.resolution, "Image width and height")->check(CLI::Range(2, 4096));
  s->add_option("--views", synth.views, "Number of views (every fifth is held out)")->check(CLI::Range(2, 1000));
  s->add_option("--seed", synth.seed, "Camera jitter seed");
  s->add_option("--scene", synth.scene, "Scene JSON file")->check(CLI::ExistingFile);
  s->add_option("--orbit-radius", synth.orbit_radius, "Camera orbit radius");
  s->add_option("--focal-scale", synth.focal_scale, "Focal length in units of the image width");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Fit a scene to a dataset");
  t->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", train.out, "Output checkpoint")->required()->check(detail::kWritablePath);
  t->add_option("--config", train.config, "Training config JSON")->check(CLI::ExistingFile);
  t->add_option("--log", train.log, "Loss CSV (step,recon,l_fg,l_bg,lambda_fg,lambda_bg,total)")
      ->check(detail::kWritablePath);
  t->add_option("--steps", train.steps, "Override config steps")->check(CLI::NonNegativeNumber);
  t->add_option("--seed", train.seed, "Override config seed");
  t->add_option("--eval-every", train.eval_every, "Override held-out evaluation interval")
      ->check(CLI::NonNegativeNumber);
  t->add_flag("--quiet", train.quiet, "Suppress progress lines");

  RenderArgs rend;
  auto* r = app.add_subcommand("render", "Render full, foreground, background, alpha and depth maps");
  r->add_option("--checkpoint", rend.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rend.out, "Output directory")->required();
  auto* data_opt = r->add_option("--data", rend.data, "Dataset directory supplying the camera")
                       ->check(CLI::ExistingDirectory);
  auto* view_opt = r->add_option("--view", rend.view, "Dataset view index")->check(CLI::NonNegativeNumber);
  data_opt->needs(view_opt);
  view_opt->needs(data_opt);
  r->add_option("--azimuth", rend.azimuth, "Orbit camera azimuth (degrees)")->excludes(data_opt);
  r->add_option("--elevation", rend.elevation, "Orbit camera elevation (degrees)")->excludes(data_opt);
  r->add_option("--radius", rend.radius, "Orbit camera distance from the origin")->excludes(data_opt);
  r->add_option("--resolution", rend.resolution, "Orbit camera image size")
      ->check(CLI::Range(1, 4096))
      ->excludes(data_opt);
  r->add_option("--focal-scale", rend.focal_scale, "Orbit camera focal length in image widths")->excludes(data_opt);

  CompositeArgs comp;
  auto* c = app.add_subcommand("composite", "Place a premultiplied foreground over any background image");
  c->add_option("--foreground", comp.foreground, "Premultiplied foreground (PNG or PFM)")
      ->required()
      ->check(CLI::ExistingFile);
  c->add_option("--alpha", comp.alpha, "Alpha map (PNG or PFM)")->required()->check(CLI::ExistingFile);
  c->add_option("--background", comp.background, "Background image of the same size (PNG or PFM)")
      ->required()
      ->check(CLI::ExistingFile);
  c->add_option("--out", comp.out, "Output image (PNG or PFM)")->required()->check(detail::kWritablePath);

  MeshArgs mesh;
  auto* m = app.add_subcommand("extract-mesh", "Marching-cubes mesh of the foreground density");
  m->add_option("--checkpoint", mesh.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  m->add_option("--resolution", mesh.resolution, "Grid points per axis")->check(CLI::Range(2, 1024));
  m->add_option("--threshold", mesh.threshold, "Density iso-level (default ln 2 + 0.5)");
  m->add_option("--bounds", mesh.bounds, "Grid box as x0,y0,z0,x1,y1,z1")->delimiter(',')->expected(6);
  m->add_option("--out", mesh.out, "Output OBJ file")->required()->check(detail::kWritablePath);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients on a small scene");
  g->add_option("--seed", gc.seed, "Parameter seed");
  g->add_option("--step", gc.step, "Central-difference step")->check(CLI::PositiveNumber);
  g->add_option("--tolerance", gc.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
  g->add_flag("--batched", gc.batched, "Check the batched training route");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "PSNR, mask IoU and binarization rate of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "train, heldout or all")->check(CLI::IsMember({"train", "heldout", "all"}));
  e->add_option("--out", ev.out, "Also write the metrics as JSON")->check(detail::kWritablePath);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (mesh.bounds.size() != 6) throw CLI::ValidationError("--bounds", "needs six comma-separated numbers");
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*s) cmd_synth(synth, out);
    if (*t) cmd_train(train, out);
    if (*r) cmd_render(rend, out);
    if (*c) cmd_composite(comp, out);
    if (*m) cmd_mesh(mesh, out);
    if (*g) cmd_gradcheck(gc, out);
    if (*e) cmd_evaluate(ev, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsageError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kRuntimeError;
  }
  return kSuccess;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace spherebg::cli
