#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sunet/config.hpp"
#include "sunet/elevation.hpp"
#include "sunet/errors.hpp"
#include "sunet/metrics.hpp"
#include "sunet/render.hpp"
#include "sunet/training.hpp"

namespace fs = std::filesystem;
using namespace sunet;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.validate();
  return cfg;
}

void require_inputs(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("no input files given");
  for (const auto& p : paths) {
    if (!fs::is_regular_file(p)) throw ConfigError("input file not found: " + p);
  }
}

fs::path prepare_out_dir(const Globals& g) {
  fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

std::vector<Scene> read_scenes(const std::vector<std::string>& paths) {
  std::vector<Scene> out;
  for (const auto& p : paths) out.push_back(read_points(p));
  return out;
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

bool looks_labeled(const fs::path& path) {
  if (format_from_path(path) != PointFormat::csv) return false;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    return std::count(line.begin(), line.end(), ',') == 6;
  }
  return false;
}

int cmd_synth(const Globals& g, std::optional<int> count) {
  PipelineConfig cfg = resolve_config(g);
  if (count) cfg.synth_count = *count;
  cfg.validate();
  const fs::path dir = prepare_out_dir(g);
  std::ostringstream manifest;
  manifest << "scene_id,file,seed,points,min_x,min_y,min_z,max_x,max_y,max_z\n";
  const char* ext = cfg.synth_format == PointFormat::bin ? ".bin" : ".csv";
  for (int i = 0; i < cfg.synth_count; ++i) {
    SynthConfig sc = cfg.synth;
    sc.rng_seed = cfg.synth.rng_seed + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", i);
    const Scene s = generate_synthetic_scene(sc, id);
    const std::string file = std::string(id) + ext;
    write_points(s, dir / file, cfg.synth_format);
    manifest << id << ',' << file << ',' << sc.rng_seed << ',' << s.points.size();
    for (double v : s.bounds.min) manifest << ',' << shortest(v);
    for (double v : s.bounds.max) manifest << ',' << shortest(v);
    manifest << '\n';
  }
  write_text(dir / "manifest.csv", manifest.str());
  std::cout << "wrote " << cfg.synth_count << " scenes to " << dir.string() << "\n";
  return 0;
}

int cmd_voxelize(const Globals& g, const std::string& input, std::optional<double> z_max, std::string out) {
  const PipelineConfig cfg = resolve_config(g);
  require_inputs({input});
  const fs::path dir = prepare_out_dir(g);
  const Scene scene = read_points(input);
  const PreparedScene ps = prepare_scene(scene, cfg.run, z_max.value_or(0.0));
  const fs::path path = out.empty() ? dir / (fs::path(input).stem().string() + ".grid") : fs::path(out);
  write_grid(ps.grid, path);
  std::cout << "voxelized " << ps.grid.source_points - ps.grid.dropped_points << " of " << ps.grid.source_points
            << " points into " << ps.grid.dims.w << "x" << ps.grid.dims.h << "x" << ps.grid.dims.d << " -> "
            << path.string() << "\n";
  return 0;
}

int cmd_train2d(const Globals& g, const std::vector<std::string>& inputs, std::optional<int> epochs,
                std::string out) {
  PipelineConfig cfg = resolve_config(g);
  if (epochs) {
    cfg.bev_epochs = *epochs;
    cfg.bev_frozen_bn_epochs = std::min(cfg.bev_frozen_bn_epochs, *epochs);
  }
  cfg.validate();
  require_inputs(inputs);
  const fs::path dir = prepare_out_dir(g);
  const auto scenes = read_scenes(inputs);
  Bev2D model(cfg.run.bev_config(), cfg.run.seed);
  Pretrain2DOptions po;
  po.epochs = cfg.bev_epochs;
  po.frozen_bn_epochs = cfg.bev_frozen_bn_epochs;
  po.lr = cfg.bev_lr;
  po.seed = cfg.run.seed;
  po.augment = cfg.bev_augment;
  std::ostringstream log;
  po.on_epoch = [&](int e, double loss) {
    log << e << ',' << shortest(loss) << '\n';
    std::cout << "epoch " << e << " loss " << loss << "\n";
  };
  const auto result = pretrain_2d(model, bev_tiles(scenes, cfg.run), po);
  const fs::path ckpt = out.empty() ? dir / "bev2d.ckpt" : fs::path(out);
  save_bev(ckpt, model);
  write_text(dir / "train2d_log.csv", log.str());
  std::cout << "pixel accuracy " << result.final_accuracy << ", checkpoint " << ckpt.string() << "\n";
  return 0;
}

int cmd_train3d(const Globals& g, const std::vector<std::string>& inputs, const std::string& bev_ckpt,
                std::optional<int> epochs, std::optional<std::string> loss, std::string out) {
  PipelineConfig cfg = resolve_config(g);
  if (epochs) {
    cfg.run.epochs = *epochs;
    cfg.run.frozen_bn_epochs = std::min(cfg.run.frozen_bn_epochs, *epochs);
  }
  if (loss) cfg.run.loss = loss_from_string(*loss);
  cfg.validate();
  if (cfg.run.loss == LossKind::hlc && bev_ckpt.empty()) {
    throw ConfigError("loss=hlc needs a pretrained region network: run 'train2d' first and pass --bev-checkpoint");
  }
  require_inputs(inputs);
  if (!bev_ckpt.empty()) require_inputs({bev_ckpt});
  const fs::path dir = prepare_out_dir(g);
  const auto scenes = read_scenes(inputs);
  const std::size_t nval = validation_count(scenes.size());
  const std::vector<Scene> train(scenes.begin(), scenes.end() - static_cast<std::ptrdiff_t>(nval));
  const std::vector<Scene> val(scenes.end() - static_cast<std::ptrdiff_t>(nval), scenes.end());

  std::optional<Bev2D> bev;
  if (cfg.run.loss == LossKind::hlc) {
    bev.emplace(cfg.run.bev_config(), cfg.run.seed);
    load_bev(bev_ckpt, *bev);
  }
  SUNet3D model(cfg.run.model_config(), cfg.run.seed);
  std::ostringstream log;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochRecord& r) {
    log << r.epoch << ',' << shortest(r.loss) << ',' << shortest(r.val_f1) << '\n';
    std::cout << "epoch " << r.epoch << " loss " << r.loss << " val_f1 " << r.val_f1 << "\n";
  };
  const TrainResult result = train_3d(model, bev ? &*bev : nullptr, cfg.run, train, val, opts);
  const fs::path ckpt = out.empty() ? dir / "sunet3d.ckpt" : fs::path(out);
  save_model(ckpt, model, cfg.run, result.z_max_global);
  write_text(dir / "train3d_log.csv", log.str());
  if (!val.empty()) {
    const MetricsReport m = evaluate_scenes(model, cfg.run, result.z_max_global, val);
    write_text(dir / "train3d_val_metrics.csv", metrics_csv(m));
  }
  std::cout << "best epoch " << result.best_epoch << " (val macro F1 " << result.best_val_f1 << "), checkpoint "
            << ckpt.string() << "\n";
  return 0;
}

int cmd_infer(const Globals& g, const std::vector<std::string>& inputs, const std::string& ckpt) {
  const PipelineConfig cfg = resolve_config(g);
  require_inputs(inputs);
  require_inputs({ckpt});
  const fs::path dir = prepare_out_dir(g);
  SUNet3D model(cfg.run.model_config(), cfg.run.seed);
  const double z_max = load_model(ckpt, model, cfg.run);
  for (const auto& in : inputs) {
    const Scene s = read_points(in);
    const auto pred = infer(model, cfg.run, z_max, s);
    const fs::path path = dir / (fs::path(in).stem().string() + ".labeled.csv");
    write_labeled_csv(s, pred, path);
    std::cout << in << " -> " << path.string() << "\n";
  }
  return 0;
}

int cmd_eval(const Globals& g, const std::vector<std::string>& inputs, const std::string& ckpt) {
  const PipelineConfig cfg = resolve_config(g);
  require_inputs(inputs);
  const fs::path dir = prepare_out_dir(g);
  std::vector<ObjectClass> pred, truth;
  if (ckpt.empty()) {
    for (const auto& in : inputs) {
      const LabeledScene ls = read_labeled_csv(in);
      pred.insert(pred.end(), ls.predicted.begin(), ls.predicted.end());
      for (const auto& p : ls.scene.points) truth.push_back(p.class_label);
    }
  } else {
    require_inputs({ckpt});
    SUNet3D model(cfg.run.model_config(), cfg.run.seed);
    const double z_max = load_model(ckpt, model, cfg.run);
    for (const auto& in : inputs) {
      const Scene s = read_points(in);
      const auto p = infer(model, cfg.run, z_max, s);
      pred.insert(pred.end(), p.begin(), p.end());
      for (const auto& pt : s.points) truth.push_back(pt.class_label);
    }
  }
  const MetricsReport m = evaluate(pred, truth);
  write_text(dir / "metrics.csv", metrics_csv(m));
  write_text(dir / "metrics.txt", metrics_table(m));
  std::cout << metrics_table(m);
  return 0;
}

int cmd_ablate(const Globals& g, const std::vector<std::string>& inputs) {
  const PipelineConfig cfg = resolve_config(g);
  require_inputs(inputs);
  const fs::path dir = prepare_out_dir(g);
  const auto rows = run_ablation(default_ablation_grid(cfg.run), read_scenes(inputs), cfg.ablation_bev_epochs);
  write_text(dir / "ablation.csv", ablation_csv(rows));
  write_text(dir / "ablation.txt", ablation_table(rows));
  std::cout << ablation_table(rows);
  return 0;
}

int cmd_render(const Globals& g, const std::string& input, const std::string& view, std::string out, bool truth,
               std::optional<double> pixel_size) {
  const PipelineConfig cfg = resolve_config(g);
  require_inputs({input});
  const RenderView v = view_from_string(view);
  const fs::path dir = prepare_out_dir(g);
  Scene scene;
  std::vector<ObjectClass> labels;
  if (looks_labeled(input)) {
    LabeledScene ls = read_labeled_csv(input);
    scene = std::move(ls.scene);
    labels = std::move(ls.predicted);
  } else {
    scene = read_points(input);
  }
  if (truth || labels.empty()) {
    labels.clear();
    for (const auto& p : scene.points) labels.push_back(p.class_label);
  }
  const Image img = render(scene, labels, v, pixel_size.value_or(cfg.render_pixel_size));
  const fs::path path = out.empty() ? dir / (fs::path(input).stem().string() + "_" + view + ".ppm") : fs::path(out);
  write_ppm(img, path);
  std::cout << img.width << "x" << img.height << " -> " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-line corridor segmentation of LiDAR voxel grids"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI config file");
  app.add_option("--seed", g.seed, "Override synthesis and training seeds");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.fallthrough();

  std::function<int()> run;

  auto* synth = app.add_subcommand("synth", "Generate synthetic corridor scenes and a manifest");
  std::optional<int> count;
  synth->add_option("--count", count, "Number of scenes");
  synth->callback([&] { run = [&] { return cmd_synth(g, count); }; });

  auto* vox = app.add_subcommand("voxelize", "Voxelize a scene into a grid dump");
  std::string vox_in, vox_out;
  std::optional<double> z_max;
  vox->add_option("scene", vox_in, "Scene file")->required();
  vox->add_option("-o,--output", vox_out, "Grid file");
  vox->add_option("--z-max", z_max, "Dataset maximum elevation (defaults to the scene maximum)");
  vox->callback([&] { run = [&] { return cmd_voxelize(g, vox_in, z_max, vox_out); }; });

  auto* t2 = app.add_subcommand("train2d", "Pretrain the BEV region network");
  std::vector<std::string> t2_in;
  std::optional<int> t2_epochs;
  std::string t2_out;
  t2->add_option("scenes", t2_in, "Training scenes")->required();
  t2->add_option("--epochs", t2_epochs, "Override train2d.epochs");
  t2->add_option("-o,--output", t2_out, "Checkpoint path");
  t2->callback([&] { run = [&] { return cmd_train2d(g, t2_in, t2_epochs, t2_out); }; });

  auto* t3 = app.add_subcommand("train3d", "Train the voxel segmentation network");
  std::vector<std::string> t3_in;
  std::string bev_ckpt, t3_out;
  std::optional<int> t3_epochs;
  std::optional<std::string> t3_loss;
  t3->add_option("scenes", t3_in, "Scenes; the trailing 12% are held out for validation")->required();
  t3->add_option("--bev-checkpoint", bev_ckpt, "Pretrained region network (needed for loss=hlc)");
  t3->add_option("--epochs", t3_epochs, "Override train.epochs");
  t3->add_option("--loss", t3_loss, "Override train.loss (wce or hlc)");
  t3->add_option("-o,--output", t3_out, "Checkpoint path");
  t3->callback([&] { run = [&] { return cmd_train3d(g, t3_in, bev_ckpt, t3_epochs, t3_loss, t3_out); }; });

  auto* inf = app.add_subcommand("infer", "Label scene points with a trained model");
  std::vector<std::string> inf_in;
  std::string inf_ckpt;
  inf->add_option("scenes", inf_in, "Scenes")->required();
  inf->add_option("--checkpoint", inf_ckpt, "Model checkpoint")->required();
  inf->callback([&] { run = [&] { return cmd_infer(g, inf_in, inf_ckpt); }; });

  auto* ev = app.add_subcommand("eval", "Metrics of labeled files, or of scenes run through --checkpoint");
  std::vector<std::string> ev_in;
  std::string ev_ckpt;
  ev->add_option("inputs", ev_in, "Labeled files (or scenes with --checkpoint)")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  ev->callback([&] { run = [&] { return cmd_eval(g, ev_in, ev_ckpt); }; });

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the feature, loss and module ablation grid");
  std::vector<std::string> ab_in;
  ab->add_option("scenes", ab_in, "Scenes; the trailing 12% are held out")->required();
  ab->callback([&] { run = [&] { return cmd_ablate(g, ab_in); }; });

  auto* rd = app.add_subcommand("render", "Render a scene or labeled file to a PPM image");
  std::string rd_in, rd_view = "bev", rd_out;
  bool rd_truth = false;
  std::optional<double> rd_px;
  rd->add_option("input", rd_in, "Scene or labeled file")->required();
  rd->add_option("--view", rd_view, "bev or side");
  rd->add_option("-o,--output", rd_out, "Image path");
  rd->add_flag("--truth", rd_truth, "Color by ground truth even for labeled files");
  rd->add_option("--pixel-size", rd_px, "Meters per pixel");
  rd->callback([&] { run = [&] { return cmd_render(g, rd_in, rd_view, rd_out, rd_truth, rd_px); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return run();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
