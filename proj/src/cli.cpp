#include "attr/cli.hpp"

#include "attr/config.hpp"
#include "attr/evaluation.hpp"
#include "attr/infer.hpp"
#include "attr/threadpool.hpp"
#include "attr/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;

namespace attr {

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;

  Config build() const {
    Config cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    return cfg;
  }
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_file, "config file (key = value lines)");
  sub->add_option("--set", args.overrides, "config override key=value (repeatable)");
}

SynthConfig synth_config(const Config& cfg) {
  SynthConfig sc;
  sc.h = cfg.geti("synth_h");
  sc.w = cfg.geti("synth_w");
  sc.min_instances = cfg.geti("min_instances");
  sc.max_instances = cfg.geti("max_instances");
  sc.curve_prob = cfg.getf("curve_prob");
  sc.small_text_prob = cfg.getf("small_text_prob");
  if (sc.h < 32 || sc.w < 32) throw ConfigError("synth_h/synth_w must be at least 32");
  if (sc.min_instances < 1 || sc.max_instances > 8 || sc.min_instances > sc.max_instances)
    throw ConfigError("instance range must satisfy 1 <= min <= max <= 8");
  return sc;
}

TrainOptions train_options(const Config& cfg) {
  TrainOptions t;
  t.total_steps = cfg.geti("total_steps");
  t.batch_size = cfg.geti("batch_size");
  t.augment = cfg.getb("augment");
  t.seed = static_cast<std::uint64_t>(cfg.geti("seed"));
  t.loss.lambda_cls_matched = cfg.getf("lambda_cls_matched");
  t.loss.lambda_cls_unmatched = cfg.getf("lambda_cls_unmatched");
  t.loss.points_k = cfg.geti("points_k");
  t.loss.aux_loss = cfg.getb("aux_loss");
  t.adam.lr = cfg.getf("lr");
  t.adam.weight_decay = cfg.getf("weight_decay");
  t.adam.backbone_mult = cfg.getf("backbone_lr_mult");
  t.adam.total_steps = t.total_steps;
  return t;
}

void write_run_config(const Config& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.dump_file((fs::path(out_dir) / "run_config.txt").string());
}

std::vector<SceneSample> load_dataset(const std::string& root) {
  std::string dir = root;
  if (fs::exists(fs::path(root) / "train" / "manifest.txt")) dir = (fs::path(root) / "train").string();
  DatasetDir d = open_dataset(dir);
  std::vector<SceneSample> out(d.ids.size());
  parallel_for(static_cast<int>(d.ids.size()), [&](int i) {
    SceneSample s;
    s.image = read_image_ppm(image_path(d, d.ids[static_cast<size_t>(i)]));
    s.instances = read_annotations(gt_path(d, d.ids[static_cast<size_t>(i)]));
    out[static_cast<size_t>(i)] = std::move(s);
  });
  return out;
}

// ------------------------------------------------------------------- synth

void generate_split(const std::string& dir, const SynthConfig& sc,
                    const std::vector<std::uint64_t>& seeds, int id_offset) {
  std::vector<std::string> ids;
  for (size_t i = 0; i < seeds.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", id_offset + static_cast<int>(i));
    ids.emplace_back(buf);
  }
  write_manifest(dir, ids);
  parallel_for(static_cast<int>(seeds.size()), [&](int i) {
    SceneSample s = generate_sample(seeds[static_cast<size_t>(i)], sc);
    write_image_ppm((fs::path(dir) / "images" / (ids[static_cast<size_t>(i)] + ".ppm")).string(),
                    s.image);
    write_annotations((fs::path(dir) / "gts" / (ids[static_cast<size_t>(i)] + ".txt")).string(),
                      s.instances);
  });
}

int cmd_synth(const Config& cfg, const std::string& out_dir) {
  const SynthConfig sc = synth_config(cfg);
  const int count = cfg.geti("count");
  const double val_frac = cfg.getf("val_frac");
  if (count < 1) throw ConfigError("count must be positive");
  const int n_val = std::clamp(static_cast<int>(std::lround(count * val_frac)), 0, count);
  const int n_train = count - n_val;

  SplitMix64 sm(static_cast<std::uint64_t>(cfg.geti("seed")));
  std::vector<std::uint64_t> seeds(static_cast<size_t>(count));
  for (auto& s : seeds) s = sm.next();

  write_run_config(cfg, out_dir);
  generate_split((fs::path(out_dir) / "train").string(), sc,
                 {seeds.begin(), seeds.begin() + n_train}, 0);
  generate_split((fs::path(out_dir) / "val").string(), sc, {seeds.begin() + n_train, seeds.end()},
                 n_train);
  std::cout << "synth: wrote " << n_train << " train + " << n_val << " val images to " << out_dir
            << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_from) {
  write_run_config(cfg, out_dir);
  std::vector<SceneSample> dataset = load_dataset(data_dir);

  Detector<float> model(ModelConfig::from(cfg), static_cast<std::uint64_t>(cfg.geti("seed")) + 1);
  TrainOptions topt = train_options(cfg);
  Trainer trainer(model, std::move(dataset), topt);
  if (!resume_from.empty()) trainer.resume(resume_from);

  const int save_every = cfg.geti("save_every");
  std::ofstream log((fs::path(out_dir) / "loss_log.txt").string(),
                    resume_from.empty() ? std::ios::trunc : std::ios::app);
  char line[128];
  trainer.run([&](const TrainStepInfo& info) {
    std::snprintf(line, sizeof(line), "step=%d loss=%.6f lr=%.8f", info.step, info.loss, info.lr);
    log << line << "\n";
    log.flush();
    if ((info.step + 1) % 100 == 0 || info.step == 0) std::cout << line << "\n";
    if (save_every > 0 && (info.step + 1) % save_every == 0 &&
        info.step + 1 < topt.total_steps) {
      trainer.save(
          (fs::path(out_dir) / ("checkpoint_step" + std::to_string(info.step + 1) + ".attr"))
              .string());
    }
  });
  trainer.save((fs::path(out_dir) / "checkpoint.attr").string());
  std::cout << "train: finished " << topt.total_steps << " steps; checkpoint at " << out_dir
            << "/checkpoint.attr\n";
  return 0;
}

// ------------------------------------------------------------------- infer

std::vector<std::pair<std::string, std::string>> list_images(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;  // (id, file)
  if (fs::exists(fs::path(path) / "manifest.txt")) {
    DatasetDir d = open_dataset(path);
    for (const auto& id : d.ids) out.emplace_back(id, image_path(d, id));
    return out;
  }
  if (fs::exists(fs::path(path) / "images")) {
    for (const auto& e : fs::directory_iterator(fs::path(path) / "images"))
      if (e.path().extension() == ".ppm") out.emplace_back(e.path().stem().string(), e.path().string());
  } else {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".ppm") out.emplace_back(e.path().stem().string(), e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .ppm images found under " + path);
  return out;
}

void draw_overlay(Image& im, const std::vector<ScoredPolygon>& dets) {
  const int h = image_h(im), w = image_w(im);
  for (const auto& d : dets) {
    const int n = d.poly.size();
    for (int i = 0; i < n; ++i) {
      const Vec2 a = d.poly[i], b = d.poly[(i + 1) % n];
      const double len = (b - a).norm();
      const int steps = std::max(1, static_cast<int>(len * 2));
      for (int s = 0; s <= steps; ++s) {
        const Vec2 p = a + (b - a) * (static_cast<double>(s) / steps);
        const int x = std::clamp(static_cast<int>(p.x()), 0, w - 1);
        const int y = std::clamp(static_cast<int>(p.y()), 0, h - 1);
        image_set_px(im, 0, y, x, 1.0f);
        image_set_px(im, 1, y, x, 0.0f);
        image_set_px(im, 2, y, x, 0.0f);
      }
    }
  }
}

int cmd_infer(const Config& cfg, const std::string& ckpt, const std::string& images_path,
              const std::string& out_dir) {
  write_run_config(cfg, out_dir);
  Detector<float> model(ModelConfig::from(cfg), static_cast<std::uint64_t>(cfg.geti("seed")) + 1);
  {
    auto named = model.params().all();
    std::map<std::string, Tensor<float>> mut(named.begin(), named.end());
    load_checkpoint_into(ckpt, mut);
  }
  PostprocessOptions popt;
  popt.conf_thresh = cfg.getf("conf_thresh");
  popt.keep_largest_component = cfg.getb("keep_largest_component");
  const int short_side = cfg.geti("infer_short_side");
  const bool overlay = cfg.getb("overlay");

  auto images = list_images(images_path);
  parallel_for(static_cast<int>(images.size()), [&](int i) {
    const auto& [id, file] = images[static_cast<size_t>(i)];
    Image im = read_image_ppm(file);
    auto dets = detect_image(model, im, popt, short_side);
    write_detections((fs::path(out_dir) / (id + ".txt")).string(), dets);
    if (overlay) {
      draw_overlay(im, dets);
      write_image_ppm((fs::path(out_dir) / (id + "_overlay.ppm")).string(), im);
    }
  });
  std::cout << "infer: wrote detections for " << images.size() << " images to " << out_dir << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

std::vector<std::pair<std::string, std::string>> list_txt(const std::string& path) {
  std::string dir = path;
  if (fs::exists(fs::path(path) / "gts")) dir = (fs::path(path) / "gts").string();
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".txt" && e.path().filename() != "manifest.txt" &&
        e.path().filename() != "run_config.txt" && e.path().filename() != "eval_report.txt")
      out.emplace_back(e.path().stem().string(), e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_eval(const Config& cfg, const std::string& dets_path, const std::string& gts_path,
             std::string report_path) {
  auto det_files = list_txt(dets_path);
  auto gt_files = list_txt(gts_path);
  std::set<std::string> det_ids, gt_ids;
  for (const auto& [id, f] : det_files) det_ids.insert(id);
  for (const auto& [id, f] : gt_files) gt_ids.insert(id);
  if (det_ids != gt_ids) {
    std::string missing;
    for (const auto& id : gt_ids)
      if (!det_ids.count(id)) missing += " " + id;
    std::string extra;
    for (const auto& id : det_ids)
      if (!gt_ids.count(id)) extra += " " + id;
    throw IoError("eval: id mismatch between detections and ground truths;" +
                  (missing.empty() ? "" : " missing detections for:" + missing) +
                  (extra.empty() ? "" : " no ground truth for:" + extra));
  }

  std::map<std::string, std::string> gt_by_id(gt_files.begin(), gt_files.end());
  std::vector<ImageEval> images(det_files.size());
  parallel_for(static_cast<int>(det_files.size()), [&](int i) {
    ImageEval ie;
    ie.id = det_files[static_cast<size_t>(i)].first;
    ie.dets = read_detections(det_files[static_cast<size_t>(i)].second);
    ie.gts = read_annotations(gt_by_id.at(ie.id));
    images[static_cast<size_t>(i)] = std::move(ie);
  });

  EvalReport rep = evaluate(images, cfg.getf("iou_thresh"), cfg.geti("raster_res"));
  if (report_path.empty()) report_path = (fs::path(dets_path) / "eval_report.txt").string();
  std::ofstream f(report_path);
  if (!f) throw IoError("cannot write report to " + report_path);
  f << rep.to_key_values();
  std::cout << rep.to_table();
  return 0;
}

// ------------------------------------------------------------------- ablate

struct AblateRow {
  std::string name;
  EvalReport rep;
  bool supported = true;
  std::string note;
};

EvalReport train_and_eval(Config cfg, const std::string& workdir, const std::string& tag) {
  const std::string data = (fs::path(workdir) / "data").string();
  const std::string run = (fs::path(workdir) / tag).string();
  fs::create_directories(run);
  std::vector<SceneSample> dataset = load_dataset(data);

  Detector<float> model(ModelConfig::from(cfg), static_cast<std::uint64_t>(cfg.geti("seed")) + 1);
  Trainer trainer(model, std::move(dataset), train_options(cfg));
  trainer.run();

  PostprocessOptions popt;
  popt.conf_thresh = cfg.getf("conf_thresh");
  popt.keep_largest_component = cfg.getb("keep_largest_component");

  DatasetDir val = open_dataset((fs::path(data) / "val").string());
  std::vector<ImageEval> images(val.ids.size());
  parallel_for(static_cast<int>(val.ids.size()), [&](int i) {
    ImageEval ie;
    ie.id = val.ids[static_cast<size_t>(i)];
    Image im = read_image_ppm(image_path(val, ie.id));
    ie.dets = detect_image(model, im, popt, 0);
    ie.gts = read_annotations(gt_path(val, ie.id));
    images[static_cast<size_t>(i)] = std::move(ie);
  });
  return evaluate(images, cfg.getf("iou_thresh"), cfg.geti("raster_res"));
}

// Late fusion: per-scale inference with a single-scale model, merged by NMS.
EvalReport eval_late_fusion(const Detector<float>& model, const Config& cfg,
                            const std::string& data, const std::vector<double>& scales) {
  PostprocessOptions popt;
  popt.conf_thresh = cfg.getf("conf_thresh");
  popt.keep_largest_component = cfg.getb("keep_largest_component");
  DatasetDir val = open_dataset((fs::path(data) / "val").string());
  std::vector<ImageEval> images(val.ids.size());
  parallel_for(static_cast<int>(val.ids.size()), [&](int i) {
    ImageEval ie;
    ie.id = val.ids[static_cast<size_t>(i)];
    Image im = read_image_ppm(image_path(val, ie.id));
    const int h = image_h(im), w = image_w(im);
    std::vector<ScoredPolygon> all;
    for (double s : scales) {
      const int nh = std::max(32, static_cast<int>(std::lround(h * s)));
      const int nw = std::max(32, static_cast<int>(std::lround(w * s)));
      Image scaled = (nh == h && nw == w) ? im : image_resize(im, nh, nw);
      auto dets = detect_image(model, scaled, popt, 0);
      dets = scale_detections(std::move(dets), static_cast<double>(w) / nw,
                              static_cast<double>(h) / nh);
      all.insert(all.end(), dets.begin(), dets.end());
    }
    ie.dets = polygon_nms(std::move(all), 0.5);
    ie.gts = read_annotations(gt_path(val, ie.id));
    images[static_cast<size_t>(i)] = std::move(ie);
  });
  return evaluate(images, cfg.getf("iou_thresh"), cfg.geti("raster_res"));
}

int cmd_ablate(const Config& cfg, const std::string& mode, const std::string& out_dir) {
  write_run_config(cfg, out_dir);
  const std::string data = (fs::path(out_dir) / "data").string();
  if (!fs::exists(fs::path(data) / "train" / "manifest.txt")) cmd_synth(cfg, data);

  std::vector<AblateRow> rows;
  if (mode == "decoders") {
    for (int n : {0, 3, 6, 9}) {
      Config c = cfg;
      c.set("num_decoders", std::to_string(n));
      rows.push_back({"decoders=" + std::to_string(n), train_and_eval(c, out_dir, "dec" + std::to_string(n)), true, ""});
    }
  } else if (mode == "projection") {
    for (const std::string p : {"lp", "conv", "res"}) {
      Config c = cfg;
      c.set("projection", p);
      AblateRow row;
      row.name = "projection=" + p;
      try {
        row.rep = train_and_eval(c, out_dir, "proj_" + p);
      } catch (const std::exception& e) {
        row.supported = false;
        row.note = e.what();
      }
      rows.push_back(std::move(row));
    }
  } else if (mode == "single-vs-multi") {
    for (const std::string s : {"0.5", "1", "2", "0.5,1,2"}) {
      Config c = cfg;
      c.set("scales", s);
      rows.push_back({"scales=" + s, train_and_eval(c, out_dir, "scales_" + std::to_string(rows.size())), true, ""});
    }
  } else if (mode == "late-fusion") {
    // one single-scale model: plain run, late fusion over the pyramid, and
    // the multi-scale aggregation model for contrast
    Config single = cfg;
    single.set("scales", "1");
    rows.push_back({"single scale=1", train_and_eval(single, out_dir, "single"), true, ""});

    std::vector<SceneSample> dataset = load_dataset(data);
    Detector<float> model(ModelConfig::from(single), static_cast<std::uint64_t>(cfg.geti("seed")) + 1);
    Trainer trainer(model, std::move(dataset), train_options(single));
    trainer.run();
    rows.push_back({"late-fusion scales=0.5,1,2",
                    eval_late_fusion(model, single, data, {0.5, 1.0, 2.0}), true, ""});

    rows.push_back({"aggregated scales=0.5,1,2", train_and_eval(cfg, out_dir, "multi"), true, ""});
  } else {
    throw ConfigError("unknown ablate mode: " + mode +
                      " (expected single-vs-multi | late-fusion | projection | decoders)");
  }

  std::ofstream f((fs::path(out_dir) / ("ablation_" + mode + ".txt")).string());
  char buf[256];
  f << "# config | P R F TIoU-F\n";
  for (const auto& r : rows) {
    if (r.supported) {
      std::snprintf(buf, sizeof(buf), "%-28s %6.4f %6.4f %6.4f %6.4f", r.name.c_str(),
                    r.rep.precision, r.rep.recall, r.rep.f_measure, r.rep.tiou_f);
      f << buf << "\n";
      std::cout << buf << "\n";
    } else {
      f << r.name << " unsupported: " << r.note << "\n";
      std::cout << r.name << " unsupported: " << r.note << "\n";
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multi-scale text detector (synth | train | infer | eval | ablate)"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, infer_args, eval_args, ablate_args;
  std::string out_dir, data_dir, resume_from, ckpt, images_path, dets_path, gts_path, report_path,
      mode, scales_flag;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_args);
  synth->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a detector");
  add_common(train, train_args);
  train->add_option("--data", data_dir, "dataset directory (from synth)")->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--resume", resume_from, "checkpoint to resume from");

  CLI::App* infer = app.add_subcommand("infer", "run detection on images");
  add_common(infer, infer_args);
  infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
  infer->add_option("--images", images_path, "image directory or dataset root")->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_option("--scales", scales_flag, "override pyramid scales, e.g. '1'");
  infer->add_flag_callback("--overlay",
                           [&]() { infer_args.overrides.push_back("overlay=true"); },
                           "write overlay images");

  CLI::App* eval = app.add_subcommand("eval", "score detections against ground truth");
  add_common(eval, eval_args);
  eval->add_option("--dets", dets_path, "directory of detection files")->required();
  eval->add_option("--gts", gts_path, "gt directory or dataset root")->required();
  eval->add_option("--report", report_path, "report file (default <dets>/eval_report.txt)");

  CLI::App* ablate = app.add_subcommand("ablate", "directional comparison runs");
  add_common(ablate, ablate_args);
  ablate->add_option("--mode", mode, "single-vs-multi | late-fusion | projection | decoders")
      ->required();
  ablate->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args.build(), out_dir);
    if (train->parsed()) return cmd_train(train_args.build(), data_dir, out_dir, resume_from);
    if (infer->parsed()) {
      if (!scales_flag.empty()) infer_args.overrides.push_back("scales=" + scales_flag);
      return cmd_infer(infer_args.build(), ckpt, images_path, out_dir);
    }
    if (eval->parsed()) return cmd_eval(eval_args.build(), dets_path, gts_path, report_path);
    if (ablate->parsed()) return cmd_ablate(ablate_args.build(), mode, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const GeometryError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace attr
