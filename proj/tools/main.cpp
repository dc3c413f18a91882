// Command surface: dataset synthesis, training with ablation switches,
// evaluation, single-image inference, and gradient self-checks. Exit codes
// are a stable contract: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "toothdet/data/image.hpp"
#include "toothdet/data/scene.hpp"
#include "toothdet/eval/metrics.hpp"
#include "toothdet/eval/render.hpp"
#include "toothdet/losses/gradient_suite.hpp"
#include "toothdet/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace toothdet;
namespace pl = toothdet::pipeline;

namespace {

constexpr double kGradTolerance = 1e-4;

struct RunConfig {
  uint64_t seed = 0;
  // synthesize
  int count = 818;
  double missing_probability = 0.15;
  double jitter = 1.0;
  double noise_level = 3.0;
  // train (seed is injected from the global seed at run time)
  pl::TrainConfig train;
  // eval
  std::string split = "test";
  bool overlays = true;
  bool oracle = false;
  // infer
  bool apply_clahe = false;
  double clip_limit = 2.0;
  int tiles_x = 8;
  int tiles_y = 8;
  bool benchmark = false;
  // gradcheck
  int gradcheck_rounds = 20;
  bool corrupt_dr = false;
};

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const auto& a : allowed)
      if (key == a) known = true;
    if (!known)
      throw std::invalid_argument("config: unknown key '" + key + "' in " +
                                  where);
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }

  RunConfig cfg;
  try {
    check_keys(doc, {"seed", "synthesize", "train", "eval", "infer",
                     "gradcheck"},
               "config root");
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<uint64_t>();
    if (doc.contains("synthesize")) {
      const json& s = doc["synthesize"];
      check_keys(s, {"count", "missing_probability", "jitter", "noise_level"},
                 "synthesize");
      if (s.contains("count")) cfg.count = s["count"].get<int>();
      if (s.contains("missing_probability"))
        cfg.missing_probability = s["missing_probability"].get<double>();
      if (s.contains("jitter")) cfg.jitter = s["jitter"].get<double>();
      if (s.contains("noise_level"))
        cfg.noise_level = s["noise_level"].get<double>();
    }
    if (doc.contains("train")) {
      const json& t = doc["train"];
      check_keys(t,
                 {"iterations", "learning_rate", "optimizer", "backbone",
                  "use_dr", "use_offset", "dr_squared", "stage1_warmup_steps",
                  "alpha", "beta", "gamma"},
                 "train");
      auto& tc = cfg.train;
      if (t.contains("iterations")) tc.iterations = t["iterations"].get<int>();
      if (t.contains("learning_rate"))
        tc.learning_rate = t["learning_rate"].get<double>();
      if (t.contains("optimizer"))
        tc.optimizer = t["optimizer"].get<std::string>();
      if (t.contains("backbone"))
        tc.backbone = t["backbone"].get<std::string>();
      if (t.contains("use_dr")) tc.use_dr = t["use_dr"].get<bool>();
      if (t.contains("use_offset")) tc.use_offset = t["use_offset"].get<bool>();
      if (t.contains("dr_squared")) tc.dr_squared = t["dr_squared"].get<bool>();
      if (t.contains("stage1_warmup_steps"))
        tc.stage1_warmup_steps = t["stage1_warmup_steps"].get<int>();
      if (t.contains("alpha")) tc.weights.alpha = t["alpha"].get<double>();
      if (t.contains("beta")) tc.weights.beta = t["beta"].get<double>();
      if (t.contains("gamma")) tc.weights.gamma = t["gamma"].get<double>();
    }
    if (doc.contains("eval")) {
      const json& e = doc["eval"];
      check_keys(e, {"split", "overlays", "oracle"}, "eval");
      if (e.contains("split")) cfg.split = e["split"].get<std::string>();
      if (e.contains("overlays")) cfg.overlays = e["overlays"].get<bool>();
      if (e.contains("oracle")) cfg.oracle = e["oracle"].get<bool>();
    }
    if (doc.contains("infer")) {
      const json& i = doc["infer"];
      check_keys(i, {"clahe", "clip_limit", "tiles_x", "tiles_y", "benchmark"},
                 "infer");
      if (i.contains("clahe")) cfg.apply_clahe = i["clahe"].get<bool>();
      if (i.contains("clip_limit"))
        cfg.clip_limit = i["clip_limit"].get<double>();
      if (i.contains("tiles_x")) cfg.tiles_x = i["tiles_x"].get<int>();
      if (i.contains("tiles_y")) cfg.tiles_y = i["tiles_y"].get<int>();
      if (i.contains("benchmark")) cfg.benchmark = i["benchmark"].get<bool>();
    }
    if (doc.contains("gradcheck")) {
      const json& g = doc["gradcheck"];
      check_keys(g, {"rounds", "corrupt_dr"}, "gradcheck");
      if (g.contains("rounds")) cfg.gradcheck_rounds = g["rounds"].get<int>();
      if (g.contains("corrupt_dr"))
        cfg.corrupt_dr = g["corrupt_dr"].get<bool>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["synthesize"] = {{"count", cfg.count},
                       {"missing_probability", cfg.missing_probability},
                       {"jitter", cfg.jitter},
                       {"noise_level", cfg.noise_level}};
  doc["train"] = {{"iterations", cfg.train.iterations},
                  {"learning_rate", cfg.train.learning_rate},
                  {"optimizer", cfg.train.optimizer},
                  {"backbone", cfg.train.backbone},
                  {"use_dr", cfg.train.use_dr},
                  {"use_offset", cfg.train.use_offset},
                  {"dr_squared", cfg.train.dr_squared},
                  {"stage1_warmup_steps", cfg.train.stage1_warmup_steps},
                  {"alpha", cfg.train.weights.alpha},
                  {"beta", cfg.train.weights.beta},
                  {"gamma", cfg.train.weights.gamma}};
  doc["eval"] = {{"split", cfg.split},
                 {"overlays", cfg.overlays},
                 {"oracle", cfg.oracle}};
  doc["infer"] = {{"clahe", cfg.apply_clahe},
                  {"clip_limit", cfg.clip_limit},
                  {"tiles_x", cfg.tiles_x},
                  {"tiles_y", cfg.tiles_y},
                  {"benchmark", cfg.benchmark}};
  doc["gradcheck"] = {{"rounds", cfg.gradcheck_rounds},
                      {"corrupt_dr", cfg.corrupt_dr}};
  return doc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << text;
  out.close();
  if (!out) throw std::runtime_error("cannot write: " + path.string());
}

// Resolved snapshot: re-running the same command with --config on this file
// reproduces the run bit for bit.
void write_snapshot(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

std::vector<data::Scene> load_split(const fs::path& data_dir,
                                    const std::vector<std::string>& stems) {
  std::vector<data::Scene> scenes;
  scenes.reserve(stems.size());
  for (const auto& stem : stems)
    scenes.push_back(
        data::load_scene((data_dir / "annotations" / (stem + ".json")).string()));
  return scenes;
}

const std::vector<std::string>& split_stems(const data::DatasetManifest& m,
                                            const std::string& name) {
  if (name == "train") return m.train;
  if (name == "val") return m.val;
  if (name == "test") return m.test;
  throw std::invalid_argument("unknown split '" + name +
                              "' (expected train, val or test)");
}

int cmd_synthesize(const RunConfig& cfg, const fs::path& out) {
  if (cfg.count < 0)
    throw std::invalid_argument("synthesize: count must be >= 0");
  data::SynthConfig sc;
  sc.seed = cfg.seed;
  sc.missing_probability = cfg.missing_probability;
  sc.jitter = cfg.jitter;
  sc.noise_level = cfg.noise_level;

  data::DatasetManifest manifest;
  const auto counts = data::split_counts(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    const data::Scene scene = data::synthesize_scene(sc, uint64_t(i));
    const std::string stem = data::scene_stem(uint64_t(i));
    data::save_scene(scene, (out / "annotations" / (stem + ".json")).string());
    if (i < counts[0])
      manifest.train.push_back(stem);
    else if (i < counts[0] + counts[1])
      manifest.val.push_back(stem);
    else
      manifest.test.push_back(stem);
  }
  data::save_manifest(manifest, (out / "manifest.json").string());
  std::printf("synthesized %d scenes (train %d, val %d, test %d) under %s\n",
              cfg.count, counts[0], counts[1], counts[2], out.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& data_dir,
              const fs::path& out) {
  const data::DatasetManifest manifest =
      data::load_manifest((data_dir / "manifest.json").string());
  const std::vector<data::Scene> train_scenes =
      load_split(data_dir, manifest.train);
  const std::vector<data::Scene> val_scenes = load_split(data_dir, manifest.val);

  pl::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  pl::validate(tc);
  pl::Networks nets = pl::build_networks(tc);

  std::ofstream csv(out / "metrics.csv");
  if (!csv) throw std::runtime_error("cannot write: " + (out / "metrics.csv").string());
  const pl::TrainLog log = pl::train(
      nets, train_scenes, val_scenes, tc, &csv,
      [](int step, const losses::LossBreakdown& b) {
        if ((step + 1) % 100 == 0)
          std::printf("step %d: total %.4f (center %.4f, box %.4f)\n",
                      step + 1, b.total, b.center, b.box);
        return false;
      });
  csv.close();
  if (!csv) throw std::runtime_error("cannot write: " + (out / "metrics.csv").string());

  std::ostringstream vlog;
  vlog.precision(17);
  vlog << "epoch,mse1,mse2\n";
  for (size_t e = 0; e < log.epochs.size(); ++e) {
    vlog << (e + 1) << ',' << log.epochs[e].mse1 << ',' << log.epochs[e].mse2
         << '\n';
    std::printf("epoch %zu: mse1 %.3f px^2, mse2 %.3f px^2\n", e + 1,
                log.epochs[e].mse1, log.epochs[e].mse2);
  }
  write_text(out / "validation.csv", vlog.str());

  pl::save_pipeline(nets, tc.weights, (out / "checkpoint.tpckpt").string(),
                    (out / "pipeline.json").string());
  std::printf("ran %zu steps; checkpoint written to %s\n", log.steps.size(),
              (out / "checkpoint.tpckpt").c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& data_dir,
             const fs::path& model_dir, const fs::path& out) {
  const data::DatasetManifest manifest =
      data::load_manifest((data_dir / "manifest.json").string());
  const std::vector<std::string>& stems = split_stems(manifest, cfg.split);
  if (stems.empty())
    throw std::invalid_argument("empty split '" + cfg.split + "'");
  const std::vector<data::Scene> scenes = load_split(data_dir, stems);

  std::vector<eval::BoxSet32> predictions;
  predictions.reserve(scenes.size());
  if (cfg.oracle) {
    // Ground truth fed back as predictions: a fixture that must score 1.
    for (const auto& scene : scenes) {
      eval::BoxSet32 boxes;
      for (int i = 0; i < 32; ++i) boxes[i] = scene.teeth[i].box;
      predictions.push_back(boxes);
    }
  } else {
    if (model_dir.empty())
      throw std::invalid_argument("eval: --model is required without --oracle");
    const pl::Networks nets =
        pl::load_pipeline((model_dir / "checkpoint.tpckpt").string(),
                          (model_dir / "pipeline.json").string());
    for (const auto& scene : scenes)
      predictions.push_back(pl::result_boxes(pl::infer(nets, scene.image)));
  }

  const eval::EvalReport report = eval::evaluate(predictions, scenes);
  write_text(out / "report.json", eval::report_json(report) + "\n");
  write_text(out / "report.csv", eval::report_csv_summary(report) + "\n");
  eval::render_confusion_png(report.confusion, (out / "confusion.png").string());
  if (cfg.overlays) {
    fs::create_directories(out / "overlays");
    for (size_t i = 0; i < scenes.size(); ++i)
      eval::render_overlay_png(scenes[i], predictions[i],
                               (out / "overlays" / (stems[i] + ".png")).string());
  }
  std::printf(
      "split %s (%zu scenes): ap %.4f, ap50 %.4f, ap75 %.4f, miou %.4f, "
      "id precision %.4f, id recall %.4f\n",
      cfg.split.c_str(), scenes.size(), report.detection.ap,
      report.detection.ap50, report.detection.ap75, report.miou.value,
      report.identification.precision, report.identification.recall);
  return 0;
}

int cmd_infer(const RunConfig& cfg, const fs::path& model_dir,
              const std::string& image_path, const fs::path& out) {
  data::GrayImage image = data::load_png(image_path);
  if (image.width != geom::kCanvasW || image.height != geom::kCanvasH)
    image = data::to_canvas(image).image;
  if (cfg.apply_clahe)
    image = data::clahe(image, cfg.clip_limit, cfg.tiles_x, cfg.tiles_y);

  const pl::Networks nets =
      pl::load_pipeline((model_dir / "checkpoint.tpckpt").string(),
                        (model_dir / "pipeline.json").string());
  const pl::DetectionResult result = pl::infer(nets, image);
  pl::save_predictions(result, (out / "predictions.json").string(), image_path);
  eval::render_detections_png(image, pl::result_boxes(result),
                              (out / "overlay.png").string());
  std::printf("wrote %s and %s\n", (out / "predictions.json").c_str(),
              (out / "overlay.png").c_str());

  if (cfg.benchmark) {
    const std::vector<data::GrayImage> batch(12, image);
    const double fps = pl::measure_fps(nets, batch);
    std::printf("throughput: %.2f images/s\n", fps);
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const fs::path& out) {
  const auto rows =
      losses::run_gradient_suite(cfg.seed, cfg.gradcheck_rounds, cfg.corrupt_dr);
  std::ostringstream table;
  char line[128];
  std::snprintf(line, sizeof(line), "%-26s %8s %14s  %s\n", "op/loss",
                "checked", "max_rel_err", "status");
  table << line;
  bool all_pass = true;
  for (const auto& row : rows) {
    const bool ok = row.pass(kGradTolerance);
    all_pass = all_pass && ok;
    std::snprintf(line, sizeof(line), "%-26s %8d %14.3e  %s\n",
                  row.label.c_str(), row.checked, row.max_rel_err,
                  ok ? "PASS" : "FAIL");
    table << line;
  }
  std::fputs(table.str().c_str(), stdout);
  write_text(out / "gradcheck.txt", table.str());
  // A failing gradient is a failed validation of the build, not a crash.
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage tooth detection and identification pipeline"};
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::string out;
    uint64_t seed = 0;
    std::string data;
    std::string model;
    std::string image;
  } args;
  RunConfig overrides;

  struct OptSet {
    CLI::Option* seed = nullptr;
    CLI::Option* count = nullptr;
    CLI::Option* missing = nullptr;
    CLI::Option* jitter = nullptr;
    CLI::Option* noise = nullptr;
    CLI::Option* iterations = nullptr;
    CLI::Option* lr = nullptr;
    CLI::Option* optimizer = nullptr;
    CLI::Option* backbone = nullptr;
    CLI::Option* warmup = nullptr;
    CLI::Option* no_dr = nullptr;
    CLI::Option* no_offset = nullptr;
    CLI::Option* dr_unsquared = nullptr;
    CLI::Option* split = nullptr;
    CLI::Option* no_overlays = nullptr;
    CLI::Option* oracle = nullptr;
    CLI::Option* clahe = nullptr;
    CLI::Option* clip = nullptr;
    CLI::Option* tiles_x = nullptr;
    CLI::Option* tiles_y = nullptr;
    CLI::Option* benchmark = nullptr;
    CLI::Option* rounds = nullptr;
    CLI::Option* corrupt = nullptr;
  } opt;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config, "JSON configuration file");
    opt.seed = cmd->add_option("--seed", overrides.seed, "master random seed");
    cmd->add_option("--out", args.out, "output directory")->required();
  };

  CLI::App* synth = app.add_subcommand("synthesize", "generate a dataset");
  add_common(synth);
  opt.count = synth->add_option("--count", overrides.count, "number of scenes");
  opt.missing = synth->add_option("--missing-probability",
                                  overrides.missing_probability,
                                  "per-tooth absence probability");
  opt.jitter = synth->add_option("--jitter", overrides.jitter,
                                 "shape perturbation scale");
  opt.noise = synth->add_option("--noise", overrides.noise_level,
                                "additive noise sigma");

  CLI::App* train = app.add_subcommand("train", "train the two-stage model");
  add_common(train);
  train->add_option("--data", args.data, "dataset directory")->required();
  opt.iterations = train->add_option("--iterations", overrides.train.iterations,
                                     "optimization steps");
  opt.lr = train->add_option("--learning-rate", overrides.train.learning_rate,
                             "optimizer step size");
  opt.optimizer = train->add_option("--optimizer", overrides.train.optimizer,
                                    "adam or sgd");
  opt.backbone = train->add_option("--backbone", overrides.train.backbone,
                                   "backbone name (tiny or default)");
  opt.warmup = train->add_option("--warmup",
                                 overrides.train.stage1_warmup_steps,
                                 "stage-1-only steps before joint training");
  opt.no_dr = train->add_flag("--no-dr", "disable distance regularization");
  opt.no_offset =
      train->add_flag("--no-offset", "freeze the offset head (ablation)");
  opt.dr_unsquared = train->add_flag(
      "--dr-unsquared", "use the unsquared norm in distance regularization");

  CLI::App* evalc = app.add_subcommand("eval", "measure a checkpoint");
  add_common(evalc);
  evalc->add_option("--data", args.data, "dataset directory")->required();
  evalc->add_option("--model", args.model,
                    "directory holding checkpoint.tpckpt and pipeline.json");
  opt.split = evalc->add_option("--split", overrides.split,
                                "train, val or test");
  opt.oracle = evalc->add_flag(
      "--oracle", "score the annotations against themselves (fixture)");
  opt.no_overlays = evalc->add_flag("--no-overlays", "skip overlay rendering");

  CLI::App* infer = app.add_subcommand("infer", "detect teeth in one image");
  add_common(infer);
  infer->add_option("--model", args.model,
                    "directory holding checkpoint.tpckpt and pipeline.json")
      ->required();
  infer->add_option("--image", args.image, "input PNG")->required();
  opt.clahe = infer->add_flag("--clahe", "equalize contrast before inference");
  opt.clip = infer->add_option("--clip-limit", overrides.clip_limit,
                               "CLAHE clip limit");
  opt.tiles_x = infer->add_option("--tiles-x", overrides.tiles_x, "CLAHE tiles");
  opt.tiles_y = infer->add_option("--tiles-y", overrides.tiles_y, "CLAHE tiles");
  opt.benchmark = infer->add_flag("--benchmark", "measure throughput");

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference audit");
  add_common(grad);
  opt.rounds = grad->add_option("--seeds", overrides.gradcheck_rounds,
                                "random fixtures per op");
  opt.corrupt = grad->add_flag(
      "--corrupt-dr", "plant a wrong gradient to prove the audit can fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!args.config.empty()) cfg = load_config(args.config);

    const auto picked = [](const CLI::Option* o) { return o && o->count() > 0; };
    if (picked(opt.seed)) cfg.seed = overrides.seed;
    if (picked(opt.count)) cfg.count = overrides.count;
    if (picked(opt.missing))
      cfg.missing_probability = overrides.missing_probability;
    if (picked(opt.jitter)) cfg.jitter = overrides.jitter;
    if (picked(opt.noise)) cfg.noise_level = overrides.noise_level;
    if (picked(opt.iterations))
      cfg.train.iterations = overrides.train.iterations;
    if (picked(opt.lr)) cfg.train.learning_rate = overrides.train.learning_rate;
    if (picked(opt.optimizer)) cfg.train.optimizer = overrides.train.optimizer;
    if (picked(opt.backbone)) cfg.train.backbone = overrides.train.backbone;
    if (picked(opt.warmup))
      cfg.train.stage1_warmup_steps = overrides.train.stage1_warmup_steps;
    if (picked(opt.no_dr)) cfg.train.use_dr = false;
    if (picked(opt.no_offset)) cfg.train.use_offset = false;
    if (picked(opt.dr_unsquared)) cfg.train.dr_squared = false;
    if (picked(opt.split)) cfg.split = overrides.split;
    if (picked(opt.oracle)) cfg.oracle = true;
    if (picked(opt.no_overlays)) cfg.overlays = false;
    if (picked(opt.clahe)) cfg.apply_clahe = true;
    if (picked(opt.clip)) cfg.clip_limit = overrides.clip_limit;
    if (picked(opt.tiles_x)) cfg.tiles_x = overrides.tiles_x;
    if (picked(opt.tiles_y)) cfg.tiles_y = overrides.tiles_y;
    if (picked(opt.benchmark)) cfg.benchmark = true;
    if (picked(opt.rounds)) cfg.gradcheck_rounds = overrides.gradcheck_rounds;
    if (picked(opt.corrupt)) cfg.corrupt_dr = true;

    const fs::path out(args.out);
    write_snapshot(cfg, out);

    if (synth->parsed()) return cmd_synthesize(cfg, out);
    if (train->parsed()) return cmd_train(cfg, args.data, out);
    if (evalc->parsed()) return cmd_eval(cfg, args.data, args.model, out);
    if (infer->parsed()) return cmd_infer(cfg, args.model, args.image, out);
    if (grad->parsed()) return cmd_gradcheck(cfg, out);
    std::fprintf(stderr, "error: no command selected\n");
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
