#include "toothdet/pipeline/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "toothdet/autodiff/checkpoint.hpp"
#include "toothdet/autodiff/ops.hpp"
#include "toothdet/core/rng.hpp"

namespace toothdet::pipeline {

namespace {

using json = nlohmann::json;

// Decode constants: head outputs live in unit coordinates, pixels come from
// multiplying x-components by the canvas width and y-components by the
// height. Offsets are bounded by the patch half-extent instead.
constexpr double kOffsetScale = 64.0;
constexpr double kNominalW = 28.0;
constexpr double kNominalH = 45.0;
constexpr int kPatchSize = 128;

ad::Tensor canvas_decode64() {
  ad::Tensor t({64});
  for (int k = 0; k < 32; ++k) {
    t[2 * k] = geom::kCanvasW;
    t[2 * k + 1] = geom::kCanvasH;
  }
  return t;
}

ad::Tensor offset_decode64() {
  return ad::Tensor::full({64}, kOffsetScale);
}

ad::Var zero_scalar() { return ad::Var(ad::Tensor::scalar(0.0)); }

void check_blocks(const std::vector<ConvBlockSpec>& blocks,
                  const char* stage) {
  if (blocks.empty())
    throw std::invalid_argument(std::string("backbone: empty ") + stage);
  for (const auto& b : blocks) {
    if (b.channels < 1)
      throw std::invalid_argument(std::string("backbone: non-positive "
                                              "channel count in ") +
                                  stage);
    if (b.stride < 1)
      throw std::invalid_argument(std::string("backbone: non-positive "
                                              "stride in ") +
                                  stage);
  }
}

ad::Tensor conv_weight_init(int out_c, int in_c, Rng& rng) {
  ad::Tensor w({out_c, in_c, 3, 3});
  const double bound = std::sqrt(1.0 / (in_c * 9.0));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

// Evenly spaced arch rows: a layout every scene roughly resembles, so the
// very first crops already land near teeth and the initial neighbor
// distances are uniform.
ad::Tensor canonical_center_bias() {
  ad::Tensor b({64});
  for (int k = 0; k < 32; ++k) {
    const bool upper = k < 16;
    const int slot = upper ? k : k - 16;
    const double x = 384.0 + (slot - 7.5) * 38.0;
    const double y = upper ? 185.0 : 335.0;
    b[2 * k] = x / geom::kCanvasW;
    b[2 * k + 1] = y / geom::kCanvasH;
  }
  return b;
}

struct ConvLayer {
  ad::Var w;
  ad::Var b;
  int stride = 1;
};

std::vector<ConvLayer> stage_layers(const ad::ParamStore& params,
                                    const std::vector<ConvBlockSpec>& blocks,
                                    const char* prefix) {
  std::vector<ConvLayer> layers;
  layers.reserve(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = std::string(prefix) + std::to_string(i);
    const ad::Var* w = params.find(base + ".w");
    const ad::Var* b = params.find(base + ".b");
    if (w == nullptr || b == nullptr)
      throw std::logic_error("networks out of sync with backbone config: " +
                             base);
    layers.push_back({*w, *b, blocks[i].stride});
  }
  return layers;
}

ad::Var run_blocks(ad::Var x, const std::vector<ConvLayer>& layers) {
  for (const auto& l : layers) x = ad::relu(ad::conv2d(x, l.w, l.b, l.stride, 1));
  return x;
}

const ad::Var& named(const ad::ParamStore& params, const std::string& name) {
  const ad::Var* v = params.find(name);
  if (v == nullptr)
    throw std::logic_error("networks missing parameter: " + name);
  return *v;
}

std::string breakdown_text(const losses::LossBreakdown& b) {
  std::ostringstream os;
  os << "center=" << b.center << " dr=" << b.dr << " offset=" << b.offset
     << " box=" << b.box << " weight_reg=" << b.weight_reg
     << " total=" << b.total;
  return os.str();
}

json blocks_to_json(const std::vector<ConvBlockSpec>& blocks) {
  json arr = json::array();
  for (const auto& b : blocks)
    arr.push_back({{"channels", b.channels}, {"stride", b.stride}});
  return arr;
}

std::vector<ConvBlockSpec> blocks_from_json(const json& arr) {
  std::vector<ConvBlockSpec> blocks;
  for (const auto& e : arr)
    blocks.push_back({e.at("channels").get<int>(), e.at("stride").get<int>()});
  return blocks;
}

}  // namespace

// Stage-2 stacks must collapse the 128px patch to a receptive field spanning
// it (seven stride-2 blocks reach 1x1, RF 255): GAP features of a shallow
// stack are translation-invariant away from the borders, which makes the
// blob's displacement inside the patch invisible to the offset head.
BackboneConfig default_backbone() {
  BackboneConfig cfg;
  cfg.name = "default";
  cfg.stage1 = {{16, 2}, {16, 1}, {24, 2}, {24, 1}, {32, 2}, {32, 1}};
  cfg.stage2 = {{16, 2}, {24, 2}, {32, 2}, {32, 2}, {48, 2}, {48, 2}, {64, 2}};
  return cfg;
}

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.name = "tiny";
  cfg.stage1 = {{8, 2}, {12, 2}, {12, 2}, {12, 1}};
  cfg.stage2 = {{8, 2}, {12, 2}, {16, 2}, {16, 2}, {24, 2}, {24, 2}, {32, 2}};
  return cfg;
}

BackboneConfig backbone_by_name(const std::string& name) {
  if (name == "default") return default_backbone();
  if (name == "tiny") return tiny_backbone();
  throw std::invalid_argument("unknown backbone: " + name);
}

void validate(const TrainConfig& config) {
  if (config.iterations < 0)
    throw std::invalid_argument("train config: iterations must be >= 0");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
    throw std::invalid_argument("train config: learning rate must be positive");
  if (config.optimizer != "adam" && config.optimizer != "sgd")
    throw std::invalid_argument("train config: unknown optimizer '" +
                                config.optimizer + "'");
  if (config.stage1_warmup_steps < 0)
    throw std::invalid_argument("train config: warmup steps must be >= 0");
  const auto& w = config.weights;
  if (!(w.alpha >= 0.0) || !(w.beta >= 0.0) || !(w.gamma >= 0.0) ||
      !std::isfinite(w.alpha) || !std::isfinite(w.beta) ||
      !std::isfinite(w.gamma))
    throw std::invalid_argument("train config: loss weights must be finite "
                                "and non-negative");
  backbone_by_name(config.backbone);
}

std::vector<ad::NamedParam> Networks::stage1_params() const {
  std::vector<ad::NamedParam> out;
  for (const auto& e : params.entries())
    if (e.name.rfind("s1.", 0) == 0) out.push_back(e);
  return out;
}

Networks build_networks(const BackboneConfig& config, uint64_t seed,
                        bool train_offset_head) {
  check_blocks(config.stage1, "stage1");
  check_blocks(config.stage2, "stage2");

  Networks nets;
  nets.config = config;
  nets.offset_head_trainable = train_offset_head;

  uint64_t stream = 0;
  int in_c = 1;
  for (size_t i = 0; i < config.stage1.size(); ++i) {
    Rng rng = Rng::fork(seed, stream++);
    const int out_c = config.stage1[i].channels;
    nets.params.add("s1.conv" + std::to_string(i) + ".w",
                    conv_weight_init(out_c, in_c, rng));
    nets.params.add("s1.conv" + std::to_string(i) + ".b",
                    ad::Tensor({out_c}));
    in_c = out_c;
  }
  // Head starts at the canonical layout: zero weights put the whole initial
  // estimate in the bias, which also makes the initial crops deterministic.
  nets.params.add("s1.fc.w", ad::Tensor({64, config.feature_channels()}));
  nets.params.add("s1.fc.b", canonical_center_bias());

  in_c = config.feature_channels() + 1;
  for (size_t i = 0; i < config.stage2.size(); ++i) {
    Rng rng = Rng::fork(seed, stream++);
    const int out_c = config.stage2[i].channels;
    nets.params.add("s2.conv" + std::to_string(i) + ".w",
                    conv_weight_init(out_c, in_c, rng));
    nets.params.add("s2.conv" + std::to_string(i) + ".b",
                    ad::Tensor({out_c}));
    in_c = out_c;
  }
  const int trunk_c = config.stage2.back().channels;
  // Zero offset head: refinement starts as the identity.
  nets.params.add("s2.off.w", ad::Tensor({2, trunk_c}), train_offset_head);
  nets.params.add("s2.off.b", ad::Tensor({2}), train_offset_head);
  ad::Tensor size_bias({2});
  size_bias[0] = kNominalW / geom::kCanvasW;
  size_bias[1] = kNominalH / geom::kCanvasH;
  nets.params.add("s2.size.w", ad::Tensor({2, trunk_c}));
  nets.params.add("s2.size.b", size_bias);
  return nets;
}

Networks build_networks(const TrainConfig& config) {
  validate(config);
  return build_networks(backbone_by_name(config.backbone), config.seed,
                        config.use_offset);
}

ad::Var build_image_tensor(const data::GrayImage& image) {
  if (image.width != geom::kCanvasW || image.height != geom::kCanvasH)
    throw std::invalid_argument("image is not on the 768x512 canvas");
  ad::Tensor t({1, geom::kCanvasH, geom::kCanvasW});
  const double inv = 1.0 / 255.0;
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = image.pixels[static_cast<size_t>(i)] * inv;
  return ad::Var(std::move(t));
}

int flat_pair_of_id(int id) { return id <= 16 ? id - 1 : 16 + (32 - id); }

int id_of_flat_pair(int pair) {
  return pair < 16 ? pair + 1 : 32 - (pair - 16);
}

std::array<double, 64> center_targets(const data::Scene& scene) {
  std::array<double, 64> t{};
  for (const auto& tooth : scene.teeth) {
    const int k = flat_pair_of_id(tooth.tooth.index);
    t[2 * k] = tooth.box.cx;
    t[2 * k + 1] = tooth.box.cy;
  }
  return t;
}

std::array<double, 64> size_targets(const data::Scene& scene) {
  std::array<double, 64> t{};
  for (const auto& tooth : scene.teeth) {
    const int k = flat_pair_of_id(tooth.tooth.index);
    t[2 * k] = tooth.box.w;
    t[2 * k + 1] = tooth.box.h;
  }
  return t;
}

Stage1Result stage1_forward(const Networks& nets, const ad::Var& image) {
  const auto layers = stage_layers(nets.params, nets.config.stage1, "s1.conv");
  ad::Var features = run_blocks(image, layers);
  ad::Var pooled = ad::global_avg_pool(features);
  ad::Var head = ad::fully_connected(pooled, named(nets.params, "s1.fc.w"),
                                     named(nets.params, "s1.fc.b"));
  return {ad::cmul(head, canvas_decode64()), features};
}

std::array<std::pair<int, int>, 32> crop_corners(
    const std::array<double, 64>& centers) {
  std::array<std::pair<int, int>, 32> corners;
  for (int k = 0; k < 32; ++k) {
    const long cx = std::lround(centers[2 * k]);
    const long cy = std::lround(centers[2 * k + 1]);
    corners[k] = {static_cast<int>(cx) - kPatchSize / 2,
                  static_cast<int>(cy) - kPatchSize / 2};
  }
  return corners;
}

std::vector<ad::Var> crop_patches(const ad::Var& image,
                                  const ad::Var& features_upsampled,
                                  const std::array<double, 64>& centers) {
  ad::Var stacked = ad::concat_channels(image, features_upsampled);
  const auto corners = crop_corners(centers);
  std::vector<ad::Var> patches;
  patches.reserve(32);
  for (const auto& [left, top] : corners)
    patches.push_back(ad::crop_window(stacked, left, top, kPatchSize));
  return patches;
}

Stage2Result stage2_forward(const Networks& nets,
                            const std::vector<ad::Var>& patches,
                            bool use_offset) {
  if (patches.size() != 32)
    throw std::invalid_argument("stage2_forward: expected 32 patches");
  const auto layers = stage_layers(nets.params, nets.config.stage2, "s2.conv");
  const ad::Var& off_w = named(nets.params, "s2.off.w");
  const ad::Var& off_b = named(nets.params, "s2.off.b");
  const ad::Var& size_w = named(nets.params, "s2.size.w");
  const ad::Var& size_b = named(nets.params, "s2.size.b");

  std::vector<ad::Var> offsets;
  std::vector<ad::Var> sizes;
  offsets.reserve(32);
  sizes.reserve(32);
  for (const auto& patch : patches) {
    ad::Var pooled = ad::global_avg_pool(run_blocks(patch, layers));
    if (use_offset)
      offsets.push_back(ad::fully_connected(pooled, off_w, off_b));
    sizes.push_back(ad::fully_connected(pooled, size_w, size_b));
  }

  Stage2Result out;
  if (use_offset)
    out.offsets = ad::cmul(ad::concat_vec(offsets), offset_decode64());
  else
    out.offsets = ad::Var(ad::Tensor({64}));
  out.sizes = ad::cmul(ad::concat_vec(sizes), canvas_decode64());
  return out;
}

StepResult train_step(Networks& nets, const data::Scene& scene,
                      const TrainConfig& config, ad::Optimizer& optimizer,
                      int step_index) {
  const bool warmup = step_index < config.stage1_warmup_steps;
  nets.params.zero_grads();

  ad::Var image = build_image_tensor(scene.image);
  Stage1Result s1 = stage1_forward(nets, image);

  std::array<double, 64> centers;
  for (int i = 0; i < 64; ++i) centers[i] = s1.centers.value()[i];

  const auto center_t = center_targets(scene);
  ad::Var l_cen = losses::center_loss(
      s1.centers,
      ad::Tensor({64}, std::vector<double>(center_t.begin(), center_t.end())));
  ad::Var l_dr =
      config.use_dr ? losses::dr_loss(s1.centers, config.dr_squared)
                    : zero_scalar();

  ad::Var l_off = zero_scalar();
  ad::Var l_box = zero_scalar();
  if (!warmup) {
    ad::Var up = ad::upsample_bilinear(s1.features, geom::kCanvasH,
                                       geom::kCanvasW);
    // Crop positions come from the detached center values; the contents stay
    // on the graph, so the box and offset terms still reach stage 1.
    auto patches = crop_patches(image, up, centers);
    Stage2Result s2 = stage2_forward(nets, patches, config.use_offset);
    if (config.use_offset) {
      std::vector<double> off_t(64);
      for (int i = 0; i < 64; ++i) off_t[i] = center_t[i] - centers[i];
      l_off = losses::offset_loss(s2.offsets,
                                  ad::Tensor({64}, std::move(off_t)));
    }
    const auto size_t_ = size_targets(scene);
    l_box = losses::box_loss(
        s2.sizes,
        ad::Tensor({64}, std::vector<double>(size_t_.begin(), size_t_.end())));
  }

  std::vector<ad::Var> reg;
  if (warmup) {
    for (const auto& e : nets.stage1_params())
      if (e.var.requires_grad()) reg.push_back(e.var);
  } else {
    reg = nets.params.trainable();
  }

  auto [total, breakdown] =
      losses::total_loss(l_cen, l_dr, l_off, l_box, reg, config.weights);
  if (!std::isfinite(breakdown.total))
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(step_index) + " (" +
                             breakdown_text(breakdown) + ")");

  ad::backward(total);
  if (warmup)
    optimizer.step(nets.stage1_params());
  else
    optimizer.step(nets.params);

  return {breakdown, centers};
}

DetectionResult infer(const Networks& nets, const data::GrayImage& image) {
  ad::Var img = build_image_tensor(image);
  Stage1Result s1 = stage1_forward(nets, img);
  std::array<double, 64> centers;
  for (int i = 0; i < 64; ++i) centers[i] = s1.centers.value()[i];

  ad::Var up =
      ad::upsample_bilinear(s1.features, geom::kCanvasH, geom::kCanvasW);
  auto patches = crop_patches(img, up, centers);
  Stage2Result s2 = stage2_forward(nets, patches, true);
  const ad::Tensor& off = s2.offsets.value();
  const ad::Tensor& sz = s2.sizes.value();

  DetectionResult result;
  for (int k = 0; k < 32; ++k) {
    const int id = id_of_flat_pair(k);
    Detection det;
    det.tooth = geom::ToothId{id};
    det.stage1_center = {centers[2 * k], centers[2 * k + 1]};
    bool clamped = false;
    det.box = geom::box_from_prediction(det.stage1_center,
                                        {off[2 * k], off[2 * k + 1]},
                                        {sz[2 * k], sz[2 * k + 1]}, &clamped);
    det.refined_center = {det.box.cx, det.box.cy};
    result.any_clamped = result.any_clamped || clamped;
    result.teeth[id - 1] = det;
  }
  return result;
}

std::array<geom::Box, 32> result_boxes(const DetectionResult& result) {
  std::array<geom::Box, 32> boxes;
  for (int i = 0; i < 32; ++i) boxes[i] = result.teeth[i].box;
  return boxes;
}

ValidationStats validate_scenes(const Networks& nets,
                                const std::vector<data::Scene>& scenes) {
  if (scenes.empty())
    throw std::invalid_argument("validate_scenes: empty scene list");
  double se1 = 0.0;
  double se2 = 0.0;
  for (const auto& scene : scenes) {
    const DetectionResult res = infer(nets, scene.image);
    const auto target = center_targets(scene);
    for (int k = 0; k < 32; ++k) {
      const int id = id_of_flat_pair(k);
      const Detection& det = res.teeth[id - 1];
      const double dx1 = det.stage1_center.x - target[2 * k];
      const double dy1 = det.stage1_center.y - target[2 * k + 1];
      const double dx2 = det.refined_center.x - target[2 * k];
      const double dy2 = det.refined_center.y - target[2 * k + 1];
      se1 += dx1 * dx1 + dy1 * dy1;
      se2 += dx2 * dx2 + dy2 * dy2;
    }
  }
  const double denom = 64.0 * static_cast<double>(scenes.size());
  return {se1 / denom, se2 / denom};
}

TrainLog train(Networks& nets, const std::vector<data::Scene>& train_scenes,
               const std::vector<data::Scene>& val_scenes,
               const TrainConfig& config, std::ostream* metrics_csv,
               const StopCallback& stop) {
  validate(config);
  if (train_scenes.empty() && config.iterations > 0)
    throw std::invalid_argument("train: no training scenes");

  std::unique_ptr<ad::Optimizer> opt;
  if (config.optimizer == "adam")
    opt = std::make_unique<ad::Adam>(ad::AdamConfig{config.learning_rate});
  else
    opt = std::make_unique<ad::Sgd>(ad::SgdConfig{config.learning_rate});

  if (metrics_csv != nullptr)
    *metrics_csv << losses::metrics_csv_header() << '\n';

  Rng shuffle_rng = Rng::fork(config.seed, 0xDA7AULL);
  std::vector<size_t> order(train_scenes.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainLog log;
  int step = 0;
  bool stopped = false;
  while (step < config.iterations && !stopped) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (size_t i = 0;
         i < order.size() && step < config.iterations && !stopped; ++i) {
      const StepResult res =
          train_step(nets, train_scenes[order[i]], config, *opt, step);
      log.steps.push_back(res.breakdown);
      if (metrics_csv != nullptr)
        *metrics_csv << losses::metrics_csv_row(step, res.breakdown) << '\n';
      ++step;
      if (stop && stop(step - 1, res.breakdown)) stopped = true;
    }
    // One validation per epoch; a partial final epoch gets one too, so the
    // last entry always reflects the shipped parameters.
    if (!val_scenes.empty()) log.epochs.push_back(validate_scenes(nets, val_scenes));
  }
  return log;
}

double measure_fps(const Networks& nets,
                   const std::vector<data::GrayImage>& images, int warmup) {
  if (images.size() < 10)
    throw std::invalid_argument("measure_fps: need at least 10 images");
  for (int i = 0; i < warmup; ++i)
    infer(nets, images[static_cast<size_t>(i) % images.size()]);
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& img : images) infer(nets, img);
  const std::chrono::duration<double> dt =
      std::chrono::steady_clock::now() - t0;
  return static_cast<double>(images.size()) / dt.count();
}

void save_pipeline(const Networks& nets, const losses::LossWeights& weights,
                   const std::string& checkpoint_path,
                   const std::string& manifest_path) {
  json doc;
  doc["version"] = 1;
  doc["backbone"] = {{"name", nets.config.name},
                     {"stage1", blocks_to_json(nets.config.stage1)},
                     {"stage2", blocks_to_json(nets.config.stage2)}};
  doc["normalization"] = {{"scale", 255.0}};
  doc["loss_weights"] = {{"alpha", weights.alpha},
                         {"beta", weights.beta},
                         {"gamma", weights.gamma}};
  doc["offset_head_trainable"] = nets.offset_head_trainable;

  const auto parent = std::filesystem::path(manifest_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot write pipeline manifest: " +
                                     manifest_path);
  out << doc.dump(2) << '\n';
  out.close();
  if (!out) throw std::runtime_error("cannot write pipeline manifest: " +
                                     manifest_path);

  ad::save_checkpoint(checkpoint_path, nets.params);
}

Networks load_pipeline(const std::string& checkpoint_path,
                       const std::string& manifest_path,
                       losses::LossWeights* weights) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open pipeline manifest: " +
                                    manifest_path);
  BackboneConfig config;
  bool offset_head_trainable = true;
  losses::LossWeights w;
  try {
    json doc = json::parse(in);
    if (doc.at("version").get<int>() != 1)
      throw std::runtime_error("unsupported manifest version");
    const json& bb = doc.at("backbone");
    config.name = bb.at("name").get<std::string>();
    config.stage1 = blocks_from_json(bb.at("stage1"));
    config.stage2 = blocks_from_json(bb.at("stage2"));
    const json& lw = doc.at("loss_weights");
    w.alpha = lw.at("alpha").get<double>();
    w.beta = lw.at("beta").get<double>();
    w.gamma = lw.at("gamma").get<double>();
    offset_head_trainable = doc.at("offset_head_trainable").get<bool>();
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed pipeline manifest " + manifest_path +
                             ": " + e.what());
  }

  // Seed is irrelevant here: every initialized value is about to be
  // overwritten, and a checkpoint for any other architecture is rejected by
  // the strict load.
  Networks nets = build_networks(config, 0, offset_head_trainable);
  ad::load_checkpoint(checkpoint_path, nets.params);
  if (weights != nullptr) *weights = w;
  return nets;
}

void save_predictions(const DetectionResult& result, const std::string& path,
                      const std::string& image_ref) {
  json doc;
  doc["version"] = 1;
  doc["predicted"] = true;
  doc["image"] = image_ref;
  doc["width"] = geom::kCanvasW;
  doc["height"] = geom::kCanvasH;
  json teeth = json::array();
  for (const auto& det : result.teeth) {
    teeth.push_back({{"id", det.tooth.index},
                     {"present", true},
                     {"cx", det.box.cx},
                     {"cy", det.box.cy},
                     {"w", det.box.w},
                     {"h", det.box.h}});
  }
  doc["teeth"] = std::move(teeth);

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
  out << doc.dump(2) << '\n';
  out.close();
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
}

}  // namespace toothdet::pipeline
