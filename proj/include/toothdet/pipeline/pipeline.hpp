#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "toothdet/autodiff/graph.hpp"
#include "toothdet/autodiff/optimizer.hpp"
#include "toothdet/autodiff/params.hpp"
#include "toothdet/data/scene.hpp"
#include "toothdet/geometry/geometry.hpp"
#include "toothdet/losses/losses.hpp"

namespace toothdet::pipeline {

/// One backbone stage: 3x3 convolution (padding 1) + ReLU.
struct ConvBlockSpec {
  int channels = 8;
  int stride = 1;
};

struct BackboneConfig {
  std::string name = "default";
  std::vector<ConvBlockSpec> stage1;  // over the 1x512x768 canvas
  std::vector<ConvBlockSpec> stage2;  // over (C+1)x128x128 patches

  // Channel count C of the stage-1 feature map fed into the patches.
  int feature_channels() const { return stage1.back().channels; }
};

/// 6 blocks, stride 2 every other block, C=32 at 1/8 resolution.
BackboneConfig default_backbone();
/// Reduced capacity sized for single-core training runs.
BackboneConfig tiny_backbone();
/// "default" or "tiny"; anything else throws.
BackboneConfig backbone_by_name(const std::string& name);

struct TrainConfig {
  uint64_t seed = 0;
  int iterations = 2000;
  double learning_rate = 3e-3;
  std::string optimizer = "adam";  // "adam" | "sgd"
  losses::LossWeights weights;
  bool use_dr = true;
  bool use_offset = true;
  bool dr_squared = true;
  int stage1_warmup_steps = 0;  // optional sequential pre-training phase
  std::string backbone = "tiny";
};

/// Contract checks; iterations 0 is allowed and means "initialize only".
void validate(const TrainConfig& config);

/// Persistent parameters of both stages plus the structure they realize.
/// Stage-1 names carry the "s1." prefix, stage-2 "s2.".
struct Networks {
  BackboneConfig config;
  bool offset_head_trainable = true;
  ad::ParamStore params;

  std::vector<ad::NamedParam> stage1_params() const;
};

/// Deterministic initialization. The stage-1 head starts at the canonical
/// arch layout (zero weights, layout in the bias), the stage-2 offset head
/// at exactly (0,0) and the size head at a nominal tooth size, so the first
/// forward pass already crops sensible windows.
Networks build_networks(const BackboneConfig& config, uint64_t seed,
                        bool train_offset_head = true);
Networks build_networks(const TrainConfig& config);

/// 1x512x768 tensor with intensities scaled to [0,1].
ad::Var build_image_tensor(const data::GrayImage& image);

/// Flattened-layout helpers: component pair k covers upper slots 0..15 then
/// lower slots 0..15; tooth ids map through geom::ToothId.
int flat_pair_of_id(int id);
int id_of_flat_pair(int pair);

/// Annotated centers / box sizes in the flattened 64-float layout.
std::array<double, 64> center_targets(const data::Scene& scene);
std::array<double, 64> size_targets(const data::Scene& scene);

struct Stage1Result {
  ad::Var centers;   // 64 pixel coordinates, differentiable
  ad::Var features;  // C x 64 x 96 backbone map
};
Stage1Result stage1_forward(const Networks& nets, const ad::Var& image);

/// Top-left corners of the 32 patch windows at the (rounded) centers; ties
/// round half away from zero.
std::array<std::pair<int, int>, 32> crop_corners(
    const std::array<double, 64>& centers);

/// (C+1)x128x128 patches cut from image ⊕ upsampled features. The centers
/// are plain numbers (detached): the crop location carries no gradient, the
/// patch contents do.
std::vector<ad::Var> crop_patches(const ad::Var& image,
                                  const ad::Var& features_upsampled,
                                  const std::array<double, 64>& centers);

struct Stage2Result {
  ad::Var offsets;  // 64 values in pixels, head output x 64
  ad::Var sizes;    // 64 values in pixels, head output x canvas extents
};
/// Shared-weight forward over all 32 patches. With the offset head disabled
/// the offsets come back as a detached zero vector.
Stage2Result stage2_forward(const Networks& nets,
                            const std::vector<ad::Var>& patches,
                            bool use_offset = true);

struct StepResult {
  losses::LossBreakdown breakdown;
  std::array<double, 64> stage1_centers;
};

/// One joint optimization step. Offset targets are measured against the
/// detached current stage-1 estimate. A non-finite total aborts with the
/// breakdown in the exception text.
StepResult train_step(Networks& nets, const data::Scene& scene,
                      const TrainConfig& config, ad::Optimizer& optimizer,
                      int step_index);

struct Detection {
  geom::ToothId tooth;
  geom::Point2 stage1_center;
  geom::Point2 refined_center;
  geom::Box box;
};

struct DetectionResult {
  std::array<Detection, 32> teeth;  // ordered by id, teeth[i].tooth == i+1
  bool any_clamped = false;
};

DetectionResult infer(const Networks& nets, const data::GrayImage& image);

/// Boxes ordered by tooth id, the layout the measurement protocol expects.
std::array<geom::Box, 32> result_boxes(const DetectionResult& result);

struct ValidationStats {
  double mse1 = 0.0;  // stage-1 centers vs annotation, px^2 per component
  double mse2 = 0.0;  // offset-refined centers vs annotation
};
ValidationStats validate_scenes(const Networks& nets,
                                const std::vector<data::Scene>& scenes);

struct TrainLog {
  std::vector<losses::LossBreakdown> steps;
  std::vector<ValidationStats> epochs;
};

/// Returns true to stop early.
using StopCallback = std::function<bool(int, const losses::LossBreakdown&)>;

/// Full loop: per-epoch reshuffle, per-step CSV append, per-epoch validation
/// (plus a final one if the run ends mid-epoch). Bit-reproducible for a
/// fixed config.
TrainLog train(Networks& nets, const std::vector<data::Scene>& train_scenes,
               const std::vector<data::Scene>& val_scenes,
               const TrainConfig& config, std::ostream* metrics_csv = nullptr,
               const StopCallback& stop = {});

/// Mean wall-clock throughput of infer() over the list, warm-up passes
/// excluded. Needs at least 10 images.
double measure_fps(const Networks& nets,
                   const std::vector<data::GrayImage>& images,
                   int warmup = 3);

/// Parameter checkpoint plus a structural manifest (backbone layout,
/// normalization constant, loss weights). Loading rebuilds the networks from
/// the manifest and rejects checkpoints that do not match it.
void save_pipeline(const Networks& nets, const losses::LossWeights& weights,
                   const std::string& checkpoint_path,
                   const std::string& manifest_path);
Networks load_pipeline(const std::string& checkpoint_path,
                       const std::string& manifest_path,
                       losses::LossWeights* weights = nullptr);

/// Detections in the annotation JSON schema with a "predicted": true marker.
void save_predictions(const DetectionResult& result, const std::string& path,
                      const std::string& image_ref);

}  // namespace toothdet::pipeline
