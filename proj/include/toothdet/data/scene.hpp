#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "toothdet/data/image.hpp"
#include "toothdet/geometry/geometry.hpp"

namespace toothdet::data {

/// One of the 32 anatomical positions. The box is annotated even when the
/// tooth is absent; `present` says whether anything was rendered there.
struct ToothAnnotation {
  geom::ToothId tooth;
  bool present = true;
  geom::Box box;
};

/// Canvas image plus its full annotation, ordered by ToothId index 1..32.
struct Scene {
  GrayImage image;
  std::array<ToothAnnotation, 32> teeth;
};

struct SynthConfig {
  uint64_t seed = 0;
  double missing_probability = 0.15;
  double jitter = 1.0;      // scales shape/size perturbations
  double noise_level = 3.0; // additive noise sigma in intensity levels
};

/// Annotation layout only: arch geometry, boxes, and presence flags, without
/// rendering. Deterministic in (config.seed, index) and identical to the
/// annotations of synthesize_scene for the same arguments.
std::array<ToothAnnotation, 32> synthesize_annotations(const SynthConfig& cfg,
                                                       uint64_t index);

/// Full scene: layout plus annotation-driven rendering (tooth blobs,
/// illumination gradient, additive noise). Pure function of (seed, index).
Scene synthesize_scene(const SynthConfig& cfg, uint64_t index);

/// Writes the annotation JSON at `annotation_path` and the image PNG next to
/// it under the sibling images/ directory referenced from the JSON.
void save_scene(const Scene& scene, const std::string& annotation_path);

/// Loads an annotation JSON plus the image it references. Rejects malformed
/// files, wrong tooth counts, out-of-range or duplicate identifiers, and
/// images that are not on the 768x512 canvas.
Scene load_scene(const std::string& annotation_path);

/// Split membership by scene stem (file name without extension).
struct DatasetManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Train/val/test sizes for n scenes, apportioned to the reference ratios
/// 574:162:82 by largest remainder so the counts always sum to n.
std::array<int, 3> split_counts(int n);

/// Canonical stem for generated scene files ("scene_000042").
std::string scene_stem(uint64_t index);

}  // namespace toothdet::data
