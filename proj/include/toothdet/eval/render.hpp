#pragma once

#include <string>

#include "toothdet/eval/metrics.hpp"

namespace toothdet::eval {

/// Color-mapped 512x512 image of the row-normalized confusion matrix,
/// row = ground-truth id, column = predicted id.
void render_confusion_png(const ConfusionMatrix& cm, const std::string& path);

/// Scene image with annotated boxes (present teeth solid, absent dimmed) and
/// predicted boxes labeled "<id> <iou%>", where the IoU is taken against the
/// annotation of the same tooth.
void render_overlay_png(const data::Scene& scene, const BoxSet32& predictions,
                        const std::string& path);

/// Predictions alone on a bare image, labeled by id; for inputs that carry
/// no annotation.
void render_detections_png(const data::GrayImage& image,
                           const BoxSet32& predictions,
                           const std::string& path);

}  // namespace toothdet::eval
