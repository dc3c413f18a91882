#include "toothdet/eval/render.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace toothdet::eval {

namespace {

void write_png(const cv::Mat& m, const std::string& path) {
  if (!cv::imwrite(path, m))
    throw std::runtime_error("cannot write image: " + path);
}

cv::Rect box_rect(const geom::Box& b) {
  return {int(std::lround(b.cx - b.w / 2)), int(std::lround(b.cy - b.h / 2)),
          int(std::lround(b.w)), int(std::lround(b.h))};
}

}  // namespace

void render_confusion_png(const ConfusionMatrix& cm, const std::string& path) {
  cv::Mat small(32, 32, CV_8UC1);
  for (int g = 0; g < 32; ++g)
    for (int p = 0; p < 32; ++p)
      small.at<uint8_t>(g, p) =
          uint8_t(std::lround(255.0 * cm.row_normalized[g][p]));
  cv::Mat big;
  cv::resize(small, big, cv::Size(512, 512), 0, 0, cv::INTER_NEAREST);
  cv::Mat color;
  cv::applyColorMap(big, color, cv::COLORMAP_VIRIDIS);
  for (int i = 1; i < 32; ++i) {
    cv::line(color, {i * 16, 0}, {i * 16, 512}, {40, 40, 40}, 1);
    cv::line(color, {0, i * 16}, {512, i * 16}, {40, 40, 40}, 1);
  }
  write_png(color, path);
}

void render_overlay_png(const data::Scene& scene, const BoxSet32& predictions,
                        const std::string& path) {
  cv::Mat gray(scene.image.height, scene.image.width, CV_8UC1,
               const_cast<uint8_t*>(scene.image.pixels.data()));
  cv::Mat color;
  cv::cvtColor(gray, color, cv::COLOR_GRAY2BGR);

  for (const data::ToothAnnotation& t : scene.teeth) {
    const cv::Scalar tone =
        t.present ? cv::Scalar(80, 160, 80) : cv::Scalar(60, 60, 120);
    cv::rectangle(color, box_rect(t.box), tone, 1);
  }
  for (int i = 0; i < 32; ++i) {
    const geom::Box& p = predictions[i];
    const double overlap = geom::iou(p, scene.teeth[i].box);
    cv::rectangle(color, box_rect(p), {60, 220, 255}, 1);
    char label[32];
    std::snprintf(label, sizeof(label), "%d %d%%", i + 1,
                  int(std::lround(100.0 * overlap)));
    const cv::Point anchor(int(std::lround(p.cx - p.w / 2)),
                           int(std::lround(p.cy - p.h / 2)) - 3);
    cv::putText(color, label, anchor, cv::FONT_HERSHEY_PLAIN, 0.7,
                {60, 220, 255}, 1, cv::LINE_AA);
  }
  write_png(color, path);
}

void render_detections_png(const data::GrayImage& image,
                           const BoxSet32& predictions,
                           const std::string& path) {
  cv::Mat gray(image.height, image.width, CV_8UC1,
               const_cast<uint8_t*>(image.pixels.data()));
  cv::Mat color;
  cv::cvtColor(gray, color, cv::COLOR_GRAY2BGR);
  for (int i = 0; i < 32; ++i) {
    const geom::Box& p = predictions[i];
    cv::rectangle(color, box_rect(p), {60, 220, 255}, 1);
    char label[8];
    std::snprintf(label, sizeof(label), "%d", i + 1);
    const cv::Point anchor(int(std::lround(p.cx - p.w / 2)),
                           int(std::lround(p.cy - p.h / 2)) - 3);
    cv::putText(color, label, anchor, cv::FONT_HERSHEY_PLAIN, 0.7,
                {60, 220, 255}, 1, cv::LINE_AA);
  }
  write_png(color, path);
}

}  // namespace toothdet::eval
