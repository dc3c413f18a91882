#include "toothdet/data/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <stdexcept>

namespace toothdet::data {

using geom::kCanvasH;
using geom::kCanvasW;

GrayImage load_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("cannot read image: " + path);
  GrayImage img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) img.at(x, y) = m.at<uint8_t>(y, x);
  return img;
}

void save_png(const GrayImage& image, const std::string& path) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("save_png: empty image");
  cv::Mat m(image.height, image.width, CV_8UC1,
            const_cast<uint8_t*>(image.pixels.data()));
  if (!cv::imwrite(path, m))
    throw std::runtime_error("cannot write image: " + path);
}

namespace {

// Bilinear resize with half-pixel sampling, rounded to nearest level.
GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h) {
  GrayImage out(out_w, out_h);
  const double rx = static_cast<double>(src.width) / out_w;
  const double ry = static_cast<double>(src.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = (oy + 0.5) * ry - 0.5;
    const double fy = std::floor(sy);
    const int y0 = std::clamp(static_cast<int>(fy), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(sy - fy, 0.0, 1.0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = (ox + 0.5) * rx - 0.5;
      const double fx = std::floor(sx);
      const int x0 = std::clamp(static_cast<int>(fx), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(sx - fx, 0.0, 1.0);
      const double top = (1 - wx) * src.at(x0, y0) + wx * src.at(x1, y0);
      const double bot = (1 - wx) * src.at(x0, y1) + wx * src.at(x1, y1);
      const double v = (1 - wy) * top + wy * bot;
      out.at(ox, oy) =
          static_cast<uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
    }
  }
  return out;
}

}  // namespace

CanvasImage to_canvas(const GrayImage& source) {
  if (source.width <= 0 || source.height <= 0)
    throw std::invalid_argument("to_canvas: empty image");

  if (source.width == kCanvasW && source.height == kCanvasH)
    return {source, CanvasRecord{}};

  const double scale = std::min(static_cast<double>(kCanvasW) / source.width,
                                static_cast<double>(kCanvasH) / source.height);
  const int content_w = std::clamp<int>(
      static_cast<int>(std::lround(source.width * scale)), 1, kCanvasW);
  const int content_h = std::clamp<int>(
      static_cast<int>(std::lround(source.height * scale)), 1, kCanvasH);
  GrayImage content = resize_bilinear(source, content_w, content_h);

  const int pad_x = (kCanvasW - content_w) / 2;
  const int pad_y = (kCanvasH - content_h) / 2;
  GrayImage canvas(kCanvasW, kCanvasH);
  for (int y = 0; y < content_h; ++y)
    for (int x = 0; x < content_w; ++x)
      canvas.at(x + pad_x, y + pad_y) = content.at(x, y);

  return {std::move(canvas),
          CanvasRecord{scale, static_cast<double>(pad_x),
                       static_cast<double>(pad_y)}};
}

geom::Box box_to_canvas(const geom::Box& b, const CanvasRecord& rec) {
  return {b.cx * rec.scale + rec.pad_x, b.cy * rec.scale + rec.pad_y,
          b.w * rec.scale, b.h * rec.scale};
}

geom::Box box_from_canvas(const geom::Box& b, const CanvasRecord& rec) {
  return {(b.cx - rec.pad_x) / rec.scale, (b.cy - rec.pad_y) / rec.scale,
          b.w / rec.scale, b.h / rec.scale};
}

}  // namespace toothdet::data
