#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toothdet/geometry/geometry.hpp"

namespace toothdet::data {

/// 8-bit single-channel raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), pixels(size_t(w) * h, 0) {}

  uint8_t& at(int x, int y) { return pixels[size_t(y) * width + x]; }
  uint8_t at(int x, int y) const { return pixels[size_t(y) * width + x]; }
};

GrayImage load_png(const std::string& path);
void save_png(const GrayImage& image, const std::string& path);

/// Contrast-limited adaptive histogram equalization. The image is split into
/// tiles_x by tiles_y tiles (tile extents must divide the image exactly and
/// be at least 8x8 pixels). Each tile gets a 256-bin histogram clipped at
/// clip_limit times the mean bin count, with the clipped excess spread
/// uniformly over all bins, and the map value = floor(255 * inclusive CDF).
/// A single-valued tile maps through the identity so constant regions pass
/// through unchanged. Pixels blend the four surrounding tile-center mappings
/// bilinearly (clamped at the border), rounded to nearest.
GrayImage clahe(const GrayImage& image, double clip_limit = 2.0,
                int tiles_x = 8, int tiles_y = 8);

/// How a source image was placed on the 768x512 canvas: canvas = src * scale
/// + pad. One scale for both axes (aspect preserved), pads in pixels.
struct CanvasRecord {
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;
};

struct CanvasImage {
  GrayImage image;
  CanvasRecord record;
};

/// Aspect-preserving bilinear resize onto the 768x512 canvas with centered
/// zero padding on the short axis.
CanvasImage to_canvas(const GrayImage& source);

geom::Box box_to_canvas(const geom::Box& source_box, const CanvasRecord& rec);
geom::Box box_from_canvas(const geom::Box& canvas_box, const CanvasRecord& rec);

}  // namespace toothdet::data
