#include "toothdet/data/image.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace toothdet::data {

namespace {

// Per-tile lookup: pixel value -> equalized level, kept as doubles for the
// bilinear blend between neighboring tiles.
using TileMap = std::array<double, 256>;

TileMap tile_mapping(const GrayImage& img, int x0, int y0, int tw, int th,
                     double clip_limit) {
  std::array<double, 256> hist{};
  int lo = 255, hi = 0;
  for (int y = y0; y < y0 + th; ++y) {
    for (int x = x0; x < x0 + tw; ++x) {
      const int v = img.at(x, y);
      hist[v] += 1.0;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  TileMap map;
  if (lo == hi) {
    // Single-valued tile: flat content carries no contrast to stretch, and
    // the identity keeps constant images fixed points of the transform.
    for (int v = 0; v < 256; ++v) map[v] = v;
    return map;
  }

  const double pixels = static_cast<double>(tw) * th;
  const double clip = clip_limit * pixels / 256.0;
  double excess = 0.0;
  for (int v = 0; v < 256; ++v) {
    if (hist[v] > clip) {
      excess += hist[v] - clip;
      hist[v] = clip;
    }
  }
  const double share = excess / 256.0;

  double cdf = 0.0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[v] + share;
    map[v] = std::floor(255.0 * cdf / pixels);
  }
  return map;
}

}  // namespace

GrayImage clahe(const GrayImage& image, double clip_limit, int tiles_x,
                int tiles_y) {
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("clahe: empty image");
  if (tiles_x < 1 || tiles_y < 1)
    throw std::invalid_argument("clahe: tile counts must be positive");
  if (image.width % tiles_x != 0 || image.height % tiles_y != 0)
    throw std::invalid_argument(
        "clahe: tile grid " + std::to_string(tiles_x) + "x" +
        std::to_string(tiles_y) + " does not divide " +
        std::to_string(image.width) + "x" + std::to_string(image.height));
  const int tw = image.width / tiles_x;
  const int th = image.height / tiles_y;
  if (tw < 8 || th < 8)
    throw std::invalid_argument("clahe: tiles smaller than 8x8 pixels");
  if (clip_limit <= 0.0)
    throw std::invalid_argument("clahe: clip limit must be positive");

  std::vector<TileMap> maps(static_cast<size_t>(tiles_x) * tiles_y);
  for (int ty = 0; ty < tiles_y; ++ty)
    for (int tx = 0; tx < tiles_x; ++tx)
      maps[static_cast<size_t>(ty) * tiles_x + tx] =
          tile_mapping(image, tx * tw, ty * th, tw, th, clip_limit);

  GrayImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    const double gy = (y + 0.5) / th - 0.5;  // position in tile-center grid
    const double fy = std::floor(gy);
    const int ty0 = std::clamp(static_cast<int>(fy), 0, tiles_y - 1);
    const int ty1 = std::min(ty0 + 1, tiles_y - 1);
    const double wy = std::clamp(gy - fy, 0.0, 1.0);
    for (int x = 0; x < image.width; ++x) {
      const double gx = (x + 0.5) / tw - 0.5;
      const double fx = std::floor(gx);
      const int tx0 = std::clamp(static_cast<int>(fx), 0, tiles_x - 1);
      const int tx1 = std::min(tx0 + 1, tiles_x - 1);
      const double wx = std::clamp(gx - fx, 0.0, 1.0);

      const int v = image.at(x, y);
      const double top = (1 - wx) * maps[size_t(ty0) * tiles_x + tx0][v] +
                         wx * maps[size_t(ty0) * tiles_x + tx1][v];
      const double bot = (1 - wx) * maps[size_t(ty1) * tiles_x + tx0][v] +
                         wx * maps[size_t(ty1) * tiles_x + tx1][v];
      const double blended = (1 - wy) * top + wy * bot;
      out.at(x, y) =
          static_cast<uint8_t>(std::clamp<long>(std::lround(blended), 0, 255));
    }
  }
  return out;
}

}  // namespace toothdet::data
