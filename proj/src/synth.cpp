#include "toothdet/data/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "toothdet/core/rng.hpp"

namespace toothdet::data {

namespace {

void check_config(const SynthConfig& cfg) {
  if (!(cfg.missing_probability >= 0.0 && cfg.missing_probability <= 1.0))
    throw std::invalid_argument("synthesize: missing_probability outside [0, 1]");
  if (!(cfg.jitter >= 0.0))
    throw std::invalid_argument("synthesize: negative jitter");
  if (!(cfg.noise_level >= 0.0))
    throw std::invalid_argument("synthesize: negative noise_level");
}

struct ArchShape {
  double base_gap;       // mean neighbor distance, px
  double gap_slope;      // linear drift across the arch
  double gap_noise[15];  // small per-gap perturbation
  double curvature;      // parabola coefficient, y = sign * curvature * x^2
  double center_y;       // arch apex height on the canvas
  double rotation;       // whole-arch tilt, radians
  double width_jit[16];
  double aspect[16];     // box height / width
};

// Draws for one arch in a fixed order; both arches are drawn before any
// geometry is computed so layout and rendering stay in lockstep. The lower
// arch hangs a bounded distance below the upper one, which keeps the two
// rows of boxes disjoint for every draw (curvature + rotation + box halves
// never bridge the minimum 165 px apex separation).
ArchShape draw_arch(Rng& rng, bool upper, double jitter,
                    double upper_center_y) {
  ArchShape s;
  s.base_gap = rng.uniform(34.0, 40.0);
  s.gap_slope = rng.uniform(-0.25, 0.25) * jitter;
  for (double& g : s.gap_noise) g = rng.uniform(-0.12, 0.12) * jitter;
  s.curvature = rng.uniform(0.0002, 0.00045);
  s.center_y = upper ? rng.uniform(150.0, 185.0)
                     : upper_center_y + rng.uniform(165.0, 200.0);
  s.rotation = rng.uniform(-1.0, 1.0) * jitter * (2.0 * M_PI / 180.0);
  for (double& w : s.width_jit) w = rng.uniform(-0.05, 0.05) * jitter;
  for (double& a : s.aspect) a = rng.uniform(1.35, 1.7);
  return s;
}

// Incisors (slots 7, 8) are the narrowest boxes, molars the widest.
double slot_width(int slot) {
  const double u = (std::abs(slot - 7.5) - 0.5) / 7.0;
  return 22.0 + 12.0 * u * u;
}

// Advance x so the chord from (x, f(x)) to the next point has length `gap`.
// f(x) = curv * x^2; Newton on h with the flat-arch step as the seed.
double chord_step(double x, double curv, double gap) {
  const double slope = 2.0 * curv * x;
  double h = gap / std::sqrt(1.0 + slope * slope);
  for (int it = 0; it < 4; ++it) {
    const double dy = curv * ((x + h) * (x + h) - x * x);
    const double len = std::sqrt(h * h + dy * dy);
    const double dlen = (h + dy * 2.0 * curv * (x + h)) / len;
    h -= (len - gap) / dlen;
  }
  return h;
}

struct ArchPoints {
  double x[16];
  double y[16];  // before rotation and vertical placement
};

ArchPoints march_arch(const ArchShape& s) {
  double gaps[15];
  double total = 0.0;
  for (int i = 0; i < 15; ++i) {
    gaps[i] = s.base_gap + s.gap_slope * (i - 7.0) + s.gap_noise[i];
    total += gaps[i];
  }
  // Two passes: the first measures the x-extent, the second centers it.
  double start = -total / 2.0;
  for (int pass = 0; pass < 2; ++pass) {
    ArchPoints p;
    p.x[0] = start;
    for (int i = 0; i < 15; ++i)
      p.x[i + 1] = p.x[i] + chord_step(p.x[i], s.curvature, gaps[i]);
    if (pass == 1) {
      for (int i = 0; i < 16; ++i) p.y[i] = s.curvature * p.x[i] * p.x[i];
      return p;
    }
    start = -(p.x[15] - p.x[0]) / 2.0;
  }
  return {};
}

struct Layout {
  std::array<ToothAnnotation, 32> teeth;
};

// Phase 1: everything that determines the annotations. synthesize_scene
// continues the same generator afterwards, so the two entry points agree.
Layout layout_scene(const SynthConfig& cfg, Rng& rng) {
  const ArchShape upper = draw_arch(rng, true, cfg.jitter, 0.0);
  const ArchShape lower = draw_arch(rng, false, cfg.jitter, upper.center_y);
  bool present[32];
  for (bool& p : present) p = !rng.bernoulli(cfg.missing_probability);

  Layout out;
  for (int arch = 0; arch < 2; ++arch) {
    const ArchShape& s = arch == 0 ? upper : lower;
    const double sign = arch == 0 ? 1.0 : -1.0;  // upper bends down the canvas
    const ArchPoints pts = march_arch(s);
    const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
    for (int slot = 0; slot < 16; ++slot) {
      const double lx = pts.x[slot];
      const double ly = sign * pts.y[slot];
      const geom::ToothId id = geom::ToothId::from_arch_slot(arch == 0, slot);
      ToothAnnotation& t = out.teeth[id.index - 1];
      t.tooth = id;
      t.present = present[arch * 16 + slot];
      t.box.cx = 384.0 + lx * c - ly * sn;
      t.box.cy = s.center_y + lx * sn + ly * c;
      t.box.w = slot_width(slot) * (1.0 + s.width_jit[slot]);
      t.box.h = t.box.w * s.aspect[slot];
      // Clamp the center so the box sits fully inside the canvas.
      t.box.cx = std::clamp(t.box.cx, t.box.w / 2.0,
                            geom::kCanvasW - t.box.w / 2.0);
      t.box.cy = std::clamp(t.box.cy, t.box.h / 2.0,
                            geom::kCanvasH - t.box.h / 2.0);
    }
  }
  return out;
}

void render_scene(Scene& scene, Rng& rng, double noise_level) {
  GrayImage& img = scene.image;
  img.width = geom::kCanvasW;
  img.height = geom::kCanvasH;
  img.pixels.assign(static_cast<size_t>(img.width) * img.height, 0);

  const double base = rng.uniform(30.0, 55.0);
  const double gx = rng.uniform(-0.02, 0.02);
  const double gy = rng.uniform(-0.03, 0.03);
  std::vector<double> canvas(img.pixels.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      canvas[static_cast<size_t>(y) * img.width + x] =
          base + gx * (x - 384.0) + gy * (y - 256.0);

  for (const ToothAnnotation& t : scene.teeth) {
    if (!t.present) continue;
    const double peak = rng.uniform(150.0, 220.0);
    const double softness = rng.uniform(1.8, 2.6);
    const geom::Box& b = t.box;
    const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.w / 2.0)));
    const int x1 = std::min(img.width - 1,
                            static_cast<int>(std::ceil(b.cx + b.w / 2.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.h / 2.0)));
    const int y1 = std::min(img.height - 1,
                            static_cast<int>(std::ceil(b.cy + b.h / 2.0)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        // Pixel (x, y) samples the blob at its center.
        const double dx = 2.0 * (x + 0.5 - b.cx) / b.w;
        const double dy = 2.0 * (y + 0.5 - b.cy) / b.h;
        const double r = std::sqrt(dx * dx + dy * dy);
        if (r >= 1.0) continue;
        canvas[static_cast<size_t>(y) * img.width + x] +=
            peak * (1.0 - std::pow(r, softness));
      }
    }
  }

  for (size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i];
    if (noise_level > 0.0) v += rng.normal(0.0, noise_level);
    img.pixels[i] =
        static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
}

}  // namespace

std::array<ToothAnnotation, 32> synthesize_annotations(const SynthConfig& cfg,
                                                       uint64_t index) {
  check_config(cfg);
  Rng rng = Rng::fork(cfg.seed, index);
  return layout_scene(cfg, rng).teeth;
}

Scene synthesize_scene(const SynthConfig& cfg, uint64_t index) {
  check_config(cfg);
  Rng rng = Rng::fork(cfg.seed, index);
  Scene scene;
  scene.teeth = layout_scene(cfg, rng).teeth;
  render_scene(scene, rng, cfg.noise_level);
  return scene;
}

}  // namespace toothdet::data
