#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "toothdet/core/rng.hpp"
#include "toothdet/data/scene.hpp"

using namespace toothdet;
using data::GrayImage;
namespace fs = std::filesystem;

namespace {

GrayImage random_image(int w, int h, Rng& rng) {
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = uint8_t(rng.below(256));
  return img;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "toothdet_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_annotations(const std::array<data::ToothAnnotation, 32>& a,
                      const std::array<data::ToothAnnotation, 32>& b) {
  for (int i = 0; i < 32; ++i) {
    if (a[i].tooth.index != b[i].tooth.index) return false;
    if (a[i].present != b[i].present) return false;
    if (a[i].box.cx != b[i].box.cx || a[i].box.cy != b[i].box.cy ||
        a[i].box.w != b[i].box.w || a[i].box.h != b[i].box.h)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("clahe keeps constant images fixed") {
  GrayImage img(64, 64);
  img.pixels.assign(img.pixels.size(), 77);
  const GrayImage once = data::clahe(img);
  for (auto p : once.pixels) CHECK(p == 77);
  const GrayImage twice = data::clahe(once);
  CHECK(twice.pixels == once.pixels);
}

TEST_CASE("clahe maps a two-level single tile to 127 and 255") {
  GrayImage img(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) img.at(x, y) = x < 8 ? 0 : 255;
  // Clip of 256 * mean bin count can never trigger on 256 pixels.
  const GrayImage out = data::clahe(img, 256.0, 1, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      CHECK(out.at(x, y) == (x < 8 ? 127 : 255));
}

TEST_CASE("clahe matches the naive per-pixel oracle") {
  struct Setup {
    int w, h, tx, ty;
    double clip;
  };
  const Setup setups[] = {
      {32, 24, 2, 2, 2.0},   {48, 40, 3, 5, 0.8},
      {64, 64, 4, 4, 4.0},   {768, 512, 8, 8, 2.0},
      {96, 32, 12, 4, 1.5},
  };
  for (const Setup& s : setups) {
    for (uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng = Rng::fork(900 + seed, s.w);
      const GrayImage img = random_image(s.w, s.h, rng);
      CAPTURE(s.w);
      CAPTURE(s.h);
      CAPTURE(seed);
      const GrayImage got = data::clahe(img, s.clip, s.tx, s.ty);
      const std::vector<uint8_t> want =
          oracles::naive_clahe(img.pixels, s.w, s.h, s.clip, s.tx, s.ty);
      CHECK(got.pixels == want);
    }
  }
}

TEST_CASE("clahe rejects degenerate setups") {
  Rng rng = Rng::fork(17, 0);
  const GrayImage img = random_image(64, 64, rng);
  CHECK_THROWS_WITH_AS(data::clahe(img, 2.0, 16, 16),
                       doctest::Contains("smaller than 8x8"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(data::clahe(img, 2.0, 3, 2),
                       doctest::Contains("does not divide"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(data::clahe(img, 2.0, 0, 2),
                       doctest::Contains("positive"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(data::clahe(img, 0.0, 4, 4),
                       doctest::Contains("clip limit"), std::invalid_argument);
  CHECK_THROWS_AS(data::clahe(GrayImage{}, 2.0, 1, 1), std::invalid_argument);
}

TEST_CASE("to_canvas passes canvas-sized images through") {
  Rng rng = Rng::fork(21, 0);
  const GrayImage img = random_image(geom::kCanvasW, geom::kCanvasH, rng);
  const data::CanvasImage cv = data::to_canvas(img);
  CHECK(cv.image.pixels == img.pixels);
  CHECK(cv.record.scale == 1.0);
  CHECK(cv.record.pad_x == 0.0);
  CHECK(cv.record.pad_y == 0.0);
}

TEST_CASE("to_canvas halves an exact 2x source") {
  Rng rng = Rng::fork(22, 0);
  const GrayImage img = random_image(1536, 1024, rng);
  const data::CanvasImage cv = data::to_canvas(img);
  CHECK(cv.record.scale == 0.5);
  CHECK(cv.record.pad_x == 0.0);
  CHECK(cv.record.pad_y == 0.0);
  // Half-pixel bilinear at an exact 2x ratio is the 2x2 block mean.
  for (int y = 0; y < geom::kCanvasH; ++y) {
    for (int x = 0; x < geom::kCanvasW; ++x) {
      const double mean = (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                           img.at(2 * x, 2 * y + 1) +
                           img.at(2 * x + 1, 2 * y + 1)) /
                          4.0;
      REQUIRE(cv.image.at(x, y) == uint8_t(std::lround(mean)));
    }
  }
}

TEST_CASE("to_canvas letterboxes a wide source") {
  Rng rng = Rng::fork(23, 0);
  const GrayImage img = random_image(3000, 1200, rng);
  const data::CanvasImage cv = data::to_canvas(img);
  CHECK(cv.record.scale == 768.0 / 3000.0);
  CHECK(cv.record.pad_x == 0.0);
  CHECK(cv.record.pad_y == 102.0);  // 512 - 307 split as 102 + 103

  for (int y = 0; y < 102; ++y)
    for (int x = 0; x < geom::kCanvasW; ++x) REQUIRE(cv.image.at(x, y) == 0);
  for (int y = 102 + 307; y < geom::kCanvasH; ++y)
    for (int x = 0; x < geom::kCanvasW; ++x) REQUIRE(cv.image.at(x, y) == 0);
  bool content_row_nonzero = false;
  for (int x = 0; x < geom::kCanvasW; ++x)
    if (cv.image.at(x, 102 + 150) != 0) content_row_nonzero = true;
  CHECK(content_row_nonzero);

  for (int i = 0; i < 200; ++i) {
    const geom::Box b{rng.uniform(40.0, 2960.0), rng.uniform(40.0, 1160.0),
                      rng.uniform(5.0, 400.0), rng.uniform(5.0, 300.0)};
    const geom::Box back =
        data::box_from_canvas(data::box_to_canvas(b, cv.record), cv.record);
    CHECK(std::abs(back.cx - b.cx) <= 0.5);
    CHECK(std::abs(back.cy - b.cy) <= 0.5);
    CHECK(std::abs(back.w - b.w) <= 0.5);
    CHECK(std::abs(back.h - b.h) <= 0.5);
  }
}

TEST_CASE("synthesis is deterministic and matches its annotation-only view") {
  data::SynthConfig cfg;
  cfg.seed = 7;
  for (uint64_t index : {0ull, 1ull, 913ull}) {
    const data::Scene a = data::synthesize_scene(cfg, index);
    const data::Scene b = data::synthesize_scene(cfg, index);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(same_annotations(a.teeth, b.teeth));
    CHECK(same_annotations(a.teeth, data::synthesize_annotations(cfg, index)));
  }
}

TEST_CASE("synthesis honors presence probability extremes") {
  data::SynthConfig cfg;
  cfg.seed = 11;
  cfg.missing_probability = 0.0;
  const data::Scene all = data::synthesize_scene(cfg, 4);
  for (const auto& t : all.teeth) CHECK(t.present);
  cfg.missing_probability = 1.0;
  const auto none = data::synthesize_annotations(cfg, 4);
  for (const auto& t : none) CHECK_FALSE(t.present);
}

TEST_CASE("absent fraction tracks missing_probability over 10k scenes") {
  data::SynthConfig cfg;
  cfg.seed = 5;
  cfg.missing_probability = 0.2;
  int64_t absent = 0;
  const int scenes = 10000;
  for (int i = 0; i < scenes; ++i) {
    const auto teeth = data::synthesize_annotations(cfg, uint64_t(i));
    for (const auto& t : teeth)
      if (!t.present) ++absent;
  }
  const double fraction = double(absent) / (32.0 * scenes);
  CHECK(fraction == doctest::Approx(0.2).epsilon(0.05));
  CHECK(std::abs(fraction - 0.2) <= 0.01);
}

TEST_CASE("arch centers increase strictly in x and boxes stay on canvas") {
  data::SynthConfig cfg;
  cfg.seed = 31;
  for (int i = 0; i < 300; ++i) {
    const auto teeth = data::synthesize_annotations(cfg, uint64_t(i));
    for (int arch = 0; arch < 2; ++arch) {
      double prev_x = -1e9;
      for (int slot = 0; slot < 16; ++slot) {
        const int id = geom::ToothId::from_arch_slot(arch == 0, slot).index;
        const geom::Box& b = teeth[id - 1].box;
        REQUIRE(b.cx > prev_x);
        prev_x = b.cx;
        REQUIRE(b.cx - b.w / 2 >= 0.0);
        REQUIRE(b.cx + b.w / 2 <= geom::kCanvasW);
        REQUIRE(b.cy - b.h / 2 >= 0.0);
        REQUIRE(b.cy + b.h / 2 <= geom::kCanvasH);
      }
    }
  }
}

TEST_CASE("rendered blob centroids sit at the annotated centers") {
  data::SynthConfig cfg;
  cfg.seed = 42;
  cfg.noise_level = 0.0;  // centroid read straight off the blob
  double worst = 0.0;
  for (uint64_t index = 0; index < 8; ++index) {
    const data::Scene scene = data::synthesize_scene(cfg, index);
    for (const auto& t : scene.teeth) {
      if (!t.present) continue;
      const geom::Box& b = t.box;
      const int x0 = int(std::floor(b.cx - b.w / 2));
      const int x1 = int(std::ceil(b.cx + b.w / 2));
      const int y0 = int(std::floor(b.cy - b.h / 2));
      const int y1 = int(std::ceil(b.cy + b.h / 2));
      const double bg = (scene.image.at(x0, y0) + scene.image.at(x1, y0) +
                         scene.image.at(x0, y1) + scene.image.at(x1, y1)) /
                        4.0;
      double sw = 0.0, sx = 0.0, sy = 0.0;
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double v = scene.image.at(x, y) - bg;
          if (v <= 8.0) continue;
          sw += v;
          sx += v * (x + 0.5);
          sy += v * (y + 0.5);
        }
      }
      REQUIRE(sw > 0.0);
      const double dx = sx / sw - b.cx;
      const double dy = sy / sw - b.cy;
      worst = std::max({worst, std::abs(dx), std::abs(dy)});
      CHECK(std::abs(dx) <= 1.5);
      CHECK(std::abs(dy) <= 1.5);
    }
  }
  INFO("worst centroid deviation: " << worst);
  CHECK(worst <= 1.5);
}

TEST_CASE("synthesize rejects invalid configs") {
  data::SynthConfig cfg;
  cfg.missing_probability = -0.01;
  CHECK_THROWS_AS(data::synthesize_annotations(cfg, 0), std::invalid_argument);
  cfg.missing_probability = 1.01;
  CHECK_THROWS_AS(data::synthesize_annotations(cfg, 0), std::invalid_argument);
  cfg = {};
  cfg.jitter = -1.0;
  CHECK_THROWS_AS(data::synthesize_scene(cfg, 0), std::invalid_argument);
  cfg = {};
  cfg.noise_level = -0.5;
  CHECK_THROWS_AS(data::synthesize_scene(cfg, 0), std::invalid_argument);
}

TEST_CASE("scene save/load round-trips exactly") {
  const fs::path dir = fresh_dir("roundtrip");
  data::SynthConfig cfg;
  cfg.seed = 3;
  const data::Scene scene = data::synthesize_scene(cfg, 12);
  const std::string apath =
      (dir / "annotations" / (data::scene_stem(12) + ".json")).string();
  data::save_scene(scene, apath);
  CHECK(fs::exists(dir / "images" / "scene_000012.png"));

  const data::Scene back = data::load_scene(apath);
  CHECK(back.image.width == scene.image.width);
  CHECK(back.image.height == scene.image.height);
  CHECK(back.image.pixels == scene.image.pixels);
  CHECK(same_annotations(back.teeth, scene.teeth));
}

TEST_CASE("load_scene rejects broken annotation files") {
  const fs::path dir = fresh_dir("badfiles");
  data::SynthConfig cfg;
  cfg.seed = 9;
  const data::Scene scene = data::synthesize_scene(cfg, 1);
  const std::string good =
      (dir / "annotations" / "scene_000001.json").string();
  data::save_scene(scene, good);

  nlohmann::json doc;
  {
    std::ifstream in(good);
    in >> doc;
  }
  auto write_variant = [&](const nlohmann::json& j, const std::string& name) {
    const std::string path = (dir / "annotations" / name).string();
    std::ofstream out(path);
    out << j.dump(2);
    return path;
  };

  nlohmann::json short_doc = doc;
  short_doc["teeth"].erase(31);
  CHECK_THROWS_WITH_AS(
      data::load_scene(write_variant(short_doc, "short.json")),
      doctest::Contains("expected 32 teeth"), std::runtime_error);

  nlohmann::json bad_id = doc;
  bad_id["teeth"][5]["id"] = 33;
  CHECK_THROWS_WITH_AS(data::load_scene(write_variant(bad_id, "badid.json")),
                       doctest::Contains("out of range"), std::runtime_error);

  nlohmann::json dup_id = doc;
  dup_id["teeth"][5]["id"] = dup_id["teeth"][6]["id"];
  CHECK_THROWS_WITH_AS(data::load_scene(write_variant(dup_id, "dup.json")),
                       doctest::Contains("duplicate"), std::runtime_error);

  nlohmann::json bad_version = doc;
  bad_version["version"] = 2;
  CHECK_THROWS_WITH_AS(
      data::load_scene(write_variant(bad_version, "version.json")),
      doctest::Contains("version"), std::runtime_error);

  nlohmann::json neg_box = doc;
  neg_box["teeth"][0]["w"] = -1.0;
  CHECK_THROWS_WITH_AS(data::load_scene(write_variant(neg_box, "negw.json")),
                       doctest::Contains("non-positive"), std::runtime_error);

  const std::string mangled = (dir / "annotations" / "mangled.json").string();
  {
    std::ofstream out(mangled);
    out << "{ \"version\": 1, ";
  }
  CHECK_THROWS_WITH_AS(data::load_scene(mangled),
                       doctest::Contains("malformed"), std::runtime_error);

  CHECK_THROWS_WITH_AS(data::load_scene((dir / "missing.json").string()),
                       doctest::Contains("cannot open"), std::runtime_error);

  // Valid JSON referencing an image off the canvas size.
  GrayImage small(100, 100);
  data::save_png(small, (dir / "images" / "small.png").string());
  nlohmann::json off_canvas = doc;
  off_canvas["image"] = "../images/small.png";
  CHECK_THROWS_WITH_AS(
      data::load_scene(write_variant(off_canvas, "offcanvas.json")),
      doctest::Contains("768x512"), std::runtime_error);
}

TEST_CASE("split_counts apportions to the reference ratios") {
  CHECK(data::split_counts(818) == std::array<int, 3>{574, 162, 82});
  CHECK(data::split_counts(10) == std::array<int, 3>{7, 2, 1});
  CHECK(data::split_counts(100) == std::array<int, 3>{70, 20, 10});
  CHECK(data::split_counts(0) == std::array<int, 3>{0, 0, 0});
  CHECK(data::split_counts(1) == std::array<int, 3>{1, 0, 0});
  for (int n = 0; n <= 500; ++n) {
    const auto c = data::split_counts(n);
    CHECK(c[0] + c[1] + c[2] == n);
    CHECK(c[0] >= 0);
    CHECK(c[1] >= 0);
    CHECK(c[2] >= 0);
    CHECK(c[0] >= c[1]);
    CHECK(c[1] >= c[2]);
  }
  CHECK_THROWS_AS(data::split_counts(-1), std::invalid_argument);
}

TEST_CASE("manifest round-trips and rejects missing splits") {
  const fs::path dir = fresh_dir("manifest");
  data::DatasetManifest m;
  m.train = {"scene_000000", "scene_000001"};
  m.val = {"scene_000002"};
  m.test = {};
  const std::string path = (dir / "manifest.json").string();
  data::save_manifest(m, path);
  const data::DatasetManifest back = data::load_manifest(path);
  CHECK(back.train == m.train);
  CHECK(back.val == m.val);
  CHECK(back.test == m.test);

  const std::string bad = (dir / "bad.json").string();
  {
    std::ofstream out(bad);
    out << "{\"version\":1,\"train\":[]}";
  }
  CHECK_THROWS_WITH_AS(data::load_manifest(bad),
                       doctest::Contains("missing split"), std::runtime_error);
}

TEST_CASE("scene stems are zero-padded") {
  CHECK(data::scene_stem(0) == "scene_000000");
  CHECK(data::scene_stem(42) == "scene_000042");
  CHECK(data::scene_stem(1234567) == "scene_1234567");
}
