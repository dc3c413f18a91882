#include "toothdet/data/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace toothdet::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stem_of(const std::string& annotation_path) {
  return fs::path(annotation_path).stem().string();
}

json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error(std::string("cannot open ") + what + ": " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("malformed ") + what + " " + path +
                             ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void save_scene(const Scene& scene, const std::string& annotation_path) {
  const fs::path apath(annotation_path);
  const std::string stem = stem_of(annotation_path);
  const fs::path parent = apath.parent_path().empty() ? fs::path(".")
                                                      : apath.parent_path();
  const fs::path image_dir = parent / ".." / "images";
  fs::create_directories(parent);
  fs::create_directories(image_dir);
  const std::string image_rel = "../images/" + stem + ".png";
  save_png(scene.image, (parent / image_rel).lexically_normal().string());

  json teeth = json::array();
  for (const ToothAnnotation& t : scene.teeth) {
    teeth.push_back({{"id", t.tooth.index},
                     {"present", t.present},
                     {"cx", t.box.cx},
                     {"cy", t.box.cy},
                     {"w", t.box.w},
                     {"h", t.box.h}});
  }
  json doc = {{"version", 1},
              {"image", image_rel},
              {"width", scene.image.width},
              {"height", scene.image.height},
              {"teeth", teeth}};
  write_text_file(annotation_path, doc.dump(2) + "\n");
}

Scene load_scene(const std::string& annotation_path) {
  const json doc = read_json_file(annotation_path, "annotation file");

  if (!doc.contains("version") || !doc["version"].is_number_integer() ||
      doc["version"].get<int>() != 1)
    throw std::runtime_error("annotation " + annotation_path +
                             ": unsupported or missing version");
  if (!doc.contains("image") || !doc["image"].is_string())
    throw std::runtime_error("annotation " + annotation_path +
                             ": missing image field");
  if (!doc.contains("teeth") || !doc["teeth"].is_array())
    throw std::runtime_error("annotation " + annotation_path +
                             ": missing teeth array");
  const auto& teeth = doc["teeth"];
  if (teeth.size() != 32)
    throw std::runtime_error("annotation " + annotation_path +
                             ": expected 32 teeth, got " +
                             std::to_string(teeth.size()));

  Scene scene;
  std::array<bool, 32> seen{};
  for (const auto& t : teeth) {
    for (const char* key : {"id", "present", "cx", "cy", "w", "h"})
      if (!t.contains(key))
        throw std::runtime_error("annotation " + annotation_path +
                                 ": tooth entry missing field '" + key + "'");
    if (!t["id"].is_number_integer())
      throw std::runtime_error("annotation " + annotation_path +
                               ": tooth id must be an integer");
    const int id = t["id"].get<int>();
    if (id < 1 || id > 32)
      throw std::runtime_error("annotation " + annotation_path +
                               ": tooth id out of range: " +
                               std::to_string(id));
    if (seen[id - 1])
      throw std::runtime_error("annotation " + annotation_path +
                               ": duplicate tooth id " + std::to_string(id));
    seen[id - 1] = true;
    if (!t["present"].is_boolean())
      throw std::runtime_error("annotation " + annotation_path +
                               ": present must be a boolean");
    for (const char* key : {"cx", "cy", "w", "h"})
      if (!t[key].is_number())
        throw std::runtime_error("annotation " + annotation_path +
                                 ": field '" + key + "' must be a number");
    ToothAnnotation& slot = scene.teeth[id - 1];
    slot.tooth = geom::ToothId{id};
    slot.present = t["present"].get<bool>();
    slot.box = {t["cx"].get<double>(), t["cy"].get<double>(),
                t["w"].get<double>(), t["h"].get<double>()};
    if (slot.box.w <= 0.0 || slot.box.h <= 0.0)
      throw std::runtime_error("annotation " + annotation_path +
                               ": non-positive box extents for tooth " +
                               std::to_string(id));
  }

  const fs::path parent = fs::path(annotation_path).parent_path();
  const fs::path image_path =
      (parent / doc["image"].get<std::string>()).lexically_normal();
  scene.image = load_png(image_path.string());
  if (scene.image.width != geom::kCanvasW ||
      scene.image.height != geom::kCanvasH)
    throw std::runtime_error("annotation " + annotation_path +
                             ": image is not on the 768x512 canvas");
  return scene;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json doc = {{"version", 1},
              {"train", manifest.train},
              {"val", manifest.val},
              {"test", manifest.test}};
  write_text_file(path, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path) {
  const json doc = read_json_file(path, "manifest");
  DatasetManifest m;
  for (const char* key : {"train", "val", "test"})
    if (!doc.contains(key) || !doc[key].is_array())
      throw std::runtime_error("manifest " + path + ": missing split '" +
                               key + "'");
  m.train = doc["train"].get<std::vector<std::string>>();
  m.val = doc["val"].get<std::vector<std::string>>();
  m.test = doc["test"].get<std::vector<std::string>>();
  return m;
}

std::array<int, 3> split_counts(int n) {
  if (n < 0) throw std::invalid_argument("split_counts: negative count");
  // Reference apportionment 574:162:82 out of 818.
  const double fractions[3] = {574.0 / 818.0, 162.0 / 818.0, 82.0 / 818.0};
  std::array<int, 3> counts{};
  double remainders[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = n * fractions[i];
    counts[i] = static_cast<int>(exact);
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  return counts;
}

std::string scene_stem(uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06llu",
                static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace toothdet::data
