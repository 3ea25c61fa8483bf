#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/errors.hpp"
#include "clarify/image.hpp"

namespace clarify {

using json = nlohmann::json;

inline constexpr int kDestinationCount = 4;

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const { return x_min >= 0 && y_min >= 0 && x_min < x_max && y_min < y_max; }
  bool within(double w, double h) const { return valid() && x_max <= w && y_max <= h; }

  bool intersects(const BoundingBox& o) const {
    return x_min < o.x_max && o.x_min < x_max && y_min < o.y_max && o.y_min < y_max;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct InstructionAnnotation {
  std::string text;
  std::string target_object_id;
  int destination_box_id = 0;
  // Present on generator output only.
  std::optional<std::vector<std::string>> referents;
  std::optional<bool> ambiguous;
  std::optional<json> constraints;

  friend bool operator==(const InstructionAnnotation&, const InstructionAnnotation&) = default;
};

struct ObjectInstance {
  std::string object_id;
  BoundingBox bbox;
  std::vector<InstructionAnnotation> instructions;
  std::optional<std::vector<double>> features;
  std::map<std::string, std::string> attributes;

  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

struct Scene {
  std::string scene_id;
  int width = 0;
  int height = 0;
  std::shared_ptr<const Image> image;
  std::vector<BoundingBox> boxes;
  std::vector<ObjectInstance> objects;

  const ObjectInstance* find_object(const std::string& id) const {
    for (const auto& o : objects) {
      if (o.object_id == id) return &o;
    }
    return nullptr;
  }

  std::size_t instruction_count() const {
    std::size_t n = 0;
    for (const auto& o : objects) n += o.instructions.size();
    return n;
  }

  friend bool operator==(const Scene& a, const Scene& b) {
    const bool same_image = (!a.image && !b.image) || (a.image && b.image && *a.image == *b.image);
    return same_image && a.scene_id == b.scene_id && a.width == b.width && a.height == b.height &&
           a.boxes == b.boxes && a.objects == b.objects;
  }
};

// Index of the destination region containing the box center, or -1.
inline int containing_region(const Scene& scene, const BoundingBox& b) {
  for (int i = 0; i < static_cast<int>(scene.boxes.size()); ++i) {
    const auto& r = scene.boxes[i];
    if (b.center_x() >= r.x_min && b.center_x() < r.x_max && b.center_y() >= r.y_min && b.center_y() < r.y_max) {
      return i;
    }
  }
  return -1;
}

inline void validate_scene(const Scene& scene) {
  const std::string where = "scene '" + scene.scene_id + "'";
  if (scene.scene_id.empty()) throw ValidationError("scene_id must be nonempty");
  if (scene.width <= 0 || scene.height <= 0) throw ValidationError(where + ": width and height must be positive");
  if (scene.image && (scene.image->width() != scene.width || scene.image->height() != scene.height)) {
    throw ValidationError(where + ": image size does not match width/height");
  }
  if (scene.boxes.size() != kDestinationCount) {
    throw ValidationError(where + ": expected 4 destination regions, got " + std::to_string(scene.boxes.size()));
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    if (!scene.boxes[i].within(scene.width, scene.height)) {
      throw ValidationError(where + ": destination region " + std::to_string(i) + " is invalid or out of bounds");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (scene.boxes[i].intersects(scene.boxes[j])) {
        throw ValidationError(where + ": destination regions " + std::to_string(j) + " and " + std::to_string(i) +
                              " overlap");
      }
    }
  }
  std::set<std::string> ids;
  for (const auto& o : scene.objects) {
    if (o.object_id.empty()) throw ValidationError(where + ": empty object_id");
    if (!ids.insert(o.object_id).second) throw ValidationError(where + ": duplicate object_id '" + o.object_id + "'");
    if (!o.bbox.valid()) throw ValidationError(where + ": object '" + o.object_id + "' has an invalid bbox");
    if (!o.bbox.within(scene.width, scene.height)) {
      throw ValidationError(where + ": object '" + o.object_id + "' bbox lies outside the image");
    }
    if (!scene.image && !o.features) {
      throw ValidationError(where + ": object '" + o.object_id + "' has neither an image crop nor features");
    }
  }
  for (const auto& o : scene.objects) {
    for (const auto& ins : o.instructions) {
      if (ins.target_object_id != o.object_id) {
        throw ValidationError(where + ": instruction on '" + o.object_id + "' targets another object");
      }
      if (ins.destination_box_id < 0 || ins.destination_box_id >= kDestinationCount) {
        throw ValidationError(where + ": object '" + o.object_id + "' instruction destination out of range");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON form

namespace detail {

inline const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

inline double number_field(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::string string_field(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline BoundingBox parse_bbox(const json& j, const std::string& path) {
  return {number_field(j, "x_min", path), number_field(j, "y_min", path), number_field(j, "x_max", path),
          number_field(j, "y_max", path)};
}

}  // namespace detail

inline json bbox_to_json(const BoundingBox& b) {
  return json{{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}};
}

inline json scene_to_json(const Scene& s) {
  json boxes = json::array();
  for (const auto& b : s.boxes) boxes.push_back(bbox_to_json(b));
  json objects = json::array();
  for (const auto& o : s.objects) {
    json instructions = json::array();
    for (const auto& ins : o.instructions) {
      json ji{{"text", ins.text}, {"destination_box", ins.destination_box_id}};
      if (ins.referents) ji["referents"] = *ins.referents;
      if (ins.ambiguous) ji["ambiguous"] = *ins.ambiguous;
      if (ins.constraints) ji["constraints"] = *ins.constraints;
      instructions.push_back(std::move(ji));
    }
    json jo{{"object_id", o.object_id}, {"bbox", bbox_to_json(o.bbox)}, {"instructions", std::move(instructions)}};
    if (o.features) jo["features"] = *o.features;
    if (!o.attributes.empty()) jo["attributes"] = o.attributes;
    objects.push_back(std::move(jo));
  }
  return json{{"scene_id", s.scene_id}, {"width", s.width},         {"height", s.height},
              {"boxes", std::move(boxes)}, {"objects", std::move(objects)}};
}

// Parses the JSON form; the image is attached separately.
inline Scene scene_from_json(const json& j) {
  using namespace detail;
  const std::string root = "scene";
  Scene s;
  s.scene_id = string_field(j, "scene_id", root);
  const json& w = field(j, "width", root);
  const json& h = field(j, "height", root);
  if (!w.is_number_integer() || !h.is_number_integer()) throw ParseError(root + ".width/height: expected integers");
  s.width = w.get<int>();
  s.height = h.get<int>();
  const json& boxes = field(j, "boxes", root);
  if (!boxes.is_array()) throw ParseError(root + ".boxes: expected an array");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    s.boxes.push_back(parse_bbox(boxes[i], root + ".boxes[" + std::to_string(i) + "]"));
  }
  const json& objects = field(j, "objects", root);
  if (!objects.is_array()) throw ParseError(root + ".objects: expected an array");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string path = root + ".objects[" + std::to_string(i) + "]";
    const json& jo = objects[i];
    ObjectInstance o;
    o.object_id = string_field(jo, "object_id", path);
    o.bbox = parse_bbox(field(jo, "bbox", path), path + ".bbox");
    const json& ins = field(jo, "instructions", path);
    if (!ins.is_array()) throw ParseError(path + ".instructions: expected an array");
    for (std::size_t k = 0; k < ins.size(); ++k) {
      const std::string ipath = path + ".instructions[" + std::to_string(k) + "]";
      InstructionAnnotation a;
      a.text = string_field(ins[k], "text", ipath);
      const json& dest = field(ins[k], "destination_box", ipath);
      if (!dest.is_number_integer()) throw ParseError(ipath + ".destination_box: expected an integer");
      a.destination_box_id = dest.get<int>();
      a.target_object_id = o.object_id;
      if (ins[k].contains("referents")) a.referents = ins[k]["referents"].get<std::vector<std::string>>();
      if (ins[k].contains("ambiguous")) a.ambiguous = ins[k]["ambiguous"].get<bool>();
      if (ins[k].contains("constraints")) a.constraints = ins[k]["constraints"];
      o.instructions.push_back(std::move(a));
    }
    if (jo.contains("features")) {
      if (!jo["features"].is_array()) throw ParseError(path + ".features: expected an array of numbers");
      o.features = jo["features"].get<std::vector<double>>();
    }
    if (jo.contains("attributes")) o.attributes = jo["attributes"].get<std::map<std::string, std::string>>();
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline std::filesystem::path image_path_for(const std::filesystem::path& json_path) {
  auto p = json_path;
  p.replace_extension(".png");
  return p;
}

// Writes <dir>/<scene_id>.json plus the sibling <scene_id>.png raster.
inline void save_scene(const Scene& scene, const std::filesystem::path& json_path) {
  validate_scene(scene);
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot write '" + json_path.string() + "'");
  out << scene_to_json(scene).dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + json_path.string() + "'");
  if (scene.image) write_png(*scene.image, image_path_for(json_path));
}

inline Scene load_scene(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open '" + json_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("'" + json_path.string() + "': " + e.what());
  }
  Scene s;
  try {
    s = scene_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError("'" + json_path.string() + "': " + e.what());
  }
  const auto png = image_path_for(json_path);
  if (std::filesystem::exists(png)) s.image = std::make_shared<const Image>(read_png(png));
  validate_scene(s);
  return s;
}

inline std::string_view region_name(int box) {
  static constexpr std::array<std::string_view, 4> kNames = {"top left", "top right", "bottom left", "bottom right"};
  return kNames.at(static_cast<std::size_t>(box));
}

}  // namespace clarify
