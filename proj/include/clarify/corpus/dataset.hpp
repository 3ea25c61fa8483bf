#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/synthetic.hpp"
#include "clarify/corpus/text.hpp"
#include "clarify/errors.hpp"
#include "clarify/rng.hpp"

namespace clarify {

struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> validation;
};

// Scene-level split; the validation share is round(fraction * n), kept within
// [1, n - 1]. Relative scene order is preserved inside each part.
inline DatasetSplit split_dataset(std::vector<Scene> scenes, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie strictly between 0 and 1");
  }
  if (scenes.size() < 2) throw ConfigError("need at least 2 scenes to split");
  const std::size_t n = scenes.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<char> is_val(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;
  DatasetSplit out;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? out.validation : out.train).push_back(std::move(scenes[i]));
  return out;
}

struct ManifestEntry {
  std::string scene_id;
  std::string split;
};

inline constexpr const char* kManifestName = "manifest.txt";

inline void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(dir / kManifestName);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  for (const auto& e : entries) out << e.scene_id << '\t' << e.split << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw IoError("no manifest in '" + dir.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("manifest line " + std::to_string(lineno) + ": missing split tag");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto* part : {&split.train, &split.validation}) {
    const std::string tag = part == &split.train ? "train" : "validation";
    for (const auto& s : *part) {
      save_scene(s, dir / (s.scene_id + ".json"));
      entries.push_back({s.scene_id, tag});
    }
  }
  write_manifest(dir, entries);
}

// Loads every scene tagged `split` ("" loads all).
inline std::vector<Scene> load_dataset(const std::filesystem::path& dir, const std::string& split = "") {
  std::vector<Scene> out;
  for (const auto& e : read_manifest(dir)) {
    if (!split.empty() && e.split != split) continue;
    out.push_back(load_scene(dir / (e.scene_id + ".json")));
  }
  return out;
}

inline std::vector<Scene> load_scene_directory(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / kManifestName)) return load_dataset(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Scene> out;
  for (const auto& f : files) out.push_back(load_scene(f));
  return out;
}

// ---------------------------------------------------------------------------
// External annotation import.
//
// Layout: any number of *.json files under the root (searched recursively),
// each holding one image record or an array of them:
//
//   {"image": "images/0001.png", "width": W, "height": H,
//    "boxes": [[x, y, w, h] x 4]                          (optional),
//    "objects": [{"id": "3", "bbox": [x, y, w, h], "features": [...]}],
//    "instructions": [{"sentence": "...", "target": "3",
//                      "destination": 0-3 | "top_left" | ...}]}
//
// Boxes default to the four image quadrants. bbox values are top-left corner
// plus size.

struct ImportStats {
  std::size_t records = 0;
  std::size_t scenes = 0;
  std::size_t dropped_instructions = 0;
  std::size_t dropped_objects = 0;
  std::size_t skipped_records = 0;
};

struct ImportResult {
  std::vector<Scene> scenes;
  ImportStats stats;
};

namespace detail {

inline BoundingBox xywh(const json& a) {
  if (!a.is_array() || a.size() != 4) throw ParseError("bbox must be [x, y, w, h]");
  const double x = a[0].get<double>(), y = a[1].get<double>(), w = a[2].get<double>(), h = a[3].get<double>();
  return {x, y, x + w, y + h};
}

inline int destination_index(const json& d) {
  if (d.is_number_integer()) return d.get<int>();
  if (d.is_string()) {
    std::string s = d.get<std::string>();
    std::replace(s.begin(), s.end(), ' ', '_');
    std::replace(s.begin(), s.end(), '-', '_');
    static const std::vector<std::string> kNames = {"top_left", "top_right", "bottom_left", "bottom_right"};
    for (int i = 0; i < 4; ++i) {
      if (s == kNames[i]) return i;
    }
  }
  return -1;
}

inline std::string object_key(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace detail

inline ImportResult import_external(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("cannot read annotation root '" + root.string() + "'");
  std::vector<fs::path> files;
  for (fs::recursive_directory_iterator it(root, ec), end; it != end; it.increment(ec)) {
    if (ec) throw IoError("cannot traverse '" + root.string() + "': " + ec.message());
    if (it->is_regular_file() && it->path().extension() == ".json") files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());

  ImportResult result;
  for (const auto& file : files) {
    std::ifstream in(file);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception&) {
      ++result.stats.skipped_records;
      continue;
    }
    const json records = doc.is_array() ? doc : json::array({doc});
    for (std::size_t r = 0; r < records.size(); ++r) {
      ++result.stats.records;
      const json& rec = records[r];
      try {
        Scene s;
        s.scene_id = file.stem().string() + (records.size() > 1 ? "-" + std::to_string(r) : "");
        s.width = rec.at("width").get<int>();
        s.height = rec.at("height").get<int>();
        if (rec.contains("image")) {
          const fs::path img = file.parent_path() / rec["image"].get<std::string>();
          if (fs::exists(img)) s.image = std::make_shared<const Image>(read_png(img));
        }
        if (rec.contains("boxes")) {
          for (const auto& b : rec["boxes"]) s.boxes.push_back(detail::xywh(b));
        } else {
          const double hw = s.width / 2.0, hh = s.height / 2.0;
          s.boxes = {{0, 0, hw, hh}, {hw, 0, static_cast<double>(s.width), hh}, {0, hh, hw, static_cast<double>(s.height)},
                     {hw, hh, static_cast<double>(s.width), static_cast<double>(s.height)}};
        }
        std::map<std::string, std::size_t> by_id;
        for (const auto& jo : rec.at("objects")) {
          ObjectInstance o;
          o.object_id = detail::object_key(jo.at("id"));
          o.bbox = detail::xywh(jo.at("bbox"));
          if (jo.contains("features")) o.features = jo["features"].get<std::vector<double>>();
          if (by_id.count(o.object_id)) continue;
          by_id.emplace(o.object_id, s.objects.size());
          s.objects.push_back(std::move(o));
        }
        for (const auto& ji : rec.value("instructions", json::array())) {
          const std::string target = ji.contains("target") ? detail::object_key(ji["target"]) : std::string{};
          const int dest = ji.contains("destination") ? detail::destination_index(ji["destination"]) : -1;
          const std::string text = ji.value("sentence", ji.value("text", std::string{}));
          auto it = by_id.find(target);
          if (it == by_id.end() || dest < 0 || dest >= kDestinationCount || tokenize(text).empty()) {
            ++result.stats.dropped_instructions;
            continue;
          }
          InstructionAnnotation a;
          a.text = text;
          a.target_object_id = target;
          a.destination_box_id = dest;
          s.objects[it->second].instructions.push_back(std::move(a));
        }
        std::vector<ObjectInstance> kept;
        for (auto& o : s.objects) {
          const bool ok = !o.instructions.empty() && o.bbox.within(s.width, s.height) && (s.image || o.features);
          if (ok) {
            kept.push_back(std::move(o));
          } else {
            ++result.stats.dropped_objects;
          }
        }
        s.objects = std::move(kept);
        if (s.objects.empty()) {
          ++result.stats.skipped_records;
          continue;
        }
        validate_scene(s);
        result.scenes.push_back(std::move(s));
      } catch (const std::exception&) {
        ++result.stats.skipped_records;
      }
    }
  }
  result.stats.scenes = result.scenes.size();
  if (result.scenes.empty()) throw IoError("no scenes found under '" + root.string() + "'");
  return result;
}

}  // namespace clarify
