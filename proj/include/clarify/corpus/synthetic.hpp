#pragma once

// Desk-scale synthetic picking scenes: a 2x2 grid of destination boxes holding
// colored shapes, each annotated with template instructions whose referent
// sets are computed exactly from the instruction's constraints.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clarify/corpus/scene.hpp"
#include "clarify/errors.hpp"
#include "clarify/image.hpp"
#include "clarify/rng.hpp"

namespace clarify {

struct SyntheticConfig {
  std::size_t scene_count = 10;
  std::size_t min_objects = 6;
  std::size_t max_objects = 10;
  double ambiguity_rate = 0.0;
  int width = 256;
  int height = 256;
  std::size_t max_specks = 3;

  void validate() const {
    if (scene_count == 0) throw ConfigError("scene_count must be positive");
    if (min_objects == 0 || min_objects > max_objects) throw ConfigError("object count range is empty");
    if (ambiguity_rate < 0.0 || ambiguity_rate > 1.0) throw ConfigError("ambiguity_rate must lie in [0, 1]");
    if (ambiguity_rate > 0.0 && min_objects < 2) {
      throw ConfigError("ambiguity requires at least 2 objects per scene (min_objects = " +
                        std::to_string(min_objects) + ")");
    }
    if (width < 128 || height < 128) throw ConfigError("synthetic scenes must be at least 128x128");
    if (max_objects > 24) throw ConfigError("at most 24 objects fit in a synthetic scene");
  }
};

namespace synthetic {

inline const std::array<std::string, 4> kAttributeAxes = {"size", "pattern", "color", "shape"};
inline const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "purple", "orange"};
inline const std::vector<std::string> kShapes = {"circle", "square", "triangle", "bar"};
inline const std::vector<std::string> kSizes = {"small", "medium", "large"};
inline const std::vector<std::string> kPatterns = {"plain", "striped", "checkered"};

inline const std::vector<std::string>& values_of(const std::string& axis) {
  if (axis == "color") return kColors;
  if (axis == "shape") return kShapes;
  if (axis == "size") return kSizes;
  return kPatterns;
}

inline Rgb color_rgb(const std::string& name) {
  static const std::map<std::string, Rgb> kRgb = {
      {"red", {220, 40, 40}},    {"green", {40, 170, 60}},   {"blue", {40, 80, 220}},
      {"yellow", {235, 210, 40}}, {"purple", {140, 60, 170}}, {"orange", {245, 140, 30}}};
  return kRgb.at(name);
}

inline const std::map<std::string, std::vector<std::string>>& synonyms() {
  static const std::map<std::string, std::vector<std::string>> kSyn = {
      {"small", {"small", "little", "tiny"}},
      {"medium", {"medium", "medium-sized"}},
      {"large", {"large", "big"}},
      {"plain", {"plain", "solid"}},
      {"striped", {"striped", "stripy"}},
      {"checkered", {"checkered", "checked"}},
      {"circle", {"circle", "ball", "disc"}},
      {"square", {"square", "block", "cube"}},
      {"triangle", {"triangle", "wedge"}},
      {"bar", {"bar", "stick", "rod"}},
  };
  return kSyn;
}

inline const std::vector<std::vector<std::string>>& region_phrases() {
  static const std::vector<std::vector<std::string>> kPhrases = {
      {"top left", "upper left", "top-left"},
      {"top right", "upper right", "top-right"},
      {"bottom left", "lower left", "bottom-left"},
      {"bottom right", "lower right", "bottom-right"}};
  return kPhrases;
}

inline const std::vector<std::string> kContainerNouns = {"box", "bin", "container"};
inline const std::vector<std::string> kGenericNouns = {"one", "thing", "object", "item"};
inline const std::vector<std::string> kOrdinals = {"first", "second", "third", "fourth", "fifth", "sixth"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_index(v.size())];
}

// Standard layout: four equal regions on a 2x2 grid, indexed row-major.
inline std::vector<BoundingBox> region_layout(int w, int h) {
  const double m = 8.0;
  const double cw = (w - 3 * m) / 2.0, ch = (h - 3 * m) / 2.0;
  std::vector<BoundingBox> out;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const double x0 = std::round(m + c * (cw + m)), y0 = std::round(m + r * (ch + m));
      out.push_back({x0, y0, std::round(x0 + cw), std::round(y0 + ch)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint evaluation. A constraint object may carry attribute values
// ("color", "shape", "size", "pattern"), a "region" index, a "next_to"
// landmark description and an "ordinal" {"region", "rank"} (1-based rank by
// center x among objects of that region).

inline bool attributes_match(const ObjectInstance& o, const json& c) {
  for (const auto& axis : kAttributeAxes) {
    if (c.contains(axis)) {
      auto it = o.attributes.find(axis);
      if (it == o.attributes.end() || it->second != c[axis].get<std::string>()) return false;
    }
  }
  return true;
}

inline std::size_t nearest_neighbor(const Scene& s, std::size_t i) {
  std::size_t best = i;
  double best_d = 0.0;
  for (std::size_t j = 0; j < s.objects.size(); ++j) {
    if (j == i) continue;
    const double dx = s.objects[i].bbox.center_x() - s.objects[j].bbox.center_x();
    const double dy = s.objects[i].bbox.center_y() - s.objects[j].bbox.center_y();
    const double d = dx * dx + dy * dy;
    if (best == i || d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

inline int ordinal_rank(const Scene& s, std::size_t i, int region) {
  int rank = 1;
  const auto& me = s.objects[i];
  for (std::size_t j = 0; j < s.objects.size(); ++j) {
    if (j == i || containing_region(s, s.objects[j].bbox) != region) continue;
    const auto& o = s.objects[j];
    if (o.bbox.center_x() < me.bbox.center_x() ||
        (o.bbox.center_x() == me.bbox.center_x() && o.object_id < me.object_id)) {
      ++rank;
    }
  }
  return rank;
}

inline bool satisfies(const Scene& s, std::size_t i, const json& c) {
  const auto& o = s.objects[i];
  if (!attributes_match(o, c)) return false;
  if (c.contains("region") && containing_region(s, o.bbox) != c["region"].get<int>()) return false;
  if (c.contains("next_to")) {
    if (s.objects.size() < 2) return false;
    const std::size_t nn = nearest_neighbor(s, i);
    if (!attributes_match(s.objects[nn], c["next_to"])) return false;
  }
  if (c.contains("ordinal")) {
    const int region = c["ordinal"]["region"].get<int>();
    if (containing_region(s, o.bbox) != region) return false;
    if (ordinal_rank(s, i, region) != c["ordinal"]["rank"].get<int>()) return false;
  }
  return true;
}

inline std::vector<std::string> referents_of(const Scene& s, const json& c) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (satisfies(s, i, c)) ids.push_back(s.objects[i].object_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline Rgb shade(Rgb c, double f) {
  auto ch = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::clamp(v * f, 0.0, 255.0)); };
  return {ch(c.r), ch(c.g), ch(c.b)};
}

inline Rgb tint(Rgb c, double f) {
  auto ch = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::clamp(v + (255 - v) * f, 0.0, 255.0)); };
  return {ch(c.r), ch(c.g), ch(c.b)};
}

struct ShapeSpec {
  std::string shape, size, pattern, color;
  int w = 0, h = 0;
};

inline ShapeSpec make_spec(const std::map<std::string, std::string>& attrs, Rng& rng) {
  ShapeSpec s{attrs.at("shape"), attrs.at("size"), attrs.at("pattern"), attrs.at("color")};
  const int base = s.size == "small" ? 14 : s.size == "medium" ? 20 : 27;
  if (s.shape == "bar") {
    const int lng = static_cast<int>(std::lround(base * 1.7)), sht = std::max(4, static_cast<int>(std::lround(base * 0.5)));
    if (rng.bernoulli(0.5)) {
      s.w = lng, s.h = sht;
    } else {
      s.w = sht, s.h = lng;
    }
  } else {
    s.w = s.h = base;
  }
  return s;
}

inline bool inside_shape(const ShapeSpec& s, int lx, int ly) {
  const double x = lx + 0.5, y = ly + 0.5;
  if (s.shape == "circle") {
    const double r = s.w / 2.0;
    return (x - r) * (x - r) + (y - r) * (y - r) <= r * r;
  }
  if (s.shape == "triangle") {
    // Apex at top center, base along the bottom edge.
    const double half = (y / s.h) * (s.w / 2.0);
    return std::abs(x - s.w / 2.0) <= half + 0.5;
  }
  return true;
}

inline Rgb pattern_color(const ShapeSpec& s, int lx, int ly) {
  const Rgb base = color_rgb(s.color);
  if (s.pattern == "striped") return (ly / 3) % 2 == 0 ? base : shade(base, 0.5);
  if (s.pattern == "checkered") return ((lx / 3) + (ly / 3)) % 2 == 0 ? base : tint(base, 0.6);
  return base;
}

// Draws the shape with its top-left corner at (x0, y0); returns the exact
// pixel extent that was painted.
inline BoundingBox draw_shape(Image& img, const ShapeSpec& s, int x0, int y0) {
  int minx = x0 + s.w, miny = y0 + s.h, maxx = x0 - 1, maxy = y0 - 1;
  for (int ly = 0; ly < s.h; ++ly) {
    for (int lx = 0; lx < s.w; ++lx) {
      if (!inside_shape(s, lx, ly)) continue;
      img.set(x0 + lx, y0 + ly, pattern_color(s, lx, ly));
      minx = std::min(minx, x0 + lx);
      miny = std::min(miny, y0 + ly);
      maxx = std::max(maxx, x0 + lx);
      maxy = std::max(maxy, y0 + ly);
    }
  }
  return {static_cast<double>(minx), static_cast<double>(miny), static_cast<double>(maxx + 1),
          static_cast<double>(maxy + 1)};
}

struct Placement {
  int x0, y0, w, h;
};

inline bool clear_of(const Placement& p, const std::vector<Placement>& taken, int gap) {
  for (const auto& q : taken) {
    if (p.x0 < q.x0 + q.w + gap && q.x0 < p.x0 + p.w + gap && p.y0 < q.y0 + q.h + gap && q.y0 < p.y0 + p.h + gap) {
      return false;
    }
  }
  return true;
}

inline std::optional<Placement> place_in(const BoundingBox& region, int w, int h, const std::vector<Placement>& taken,
                                         Rng& rng) {
  const int pad = 4;
  const int lo_x = static_cast<int>(region.x_min) + pad, hi_x = static_cast<int>(region.x_max) - pad - w;
  const int lo_y = static_cast<int>(region.y_min) + pad, hi_y = static_cast<int>(region.y_max) - pad - h;
  if (hi_x < lo_x || hi_y < lo_y) return std::nullopt;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Placement p{rng.uniform_int(lo_x, hi_x), rng.uniform_int(lo_y, hi_y), w, h};
    if (clear_of(p, taken, 4)) return p;
  }
  return std::nullopt;
}

inline std::string attribute_key(const std::map<std::string, std::string>& a) {
  return a.at("size") + "/" + a.at("pattern") + "/" + a.at("color") + "/" + a.at("shape");
}

// ---------------------------------------------------------------------------
// Text

inline std::string word_for(const std::string& value, Rng& rng) {
  auto it = synonyms().find(value);
  if (it == synonyms().end()) return value;
  return pick(it->second, rng);
}

// Noun phrase for an attribute constraint, e.g. "big striped red bar".
inline std::string describe(const json& c, Rng& rng) {
  std::string out;
  for (const auto& axis : kAttributeAxes) {
    if (axis == "shape") continue;
    if (c.contains(axis)) {
      if (!out.empty()) out += ' ';
      out += word_for(c[axis].get<std::string>(), rng);
    }
  }
  if (!out.empty()) out += ' ';
  out += c.contains("shape") ? word_for(c["shape"].get<std::string>(), rng) : pick(kGenericNouns, rng);
  return out;
}

inline std::string region_phrase(int region, Rng& rng) { return pick(region_phrases()[region], rng); }

inline std::string wrap_command(const std::string& target_phrase, int destination, Rng& rng) {
  const std::string dest = region_phrase(destination, rng) + " " + pick(kContainerNouns, rng);
  switch (rng.uniform_index(6)) {
    case 0: return "move the " + target_phrase + " to the " + dest;
    case 1: return "put the " + target_phrase + " in the " + dest;
    case 2: return "pick up the " + target_phrase + " and put it in the " + dest;
    case 3: return "could you move the " + target_phrase + " to the " + dest + "?";
    case 4: return "grab the " + target_phrase + " and drop it into the " + dest;
    default: return "the " + target_phrase + " goes to the " + dest + ", please";
  }
}

// Attribute subsets of the target, as bit masks over kAttributeAxes.
inline json constraint_from_mask(const ObjectInstance& o, unsigned mask) {
  json c = json::object();
  for (std::size_t a = 0; a < kAttributeAxes.size(); ++a) {
    if (mask & (1u << a)) c[kAttributeAxes[a]] = o.attributes.at(kAttributeAxes[a]);
  }
  return c;
}

inline std::size_t match_count(const Scene& s, const json& c) { return referents_of(s, c).size(); }

// Smallest attribute subset under which `extra` constraints plus the
// attributes single out object i. Ties are broken at random; with
// probability 0.3 one redundant attribute is added.
inline json minimal_unique(const Scene& s, std::size_t i, const json& extra, Rng& rng) {
  const auto& o = s.objects[i];
  for (int size = 1; size <= 4; ++size) {
    std::vector<unsigned> masks;
    for (unsigned m = 1; m < 16; ++m) {
      if (std::popcount(m) != size) continue;
      json c = constraint_from_mask(o, m);
      c.update(extra);
      const auto refs = referents_of(s, c);
      if (refs.size() == 1 && refs[0] == o.object_id) masks.push_back(m);
    }
    if (masks.empty()) continue;
    unsigned m = pick(masks, rng);
    if (size < 4 && rng.bernoulli(0.3)) {
      std::vector<unsigned> grow;
      for (unsigned a = 0; a < 4; ++a) {
        if (!(m & (1u << a))) grow.push_back(m | (1u << a));
      }
      m = pick(grow, rng);
    }
    json c = constraint_from_mask(o, m);
    c.update(extra);
    return c;
  }
  return nullptr;
}

}  // namespace detail

// Generates scene `index` of the dataset identified by `seed`. Scenes are
// independent of each other and of scene_count.
inline Scene generate_scene(const SyntheticConfig& cfg, std::uint64_t seed, std::size_t index) {
  using namespace detail;
  cfg.validate();
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + index * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL);

  Scene s;
  s.scene_id = "syn-" + std::to_string(seed) + "-" + std::to_string(index);
  s.width = cfg.width;
  s.height = cfg.height;
  s.boxes = region_layout(cfg.width, cfg.height);

  const std::size_t n = cfg.min_objects + rng.uniform_index(cfg.max_objects - cfg.min_objects + 1);

  // Attributes, with full attribute tuples kept distinct.
  std::vector<std::map<std::string, std::string>> attrs;
  std::set<std::string> seen;
  while (attrs.size() < n) {
    std::map<std::string, std::string> a{{"color", pick(kColors, rng)},
                                         {"shape", pick(kShapes, rng)},
                                         {"size", pick(kSizes, rng)},
                                         {"pattern", pick(kPatterns, rng)}};
    if (seen.insert(attribute_key(a)).second) attrs.push_back(std::move(a));
  }

  // Four instruction slots per object; each independently ambiguous.
  std::vector<std::array<bool, 4>> ambiguous(n);
  for (auto& slots : ambiguous) {
    for (bool& b : slots) b = rng.bernoulli(cfg.ambiguity_rate);
  }
  // An ambiguous instruction needs a distractor sharing some attribute.
  for (std::size_t i = 0; i < n; ++i) {
    if (std::none_of(ambiguous[i].begin(), ambiguous[i].end(), [](bool b) { return b; })) continue;
    bool shares = false;
    for (std::size_t j = 0; j < n && !shares; ++j) {
      if (j == i) continue;
      for (const auto& axis : kAttributeAxes) shares = shares || attrs[j].at(axis) == attrs[i].at(axis);
    }
    if (!shares) {
      // Copy one attribute of i onto another object, keeping tuples distinct.
      const std::size_t offset = rng.uniform_index(n - 1);
      bool done = false;
      for (std::size_t k = 0; k + 1 < n && !done; ++k) {
        std::size_t j = (offset + k) % (n - 1);
        if (j >= i) ++j;
        for (const auto& axis : kAttributeAxes) {
          auto changed = attrs[j];
          changed[axis] = attrs[i].at(axis);
          if (seen.count(attribute_key(changed))) continue;
          seen.erase(attribute_key(attrs[j]));
          seen.insert(attribute_key(changed));
          attrs[j] = std::move(changed);
          done = true;
          break;
        }
      }
    }
  }

  // Render.
  Rng paint = rng.fork();
  auto img = std::make_shared<Image>(cfg.width, cfg.height, Rgb{58, 58, 62});
  for (const auto& r : s.boxes) {
    const Rgb floor{static_cast<std::uint8_t>(196 + paint.uniform_int(-8, 8)),
                    static_cast<std::uint8_t>(192 + paint.uniform_int(-8, 8)),
                    static_cast<std::uint8_t>(182 + paint.uniform_int(-8, 8))};
    for (int y = static_cast<int>(r.y_min); y < static_cast<int>(r.y_max); ++y) {
      for (int x = static_cast<int>(r.x_min); x < static_cast<int>(r.x_max); ++x) img->set(x, y, floor);
    }
  }
  std::vector<Placement> taken;
  for (std::size_t i = 0; i < n; ++i) {
    const ShapeSpec spec = make_spec(attrs[i], paint);
    std::optional<Placement> where;
    const std::size_t first = paint.uniform_index(4);
    for (std::size_t k = 0; k < 4 && !where; ++k) {
      where = place_in(s.boxes[(first + k) % 4], spec.w, spec.h, taken, paint);
    }
    if (!where) throw ConfigError("could not place " + std::to_string(n) + " objects in a synthetic scene");
    taken.push_back(*where);
    ObjectInstance o;
    o.object_id = "o" + std::to_string(i);
    o.bbox = draw_shape(*img, spec, where->x0, where->y0);
    o.attributes = attrs[i];
    s.objects.push_back(std::move(o));
  }
  const std::size_t specks = cfg.max_specks ? paint.uniform_index(cfg.max_specks + 1) : 0;
  for (std::size_t k = 0; k < specks; ++k) {
    const int side = paint.uniform_int(2, 3);
    const auto where = place_in(s.boxes[paint.uniform_index(4)], side, side, taken, paint);
    if (!where) continue;
    taken.push_back(*where);
    const std::uint8_t g = static_cast<std::uint8_t>(paint.uniform_int(110, 150));
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) img->set(where->x0 + x, where->y0 + y, Rgb{g, g, g});
    }
  }
  s.image = img;

  // Instructions.
  for (std::size_t i = 0; i < n; ++i) {
    auto& obj = s.objects[i];
    const int region = containing_region(s, obj.bbox);
    int destination = static_cast<int>(rng.uniform_index(3));
    if (destination >= region) ++destination;

    for (int slot = 0; slot < 4; ++slot) {
      json c;
      std::string family;
      std::string phrase;
      if (ambiguous[i][slot]) {
        // Smallest referent set of size >= 2 under attributes (and, for the
        // position slot, the region) that still includes the target.
        std::vector<std::pair<std::size_t, json>> options;
        for (int with_region = 0; with_region <= (slot == 1 ? 1 : 0); ++with_region) {
          for (unsigned m = 1; m < 16; ++m) {
            json cand = constraint_from_mask(obj, m);
            if (with_region) cand["region"] = region;
            const std::size_t k = match_count(s, cand);
            if (k >= 2) options.emplace_back(k, std::move(cand));
          }
        }
        if (options.empty()) throw ConfigError("no ambiguous description available for " + obj.object_id);
        std::size_t best = SIZE_MAX;
        for (const auto& [k, _] : options) best = std::min(best, k);
        std::vector<json> best_opts;
        for (auto& [k, cand] : options) {
          if (k == best) best_opts.push_back(cand);
        }
        c = pick(best_opts, rng);
        family = c.contains("region") ? "position" : "attribute";
        phrase = describe(c, rng);
        if (c.contains("region")) phrase += " in the " + region_phrase(region, rng) + " " + pick(kContainerNouns, rng);
      } else if (slot == 0) {
        family = "attribute";
        c = minimal_unique(s, i, json::object(), rng);
        phrase = describe(c, rng);
      } else if (slot == 1) {
        family = "position";
        c = minimal_unique(s, i, json{{"region", region}}, rng);
        phrase = describe(c, rng) + " in the " + region_phrase(region, rng) + " " + pick(kContainerNouns, rng);
      } else if (slot == 2 && n >= 2) {
        family = "relational";
        const std::size_t nn = nearest_neighbor(s, i);
        c = minimal_unique(s, i, json::object(), rng);
        const json landmark = minimal_unique(s, nn, json::object(), rng);
        c["next_to"] = landmark;
        static const std::vector<std::string> kNear = {"next to", "beside", "near"};
        phrase = describe(c, rng) + " " + pick(kNear, rng) + " the " + describe(landmark, rng);
      } else {
        family = "ordinal";
        const int rank = ordinal_rank(s, i, region);
        c = minimal_unique(s, i, json::object(), rng);
        c["ordinal"] = json{{"region", region}, {"rank", rank}};
        const std::string ord = rank <= static_cast<int>(kOrdinals.size()) ? kOrdinals[rank - 1] : std::to_string(rank) + "th";
        phrase = describe(c, rng) + " that is " + ord + " from the left in the " + region_phrase(region, rng) + " " +
                 pick(kContainerNouns, rng);
      }
      InstructionAnnotation ins;
      ins.text = wrap_command(phrase, destination, rng);
      ins.target_object_id = obj.object_id;
      ins.destination_box_id = destination;
      ins.referents = referents_of(s, c);
      ins.ambiguous = ins.referents->size() >= 2;
      c["family"] = family;
      ins.constraints = c;
      obj.instructions.push_back(std::move(ins));
    }
  }
  return s;
}

}  // namespace synthetic

inline std::vector<Scene> generate_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Scene> out;
  out.reserve(cfg.scene_count);
  for (std::size_t i = 0; i < cfg.scene_count; ++i) out.push_back(synthetic::generate_scene(cfg, seed, i));
  return out;
}

}  // namespace clarify
