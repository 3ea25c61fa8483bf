#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "clarify/corpus/dataset.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/synthetic.hpp"
#include "clarify/corpus/text.hpp"
#include "support/temp_dir.hpp"

using namespace clarify;
namespace fs = std::filesystem;

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Move the Tissue box!"), (std::vector<std::string>{"move", "the", "tissue", "box"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("red,  red"), (std::vector<std::string>{"red", "red"}));
  EXPECT_EQ(tokenize("  ... top-left?! "), (std::vector<std::string>{"top-left"}));
}

TEST(Tokenize, IdempotentOnJoinedOutput) {
  Rng rng(4);
  const std::string alphabet = "abcXYZ .,!?-'\t";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const std::size_t len = rng.uniform_index(40);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
    const auto once = tokenize(s);
    std::string joined;
    for (const auto& t : once) joined += (joined.empty() ? "" : " ") + t;
    EXPECT_EQ(tokenize(joined), once) << '"' << s << '"';
  }
}

TEST(Vocabulary, CountThreshold) {
  const Vocabulary v = build_vocabulary({"red cup", "red box"});
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"UNK", "red"}));
  EXPECT_EQ(build_vocabulary({"one two", "three"}).size(), 1u);
  EXPECT_TRUE(build_vocabulary({"a a"}).contains("a"));
}

TEST(Vocabulary, NeverHoldsSingletons) {
  Rng rng(8);
  const std::vector<std::string> words = {"red", "blue", "cup", "box", "the", "a", "left", "right", "top"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> corpus;
    std::map<std::string, int> counts;
    for (std::size_t s = 0; s < 1 + rng.uniform_index(5); ++s) {
      std::string line;
      for (std::size_t w = 0; w < 1 + rng.uniform_index(4); ++w) {
        const auto& word = words[rng.uniform_index(words.size())];
        ++counts[word];
        line += word + " ";
      }
      corpus.push_back(line);
    }
    const Vocabulary v = build_vocabulary(corpus);
    EXPECT_EQ(v.token(0), "UNK");
    for (const auto& [w, c] : counts) EXPECT_EQ(v.contains(w), c >= 2) << w;
  }
}

TEST(Vocabulary, EncodeTokens) {
  const Vocabulary v({"UNK", "red"});
  EXPECT_EQ(encode_tokens({"red", "ball"}, v), (std::vector<std::size_t>{1, 0}));
  EXPECT_TRUE(encode_tokens({}, v).empty());
  EXPECT_EQ(encode_tokens({"zz", "yy", "xx"}, v), (std::vector<std::size_t>{0, 0, 0}));
}

TEST(SceneFile, RoundTripOfGeneratedScenes) {
  clarify::testing::TempDir dir;
  SyntheticConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 12;
  cfg.ambiguity_rate = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    cfg.ambiguity_rate = (i % 3) * 0.4;
    cfg.min_objects = cfg.ambiguity_rate > 0 ? 2 : 1;
    const Scene s = synthetic::generate_scene(cfg, 77, i);
    const fs::path p = dir.path() / (s.scene_id + ".json");
    save_scene(s, p);
    EXPECT_TRUE(fs::exists(dir.path() / (s.scene_id + ".png")));
    const Scene back = load_scene(p);
    ASSERT_EQ(back, s) << s.scene_id;
  }
}

TEST(SceneFile, ValidationErrors) {
  clarify::testing::TempDir dir;
  SyntheticConfig cfg;
  Scene s = synthetic::generate_scene(cfg, 1, 0);
  for (const char* name : {"bad", "three", "missing"}) write_png(*s.image, dir.path() / (std::string(name) + ".png"));
  json j = scene_to_json(s);
  j["objects"][1]["bbox"]["x_max"] = j["objects"][1]["bbox"]["x_min"];
  {
    std::ofstream(dir.path() / "bad.json") << j.dump();
    try {
      load_scene(dir.path() / "bad.json");
      FAIL();
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(s.objects[1].object_id), std::string::npos) << e.what();
    }
  }
  json three = scene_to_json(s);
  three["boxes"].erase(3);
  std::ofstream(dir.path() / "three.json") << three.dump();
  try {
    load_scene(dir.path() / "three.json");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 4 destination regions"), std::string::npos);
  }
  json missing = scene_to_json(s);
  missing["objects"][0].erase("bbox");
  std::ofstream(dir.path() / "missing.json") << missing.dump();
  try {
    load_scene(dir.path() / "missing.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("objects[0].bbox"), std::string::npos) << e.what();
  }
}

namespace {

// Referent oracle written from the constraint definitions, independent of the
// generator's own evaluation code.
int region_of(const Scene& s, const BoundingBox& b) {
  const double cx = (b.x_min + b.x_max) / 2, cy = (b.y_min + b.y_max) / 2;
  for (int r = 0; r < 4; ++r) {
    const auto& R = s.boxes[r];
    if (R.x_min <= cx && cx < R.x_max && R.y_min <= cy && cy < R.y_max) return r;
  }
  return -1;
}

bool attrs_ok(const ObjectInstance& o, const json& c) {
  for (const char* axis : {"color", "shape", "size", "pattern"}) {
    if (c.contains(axis) && o.attributes.at(axis) != c[axis]) return false;
  }
  return true;
}

std::set<std::string> oracle_referents(const Scene& s, const json& c) {
  std::set<std::string> out;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (!attrs_ok(o, c)) continue;
    if (c.contains("region") && region_of(s, o.bbox) != c["region"]) continue;
    if (c.contains("next_to")) {
      double best = 1e300;
      std::size_t nn = i;
      for (std::size_t j = 0; j < s.objects.size(); ++j) {
        if (j == i) continue;
        const double dx = (o.bbox.x_min + o.bbox.x_max) / 2 - (s.objects[j].bbox.x_min + s.objects[j].bbox.x_max) / 2;
        const double dy = (o.bbox.y_min + o.bbox.y_max) / 2 - (s.objects[j].bbox.y_min + s.objects[j].bbox.y_max) / 2;
        if (dx * dx + dy * dy < best) best = dx * dx + dy * dy, nn = j;
      }
      if (nn == i || !attrs_ok(s.objects[nn], c["next_to"])) continue;
    }
    if (c.contains("ordinal")) {
      const int r = c["ordinal"]["region"];
      if (region_of(s, o.bbox) != r) continue;
      std::vector<std::pair<double, std::string>> in_region;
      for (const auto& other : s.objects) {
        if (region_of(s, other.bbox) == r) in_region.emplace_back((other.bbox.x_min + other.bbox.x_max) / 2, other.object_id);
      }
      std::sort(in_region.begin(), in_region.end());
      int rank = 0;
      for (std::size_t k = 0; k < in_region.size(); ++k) {
        if (in_region[k].second == o.object_id) rank = static_cast<int>(k) + 1;
      }
      if (rank != c["ordinal"]["rank"]) continue;
    }
    out.insert(o.object_id);
  }
  return out;
}

}  // namespace

TEST(Generator, Deterministic) {
  SyntheticConfig cfg;
  cfg.scene_count = 5;
  cfg.ambiguity_rate = 0.3;
  EXPECT_EQ(generate_synthetic_dataset(cfg, 42), generate_synthetic_dataset(cfg, 42));
  EXPECT_NE(generate_synthetic_dataset(cfg, 42), generate_synthetic_dataset(cfg, 43));
}

TEST(Generator, UnambiguousReferentsAreSingletons) {
  SyntheticConfig cfg;
  cfg.scene_count = 60;
  cfg.ambiguity_rate = 0.0;
  std::set<std::string> families;
  for (const auto& s : generate_synthetic_dataset(cfg, 5)) {
    for (const auto& o : s.objects) {
      EXPECT_GE(o.instructions.size(), 3u);
      for (const auto& ins : o.instructions) {
        const auto oracle = oracle_referents(s, *ins.constraints);
        EXPECT_EQ(oracle.size(), 1u) << ins.text;
        EXPECT_EQ(oracle, std::set<std::string>(ins.referents->begin(), ins.referents->end()));
        EXPECT_FALSE(*ins.ambiguous);
        families.insert((*ins.constraints)["family"].get<std::string>());
      }
    }
  }
  EXPECT_EQ(families, (std::set<std::string>{"attribute", "position", "relational", "ordinal"}));
}

TEST(Generator, AmbiguousReferentsHaveDistractors) {
  SyntheticConfig cfg;
  cfg.scene_count = 40;
  cfg.min_objects = 2;
  cfg.max_objects = 8;
  cfg.ambiguity_rate = 1.0;
  for (const auto& s : generate_synthetic_dataset(cfg, 9)) {
    for (const auto& o : s.objects) {
      for (const auto& ins : o.instructions) {
        ASSERT_TRUE(*ins.ambiguous);
        const auto oracle = oracle_referents(s, *ins.constraints);
        EXPECT_GE(oracle.size(), 2u) << ins.text;
        EXPECT_EQ(oracle, std::set<std::string>(ins.referents->begin(), ins.referents->end()));
      }
    }
  }
}

TEST(Generator, TargetAlwaysAmongReferents) {
  SyntheticConfig cfg;
  cfg.scene_count = 30;
  cfg.ambiguity_rate = 0.4;
  for (const auto& s : generate_synthetic_dataset(cfg, 3)) {
    validate_scene(s);
    std::set<std::map<std::string, std::string>> tuples;
    for (const auto& o : s.objects) EXPECT_TRUE(tuples.insert(o.attributes).second) << s.scene_id;
    for (const auto& o : s.objects) {
      for (const auto& ins : o.instructions) {
        EXPECT_NE(std::find(ins.referents->begin(), ins.referents->end(), o.object_id), ins.referents->end());
      }
    }
  }
}

TEST(Generator, InfeasibleConfig) {
  SyntheticConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  cfg.ambiguity_rate = 0.5;
  EXPECT_THROW(generate_synthetic_dataset(cfg, 1), ConfigError);
  cfg.ambiguity_rate = 1.5;
  cfg.min_objects = 3;
  cfg.max_objects = 4;
  EXPECT_THROW(generate_synthetic_dataset(cfg, 1), ConfigError);
}

TEST(Split, SizesPartitionDeterminism) {
  SyntheticConfig cfg;
  cfg.scene_count = 20;
  cfg.max_specks = 0;
  const auto scenes = generate_synthetic_dataset(cfg, 2);
  const auto a = split_dataset(scenes, 0.1, 7);
  EXPECT_EQ(a.train.size(), 18u);
  EXPECT_EQ(a.validation.size(), 2u);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.validation}) {
    for (const auto& s : *part) EXPECT_TRUE(ids.insert(s.scene_id).second);
  }
  EXPECT_EQ(ids.size(), 20u);
  const auto b = split_dataset(scenes, 0.1, 7);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_THROW(split_dataset({scenes[0]}, 0.5, 1), ConfigError);
  EXPECT_THROW(split_dataset(scenes, 1.0, 1), ConfigError);
}

TEST(Dataset, SaveLoadWithManifest) {
  clarify::testing::TempDir dir;
  SyntheticConfig cfg;
  cfg.scene_count = 6;
  const auto split = split_dataset(generate_synthetic_dataset(cfg, 11), 0.34, 1);
  save_dataset(dir.path(), split);
  EXPECT_EQ(load_dataset(dir.path(), "train"), split.train);
  EXPECT_EQ(load_dataset(dir.path(), "validation"), split.validation);
  EXPECT_EQ(load_dataset(dir.path()).size(), 6u);
}

TEST(Import, EmptyDirectory) {
  clarify::testing::TempDir dir;
  try {
    import_external(dir.path());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("no scenes found"), std::string::npos);
  }
  EXPECT_THROW(import_external(dir.path() / "absent"), IoError);
}

TEST(Import, HandBuiltFixture) {
  clarify::testing::TempDir dir;
  fs::create_directories(dir.path() / "images");
  Image img(200, 100, Rgb{200, 200, 200});
  for (int y = 10; y < 30; ++y)
    for (int x = 20; x < 50; ++x) img.set(x, y, Rgb{255, 0, 0});
  write_png(img, dir.path() / "images" / "scene7.png");
  const json rec = {
      {"image", "images/scene7.png"},
      {"width", 200},
      {"height", 100},
      {"objects", {{{"id", "a"}, {"bbox", {20, 10, 30, 20}}}, {{"id", 5}, {"bbox", {120, 60, 10, 15}}}}},
      {"instructions",
       {{{"sentence", "Move the red block to the bottom right box"}, {"target", "a"}, {"destination", 3}},
        {{"sentence", "put the grey thing top left"}, {"target", 5}, {"destination", "top_left"}},
        {{"sentence", "a ghost object"}, {"target", "zzz"}, {"destination", 1}}}}};
  std::ofstream(dir.path() / "scene7.json") << rec.dump(2);

  const auto result = import_external(dir.path());
  ASSERT_EQ(result.scenes.size(), 1u);
  EXPECT_EQ(result.stats.dropped_instructions, 1u);
  const Scene& s = result.scenes[0];
  EXPECT_EQ(s.scene_id, "scene7");
  ASSERT_EQ(s.objects.size(), 2u);
  EXPECT_EQ(s.objects[0].bbox, (BoundingBox{20, 10, 50, 30}));
  EXPECT_EQ(s.objects[1].object_id, "5");
  EXPECT_EQ(s.objects[1].bbox, (BoundingBox{120, 60, 130, 75}));
  EXPECT_EQ(s.objects[1].instructions.at(0).destination_box_id, 0);
  EXPECT_EQ(s.boxes.size(), 4u);
  ASSERT_TRUE(s.image);
  EXPECT_EQ(s.image->at(25, 15), (Rgb{255, 0, 0}));
}
