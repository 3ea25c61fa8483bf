#include <gtest/gtest.h>

#include <set>

#include "clarify/corpus/synthetic.hpp"
#include "clarify/proposals.hpp"

using namespace clarify;

namespace {

BoundingBox random_box(Rng& rng, double side = 20) {
  const double x = rng.uniform(0, side), y = rng.uniform(0, side);
  return {x, y, x + rng.uniform(0.5, side), y + rng.uniform(0.5, side)};
}

}  // namespace

TEST(Iou, Examples) {
  const BoundingBox a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BoundingBox{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
  EXPECT_EQ(iou(a, BoundingBox{2, 0, 4, 2}), 0.0);  // touching edges
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(iou(a, a), 1.0, 1e-15);
  }
}

TEST(Nms, Examples) {
  const Proposal one{"a", {0, 0, 4, 4}, 0.7, std::nullopt};
  EXPECT_EQ(nms({one}).size(), 1u);
  const auto dup = nms({{"lo", {0, 0, 4, 4}, 0.8, {}}, {"hi", {0, 0, 4, 4}, 0.9, {}}}, 0.5);
  ASSERT_EQ(dup.size(), 1u);
  EXPECT_EQ(dup[0].id, "hi");
  EXPECT_EQ(nms({{"a", {0, 0, 4, 4}, 0.9, {}}, {"b", {10, 10, 14, 14}, 0.8, {}}}).size(), 2u);
  EXPECT_THROW(nms({one}, 0.0), ConfigError);
}

TEST(Nms, TieBreakIsPositional) {
  const auto kept = nms({{"right", {5, 0, 9, 4}, 0.5, {}}, {"left", {4, 0, 8, 4}, 0.5, {}}}, 0.3);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].id, "left");
}

TEST(Nms, SubsetWithNoOverlappingSurvivors) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Proposal> ps;
    for (std::size_t k = 0; k < 1 + rng.uniform_index(12); ++k) {
      ps.push_back({"p" + std::to_string(k), random_box(rng), rng.uniform(), {}});
    }
    const double thr = rng.uniform(0.05, 1.0);
    const auto kept = nms(ps, thr);
    std::set<std::string> input_ids;
    for (const auto& p : ps) input_ids.insert(p.id);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_TRUE(input_ids.count(kept[i].id));
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LE(iou(kept[i].bbox, kept[j].bbox), thr);
    }
    EXPECT_FALSE(kept.empty());
  }
}

TEST(GroundTruth, PassthroughOrderDependsOnSeed) {
  SyntheticConfig cfg;
  cfg.min_objects = cfg.max_objects = 5;
  const Scene s = synthetic::generate_scene(cfg, 3, 0);
  const auto a = propose_ground_truth(s, 1);
  ASSERT_EQ(a.size(), 5u);
  std::set<std::string> ids_a, ids_b;
  for (const auto& p : a) {
    EXPECT_EQ(p.objectness, 1.0);
    EXPECT_EQ(p.bbox, s.find_object(p.id)->bbox);
    ids_a.insert(p.id);
  }
  bool some_order_differs = false;
  for (std::uint64_t seed = 2; seed < 10; ++seed) {
    const auto b = propose_ground_truth(s, seed);
    ids_b.clear();
    for (const auto& p : b) ids_b.insert(p.id);
    EXPECT_EQ(ids_a, ids_b);
    for (std::size_t k = 0; k < 5; ++k) some_order_differs = some_order_differs || a[k].id != b[k].id;
  }
  EXPECT_TRUE(some_order_differs);
}

TEST(Objectness, SingleRenderedShape) {
  const std::vector<std::map<std::string, std::string>> attrs = {
      {{"color", "red"}, {"shape", "circle"}, {"size", "large"}, {"pattern", "plain"}},
      {{"color", "yellow"}, {"shape", "triangle"}, {"size", "small"}, {"pattern", "checkered"}},
      {{"color", "blue"}, {"shape", "bar"}, {"size", "medium"}, {"pattern", "striped"}}};
  for (const auto& a : attrs) {
    Rng rng(5);
    Image img(100, 80, Rgb{196, 192, 182});
    const auto spec = synthetic::detail::make_spec(a, rng);
    const BoundingBox truth = synthetic::detail::draw_shape(img, spec, 30, 20);
    const ObjectnessModel untrained;
    const auto props = propose_objectness(img, {}, untrained);
    ASSERT_EQ(props.size(), 1u) << a.at("shape");
    EXPECT_GE(iou(props[0].bbox, truth), 0.7);
    EXPECT_DOUBLE_EQ(props[0].objectness, 0.5);
  }
}

TEST(Objectness, BlankImageHasNoProposals) {
  const ObjectnessModel m;
  EXPECT_TRUE(propose_objectness(Image(64, 64, Rgb{10, 200, 30}), {}, m).empty());
  EXPECT_TRUE(propose_objectness(Image(), {}, m).empty());
}

TEST(Objectness, TrainedScorerRejectsSpecks) {
  SyntheticConfig cfg;
  cfg.scene_count = 24;
  cfg.max_specks = 3;
  const auto scenes = generate_synthetic_dataset(cfg, 17);
  const std::vector<Scene> train(scenes.begin(), scenes.begin() + 16), held(scenes.begin() + 16, scenes.end());
  ObjectnessModel model;
  const double loss = train_objectness(model, train);
  EXPECT_LT(loss, 0.3);
  std::size_t gold = 0, found = 0, false_pos = 0;
  for (const auto& s : held) {
    const auto props = propose_objectness(*s.image, s.boxes, model);
    for (const auto& o : s.objects) {
      ++gold;
      for (const auto& p : props) {
        if (iou(p.bbox, o.bbox) >= 0.5) {
          ++found;
          break;
        }
      }
    }
    for (const auto& p : props) {
      double best = 0;
      for (const auto& o : s.objects) best = std::max(best, iou(p.bbox, o.bbox));
      false_pos += best < 0.5;
    }
  }
  EXPECT_GE(static_cast<double>(found) / gold, 0.95);
  EXPECT_LE(false_pos, 2u);
}
