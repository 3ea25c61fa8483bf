#include <gtest/gtest.h>

#include "clarify/corpus/synthetic.hpp"
#include "clarify/encoders.hpp"
#include "support/finite_difference.hpp"

using namespace clarify;
using clarify::testing::check_gradients;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.embedding_dim = c.hidden_dim = c.joint_dim = 8;
  c.visual_dim = 6;
  c.mlp_hidden = 7;
  c.patch_side = 3;
  c.destination_hidden = 5;
  c.activation = Activation::Tanh;
  return c;
}

double norm(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(TextTower, DeterministicAndLengthAgnostic) {
  Rng rng(1);
  const TextTower tower("text", 12, 8, 8, 1, 8, 8, rng);
  Tape t;
  const Tensor a = t.value(tower.forward(t, {3, 1, 4}, {}));
  const Tensor b = t.value(tower.forward(t, {3, 1, 4}, {}));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.shape(), Shape{8});
  EXPECT_EQ(t.value(tower.forward(t, {5}, {})).shape(), Shape{8});
}

TEST(TextTower, EmptyInputIsDegenerate) {
  Rng rng(1);
  const TextTower tower("text", 5, 4, 4, 1, 4, 4, rng);
  Tape t;
  bool degenerate = false;
  const Tensor z = t.value(tower.forward(t, {}, {}, &degenerate));
  EXPECT_TRUE(degenerate);
  EXPECT_EQ(norm(z), 0.0);
  tower.forward(t, {1}, {}, &degenerate);
  EXPECT_FALSE(degenerate);
}

TEST(TextTower, RejectsOutOfVocabularyIndex) {
  Rng rng(1);
  const TextTower tower("text", 5, 4, 4, 1, 4, 4, rng);
  Tape t;
  EXPECT_THROW(tower.forward(t, {1, 5}, {}), InputError);
}

TEST(TextTower, AppendingATokenChangesTheOutput) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(100 + trial);
    const TextTower tower("text", 20, 6, 6, 2, 6, 6, rng);
    std::vector<std::size_t> tokens;
    for (std::size_t k = 0; k < 1 + rng.uniform_index(6); ++k) tokens.push_back(rng.uniform_index(20));
    Tape t;
    const Tensor before = t.value(tower.forward(t, tokens, {}));
    tokens.push_back(rng.uniform_index(20));
    const Tensor after = t.value(tower.forward(t, tokens, {}));
    double diff = 0;
    for (std::size_t i = 0; i < before.size(); ++i) diff += (before[i] - after[i]) * (before[i] - after[i]);
    EXPECT_GT(std::sqrt(diff), 1e-9);
  }
}

TEST(TextTower, OutputNormGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    TextTower tower("text", 10, 8, 8, 1, 8, 8, rng, Activation::Tanh);
    ParameterSet ps;
    tower.collect(ps);
    const auto result = check_gradients(ps, [&](Tape& t) {
      const Var z = tower.forward(t, {2, 7, 2, 9}, {});
      return dot(z, z);
    });
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
    EXPECT_EQ(result.entries, ps.scalar_count());
  }
}

TEST(TextTower, ReluGradientMatchesFiniteDifferences) {
  std::size_t kinks = 0, entries = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    TextTower tower("text", 10, 8, 8, 1, 8, 8, rng);
    ParameterSet ps;
    tower.collect(ps);
    const auto result = check_gradients(
        ps,
        [&](Tape& t) {
          const Var z = tower.forward(t, {2, 7, 2, 9}, {});
          return dot(z, z);
        },
        1e-5, 1e-3);
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
    kinks += result.kinks;
    entries += result.entries;
  }
  EXPECT_LT(static_cast<double>(kinks) / entries, 0.02);
}

TEST(TextTower, StackedLayersWithDropoutMatchFiniteDifferences) {
  Rng rng(9);
  TextTower tower("text", 6, 4, 5, 2, 6, 3, rng, Activation::Tanh);
  ParameterSet ps;
  tower.collect(ps);
  const auto result = check_gradients(ps, [&](Tape& t) {
    Rng mask(77);
    const ForwardContext ctx{Mode::Train, &mask, 0.3};
    const Var z = tower.forward(t, {1, 0, 5}, ctx);
    return sum(mul(z, z));
  });
  EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
}

TEST(Geometry, GeometricFeatureExamples) {
  const auto full = geometric_features({0, 0, 64, 48}, 64, 48);
  EXPECT_EQ(std::vector<double>(full.begin(), full.end()), (std::vector<double>{0, 0, 1, 1, 1}));
  const auto g = geometric_features({10, 20, 40, 80}, 100, 100);
  const std::vector<double> expect = {0.1, 0.2, 0.4, 0.8, 0.18};
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(g[k], expect[k], 1e-12);
  const auto a = geometric_features({10, 10, 30, 40}, 100, 100), b = geometric_features({50, 30, 70, 60}, 100, 100);
  EXPECT_DOUBLE_EQ(a[2] - a[0], b[2] - b[0]);
  EXPECT_DOUBLE_EQ(a[3] - a[1], b[3] - b[1]);
  EXPECT_DOUBLE_EQ(a[4], b[4]);
}

TEST(Geometry, GeometricFeaturesStayInUnitRange) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double W = rng.uniform(10, 500), H = rng.uniform(10, 500);
    const double x0 = rng.uniform(0, W - 1), y0 = rng.uniform(0, H - 1);
    const BoundingBox b{x0, y0, rng.uniform(x0 + 0.01, W), rng.uniform(y0 + 0.01, H)};
    for (double v : geometric_features(b, W, H)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Geometry, RelationalFeatureExamples) {
  const BoundingBox a{0, 0, 10, 10}, b{10, 10, 20, 20};
  for (double v : relational_features(a, {a}, 100, 100)) EXPECT_EQ(v, 0.0);
  const auto r = relational_features(a, {a, b}, 100, 100);
  const std::vector<double> d = {-0.1, -0.1, 0, 0, 0};
  for (std::size_t k = 0; k < 15; ++k) EXPECT_NEAR(r[k], d[k % 5], 1e-12) << k;
  EXPECT_THROW(relational_features({1, 1, 2, 2}, {a, b}, 100, 100), InputError);
}

TEST(Geometry, RelationalPoolingProperties) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<BoundingBox> boxes;
    for (std::size_t k = 0; k < 2 + rng.uniform_index(8); ++k) {
      const double x = rng.uniform(0, 150), y = rng.uniform(0, 150);
      boxes.push_back({x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)});
    }
    const auto r = relational_features(boxes[0], boxes, 200, 200);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_LE(r[10 + k], r[k] + 1e-15);
      EXPECT_LE(r[k], r[5 + k] + 1e-15);
    }
    auto shuffled = boxes;
    rng.shuffle(shuffled);
    const auto p = relational_features(boxes[0], shuffled, 200, 200);
    for (std::size_t k = 0; k < 15; ++k) EXPECT_NEAR(p[k], r[k], 1e-15);
    const double dx = rng.uniform(-20, 20), dy = rng.uniform(-20, 20);
    auto moved = boxes;
    for (auto& b : moved) b = {b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
    const auto m = relational_features(moved[0], moved, 200, 200);
    for (std::size_t k = 0; k < 15; ++k) EXPECT_NEAR(m[k], r[k], 1e-12);
  }
}

TEST(ObjectTower, CropAndFeaturePathsShareOutputShape) {
  const EncoderConfig cfg = small_config();
  Rng rng(2);
  const ObjectTower tower("object", cfg, rng);
  SyntheticConfig sc;
  const Scene s = synthetic::generate_scene(sc, 1, 0);
  std::vector<BoundingBox> ctx;
  for (const auto& o : s.objects) ctx.push_back(o.bbox);
  const ObjectInput crop = prepare_object(s, s.objects[0].bbox, std::nullopt, ctx, cfg.patch_side);
  EXPECT_EQ(crop.visual.size(), cfg.patch_inputs());
  const ObjectInput feat = prepare_object(s, s.objects[0].bbox, std::vector<double>(cfg.visual_dim, 0.5), ctx, 3);
  Tape t;
  const Tensor a = t.value(tower.forward(t, crop, {}));
  const Tensor b = t.value(tower.forward(t, feat, {}));
  EXPECT_EQ(a.shape(), Shape{cfg.joint_dim});
  EXPECT_EQ(b.shape(), a.shape());
  EXPECT_EQ(t.value(tower.forward(t, crop, {})), a);

  ObjectInput wrong = feat;
  wrong.visual.push_back(1.0);
  EXPECT_THROW(tower.forward(t, wrong, {}), DimensionError);
  Scene bare = s;
  bare.image.reset();
  EXPECT_THROW(prepare_object(bare, s.objects[0].bbox, std::nullopt, ctx, 3), InputError);
}

TEST(ObjectTower, GradientsMatchFiniteDifferences) {
  const EncoderConfig cfg = small_config();
  SyntheticConfig sc;
  const Scene s = synthetic::generate_scene(sc, 2, 0);
  std::vector<BoundingBox> ctx;
  for (const auto& o : s.objects) ctx.push_back(o.bbox);
  const ObjectInput in = prepare_object(s, s.objects[1].bbox, std::nullopt, ctx, cfg.patch_side);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ObjectTower tower("object", cfg, rng);
    ParameterSet ps;
    tower.collect(ps);
    const auto result = check_gradients(ps, [&](Tape& t) {
      Rng mask(seed + 5), weights(3);
      const Var z = tower.forward(t, in, {Mode::Train, &mask, 0.2});
      return dot(z, t.constant(Tensor::uniform({cfg.joint_dim}, -1, 1, weights)));
    });
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
  }
}

TEST(ObjectTower, DropoutOnlyInTrainMode) {
  const EncoderConfig cfg = small_config();
  Rng rng(2);
  const ObjectTower tower("object", cfg, rng);
  ObjectInput in;
  in.visual.assign(cfg.patch_inputs(), 0.4);
  Tape t;
  Rng r1(1), r2(2);
  const Tensor inf = t.value(tower.forward(t, in, {Mode::Infer, &r1, 0.5}));
  EXPECT_EQ(t.value(tower.forward(t, in, {Mode::Infer, &r2, 0.5})), inf);
  EXPECT_NE(t.value(tower.forward(t, in, {Mode::Train, &r1, 0.5})), inf);
}
