#include <gtest/gtest.h>

#include <set>

#include "clarify/corpus/synthetic.hpp"
#include "clarify/evaluation.hpp"
#include "support/oracles.hpp"

using namespace clarify;

namespace {

BoundingBox box(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

Proposal scored(const BoundingBox& b, double s) {
  Proposal p;
  p.bbox = b;
  p.objectness = s;
  return p;
}

// Scores 1 for the instruction's own target, 0 elsewhere; the gold box logit is 3.
struct OracleScorer {
  const std::vector<Scene>& scenes;

  TurnScores operator()(std::size_t si, const std::string& text) const {
    const Scene& s = scenes[si];
    const ObjectInstance* target = nullptr;
    const InstructionAnnotation* ann = nullptr;
    for (const auto& o : s.objects)
      for (const auto& i : o.instructions)
        if (i.text == text && !target) target = &o, ann = &i;
    TurnScores t;
    t.utterance = text;
    for (const auto& o : s.objects) {
      t.object_ids.push_back(o.object_id);
      t.object_scores.push_back(&o == target ? 1.0 : 0.0);
    }
    t.box_logits[static_cast<std::size_t>(ann->destination_box_id)] = 3.0;
    t.box_probs = softmax_array(t.box_logits);
    return t;
  }
};

std::vector<InstanceOutcome> random_outcomes(Rng& rng, std::size_t n) {
  std::vector<InstanceOutcome> out(n);
  for (auto& o : out) {
    o.object_ambiguous = rng.bernoulli(0.3);
    o.box_ambiguous = rng.bernoulli(0.1);
    o.correct_before = rng.bernoulli(0.7);
    o.correct_after = rng.bernoulli(0.8);
    o.gold_in_candidates = rng.bernoulli(0.9);
    o.clarifications = rng.uniform_index(3);
  }
  return out;
}

}  // namespace

TEST(TopkAccuracy, Examples) {
  const std::vector<std::vector<std::string>> first{{"a", "b"}, {"c", "d"}};
  for (std::size_t k : {1u, 2u, 5u}) EXPECT_EQ(topk_accuracy(first, {"a", "c"}, k), 1.0);
  const std::vector<std::vector<std::string>> second{{"x", "g", "y"}};
  EXPECT_EQ(topk_accuracy(second, {"g"}, 1), 0.0);
  EXPECT_EQ(topk_accuracy(second, {"g"}, 2), 1.0);
  EXPECT_THROW(topk_accuracy(second, {"g", "h"}, 1), InputError);
  EXPECT_THROW(topk_accuracy(second, {"g"}, 0), ConfigError);
}

TEST(AveragePrecision, Examples) {
  const BoundingBox gold = box(0, 0, 10, 10);
  EXPECT_DOUBLE_EQ(average_precision({{scored(gold, 0.9)}}, {{gold}}), 1.0);
  // IoU 0.7 then IoU 0.3 against a single gold box.
  const BoundingBox hit = box(0, 0, 10, 7), miss = box(0, 0, 3, 10);
  ASSERT_NEAR(iou(hit, gold), 0.7, 1e-12);
  ASSERT_NEAR(iou(miss, gold), 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(average_precision({{scored(miss, 0.8), scored(hit, 0.9)}}, {{gold}}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({{scored(miss, 0.9), scored(hit, 0.8)}}, {{gold}}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({{}}, {{gold}}), 0.0);
  EXPECT_THROW(average_precision({{scored(gold, 1)}}, {{}}), InputError);
  EXPECT_THROW(average_precision({{}}, {{gold}, {gold}}), InputError);
}

TEST(AveragePrecision, MatchesPrCurveOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BoundingBox> gold;
    std::vector<Proposal> props;
    const std::size_t g = 1 + rng.uniform_index(3), p = rng.uniform_index(6);
    for (std::size_t i = 0; i < g; ++i) gold.push_back(box(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(4, 12), rng.uniform(4, 12)));
    for (std::size_t i = 0; i < p && props.size() < 5; ++i) {
      const BoundingBox& near = gold[rng.uniform_index(g)];
      const double dx = rng.uniform(-4, 4), dy = rng.uniform(-4, 4);
      props.push_back(scored(box(near.x_min + dx, near.y_min + dy, near.width() * rng.uniform(0.6, 1.4),
                                 near.height() * rng.uniform(0.6, 1.4)),
                             rng.uniform()));
    }
    std::vector<oracle::Rect> pr, gr;
    std::vector<double> scores;
    for (const auto& q : props) {
      pr.push_back({q.bbox.x_min, q.bbox.y_min, q.bbox.x_max, q.bbox.y_max});
      scores.push_back(q.objectness);
    }
    for (const auto& b : gold) gr.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    const auto matches = oracle::greedy_matches(pr, scores, gr);
    EXPECT_NEAR(average_precision({props}, {gold}), oracle::average_precision(matches, g), 1e-9);
  }
}

TEST(LeastOverlapClarifier, Examples) {
  const InstructionAnnotation original{"move the red cup"};
  const InstructionAnnotation a{"the red mug please"}, b{"grab it from the left"}, c{"pick up this object"};
  EXPECT_EQ(word_overlap(original.text, a.text), 2u);
  EXPECT_EQ(word_overlap(original.text, b.text), 1u);
  EXPECT_EQ(least_overlap_clarifier(original, {&a, &b}).text, b.text);
  EXPECT_EQ(least_overlap_clarifier(original, {&a}).text, a.text);
  EXPECT_EQ(least_overlap_clarifier(original, {&a, &b, &c}).text, c.text);
  const InstructionAnnotation longer{"blue one over there now"}, shorter{"blue thing"};
  EXPECT_EQ(least_overlap_clarifier(original, {&longer, &shorter}).text, shorter.text);
  EXPECT_THROW(least_overlap_clarifier(original, {}), InputError);
}

TEST(SimulatedClarification, PerfectScorer) {
  SyntheticConfig cfg;
  cfg.scene_count = 5;
  const auto scenes = generate_synthetic_dataset(cfg, 3);
  for (const auto& s : scenes) {
    std::set<std::string> texts;
    for (const auto& o : s.objects)
      for (const auto& i : o.instructions) ASSERT_TRUE(texts.insert(i.text).second) << i.text;
  }
  const auto r = simulate_clarification(scenes, OracleScorer{scenes}, SimulationConfig{}).report;
  EXPECT_GT(r.instances, 0u);
  EXPECT_EQ(r.ambiguous_fraction, 0.0);
  EXPECT_EQ(r.accuracy_without_clarification, 1.0);
  EXPECT_EQ(r.accuracy_with_clarification, 1.0);
  EXPECT_EQ(r.destination_accuracy, 1.0);
  for (const auto& [k, v] : r.topk_accuracy) EXPECT_EQ(v, 1.0) << k;

  // A margin above the lead flags everything yet changes no decision.
  const auto wide = simulate_clarification(scenes, OracleScorer{scenes}, SimulationConfig{2.5, 0.1, 2, true}).report;
  EXPECT_EQ(wide.ambiguous_fraction, 1.0);
  EXPECT_EQ(wide.candidate_contains_gold_rate, 1.0);
  EXPECT_EQ(wide.accuracy_with_clarification, 1.0);
  EXPECT_EQ(wide.avg_feedback_count, 2.0);
}

TEST(SimulatedClarification, BudgetAndReportBookkeeping) {
  SyntheticConfig cfg;
  cfg.scene_count = 4;
  cfg.ambiguity_rate = 0.5;
  const auto scenes = generate_synthetic_dataset(cfg, 4);
  EncoderConfig enc;
  enc.embedding_dim = enc.hidden_dim = enc.joint_dim = enc.visual_dim = enc.mlp_hidden = enc.destination_hidden = 8;
  enc.patch_side = 4;
  std::vector<std::string> texts;
  for (const auto& s : scenes)
    for (const auto& o : s.objects)
      for (const auto& i : o.instructions) texts.push_back(i.text);
  const GroundingModel model(enc, build_vocabulary(texts), 2);
  for (std::size_t budget : {1u, 2u}) {
    const auto res = run_simulated_clarification(scenes, model, {0.3, 0.3, budget, true});
    for (const auto& o : res.outcomes) {
      EXPECT_LE(o.clarifications, budget);
      if (!o.flagged()) EXPECT_EQ(o.correct_after, o.correct_before);
    }
    EXPECT_NEAR(breakdown_residual(res.report), 0.0, 1e-12);
    EXPECT_LE(res.report.topk_accuracy.at(1), res.report.topk_accuracy.at(2));
    EXPECT_LE(res.report.topk_accuracy.at(3), res.report.topk_accuracy.at(5));
    EXPECT_EQ(res.report.topk_accuracy.at(1), res.report.accuracy_without_clarification);
  }
  const auto off = run_simulated_clarification(scenes, model, {0.3, 0.3, 2, false}).report;
  EXPECT_EQ(off.accuracy_with_clarification, off.accuracy_without_clarification);
  EXPECT_THROW(run_simulated_clarification(scenes, model, {-1, 0.1, 2, true}), ConfigError);
}

TEST(AccuracyBreakdown, ReferenceNumbersSatisfyIdentity) {
  EXPECT_NEAR(0.21 * 0.636 + 0.79 * 0.949, 0.880, 0.01);
}

TEST(AccuracyBreakdown, IdentityHoldsOnRandomReports) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = summarize(random_outcomes(rng, 1 + rng.uniform_index(300)), {});
    EXPECT_NEAR(breakdown_residual(r), 0.0, 1e-12);
    for (double v : {r.ambiguous_fraction, r.accuracy_unambiguous, r.accuracy_ambiguous_top1,
                     r.accuracy_with_clarification, r.candidate_contains_gold_rate}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(DetectorQuality, Bounds) {
  std::vector<InstanceOutcome> outs(10);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    outs[i].generator_ambiguous = i < 3;
    outs[i].object_ambiguous = i < 3;
  }
  auto q = ambiguity_detector_quality(outs);
  EXPECT_EQ(*q.precision, 1.0);
  EXPECT_EQ(*q.recall, 1.0);
  for (auto& o : outs) o.object_ambiguous = true;
  q = ambiguity_detector_quality(outs);
  EXPECT_EQ(*q.recall, 1.0);
  EXPECT_DOUBLE_EQ(*q.precision, 0.3);
  for (auto& o : outs) o.object_ambiguous = false;
  q = ambiguity_detector_quality(outs);
  EXPECT_EQ(*q.recall, 0.0);
  EXPECT_FALSE(q.precision);
  outs[0].generator_ambiguous.reset();
  EXPECT_THROW(ambiguity_detector_quality(outs), InputError);
}

TEST(DetectorQuality, MarginExtremesOnSyntheticData) {
  SyntheticConfig cfg;
  cfg.scene_count = 4;
  cfg.ambiguity_rate = 0.3;
  const auto scenes = generate_synthetic_dataset(cfg, 9);
  Rng rng(1);
  // Continuous random scores: no exact ties.
  auto noisy = [&](std::size_t si, const std::string& text) {
    TurnScores t = OracleScorer{scenes}(si, text);
    for (double& s : t.object_scores) s = rng.uniform(-1, 1);
    return t;
  };
  const auto all = simulate_clarification(scenes, noisy, {std::numeric_limits<double>::infinity(), 0.1, 2, false});
  const auto q_all = ambiguity_detector_quality(all.outcomes, true);
  std::size_t truly = 0;
  for (const auto& o : all.outcomes) truly += *o.generator_ambiguous;
  EXPECT_EQ(*q_all.recall, 1.0);
  EXPECT_DOUBLE_EQ(*q_all.precision, static_cast<double>(truly) / all.outcomes.size());
  const auto none = simulate_clarification(scenes, noisy, {0.0, 0.1, 2, false});
  EXPECT_EQ(*ambiguity_detector_quality(none.outcomes, true).recall, 0.0);
}

TEST(EmitReport, FormatsAgree) {
  Rng rng(3);
  EvalReport r = summarize(random_outcomes(rng, 57), {{1, 40}, {2, 50}, {3, 55}, {5, 57}});
  r.detection_ap = 0.75;
  const std::string json = emit_report(r, ReportFormat::Json);
  const auto back = eval_report_from_json(nlohmann::ordered_json::parse(json));
  EXPECT_EQ(back, r);
  EXPECT_EQ(emit_report(back, ReportFormat::Json), json);

  const std::string table = emit_report(r, ReportFormat::Table);
  EXPECT_NE(table.find("without clarification"), std::string::npos);
  EXPECT_NE(table.find("with clarification"), std::string::npos);

  auto columns = [](const std::string& csv) {
    std::vector<std::size_t> n;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) n.push_back(1 + std::count(line.begin(), line.end(), ','));
    return n;
  };
  EvalReport sparse;
  const auto a = columns(emit_report(r, ReportFormat::Csv)), b = columns(emit_report(sparse, ReportFormat::Csv));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], a[1]);
  EXPECT_EQ(a, b);
  EXPECT_THROW(parse_report_format("xml"), ConfigError);
}
