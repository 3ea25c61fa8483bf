#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/text.hpp"
#include "clarify/errors.hpp"
#include "clarify/grounding.hpp"
#include "clarify/proposals.hpp"

namespace clarify {

// ---------------------------------------------------------------------------
// Ranking and detection metrics.

inline double topk_accuracy(const std::vector<std::vector<std::string>>& ranked, const std::vector<std::string>& golds,
                            std::size_t k) {
  if (ranked.size() != golds.size()) throw InputError("predictions and golds differ in length");
  if (k == 0) throw ConfigError("k must be at least 1");
  if (ranked.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto end = ranked[i].begin() + static_cast<long>(std::min(k, ranked[i].size()));
    hits += std::find(ranked[i].begin(), end, golds[i]) != end;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

// Proposals from every scene are ranked together by objectness (ties keep
// scene order, then proposal order). Each is matched to the unmatched gold box
// of its scene with the highest IoU at or above the threshold.
inline double average_precision(const std::vector<std::vector<Proposal>>& proposals_per_scene,
                                const std::vector<std::vector<BoundingBox>>& gold_per_scene,
                                double iou_threshold = 0.5) {
  if (proposals_per_scene.size() != gold_per_scene.size()) throw InputError("proposal and gold scene counts differ");
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("IoU threshold must lie in (0, 1]");
  std::size_t gold_total = 0;
  for (const auto& g : gold_per_scene) gold_total += g.size();
  if (gold_total == 0) throw InputError("average precision is undefined without gold boxes");

  struct Entry {
    double score;
    std::size_t scene, index;
  };
  std::vector<Entry> order;
  for (std::size_t s = 0; s < proposals_per_scene.size(); ++s) {
    for (std::size_t i = 0; i < proposals_per_scene[s].size(); ++i) order.push_back({proposals_per_scene[s][i].objectness, s, i});
  }
  std::stable_sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> used(gold_per_scene.size());
  for (std::size_t s = 0; s < used.size(); ++s) used[s].assign(gold_per_scene[s].size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& e = order[k];
    const BoundingBox& box = proposals_per_scene[e.scene][e.index].bbox;
    std::optional<std::size_t> best;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gold_per_scene[e.scene].size(); ++g) {
      if (used[e.scene][g]) continue;
      const double v = iou(box, gold_per_scene[e.scene][g]);
      if (v >= best_iou && (!best || v > best_iou)) {
        best = g;
        best_iou = v;
      }
    }
    if (best) {
      used[e.scene][*best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gold_total));
  }
  // All-point interpolation: precision envelope from the right.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev) * precision[k];
    prev = recall[k];
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Clarifier selection.

inline std::size_t word_overlap(const std::string& a, const std::string& b) {
  const auto ta = tokenize(a), tb = tokenize(b);
  const std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  std::size_t n = 0;
  for (const auto& w : sa) n += sb.count(w);
  return n;
}

// Fewest shared token types with the original; ties go to the candidate with
// fewer tokens, then the lexicographically smaller text.
inline const InstructionAnnotation& least_overlap_clarifier(const InstructionAnnotation& original,
                                                             const std::vector<const InstructionAnnotation*>& pool) {
  if (pool.empty()) throw InputError("no clarifying instruction available");
  const InstructionAnnotation* best = nullptr;
  std::size_t best_overlap = 0, best_len = 0;
  for (const auto* c : pool) {
    const std::size_t ov = word_overlap(original.text, c->text), len = tokenize(c->text).size();
    if (!best || ov < best_overlap || (ov == best_overlap && (len < best_len || (len == best_len && c->text < best->text)))) {
      best = c;
      best_overlap = ov;
      best_len = len;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Simulated clarification experiment.

inline const std::vector<std::size_t> kReportedK = {1, 2, 3, 5};

struct EvalReport {
  std::size_t instances = 0;
  std::map<std::size_t, double> topk_accuracy;
  double destination_accuracy = 0.0;
  std::optional<double> detection_ap;
  double ambiguous_fraction = 0.0;         // object or box verdict ambiguous
  double object_ambiguous_fraction = 0.0;  // object verdict alone
  double box_ambiguous_fraction = 0.0;     // box verdict alone
  double accuracy_unambiguous = 0.0;
  double accuracy_ambiguous_top1 = 0.0;
  double accuracy_without_clarification = 0.0;
  double accuracy_with_clarification = 0.0;
  double candidate_contains_gold_rate = 0.0;
  double avg_feedback_count = 0.0;
  std::size_t clarifier_unavailable = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct InstanceOutcome {
  std::string scene_id;
  std::string gold_object_id;
  std::string text;
  bool object_ambiguous = false;
  bool box_ambiguous = false;
  bool gold_in_candidates = false;
  bool correct_before = false;
  bool correct_after = false;
  bool destination_correct = false;
  std::size_t clarifications = 0;
  bool clarifier_unavailable = false;
  std::optional<bool> generator_ambiguous;

  bool flagged() const { return object_ambiguous || box_ambiguous; }
};

struct SimulationConfig {
  double m_obj = 0.1;
  double m_box = 0.1;
  std::size_t max_clarifications = 2;
  bool simulate_clarification = true;
};

struct SimulationResult {
  EvalReport report;
  std::vector<InstanceOutcome> outcomes;
};

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline EvalReport summarize(const std::vector<InstanceOutcome>& outcomes,
                            const std::map<std::size_t, std::size_t>& topk_hits) {
  EvalReport r;
  r.instances = outcomes.size();
  std::size_t amb = 0, obj_amb = 0, box_amb = 0, unamb_correct = 0, amb_correct = 0, after_correct = 0, gold_in = 0,
              dest = 0, feedback = 0, unavailable = 0;
  for (const auto& o : outcomes) {
    obj_amb += o.object_ambiguous;
    box_amb += o.box_ambiguous;
    dest += o.destination_correct;
    after_correct += o.correct_after;
    if (o.flagged()) {
      ++amb;
      amb_correct += o.correct_before;
      gold_in += o.gold_in_candidates;
      feedback += o.clarifications;
      unavailable += o.clarifier_unavailable;
    } else {
      unamb_correct += o.correct_before;
    }
  }
  const std::size_t n = outcomes.size();
  for (const auto& [k, hits] : topk_hits) r.topk_accuracy[k] = ratio(hits, n);
  r.destination_accuracy = ratio(dest, n);
  r.ambiguous_fraction = ratio(amb, n);
  r.object_ambiguous_fraction = ratio(obj_amb, n);
  r.box_ambiguous_fraction = ratio(box_amb, n);
  r.accuracy_unambiguous = ratio(unamb_correct, n - amb);
  r.accuracy_ambiguous_top1 = ratio(amb_correct, amb);
  r.accuracy_without_clarification = ratio(unamb_correct + amb_correct, n);
  r.accuracy_with_clarification = ratio(after_correct, n);
  r.candidate_contains_gold_rate = ratio(gold_in, amb);
  r.avg_feedback_count = ratio(feedback, amb);
  r.clarifier_unavailable = unavailable;
  return r;
}

// score(scene_index, text) returns the turn scores over the scene's annotated
// objects, so every gold target is a candidate. An ambiguous instance whose
// target has no further annotation keeps its unclarified prediction and is
// counted in clarifier_unavailable.
template <typename Score>
SimulationResult simulate_clarification(const std::vector<Scene>& scenes, Score&& score, const SimulationConfig& cfg) {
  if (!(cfg.m_obj >= 0.0) || !(cfg.m_box >= 0.0)) throw ConfigError("margins must be non-negative");
  SimulationResult result;
  std::map<std::size_t, std::size_t> topk_hits;
  for (std::size_t k : kReportedK) topk_hits[k] = 0;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const Scene& scene = scenes[si];
    for (const auto& object : scene.objects) {
      for (const auto& ins : object.instructions) {
        if (tokenize(ins.text).empty()) continue;
        InstanceOutcome out;
        out.scene_id = scene.scene_id;
        out.gold_object_id = object.object_id;
        out.text = ins.text;
        if (ins.referents) out.generator_ambiguous = ins.referents->size() >= 2;
        std::vector<TurnScores> turns{score(si, ins.text)};
        const auto ranked = select_topk(turns[0], turns[0].object_ids.size());
        const std::size_t rank = std::find(ranked.begin(), ranked.end(), object.object_id) - ranked.begin();
        for (auto& [k, hits] : topk_hits) hits += rank < k;
        const auto& bp = turns[0].box_probs;
        out.destination_correct = std::max_element(bp.begin(), bp.end()) - bp.begin() == ins.destination_box_id;
        out.correct_before = rank == 0;
        const auto ov = object_verdict(turns[0], cfg.m_obj);
        out.object_ambiguous = !ov.confident;
        out.box_ambiguous = !box_verdict(turns[0], cfg.m_box).confident;
        for (std::size_t i : ov.candidates) out.gold_in_candidates |= turns[0].object_ids[i] == object.object_id;
        out.correct_after = out.correct_before;

        if (out.flagged() && cfg.simulate_clarification) {
          std::vector<const InstructionAnnotation*> pool;
          for (const auto& other : object.instructions) {
            if (&other != &ins && !tokenize(other.text).empty()) pool.push_back(&other);
          }
          out.clarifier_unavailable = pool.empty();
          bool resolved = false;
          while (!resolved && !pool.empty() && out.clarifications < cfg.max_clarifications) {
            const auto& pick = least_overlap_clarifier(ins, pool);
            pool.erase(std::find(pool.begin(), pool.end(), &pick));
            turns.push_back(score(si, pick.text));
            ++out.clarifications;
            const auto sum = aggregate_turns(turns);
            out.correct_after = select_topk(sum, 1).front() == object.object_id;
            resolved = object_verdict(sum, cfg.m_obj).confident && box_verdict(sum, cfg.m_box).confident;
          }
        }
        result.outcomes.push_back(std::move(out));
      }
    }
  }
  result.report = summarize(result.outcomes, topk_hits);
  return result;
}

// Candidate encodings are computed once per scene.
inline SimulationResult run_simulated_clarification(const std::vector<Scene>& scenes, const GroundingModel& model,
                                                    const SimulationConfig& cfg = {}) {
  std::vector<std::vector<std::string>> ids(scenes.size());
  std::vector<std::vector<Tensor>> encoded(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].objects.empty()) continue;
    const auto proposals = propose_ground_truth(scenes[i], 0);
    for (const auto& p : proposals) ids[i].push_back(p.id);
    encoded[i] = encode_candidates(model, prepare_objects(scenes[i], proposals, model.config().patch_side));
  }
  return simulate_clarification(
      scenes, [&](std::size_t si, const std::string& text) { return score_encoded(text, model, ids[si], encoded[si]); },
      cfg);
}

inline double detection_average_precision(const std::vector<Scene>& scenes, const ObjectnessModel& model,
                                          double iou_threshold = 0.5) {
  std::vector<std::vector<Proposal>> props;
  std::vector<std::vector<BoundingBox>> gold;
  for (const auto& s : scenes) {
    if (!s.image) throw InputError("scene '" + s.scene_id + "' has no image to propose from");
    props.push_back(propose_objectness(*s.image, s.boxes, model));
    gold.emplace_back();
    for (const auto& o : s.objects) gold.back().push_back(o.bbox);
  }
  return average_precision(props, gold, iou_threshold);
}

// ---------------------------------------------------------------------------
// Ambiguity flag against generator referent sets.

struct DetectorQuality {
  std::size_t true_positive = 0, false_positive = 0, false_negative = 0, true_negative = 0;
  std::optional<double> precision;  // undefined when nothing is flagged
  std::optional<double> recall;     // undefined when nothing is truly ambiguous
};

inline DetectorQuality ambiguity_detector_quality(const std::vector<InstanceOutcome>& outcomes, bool object_only = false) {
  DetectorQuality q;
  for (const auto& o : outcomes) {
    if (!o.generator_ambiguous) throw InputError("instance '" + o.text + "' carries no generator referent labels");
    const bool flagged = object_only ? o.object_ambiguous : o.flagged();
    const bool truth = *o.generator_ambiguous;
    if (flagged && truth) ++q.true_positive;
    else if (flagged) ++q.false_positive;
    else if (truth) ++q.false_negative;
    else ++q.true_negative;
  }
  if (q.true_positive + q.false_positive) q.precision = ratio(q.true_positive, q.true_positive + q.false_positive);
  if (q.true_positive + q.false_negative) q.recall = ratio(q.true_positive, q.true_positive + q.false_negative);
  return q;
}

// ---------------------------------------------------------------------------
// Report emission.

// accuracy_without minus its decomposition over the two buckets.
inline double breakdown_residual(const EvalReport& r) {
  return r.accuracy_without_clarification -
         (r.ambiguous_fraction * r.accuracy_ambiguous_top1 + (1.0 - r.ambiguous_fraction) * r.accuracy_unambiguous);
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["instances"] = r.instances;
  j["ambiguous_fraction"] = r.ambiguous_fraction;
  j["object_ambiguous_fraction"] = r.object_ambiguous_fraction;
  j["box_ambiguous_fraction"] = r.box_ambiguous_fraction;
  j["accuracy_unambiguous"] = r.accuracy_unambiguous;
  j["accuracy_ambiguous_top1"] = r.accuracy_ambiguous_top1;
  j["accuracy_without_clarification"] = r.accuracy_without_clarification;
  j["accuracy_with_clarification"] = r.accuracy_with_clarification;
  j["candidate_contains_gold_rate"] = r.candidate_contains_gold_rate;
  j["avg_feedback_count"] = r.avg_feedback_count;
  j["clarifier_unavailable"] = r.clarifier_unavailable;
  nlohmann::ordered_json topk = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.topk_accuracy) topk[std::to_string(k)] = v;
  j["topk_accuracy"] = topk;
  j["destination_accuracy"] = r.destination_accuracy;
  j["detection_ap"] = r.detection_ap ? nlohmann::ordered_json(*r.detection_ap) : nlohmann::ordered_json(nullptr);
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::ordered_json& j) {
  EvalReport r;
  try {
    r.instances = j.at("instances").get<std::size_t>();
    r.ambiguous_fraction = j.at("ambiguous_fraction").get<double>();
    r.object_ambiguous_fraction = j.at("object_ambiguous_fraction").get<double>();
    r.box_ambiguous_fraction = j.at("box_ambiguous_fraction").get<double>();
    r.accuracy_unambiguous = j.at("accuracy_unambiguous").get<double>();
    r.accuracy_ambiguous_top1 = j.at("accuracy_ambiguous_top1").get<double>();
    r.accuracy_without_clarification = j.at("accuracy_without_clarification").get<double>();
    r.accuracy_with_clarification = j.at("accuracy_with_clarification").get<double>();
    r.candidate_contains_gold_rate = j.at("candidate_contains_gold_rate").get<double>();
    r.avg_feedback_count = j.at("avg_feedback_count").get<double>();
    r.clarifier_unavailable = j.at("clarifier_unavailable").get<std::size_t>();
    for (const auto& [k, v] : j.at("topk_accuracy").items()) r.topk_accuracy[std::stoul(k)] = v.get<double>();
    r.destination_accuracy = j.at("destination_accuracy").get<double>();
    if (!j.at("detection_ap").is_null()) r.detection_ap = j.at("detection_ap").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report: ") + e.what());
  }
  return r;
}

enum class ReportFormat { Json, Csv, Table };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "table") return ReportFormat::Table;
  throw ConfigError("unknown report format '" + s + "' (expected json, csv or table)");
}

namespace detail {

inline std::string format_number(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

// Flattened (column, value) pairs shared by the CSV header and row.
inline std::vector<std::pair<std::string, std::string>> report_columns(const EvalReport& r) {
  std::vector<std::pair<std::string, std::string>> cols;
  const auto j = to_json(r);
  for (const auto& [key, value] : j.items()) {
    if (key == "topk_accuracy") {
      for (std::size_t k : kReportedK) {
        const auto it = r.topk_accuracy.find(k);
        cols.emplace_back("top" + std::to_string(k) + "_accuracy",
                          it == r.topk_accuracy.end() ? "" : format_number(it->second));
      }
    } else if (value.is_null()) {
      cols.emplace_back(key, "");
    } else if (value.is_number_float()) {
      cols.emplace_back(key, format_number(value.get<double>()));
    } else {
      cols.emplace_back(key, value.dump());
    }
  }
  return cols;
}

}  // namespace detail

inline std::string emit_report(const EvalReport& r, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::Json:
      out << to_json(r).dump(2) << '\n';
      break;
    case ReportFormat::Csv: {
      const auto cols = detail::report_columns(r);
      for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i].first;
      out << '\n';
      for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i].second;
      out << '\n';
      break;
    }
    case ReportFormat::Table: {
      auto row = [&](const std::string& label, double v) {
        out << std::left << std::setw(34) << label << std::right << std::fixed << std::setprecision(1) << std::setw(7)
            << 100.0 * v << "%\n";
      };
      out << "Target object selection (top-1), " << r.instances << " instances\n";
      row("unambiguous", r.accuracy_unambiguous);
      row("ambiguous (top-1)", r.accuracy_ambiguous_top1);
      row("without clarification", r.accuracy_without_clarification);
      row("with clarification", r.accuracy_with_clarification);
      out << '\n';
      row("ambiguous fraction", r.ambiguous_fraction);
      row("  object margin", r.object_ambiguous_fraction);
      row("  box margin", r.box_ambiguous_fraction);
      row("gold among candidates", r.candidate_contains_gold_rate);
      out << std::left << std::setw(34) << "avg clarifications (ambiguous)" << std::right << std::setw(8)
          << std::setprecision(2) << r.avg_feedback_count << '\n';
      out << '\n';
      for (const auto& [k, v] : r.topk_accuracy) row("top-" + std::to_string(k) + " accuracy", v);
      row("destination accuracy", r.destination_accuracy);
      if (r.detection_ap) row("detection AP@0.5", *r.detection_ap);
      break;
    }
  }
  return out.str();
}

}  // namespace clarify
