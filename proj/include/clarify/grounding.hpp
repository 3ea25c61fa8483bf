#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "clarify/autodiff.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/text.hpp"
#include "clarify/encoders.hpp"
#include "clarify/errors.hpp"
#include "clarify/proposals.hpp"

namespace clarify {

// All learned state: the two grounding towers, the destination tower and the
// objectness scorer, plus the frozen vocabulary they were built over.
class GroundingModel {
 public:
  GroundingModel() = default;
  GroundingModel(const EncoderConfig& cfg, Vocabulary vocab, std::uint64_t seed) : config_(cfg), vocab_(std::move(vocab)) {
    cfg.validate();
    Rng rng(seed);
    Rng text_rng = rng.fork(), object_rng = rng.fork(), dest_rng = rng.fork();
    text_ = TextTower("text", vocab_.size(), cfg.embedding_dim, cfg.hidden_dim, cfg.lstm_layers, cfg.mlp_hidden,
                      cfg.joint_dim, text_rng, cfg.activation);
    object_ = ObjectTower("object", cfg, object_rng);
    destination_ = TextTower("dest", vocab_.size(), cfg.embedding_dim, cfg.hidden_dim, cfg.lstm_layers,
                             cfg.destination_hidden, kDestinationCount, dest_rng, cfg.activation);
  }

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const TextTower& text() const { return text_; }
  const ObjectTower& object() const { return object_; }
  const TextTower& destination() const { return destination_; }
  const ObjectnessModel& objectness() const { return objectness_; }
  ObjectnessModel& objectness() { return objectness_; }

  ParameterSet grounding_parameters() {
    ParameterSet ps;
    text_.collect(ps);
    object_.collect(ps);
    return ps;
  }

  ParameterSet destination_parameters() {
    ParameterSet ps;
    destination_.collect(ps);
    return ps;
  }

  ParameterSet parameters() {
    ParameterSet ps = grounding_parameters();
    ps.extend(destination_parameters());
    ps.extend(objectness_.parameters());
    return ps;
  }

  std::vector<std::size_t> encode(const std::string& text) const { return encode_text(text, vocab_); }

 private:
  EncoderConfig config_;
  Vocabulary vocab_;
  TextTower text_;
  ObjectTower object_;
  TextTower destination_;
  ObjectnessModel objectness_;
};

// Scores for one utterance over an ordered candidate set.
struct TurnScores {
  std::string utterance;
  std::vector<std::string> object_ids;
  std::vector<double> object_scores;
  std::array<double, kDestinationCount> box_logits{};
  std::array<double, kDestinationCount> box_probs{};

  const double* score_of(const std::string& id) const {
    for (std::size_t i = 0; i < object_ids.size(); ++i) {
      if (object_ids[i] == id) return &object_scores[i];
    }
    return nullptr;
  }
};

inline std::array<double, kDestinationCount> softmax_array(const std::array<double, kDestinationCount>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::array<double, kDestinationCount> p{};
  double total = 0;
  for (std::size_t k = 0; k < p.size(); ++k) total += p[k] = std::exp(z[k] - mx);
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<std::size_t> require_tokens(const GroundingModel& model, const std::string& text) {
  if (tokenize(text).empty()) throw InputError("empty instruction");
  return model.encode(text);
}

inline std::array<double, kDestinationCount> destination_logits(const GroundingModel& model,
                                                                const std::vector<std::size_t>& tokens) {
  Tape t;
  const Tensor& z = t.value(model.destination().forward(t, tokens, {}));
  std::array<double, kDestinationCount> out{};
  std::copy(z.data().begin(), z.data().end(), out.begin());
  return out;
}

inline std::array<double, kDestinationCount> classify_destination(const std::string& text, const GroundingModel& model) {
  return softmax_array(destination_logits(model, require_tokens(model, text)));
}

// Joint-space encodings of prepared candidates; they do not depend on the
// utterance, so sessions and evaluation compute them once per scene.
inline std::vector<Tensor> encode_candidates(const GroundingModel& model, const std::vector<ObjectInput>& inputs) {
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tape t;
    out.push_back(t.value(model.object().forward(t, in, {})));
  }
  return out;
}

inline Tensor encode_utterance(const GroundingModel& model, const std::vector<std::size_t>& tokens) {
  Tape t;
  return t.value(model.text().forward(t, tokens, {}));
}

inline TurnScores score_encoded(const std::string& text, const GroundingModel& model,
                                const std::vector<std::string>& ids, const std::vector<Tensor>& encoded) {
  if (ids.size() != encoded.size()) throw DimensionError("candidate ids and encodings differ in length");
  if (ids.empty()) throw InputError("no candidate objects to score");
  const auto tokens = require_tokens(model, text);
  TurnScores ts;
  ts.utterance = text;
  ts.object_ids = ids;
  const Tensor q = encode_utterance(model, tokens);
  for (const auto& o : encoded) ts.object_scores.push_back(cosine_similarity(q.data(), o.data()).value);
  ts.box_logits = destination_logits(model, tokens);
  ts.box_probs = softmax_array(ts.box_logits);
  return ts;
}

inline TurnScores score_prepared(const std::string& text, const GroundingModel& model,
                                 const std::vector<std::string>& ids, const std::vector<ObjectInput>& inputs) {
  if (ids.size() != inputs.size()) throw DimensionError("candidate ids and inputs differ in length");
  if (ids.empty()) throw InputError("no candidate objects to score");
  require_tokens(model, text);
  return score_encoded(text, model, ids, encode_candidates(model, inputs));
}

inline TurnScores score_objects(const std::string& text, const Scene& scene, const GroundingModel& model,
                                const std::vector<Proposal>& proposals) {
  if (proposals.empty()) throw InputError("no candidate objects to score");
  std::vector<std::string> ids;
  for (const auto& p : proposals) ids.push_back(p.id);
  return score_prepared(text, model, ids, prepare_objects(scene, proposals, model.config().patch_side));
}

// Indices ordered by score descending, ties by key ascending.
template <typename Less>
std::vector<std::size_t> rank_indices(const std::vector<double>& scores, Less key_less) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return key_less(a, b);
  });
  return order;
}

inline std::vector<std::string> select_topk(const TurnScores& ts, std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
  const auto order =
      rank_indices(ts.object_scores, [&](std::size_t a, std::size_t b) { return ts.object_ids[a] < ts.object_ids[b]; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.push_back(ts.object_ids[order[i]]);
  return out;
}

struct AmbiguityVerdict {
  std::vector<std::size_t> candidates;  // indices, best first
  bool confident = false;

  std::size_t best() const { return candidates.front(); }
};

// Candidates are every entry within the margin of the best, plus every entry
// tied with it: i is kept when s_max - s_i < m or s_i == s_max.
template <typename Less>
AmbiguityVerdict detect_ambiguity(const std::vector<double>& scores, double margin, Less key_less) {
  if (scores.empty()) throw InputError("cannot judge ambiguity over no scores");
  if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
  const double top = *std::max_element(scores.begin(), scores.end());
  AmbiguityVerdict v;
  for (std::size_t i : rank_indices(scores, key_less)) {
    if (scores[i] == top || top - scores[i] < margin) v.candidates.push_back(i);
  }
  v.confident = v.candidates.size() == 1;
  return v;
}

inline AmbiguityVerdict detect_ambiguity(const std::vector<double>& scores, double margin) {
  return detect_ambiguity(scores, margin, std::less<std::size_t>{});
}

inline AmbiguityVerdict object_verdict(const TurnScores& ts, double m_obj) {
  return detect_ambiguity(ts.object_scores, m_obj,
                          [&](std::size_t a, std::size_t b) { return ts.object_ids[a] < ts.object_ids[b]; });
}

inline AmbiguityVerdict box_verdict(const TurnScores& ts, double m_box) {
  return detect_ambiguity(std::vector<double>(ts.box_probs.begin(), ts.box_probs.end()), m_box);
}

// Object scores are summed; box logits are summed and renormalized.
inline TurnScores aggregate_turns(const std::vector<TurnScores>& turns) {
  if (turns.empty()) throw InputError("no turns to aggregate");
  TurnScores out = turns.front();
  for (std::size_t t = 1; t < turns.size(); ++t) {
    const auto& turn = turns[t];
    if (turn.object_ids.size() != out.object_ids.size()) throw InputError("turns cover different object sets");
    for (std::size_t i = 0; i < out.object_ids.size(); ++i) {
      const double* s = turn.score_of(out.object_ids[i]);
      if (!s) throw InputError("turns cover different object sets: '" + out.object_ids[i] + "' missing");
      out.object_scores[i] += *s;
    }
    for (std::size_t k = 0; k < kDestinationCount; ++k) out.box_logits[k] += turn.box_logits[k];
    out.utterance += "\n" + turn.utterance;
  }
  out.box_probs = softmax_array(out.box_logits);
  return out;
}

// s_g minus the best competing score.
inline double lead_of(const TurnScores& ts, const std::string& id) {
  const double* g = ts.score_of(id);
  if (!g) throw InputError("unknown object '" + id + "'");
  double rival = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ts.object_ids.size(); ++i) {
    if (ts.object_ids[i] != id) rival = std::max(rival, ts.object_scores[i]);
  }
  return *g - rival;
}

}  // namespace clarify
