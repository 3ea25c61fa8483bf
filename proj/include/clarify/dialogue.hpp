#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/text.hpp"
#include "clarify/errors.hpp"
#include "clarify/grounding.hpp"
#include "clarify/proposals.hpp"

namespace clarify {

enum class Phase { AwaitingInstruction, AwaitingClarification, Resolved, Failed, Committed };

inline std::string phase_name(Phase p) {
  switch (p) {
    case Phase::AwaitingInstruction: return "awaiting_instruction";
    case Phase::AwaitingClarification: return "awaiting_clarification";
    case Phase::Resolved: return "resolved";
    case Phase::Failed: return "failed";
    case Phase::Committed: return "committed";
  }
  throw InputError("unknown phase");
}

enum class DialogueErrorCode { ProtocolViolation, NotResolved, AlreadyCommitted, EmptyInstruction, NoAmbiguity, EmptyScene };

inline const std::vector<DialogueErrorCode> kDialogueErrorCodes = {
    DialogueErrorCode::ProtocolViolation, DialogueErrorCode::NotResolved, DialogueErrorCode::AlreadyCommitted,
    DialogueErrorCode::EmptyInstruction,  DialogueErrorCode::NoAmbiguity, DialogueErrorCode::EmptyScene};

inline std::string error_code_name(DialogueErrorCode c) {
  switch (c) {
    case DialogueErrorCode::ProtocolViolation: return "protocol_violation";
    case DialogueErrorCode::NotResolved: return "not_resolved";
    case DialogueErrorCode::AlreadyCommitted: return "already_committed";
    case DialogueErrorCode::EmptyInstruction: return "empty_instruction";
    case DialogueErrorCode::NoAmbiguity: return "no_ambiguity";
    case DialogueErrorCode::EmptyScene: return "empty_scene";
  }
  throw InputError("unknown dialogue error code");
}

class DialogueError : public Error {
 public:
  DialogueError(DialogueErrorCode code, const std::string& message) : Error(message), code_(code) {}
  DialogueErrorCode code() const { return code_; }

 private:
  DialogueErrorCode code_;
};

struct DialogueConfig {
  double m_obj = 0.1;
  double m_box = 0.1;
  std::size_t feedback_budget = 2;
};

struct ClarificationPrompt {
  std::string question_text;
  std::vector<std::string> highlighted_object_ids;
  std::vector<std::size_t> highlighted_box_ids;

  friend bool operator==(const ClarificationPrompt&, const ClarificationPrompt&) = default;
};

struct Resolution {
  std::string object_id;
  std::size_t box_id = 0;

  friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct PickResult {
  std::string object_id;
  std::size_t box_id = 0;
  std::optional<bool> correct;
};

struct GoldAnnotation {
  std::string object_id;
  std::size_t box_id = 0;
};

// Templates per ambiguous verdict; a verdict that is confident contributes no
// text and no highlights.
inline ClarificationPrompt generate_question(const AmbiguityVerdict& objects, const AmbiguityVerdict& boxes,
                                             const std::vector<std::string>& object_ids) {
  if (objects.confident && boxes.confident) {
    throw DialogueError(DialogueErrorCode::NoAmbiguity, "no question to ask: both verdicts are confident");
  }
  ClarificationPrompt p;
  if (!objects.confident) {
    p.question_text = "Which one do you mean? I see " + std::to_string(objects.candidates.size()) + " possible matches.";
    for (std::size_t i : objects.candidates) p.highlighted_object_ids.push_back(object_ids.at(i));
  }
  if (!boxes.confident) {
    if (!p.question_text.empty()) p.question_text += " ";
    p.question_text += "Which box should I put it in?";
    p.highlighted_box_ids = boxes.candidates;
  }
  return p;
}

inline nlohmann::json to_json(const ClarificationPrompt& p) {
  return {{"question_text", p.question_text},
          {"highlighted_object_ids", p.highlighted_object_ids},
          {"highlighted_box_ids", p.highlighted_box_ids}};
}

inline nlohmann::json to_json(const Resolution& r) { return {{"object_id", r.object_id}, {"box_id", r.box_id}}; }

// One instruction-to-pick episode over a private copy of the scene. Not
// thread-safe: callers serialize access per session.
class Session {
 public:
  using Scorer = std::function<TurnScores(const std::string&)>;

  Session(std::string id, Scene scene, std::shared_ptr<const GroundingModel> model, DialogueConfig cfg = {},
          const ProposalProvider& provider = GroundTruthProvider{}, std::optional<GoldAnnotation> gold = std::nullopt)
      : id_(std::move(id)), scene_(std::move(scene)), cfg_(cfg), gold_(std::move(gold)) {
    if (!model) throw ConfigError("session needs a model");
    check_scene();
    proposals_ = provider.propose(scene_);
    if (proposals_.empty()) throw DialogueError(DialogueErrorCode::EmptyScene, "no object proposals in the scene");
    for (const auto& p : proposals_) ids_.push_back(p.id);
    auto encoded = encode_candidates(*model, prepare_objects(scene_, proposals_, model->config().patch_side));
    score_ = [model, ids = ids_, encoded = std::move(encoded)](const std::string& text) {
      return score_encoded(text, *model, ids, encoded);
    };
    created();
  }

  // Candidates are the scene's annotated objects; scores come from `score`.
  Session(std::string id, Scene scene, Scorer score, DialogueConfig cfg = {},
          std::optional<GoldAnnotation> gold = std::nullopt)
      : id_(std::move(id)), scene_(std::move(scene)), cfg_(cfg), gold_(std::move(gold)), score_(std::move(score)) {
    check_scene();
    for (const auto& o : scene_.objects) {
      proposals_.push_back(Proposal{o.object_id, o.bbox, 1.0, o.features});
      ids_.push_back(o.object_id);
    }
    created();
  }

  const std::string& id() const { return id_; }
  const Scene& scene() const { return scene_; }
  Phase phase() const { return phase_; }
  std::size_t feedback_used() const { return feedback_used_; }
  const std::vector<TurnScores>& turns() const { return turns_; }
  const std::vector<Proposal>& proposals() const { return proposals_; }
  const std::optional<TurnScores>& aggregate() const { return aggregate_; }
  const std::optional<AmbiguityVerdict>& object_verdict_now() const { return object_verdict_; }
  const std::optional<AmbiguityVerdict>& box_verdict_now() const { return box_verdict_; }
  const std::optional<ClarificationPrompt>& prompt() const { return prompt_; }
  const std::optional<Resolution>& resolution() const { return resolution_; }
  const std::optional<PickResult>& pick() const { return pick_; }
  const DialogueConfig& config() const { return cfg_; }

  Phase submit_utterance(const std::string& text) {
    if (phase_ != Phase::AwaitingInstruction && phase_ != Phase::AwaitingClarification) {
      throw DialogueError(DialogueErrorCode::ProtocolViolation,
                          "cannot accept an utterance in phase " + phase_name(phase_));
    }
    if (tokenize(text).empty()) throw DialogueError(DialogueErrorCode::EmptyInstruction, "empty instruction");
    const bool clarification = phase_ == Phase::AwaitingClarification;
    TurnScores turn = score_(text);
    if (turn.object_ids != ids_) throw InputError("scorer returned a different candidate set");
    turns_.push_back(std::move(turn));
    aggregate_ = aggregate_turns(turns_);
    object_verdict_ = object_verdict(*aggregate_, cfg_.m_obj);
    box_verdict_ = box_verdict(*aggregate_, cfg_.m_box);
    if (clarification) ++feedback_used_;
    prompt_.reset();
    if (object_verdict_->confident && box_verdict_->confident) {
      resolution_ = Resolution{ids_[object_verdict_->best()], box_verdict_->best()};
      phase_ = Phase::Resolved;
    } else if (feedback_used_ < cfg_.feedback_budget) {
      prompt_ = generate_question(*object_verdict_, *box_verdict_, ids_);
      phase_ = Phase::AwaitingClarification;
    } else {
      phase_ = Phase::Failed;
    }
    events_.push_back(utterance_event(text));
    return phase_;
  }

  // Removes the resolved object from this session's scene copy.
  PickResult commit_pick() {
    if (phase_ == Phase::Committed) throw DialogueError(DialogueErrorCode::AlreadyCommitted, "pick already committed");
    if (phase_ != Phase::Resolved) {
      throw DialogueError(DialogueErrorCode::NotResolved, "cannot commit in phase " + phase_name(phase_));
    }
    PickResult r{resolution_->object_id, resolution_->box_id, std::nullopt};
    if (gold_) r.correct = gold_->object_id == r.object_id && gold_->box_id == r.box_id;
    const auto& picked = proposals_[index_of(r.object_id)];
    auto it = std::find_if(scene_.objects.begin(), scene_.objects.end(),
                           [&](const ObjectInstance& o) { return o.object_id == picked.id; });
    if (it == scene_.objects.end()) {
      // Learned proposals carry their own ids; fall back to the best-overlapping object.
      double best = 0.5;
      for (auto o = scene_.objects.begin(); o != scene_.objects.end(); ++o) {
        const double v = iou(o->bbox, picked.bbox);
        if (v >= best) best = v, it = o;
      }
    }
    if (it != scene_.objects.end()) scene_.objects.erase(it);
    pick_ = r;
    phase_ = Phase::Committed;
    nlohmann::json e{{"event", "commit"}, {"object_id", r.object_id}, {"box_id", r.box_id}};
    e["correct"] = r.correct ? nlohmann::json(*r.correct) : nlohmann::json(nullptr);
    events_.push_back(std::move(e));
    return r;
  }

  const nlohmann::json& last_event() const { return events_.back(); }
  nlohmann::json transcript() const { return events_; }

 private:
  void check_scene() const {
    if (!(cfg_.m_obj >= 0.0) || !(cfg_.m_box >= 0.0)) throw ConfigError("margins must be non-negative");
    if (scene_.objects.empty()) throw DialogueError(DialogueErrorCode::EmptyScene, "scene has no objects");
  }

  void created() {
    events_.push_back({{"event", "created"},
                       {"session_id", id_},
                       {"scene_id", scene_.scene_id},
                       {"candidate_ids", ids_},
                       {"object_count", scene_.objects.size()}});
  }

  std::size_t index_of(const std::string& id) const {
    return static_cast<std::size_t>(std::find(ids_.begin(), ids_.end(), id) - ids_.begin());
  }

  nlohmann::json utterance_event(const std::string& text) const {
    const TurnScores& turn = turns_.back();
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      scores.push_back({{"object_id", ids_[i]}, {"turn", turn.object_scores[i]}, {"total", aggregate_->object_scores[i]}});
    }
    auto ids_of = [&](const AmbiguityVerdict& v) {
      std::vector<std::string> out;
      for (std::size_t i : v.candidates) out.push_back(ids_[i]);
      return out;
    };
    nlohmann::json e{{"event", "utterance"},
                     {"text", text},
                     {"turn_index", turns_.size() - 1},
                     {"object_scores", scores},
                     {"box_probs", aggregate_->box_probs},
                     {"object_candidates", ids_of(*object_verdict_)},
                     {"box_candidates", box_verdict_->candidates},
                     {"phase", phase_name(phase_)},
                     {"feedback_used", feedback_used_}};
    e["prompt"] = prompt_ ? to_json(*prompt_) : nlohmann::json(nullptr);
    e["resolution"] = resolution_ ? to_json(*resolution_) : nlohmann::json(nullptr);
    return e;
  }

  std::string id_;
  Scene scene_;
  DialogueConfig cfg_;
  std::optional<GoldAnnotation> gold_;
  Scorer score_;
  std::vector<Proposal> proposals_;
  std::vector<std::string> ids_;
  Phase phase_ = Phase::AwaitingInstruction;
  std::size_t feedback_used_ = 0;
  std::vector<TurnScores> turns_;
  std::optional<TurnScores> aggregate_;
  std::optional<AmbiguityVerdict> object_verdict_, box_verdict_;
  std::optional<ClarificationPrompt> prompt_;
  std::optional<Resolution> resolution_;
  std::optional<PickResult> pick_;
  std::vector<nlohmann::json> events_;
};

// Re-runs the utterances and commit of a transcript on a fresh session.
inline Session replay_transcript(const nlohmann::json& transcript, Scene scene,
                                 std::shared_ptr<const GroundingModel> model, DialogueConfig cfg = {},
                                 const ProposalProvider& provider = GroundTruthProvider{},
                                 std::optional<GoldAnnotation> gold = std::nullopt) {
  if (!transcript.is_array() || transcript.empty() || transcript[0].value("event", "") != "created") {
    throw ParseError("transcript must start with a creation event");
  }
  Session s(transcript[0].at("session_id").get<std::string>(), std::move(scene), std::move(model), cfg, provider,
            std::move(gold));
  for (std::size_t i = 1; i < transcript.size(); ++i) {
    const std::string kind = transcript[i].at("event").get<std::string>();
    if (kind == "utterance") {
      s.submit_utterance(transcript[i].at("text").get<std::string>());
    } else if (kind == "commit") {
      s.commit_pick();
    } else {
      throw ParseError("unknown transcript event '" + kind + "'");
    }
  }
  return s;
}

}  // namespace clarify
