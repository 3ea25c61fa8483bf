#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/autodiff.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/corpus/text.hpp"
#include "clarify/encoders.hpp"
#include "clarify/errors.hpp"
#include "clarify/grounding.hpp"
#include "clarify/optim.hpp"
#include "clarify/proposals.hpp"
#include "clarify/rng.hpp"

namespace clarify {

struct TrainingConfig {
  EncoderConfig encoder{};
  double margin = 0.1;
  std::size_t batch_size = 128;
  std::size_t iterations = 2000;
  double learning_rate = 5e-4;
  double decay_rate = 0.9;
  std::size_t decay_interval = 4000;
  double word_dropout = 0.1;
  double tail_drop = 0.05;
  bool train_objectness = true;
  std::uint64_t seed = 0;

  // The single-CPU recipe: batch 32, tanh hidden units, a faster start.
  static TrainingConfig desk() {
    TrainingConfig c;
    c.encoder.activation = Activation::Tanh;
    c.batch_size = 32;
    c.learning_rate = 1e-3;
    return c;
  }

  void validate() const {
    encoder.validate();
    if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
    if (batch_size == 0 || iterations == 0) throw ConfigError("batch size and iteration count must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    for (double r : {word_dropout, tail_drop}) {
      if (r < 0.0 || r >= 1.0) throw ConfigError("dropout rates must lie in [0, 1)");
    }
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay rate must lie in (0, 1]");
  }
};

inline nlohmann::json to_json(const TrainingConfig& c) {
  return {{"encoder", to_json(c.encoder)},
          {"margin", c.margin},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"decay_rate", c.decay_rate},
          {"decay_interval", c.decay_interval},
          {"word_dropout", c.word_dropout},
          {"tail_drop", c.tail_drop},
          {"train_objectness", c.train_objectness},
          {"seed", c.seed}};
}

// Reads a config document; absent keys keep their defaults, unknown keys are
// rejected so typos do not pass silently.
inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys = {"encoder",        "margin",     "batch_size", "iterations",
                                                 "learning_rate",  "decay_rate", "decay_interval",
                                                 "word_dropout",   "tail_drop",  "train_objectness", "seed"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), k) == kKeys.end()) throw ConfigError("unknown training config key '" + k + "'");
  }
  TrainingConfig c;
  try {
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j["encoder"]);
    c.margin = j.value("margin", c.margin);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.decay_rate = j.value("decay_rate", c.decay_rate);
    c.decay_interval = j.value("decay_interval", c.decay_interval);
    c.word_dropout = j.value("word_dropout", c.word_dropout);
    c.tail_drop = j.value("tail_drop", c.tail_drop);
    c.train_objectness = j.value("train_objectness", c.train_objectness);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Losses.

inline double max_margin_loss(double f_qo, double f_q_ohat, double f_qhat_o, double m) {
  return std::max(0.0, m - f_qo + f_q_ohat) + std::max(0.0, m - f_qo + f_qhat_o);
}

inline Var max_margin_loss(Var f_qo, Var f_q_ohat, Var f_qhat_o, double m) {
  const Var a = relu(add_scalar(add(scale(f_qo, -1.0), f_q_ohat), m));
  const Var b = relu(add_scalar(add(scale(f_qo, -1.0), f_qhat_o), m));
  return add(a, b);
}

inline double destination_loss(const std::array<double, kDestinationCount>& probs, std::size_t gold,
                               bool* clamped = nullptr) {
  if (gold >= kDestinationCount) throw InputError("destination index out of range");
  const double p = probs[gold];
  if (clamped) *clamped = p < kProbabilityFloor;
  return -std::log(std::max(p, kProbabilityFloor));
}

inline Var destination_loss(Var probs, std::size_t gold, bool* clamped = nullptr) {
  return negative_log_likelihood(probs, gold, clamped);
}

// ---------------------------------------------------------------------------
// Token-level regularizers.

inline std::vector<std::size_t> apply_word_dropout(const std::vector<std::size_t>& tokens, double rate, Rng& rng,
                                                   Mode mode) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("word dropout rate must lie in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0 || tokens.empty()) return tokens;
  std::vector<std::size_t> kept;
  for (std::size_t t : tokens) {
    if (!rng.bernoulli(rate)) kept.push_back(t);
  }
  if (kept.empty()) kept.push_back(tokens[rng.uniform_index(tokens.size())]);
  return kept;
}

// Keeps the first ceil(n/2) tokens with the given probability.
inline std::vector<std::size_t> apply_tail_drop(const std::vector<std::size_t>& tokens, double probability, Rng& rng,
                                                Mode mode) {
  if (probability < 0.0 || probability >= 1.0) throw ConfigError("tail drop probability must lie in [0, 1)");
  if (mode == Mode::Infer || probability == 0.0) return tokens;
  if (!rng.bernoulli(probability)) return tokens;
  return {tokens.begin(), tokens.begin() + static_cast<long>((tokens.size() + 1) / 2)};
}

// ---------------------------------------------------------------------------
// Sample pool: every training instruction with its scene's prepared objects.

struct PoolScene {
  std::vector<ObjectInput> objects;
  std::vector<std::vector<std::size_t>> instructions_of;  // per object: indices into PoolSet::instructions
};

struct PoolInstruction {
  std::size_t scene = 0;
  std::size_t object = 0;
  std::vector<std::size_t> tokens;
  std::size_t destination = 0;
};

struct SamplePool {
  std::vector<PoolScene> scenes;
  std::vector<PoolInstruction> instructions;
};

inline SamplePool build_pool(const std::vector<Scene>& scenes, const Vocabulary& vocab, std::size_t patch_side) {
  SamplePool pool;
  for (const auto& s : scenes) {
    PoolScene ps;
    const auto proposals = propose_ground_truth(s, 0);
    std::vector<BoundingBox> context;
    for (const auto& o : s.objects) context.push_back(o.bbox);
    const std::size_t si = pool.scenes.size();
    for (std::size_t oi = 0; oi < s.objects.size(); ++oi) {
      const auto& o = s.objects[oi];
      ps.objects.push_back(prepare_object(s, o.bbox, o.features, context, patch_side));
      ps.instructions_of.emplace_back();
      for (const auto& ins : o.instructions) {
        auto tokens = encode_text(ins.text, vocab);
        if (tokens.empty()) continue;
        ps.instructions_of.back().push_back(pool.instructions.size());
        pool.instructions.push_back({si, oi, std::move(tokens), static_cast<std::size_t>(ins.destination_box_id)});
      }
    }
    pool.scenes.push_back(std::move(ps));
  }
  if (pool.instructions.empty()) throw InputError("training set has no usable instructions");
  return pool;
}

struct ObjectRef {
  std::size_t scene = 0;
  std::size_t object = 0;
  friend bool operator==(const ObjectRef&, const ObjectRef&) = default;
};

struct Negatives {
  std::size_t q_hat = 0;  // instruction index
  ObjectRef o_hat;
};

// Uniform draws: o_hat over the other objects of the positive's scene, q_hat
// over instructions of other objects in that scene. Each falls back to other
// scenes when the scene offers none; nullopt means no valid negative exists.
inline std::optional<Negatives> sample_negatives(const SamplePool& pool, std::size_t positive, Rng& rng) {
  const auto& pos = pool.instructions.at(positive);
  const auto& scene = pool.scenes[pos.scene];
  Negatives neg;
  if (scene.objects.size() >= 2) {
    std::size_t j = rng.uniform_index(scene.objects.size() - 1);
    if (j >= pos.object) ++j;
    neg.o_hat = {pos.scene, j};
  } else {
    std::size_t others = 0;
    for (std::size_t s = 0; s < pool.scenes.size(); ++s) others += s == pos.scene ? 0 : pool.scenes[s].objects.size();
    if (others == 0) return std::nullopt;
    std::size_t k = rng.uniform_index(others);
    for (std::size_t s = 0; s < pool.scenes.size(); ++s) {
      if (s == pos.scene) continue;
      if (k < pool.scenes[s].objects.size()) {
        neg.o_hat = {s, k};
        break;
      }
      k -= pool.scenes[s].objects.size();
    }
  }
  std::size_t same = 0;
  for (std::size_t o = 0; o < scene.objects.size(); ++o) same += o == pos.object ? 0 : scene.instructions_of[o].size();
  if (same > 0) {
    std::size_t k = rng.uniform_index(same);
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      if (o == pos.object) continue;
      if (k < scene.instructions_of[o].size()) {
        neg.q_hat = scene.instructions_of[o][k];
        break;
      }
      k -= scene.instructions_of[o].size();
    }
  } else {
    std::size_t others = 0;
    for (const auto& ins : pool.instructions) others += ins.scene != pos.scene;
    if (others == 0) return std::nullopt;
    std::size_t k = rng.uniform_index(others);
    for (std::size_t i = 0; i < pool.instructions.size(); ++i) {
      if (pool.instructions[i].scene == pos.scene) continue;
      if (k-- == 0) {
        neg.q_hat = i;
        break;
      }
    }
  }
  return neg;
}

// ---------------------------------------------------------------------------
// Per-sample objective.

struct SampleLoss {
  Var margin;
  Var destination;
};

struct Regularization {
  double dropout = 0.0;
  double word_dropout = 0.0;
  double tail_drop = 0.0;
};

inline SampleLoss sample_loss(Tape& t, const GroundingModel& model, const SamplePool& pool, std::size_t positive,
                              const Negatives& neg, double margin, const Regularization& reg, Rng& rng, Mode mode) {
  const ForwardContext ctx{mode, &rng, reg.dropout};
  const auto& pos = pool.instructions[positive];
  const auto target_tokens = [&](const std::vector<std::size_t>& tokens) {
    return apply_tail_drop(apply_word_dropout(tokens, reg.word_dropout, rng, mode), reg.tail_drop, rng, mode);
  };
  const Var q = model.text().forward(t, target_tokens(pos.tokens), ctx);
  const Var q_hat = model.text().forward(t, target_tokens(pool.instructions[neg.q_hat].tokens), ctx);
  const Var o = model.object().forward(t, pool.scenes[pos.scene].objects[pos.object], ctx);
  const Var o_hat = model.object().forward(t, pool.scenes[neg.o_hat.scene].objects[neg.o_hat.object], ctx);
  const Var m = max_margin_loss(cosine(q, o), cosine(q, o_hat), cosine(q_hat, o), margin);
  const Var logits = model.destination().forward(t, apply_word_dropout(pos.tokens, reg.word_dropout, rng, mode), ctx);
  return {m, destination_loss(softmax(logits), pos.destination)};
}

// ---------------------------------------------------------------------------
// Training loop.

struct LogRecord {
  std::size_t iteration = 0;
  double margin_loss = 0.0;
  double dest_loss = 0.0;
  double lr = 0.0;
};

inline nlohmann::json to_json(const LogRecord& r) {
  return {{"iteration", r.iteration}, {"margin_loss", r.margin_loss}, {"dest_loss", r.dest_loss}, {"lr", r.lr}};
}

struct TrainResult {
  GroundingModel model;
  std::vector<LogRecord> log;
  double objectness_loss = 0.0;
  double seconds = 0.0;
};

inline Vocabulary training_vocabulary(const std::vector<Scene>& scenes) {
  std::vector<std::string> texts;
  for (const auto& s : scenes)
    for (const auto& o : s.objects)
      for (const auto& ins : o.instructions) texts.push_back(ins.text);
  return build_vocabulary(texts);
}

inline std::string parameter_diagnostics(const ParameterSet& params) {
  std::ostringstream out;
  for (Parameter* p : params) {
    double worst = 0.0;
    bool finite = true;
    for (double v : p->value.data()) {
      finite = finite && std::isfinite(v);
      worst = std::max(worst, std::abs(v));
    }
    out << "\n  " << p->name << ": max|value|=" << worst << (finite ? "" : " (non-finite)");
  }
  return out.str();
}

class Trainer {
 public:
  Trainer(const std::vector<Scene>& scenes, const TrainingConfig& cfg)
      : cfg_(cfg),
        model_((cfg.validate(), cfg.encoder), training_vocabulary(scenes), cfg.seed),
        pool_(build_pool(scenes, model_.vocabulary(), cfg.encoder.patch_side)),
        adam_(Adam::Config{StepDecay{cfg.learning_rate, cfg.decay_rate, cfg.decay_interval}}),
        sampler_(cfg.seed ^ 0x5DEECE66DULL),
        noise_(cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL) {}

  // Runs one optimizer step over a fresh batch and returns its record.
  LogRecord step() {
    const std::uint64_t it = ++iteration_;
    ParameterSet params = model_.grounding_parameters();
    params.extend(model_.destination_parameters());
    params.zero_grad();
    const Regularization reg{cfg_.encoder.dropout, cfg_.word_dropout, cfg_.tail_drop};
    const double inv = 1.0 / static_cast<double>(cfg_.batch_size);
    double margin_sum = 0.0, dest_sum = 0.0;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      std::optional<Negatives> neg;
      std::size_t positive = 0;
      for (int attempt = 0; attempt < 64 && !neg; ++attempt) {
        positive = sampler_.uniform_index(pool_.instructions.size());
        neg = sample_negatives(pool_, positive, sampler_);
      }
      if (!neg) throw InputError("training set offers no negative samples (need at least 2 objects)");
      Tape t;
      SampleLoss l;
      try {
        l = sample_loss(t, model_, pool_, positive, *neg, cfg_.margin, reg, noise_, Mode::Train);
      } catch (const NumericError& e) {
        throw NumericError("iteration " + std::to_string(it) + ": " + e.what() + parameter_diagnostics(params));
      }
      const double mv = t.value(l.margin).item(), dv = t.value(l.destination).item();
      if (!std::isfinite(mv) || !std::isfinite(dv)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(it) + parameter_diagnostics(params));
      }
      margin_sum += mv;
      dest_sum += dv;
      t.backward(scale(add(l.margin, l.destination), inv), params);
    }
    try {
      adam_.step(params, it);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what() + parameter_diagnostics(params));
    }
    return {it, margin_sum * inv, dest_sum * inv, adam_.learning_rate(it)};
  }

  GroundingModel& model() { return model_; }
  const SamplePool& pool() const { return pool_; }
  std::uint64_t iteration() const { return iteration_; }

 private:
  TrainingConfig cfg_;
  GroundingModel model_;
  SamplePool pool_;
  Adam adam_;
  Rng sampler_;
  Rng noise_;
  std::uint64_t iteration_ = 0;
};

inline TrainResult train(const std::vector<Scene>& scenes, const TrainingConfig& cfg,
                         const std::function<void(const LogRecord&)>& on_record = {}) {
  if (scenes.empty()) throw InputError("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(scenes, cfg);
  TrainResult result;
  result.log.reserve(cfg.iterations);
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    result.log.push_back(trainer.step());
    if (on_record) on_record(result.log.back());
  }
  result.model = std::move(trainer.model());
  if (cfg.train_objectness && std::all_of(scenes.begin(), scenes.end(), [](const Scene& s) { return s.image != nullptr; })) {
    result.objectness_loss = train_objectness(result.model.objectness(), scenes);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline void write_training_log(std::ostream& out, const std::vector<LogRecord>& log) {
  for (const auto& r : log) out << to_json(r).dump() << '\n';
}

}  // namespace clarify
