#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clarify/autodiff.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/errors.hpp"
#include "clarify/image.hpp"
#include "clarify/proposals.hpp"
#include "clarify/rng.hpp"

namespace clarify {

inline constexpr std::size_t kGeometricDims = 5;
inline constexpr std::size_t kRelationalDims = 15;

enum class Activation { Relu, Tanh };

inline std::string activation_name(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct EncoderConfig {
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;   // LSTM
  std::size_t lstm_layers = 1;
  std::size_t joint_dim = 64;
  std::size_t visual_dim = 64;   // F_v
  std::size_t mlp_hidden = 64;
  std::size_t destination_hidden = 64;
  std::size_t patch_side = 16;
  double dropout = 0.1;
  Activation activation = Activation::Relu;

  // Full-size widths: three 512-wide LSTM layers.
  static EncoderConfig full_scale() {
    EncoderConfig c;
    c.embedding_dim = 300;
    c.hidden_dim = 512;
    c.lstm_layers = 3;
    c.joint_dim = 512;
    c.visual_dim = 512;
    c.mlp_hidden = 512;
    c.destination_hidden = 256;
    return c;
  }

  std::size_t patch_inputs() const { return patch_side * patch_side * 3; }

  void validate() const {
    if (!embedding_dim || !hidden_dim || !lstm_layers || !joint_dim || !visual_dim || !mlp_hidden ||
        !destination_hidden || !patch_side) {
      throw ConfigError("encoder dimensions must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"hidden_dim", c.hidden_dim},       {"lstm_layers", c.lstm_layers},
          {"joint_dim", c.joint_dim},         {"visual_dim", c.visual_dim},       {"mlp_hidden", c.mlp_hidden},
          {"destination_hidden", c.destination_hidden}, {"patch_side", c.patch_side}, {"dropout", c.dropout},
          {"activation", activation_name(c.activation)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.joint_dim = j.value("joint_dim", c.joint_dim);
  c.visual_dim = j.value("visual_dim", c.visual_dim);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.destination_hidden = j.value("destination_hidden", c.destination_hidden);
  c.patch_side = j.value("patch_side", c.patch_side);
  c.dropout = j.value("dropout", c.dropout);
  c.activation = parse_activation(j.value("activation", activation_name(c.activation)));
  c.validate();
  return c;
}

// Randomness and mode for one forward pass. Infer mode never touches rng.
struct ForwardContext {
  Mode mode = Mode::Infer;
  Rng* rng = nullptr;
  double dropout = 0.0;

  Var drop(Var x) const {
    if (mode == Mode::Infer || dropout == 0.0) return x;
    if (!rng) throw GraphError("train-mode forward pass needs an rng");
    return dropout_(x);
  }

 private:
  Var dropout_(Var x) const { return clarify::dropout(x, dropout, *rng, mode); }
};

// ---------------------------------------------------------------------------
// Layers. Each owns its parameters by value; parameter sets are views built
// on demand, so models stay copyable.

struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(name + ".weight", Tensor::uniform({in, out}, -limit(in, out), limit(in, out), rng)),
        bias(name + ".bias", Tensor::zeros({out})) {}

  static double limit(std::size_t in, std::size_t out) { return std::sqrt(6.0 / static_cast<double>(in + out)); }

  Var operator()(Tape& t, Var x) const { return add(matmul(x, t.param(weight)), t.param(bias)); }

  void collect(ParameterSet& ps) {
    ps.add(weight);
    ps.add(bias);
  }
};

inline Var activate(Var x, Activation a) { return a == Activation::Relu ? relu(x) : tanh(x); }

// Hidden layers are activated then dropped out; the last layer is linear.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::Relu;

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng, Activation act = Activation::Relu)
      : activation(act) {
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      layers.emplace_back(name + "." + std::to_string(k), widths[k], widths[k + 1], rng);
    }
  }

  Var operator()(Tape& t, Var x, const ForwardContext& ctx) const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      x = layers[k](t, x);
      if (k + 1 < layers.size()) x = ctx.drop(activate(x, activation));
    }
    return x;
  }

  void collect(ParameterSet& ps) {
    for (auto& l : layers) l.collect(ps);
  }
};

struct LstmLayer {
  Parameter weight;  // [(in + H) x 4H], gate order i, f, g, o
  Parameter bias;    // [4H]
  std::size_t hidden = 0;

  LstmLayer() = default;
  LstmLayer(const std::string& name, std::size_t in, std::size_t h, Rng& rng) : hidden(h) {
    const double a = Linear::limit(in + h, 4 * h);
    weight = Parameter(name + ".weight", Tensor::uniform({in + h, 4 * h}, -a, a, rng));
    Tensor b = Tensor::zeros({4 * h});
    for (std::size_t j = h; j < 2 * h; ++j) b[j] = 1.0;  // forget gate starts open
    bias = Parameter(name + ".bias", std::move(b));
  }

  std::vector<Var> operator()(Tape& t, const std::vector<Var>& inputs) const {
    const Var W = t.param(weight), b = t.param(bias);
    Var h = t.constant(Tensor::zeros({hidden}));
    Var c = h;
    std::vector<Var> out;
    out.reserve(inputs.size());
    for (const Var& x : inputs) {
      const Var z = add(matmul(concat({x, h}), W), b);
      const Var ifo = sigmoid(concat({slice(z, 0, 2 * hidden), slice(z, 3 * hidden, hidden)}));
      const Var g = tanh(slice(z, 2 * hidden, hidden));
      c = add(mul(slice(ifo, hidden, hidden), c), mul(slice(ifo, 0, hidden), g));
      h = mul(slice(ifo, 2 * hidden, hidden), tanh(c));
      out.push_back(h);
    }
    return out;
  }

  void collect(ParameterSet& ps) {
    ps.add(weight);
    ps.add(bias);
  }
};

// ---------------------------------------------------------------------------
// Text tower: embedding, stacked LSTM, MLP over the final top-layer state.

class TextTower {
 public:
  TextTower() = default;
  TextTower(const std::string& prefix, std::size_t vocab_size, std::size_t embedding_dim, std::size_t hidden_dim,
            std::size_t layers, std::size_t mlp_hidden, std::size_t out_dim, Rng& rng,
            Activation act = Activation::Relu)
      : embedding_(prefix + ".embedding", Tensor::uniform({vocab_size, embedding_dim}, -0.1, 0.1, rng)),
        out_dim_(out_dim) {
    if (vocab_size == 0) throw ConfigError("vocabulary is empty");
    for (std::size_t l = 0; l < layers; ++l) {
      lstm_.emplace_back(prefix + ".lstm." + std::to_string(l), l == 0 ? embedding_dim : hidden_dim, hidden_dim, rng);
    }
    mlp_ = Mlp(prefix + ".mlp", {hidden_dim, mlp_hidden, out_dim}, rng, act);
  }

  std::size_t vocab_size() const { return embedding_.value.dim(0); }
  std::size_t out_dim() const { return out_dim_; }

  // An empty token list yields a zero vector and sets *degenerate.
  Var forward(Tape& t, const std::vector<std::size_t>& tokens, const ForwardContext& ctx,
              bool* degenerate = nullptr) const {
    if (degenerate) *degenerate = tokens.empty();
    if (tokens.empty()) return t.constant(Tensor::zeros({out_dim_}));
    const Var table = t.param(embedding_);
    std::vector<Var> seq;
    seq.reserve(tokens.size());
    for (std::size_t idx : tokens) {
      if (idx >= vocab_size()) {
        throw InputError("token index " + std::to_string(idx) + " outside vocabulary of size " +
                         std::to_string(vocab_size()));
      }
      seq.push_back(ctx.drop(embedding(table, idx)));
    }
    for (const auto& layer : lstm_) seq = layer(t, seq);
    return mlp_(t, seq.back(), ctx);
  }

  void collect(ParameterSet& ps) {
    ps.add(embedding_);
    for (auto& l : lstm_) l.collect(ps);
    mlp_.collect(ps);
  }

 private:
  Parameter embedding_;
  std::vector<LstmLayer> lstm_;
  Mlp mlp_;
  std::size_t out_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Object features.

inline std::array<double, kGeometricDims> geometric_features(const BoundingBox& b, double W, double H) {
  return {b.x_min / W, b.y_min / H, b.x_max / W, b.y_max / H, b.area() / (W * H)};
}

// avg, max and min of delta_ij over every other box j, as one 15-vector.
inline std::array<double, kRelationalDims> relational_features(const BoundingBox& bi,
                                                               const std::vector<BoundingBox>& all, double W,
                                                               double H) {
  if (std::find(all.begin(), all.end(), bi) == all.end()) {
    throw InputError("relational_features: box is not part of the scene");
  }
  std::array<double, kRelationalDims> out{};
  std::array<double, 5> sum{}, mx, mn;
  mx.fill(-std::numeric_limits<double>::infinity());
  mn.fill(std::numeric_limits<double>::infinity());
  std::size_t n = 0;
  bool skipped_self = false;
  for (const auto& bj : all) {
    if (!skipped_self && bj == bi) {
      skipped_self = true;
      continue;
    }
    const std::array<double, 5> d = {(bi.center_x() - bj.center_x()) / W, (bi.center_y() - bj.center_y()) / H,
                                     (bi.width() - bj.width()) / W, (bi.height() - bj.height()) / H,
                                     (bi.area() - bj.area()) / (W * H)};
    for (std::size_t k = 0; k < 5; ++k) {
      sum[k] += d[k];
      mx[k] = std::max(mx[k], d[k]);
      mn[k] = std::min(mn[k], d[k]);
    }
    ++n;
  }
  if (n == 0) return out;
  for (std::size_t k = 0; k < 5; ++k) {
    out[k] = sum[k] / static_cast<double>(n);
    out[5 + k] = mx[k];
    out[10 + k] = mn[k];
  }
  return out;
}

// Everything about one candidate that does not depend on learned weights.
struct ObjectInput {
  std::vector<double> visual;  // resampled crop, or precomputed features
  bool precomputed = false;
  std::array<double, kGeometricDims + kRelationalDims> layout{};
};

inline ObjectInput prepare_object(const Scene& scene, const BoundingBox& bbox,
                                  const std::optional<std::vector<double>>& features,
                                  const std::vector<BoundingBox>& context, std::size_t patch_side) {
  ObjectInput in;
  if (features) {
    in.visual = *features;
    in.precomputed = true;
  } else if (scene.image) {
    in.visual = resample_area(*scene.image, static_cast<int>(patch_side), bbox.x_min, bbox.y_min, bbox.x_max,
                              bbox.y_max);
  } else {
    throw InputError("object has neither an image crop nor precomputed features");
  }
  const auto g = geometric_features(bbox, scene.width, scene.height);
  const auto r = relational_features(bbox, context, scene.width, scene.height);
  std::copy(g.begin(), g.end(), in.layout.begin());
  std::copy(r.begin(), r.end(), in.layout.begin() + kGeometricDims);
  return in;
}

// Prepares every proposal with the full proposal set as relational context.
inline std::vector<ObjectInput> prepare_objects(const Scene& scene, const std::vector<Proposal>& proposals,
                                                std::size_t patch_side) {
  std::vector<BoundingBox> context;
  context.reserve(proposals.size());
  for (const auto& p : proposals) context.push_back(p.bbox);
  std::vector<ObjectInput> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(prepare_object(scene, p.bbox, p.features, context, patch_side));
  return out;
}

// ---------------------------------------------------------------------------
// Object tower: patch MLP (or precomputed features) joined with layout
// features, then the combining MLP.

class ObjectTower {
 public:
  ObjectTower() = default;
  ObjectTower(const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
      : patch_(prefix + ".patch", {cfg.patch_inputs(), cfg.mlp_hidden, cfg.visual_dim}, rng, cfg.activation),
        combine_(prefix + ".combine", {cfg.visual_dim + kGeometricDims + kRelationalDims, cfg.mlp_hidden, cfg.joint_dim},
                 rng, cfg.activation),
        activation_(cfg.activation),
        patch_inputs_(cfg.patch_inputs()),
        visual_dim_(cfg.visual_dim) {}

  Var forward(Tape& t, const ObjectInput& in, const ForwardContext& ctx) const {
    Var visual;
    if (in.precomputed) {
      if (in.visual.size() != visual_dim_) {
        throw DimensionError("precomputed features have " + std::to_string(in.visual.size()) + " values, expected " +
                             std::to_string(visual_dim_));
      }
      visual = t.constant(Tensor::vector(in.visual));
    } else {
      if (in.visual.size() != patch_inputs_) {
        throw DimensionError("crop has " + std::to_string(in.visual.size()) + " values, expected " +
                             std::to_string(patch_inputs_));
      }
      // Pixels arrive in [0, 1]; the patch MLP sees them centred on zero.
      Tensor centred = Tensor::vector(in.visual);
      for (std::size_t i = 0; i < centred.size(); ++i) centred[i] -= 0.5;
      visual = activate(patch_(t, t.constant(std::move(centred)), ctx), activation_);
    }
    visual = ctx.drop(visual);
    const Var layout = t.constant(Tensor::vector({in.layout.begin(), in.layout.end()}));
    return combine_(t, concat({visual, layout}), ctx);
  }

  void collect(ParameterSet& ps) {
    patch_.collect(ps);
    combine_.collect(ps);
  }

 private:
  Mlp patch_;
  Mlp combine_;
  Activation activation_ = Activation::Relu;
  std::size_t patch_inputs_ = 0;
  std::size_t visual_dim_ = 0;
};

}  // namespace clarify
