#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "clarify/autodiff.hpp"
#include "clarify/corpus/scene.hpp"
#include "clarify/errors.hpp"
#include "clarify/image.hpp"
#include "clarify/optim.hpp"
#include "clarify/rng.hpp"

namespace clarify {

// A candidate object region. `id` is the annotated object id for
// ground-truth proposals and a generated "p<k>" label otherwise.
struct Proposal {
  std::string id;
  BoundingBox bbox;
  double objectness = 1.0;
  std::optional<std::vector<double>> features;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Orders by objectness descending, then x_min, then y_min.
inline void sort_by_objectness(std::vector<Proposal>& ps) {
  std::stable_sort(ps.begin(), ps.end(), [](const Proposal& a, const Proposal& b) {
    if (a.objectness != b.objectness) return a.objectness > b.objectness;
    if (a.bbox.x_min != b.bbox.x_min) return a.bbox.x_min < b.bbox.x_min;
    return a.bbox.y_min < b.bbox.y_min;
  });
}

inline std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold = 0.5) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("nms threshold must lie in (0, 1]");
  sort_by_objectness(proposals);
  std::vector<Proposal> kept;
  for (auto& p : proposals) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Proposal& k) { return iou(k.bbox, p.bbox) > iou_threshold; });
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

inline std::vector<Proposal> propose_ground_truth(const Scene& scene, std::uint64_t seed) {
  std::vector<Proposal> out;
  out.reserve(scene.objects.size());
  for (const auto& o : scene.objects) out.push_back({o.object_id, o.bbox, 1.0, o.features});
  Rng rng(seed);
  rng.shuffle(out);
  return out;
}

// ---------------------------------------------------------------------------
// Objectness baseline: per-region background estimate, connected components of
// deviating pixels, and a logistic foreground scorer over region statistics.

inline constexpr std::size_t kObjectnessFeatureCount = 3;

struct RegionCandidate {
  BoundingBox bbox;
  std::array<double, kObjectnessFeatureCount> features{};  // contrast, fill ratio, log-area prior
};

struct ObjectnessModel {
  Parameter weight{"proposals.weight", Tensor::zeros({kObjectnessFeatureCount})};
  Parameter bias{"proposals.bias", Tensor::zeros({1})};
  double score_threshold = 0.5;
  double nms_threshold = 0.5;
  int deviation_threshold = 30;  // max channel difference from the background

  ParameterSet parameters() {
    ParameterSet ps;
    ps.add(weight);
    ps.add(bias);
    return ps;
  }

  double score(const std::array<double, kObjectnessFeatureCount>& f) const {
    double z = bias.value[0];
    for (std::size_t k = 0; k < f.size(); ++k) z += weight.value[k] * f[k];
    return 1.0 / (1.0 + std::exp(-z));
  }
};

namespace detail {

inline Rgb median_color(const Image& img, int x0, int y0, int x1, int y1) {
  std::array<std::array<std::size_t, 256>, 3> hist{};
  std::size_t n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const Rgb c = img.at(x, y);
      ++hist[0][c.r], ++hist[1][c.g], ++hist[2][c.b];
      ++n;
    }
  }
  std::array<std::uint8_t, 3> med{};
  for (int ch = 0; ch < 3; ++ch) {
    std::size_t acc = 0;
    for (int v = 0; v < 256; ++v) {
      acc += hist[ch][v];
      if (2 * acc >= n) {
        med[ch] = static_cast<std::uint8_t>(v);
        break;
      }
    }
  }
  return {med[0], med[1], med[2]};
}

inline int deviation(Rgb a, Rgb b) {
  return std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
}

}  // namespace detail

// Components of background-deviating pixels (8-connected) inside each region.
// With no regions the whole image is one region.
inline std::vector<RegionCandidate> extract_candidates(const Image& img, std::vector<BoundingBox> regions,
                                                       int deviation_threshold = 30) {
  std::vector<RegionCandidate> out;
  if (img.empty()) return out;
  if (regions.empty()) regions.push_back({0, 0, static_cast<double>(img.width()), static_cast<double>(img.height())});
  for (const auto& r : regions) {
    const int x0 = std::max(0, static_cast<int>(std::floor(r.x_min)));
    const int y0 = std::max(0, static_cast<int>(std::floor(r.y_min)));
    const int x1 = std::min(img.width(), static_cast<int>(std::ceil(r.x_max)));
    const int y1 = std::min(img.height(), static_cast<int>(std::ceil(r.y_max)));
    if (x1 <= x0 || y1 <= y0) continue;
    const Rgb bg = detail::median_color(img, x0, y0, x1, y1);
    const int w = x1 - x0, h = y1 - y0;
    std::vector<int> dev(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) dev[y * w + x] = detail::deviation(img.at(x0 + x, y0 + y), bg);
    }
    std::vector<char> visited(dev.size(), 0);
    std::vector<int> stack;
    const double region_area = static_cast<double>(w) * h;
    for (int start = 0; start < w * h; ++start) {
      if (visited[start] || dev[start] <= deviation_threshold) continue;
      visited[start] = 1;
      stack.assign(1, start);
      int minx = w, miny = h, maxx = -1, maxy = -1;
      std::size_t count = 0;
      double contrast = 0;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        ++count;
        contrast += dev[p];
        minx = std::min(minx, px), maxx = std::max(maxx, px);
        miny = std::min(miny, py), maxy = std::max(maxy, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = px + dx, qy = py + dy;
            if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
            const int q = qy * w + qx;
            if (!visited[q] && dev[q] > deviation_threshold) {
              visited[q] = 1;
              stack.push_back(q);
            }
          }
        }
      }
      RegionCandidate c;
      c.bbox = {static_cast<double>(x0 + minx), static_cast<double>(y0 + miny), static_cast<double>(x0 + maxx + 1),
                static_cast<double>(y0 + maxy + 1)};
      c.features = {contrast / count / 255.0, count / c.bbox.area(), std::log1p(c.bbox.area()) / std::log1p(region_area)};
      out.push_back(c);
    }
  }
  return out;
}

inline std::vector<Proposal> propose_objectness(const Image& img, const std::vector<BoundingBox>& regions,
                                                const ObjectnessModel& model) {
  std::vector<Proposal> out;
  for (const auto& c : extract_candidates(img, regions, model.deviation_threshold)) {
    const double s = model.score(c.features);
    if (s >= model.score_threshold) out.push_back({"", c.bbox, s, std::nullopt});
  }
  out = nms(std::move(out), model.nms_threshold);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].id = "p" + std::to_string(k);
  return out;
}

struct ObjectnessTrainingConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  double momentum = 0.9;
  double positive_iou = 0.5;
};

// Fits the logistic scorer: components overlapping an annotated object with
// IoU >= positive_iou are foreground, the rest (specks, fragments) background.
// Returns the final mean log-loss.
inline double train_objectness(ObjectnessModel& model, const std::vector<Scene>& scenes,
                               const ObjectnessTrainingConfig& cfg = {}) {
  std::vector<std::array<double, kObjectnessFeatureCount>> xs;
  std::vector<double> ys;
  for (const auto& s : scenes) {
    if (!s.image) continue;
    for (const auto& c : extract_candidates(*s.image, s.boxes, model.deviation_threshold)) {
      double best = 0;
      for (const auto& o : s.objects) best = std::max(best, iou(o.bbox, c.bbox));
      xs.push_back(c.features);
      ys.push_back(best >= cfg.positive_iou ? 1.0 : 0.0);
    }
  }
  if (xs.empty()) throw InputError("no objectness candidates found in the training scenes");
  const std::size_t n = xs.size();
  ParameterSet params = model.parameters();
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  double loss_value = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    params.zero_grad();
    loss_value = 0;
    auto gw = model.weight.gradient.mutable_data();
    auto gb = model.bias.gradient.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(model.score(xs[i]), 1e-12, 1.0 - 1e-12);
      loss_value -= ys[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
      const double r = (p - ys[i]) / static_cast<double>(n);
      for (std::size_t k = 0; k < kObjectnessFeatureCount; ++k) gw[k] += r * xs[i][k];
      gb[0] += r;
    }
    loss_value /= static_cast<double>(n);
    opt.step(params);
  }
  return loss_value;
}

class ProposalProvider {
 public:
  virtual ~ProposalProvider() = default;
  virtual std::vector<Proposal> propose(const Scene& scene) const = 0;
  virtual std::string name() const = 0;
};

class GroundTruthProvider : public ProposalProvider {
 public:
  explicit GroundTruthProvider(std::uint64_t seed = 0) : seed_(seed) {}
  std::vector<Proposal> propose(const Scene& scene) const override { return propose_ground_truth(scene, seed_); }
  std::string name() const override { return "ground_truth"; }

 private:
  std::uint64_t seed_;
};

class ObjectnessProvider : public ProposalProvider {
 public:
  explicit ObjectnessProvider(std::shared_ptr<const ObjectnessModel> model) : model_(std::move(model)) {}
  std::vector<Proposal> propose(const Scene& scene) const override {
    if (!scene.image) throw InputError("objectness proposals need a scene image");
    return propose_objectness(*scene.image, scene.boxes, *model_);
  }
  std::string name() const override { return "objectness"; }

 private:
  std::shared_ptr<const ObjectnessModel> model_;
};

}  // namespace clarify
