#pragma once

// Brute-force reference implementations, written without the library's
// helpers so they can serve as independent oracles.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "clarify/rng.hpp"

namespace clarify::oracle {

// Selection sort by (score desc, key asc).
inline std::vector<std::size_t> ranked(const std::vector<double>& s, const std::vector<std::string>& keys) {
  std::vector<std::size_t> left(s.size()), out;
  for (std::size_t i = 0; i < s.size(); ++i) left[i] = i;
  while (!left.empty()) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < left.size(); ++j) {
      const std::size_t a = left[j], b = left[best];
      if (s[a] > s[b] || (s[a] == s[b] && keys[a] < keys[b])) best = j;
    }
    out.push_back(left[best]);
    left.erase(left.begin() + static_cast<long>(best));
  }
  return out;
}

inline std::vector<std::string> index_keys(std::size_t n) {
  // Zero-padded so lexicographic order equals numeric order.
  std::vector<std::string> k;
  for (std::size_t i = 0; i < n; ++i) {
    std::string d = std::to_string(i);
    k.push_back(std::string(8 - d.size(), '0') + d);
  }
  return k;
}

inline std::vector<std::size_t> within_margin(const std::vector<double>& s, double m) {
  double top = s[0];
  for (double v : s) top = v > top ? v : top;
  std::vector<std::size_t> out;
  for (std::size_t i : ranked(s, index_keys(s.size()))) {
    if (s[i] == top || top - s[i] < m) out.push_back(i);
  }
  return out;
}

// Values drawn from a coarse grid so exact ties are common.
inline std::vector<double> random_scores(Rng& rng, std::size_t n, bool coarse) {
  std::vector<double> s(n);
  for (double& v : s) v = coarse ? std::round(rng.uniform(-1, 1) * 8) / 8 : rng.uniform(-1, 1);
  return s;
}

// All-point interpolated AP from an explicit PR curve. matches[k] is true when
// the k-th proposal in (score desc) order is a true positive.
inline double average_precision(const std::vector<bool>& matches, std::size_t gold) {
  std::vector<std::pair<double, double>> pr;  // recall, precision
  std::size_t tp = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    tp += matches[k];
    pr.emplace_back(static_cast<double>(tp) / gold, static_cast<double>(tp) / (k + 1));
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t k = 0; k < pr.size(); ++k) {
    if (pr[k].first <= prev_recall) continue;
    double best = 0;
    for (std::size_t j = k; j < pr.size(); ++j) best = std::max(best, pr[j].second);
    ap += (pr[k].first - prev_recall) * best;
    prev_recall = pr[k].first;
  }
  return ap;
}

struct Rect {
  double x0, y0, x1, y1;
};

inline double rect_iou(const Rect& a, const Rect& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  return inter / ((a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter);
}

// Greedy matching in selection-sorted score order (first index wins ties):
// each proposal takes the unmatched gold box of highest IoU >= threshold.
inline std::vector<bool> greedy_matches(const std::vector<Rect>& props, const std::vector<double>& scores,
                                        const std::vector<Rect>& gold, double threshold = 0.5) {
  std::vector<bool> taken(gold.size(), false), done(props.size(), false), matches;
  for (std::size_t step = 0; step < props.size(); ++step) {
    std::size_t best = props.size();
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (!done[i] && (best == props.size() || scores[i] > scores[best])) best = i;
    }
    done[best] = true;
    double top = threshold;
    std::size_t pick = gold.size();
    for (std::size_t j = 0; j < gold.size(); ++j) {
      const double v = rect_iou(props[best], gold[j]);
      if (!taken[j] && v >= top && (pick == gold.size() || v > top)) top = v, pick = j;
    }
    if (pick < gold.size()) taken[pick] = true;
    matches.push_back(pick < gold.size());
  }
  return matches;
}

}  // namespace clarify::oracle
