#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>

#include "clarify/autodiff.hpp"

namespace clarify {

// Step decay: base * rate^floor(step / interval).
struct StepDecay {
  double base = 5e-4;
  double rate = 0.9;
  std::uint64_t interval = 4000;

  double at(std::uint64_t step) const {
    if (interval == 0) return base;
    return base * std::pow(rate, static_cast<double>(step / interval));
  }
};

namespace detail {

inline void require_finite_gradients(const ParameterSet& params) {
  for (Parameter* p : params) {
    if (!p->gradient.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
  }
}

}  // namespace detail

class Adam {
 public:
  struct Config {
    StepDecay schedule{};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  explicit Adam(Config cfg) : cfg_(cfg) {}

  // Applies update number step_count (1-based). A non-finite gradient aborts
  // the whole step before any parameter moves.
  void step(const ParameterSet& params, std::uint64_t step_count) {
    if (step_count == 0) throw ConfigError("adam step_count is 1-based");
    detail::require_finite_gradients(params);
    const double lr = cfg_.schedule.at(step_count);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count));
    for (Parameter* p : params) {
      auto& st = state_[p->name];
      if (st.m.size() != p->value.size()) {
        st.m.assign(p->value.size(), 0.0);
        st.v.assign(p->value.size(), 0.0);
      }
      auto theta = p->value.mutable_data();
      auto grad = p->gradient.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * grad[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  double learning_rate(std::uint64_t step_count) const { return cfg_.schedule.at(step_count); }
  const Config& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  Config cfg_{};
  std::unordered_map<std::string, Moments> state_;
};

class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}

  void step(const ParameterSet& params) { step(params, lr_); }

  void step(const ParameterSet& params, double learning_rate) {
    detail::require_finite_gradients(params);
    for (Parameter* p : params) {
      auto& vel = velocity_[p->name];
      if (vel.size() != p->value.size()) vel.assign(p->value.size(), 0.0);
      auto theta = p->value.mutable_data();
      auto grad = p->gradient.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        vel[i] = momentum_ * vel[i] + grad[i];
        theta[i] -= learning_rate * vel[i];
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

}  // namespace clarify
