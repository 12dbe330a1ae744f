#pragma once

#include <cmath>
#include <vector>

#include "jointppo/params.hpp"

namespace jointppo {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction over a ParamStore. Moment buffers are laid out
// in registration order; step_count increments by exactly one per step().
class Adam {
 public:
  explicit Adam(const ParamStore& store, AdamConfig cfg = {}) : cfg_(cfg) {
    m_.resize(store.count());
    v_.resize(store.count());
    for (size_t i = 0; i < store.count(); ++i) {
      m_[i].assign(store[i].size(), 0.0);
      v_[i].assign(store[i].size(), 0.0);
    }
  }

  // Applies one update using each parameter's accumulated grad. The learning
  // rate comes from the caller (the active schedule).
  void step(ParamStore& store, double lr) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (size_t i = 0; i < store.count(); ++i) {
      Parameter& p = store[i];
      std::vector<double>& m = m_[i];
      std::vector<double>& v = v_[i];
      for (size_t j = 0; j < p.size(); ++j) {
        const double g = p.grad[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  long long step_count() const { return step_count_; }
  const std::vector<double>& first_moment(size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(size_t i) const { return v_[i]; }

 private:
  AdamConfig cfg_;
  long long step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace jointppo
