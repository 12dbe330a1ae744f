#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "jointppo/rng.hpp"
#include "jointppo/tensor.hpp"

namespace jointppo {

// A named trainable weight. `grad` is accumulated by Tape::backward and
// consumed by the optimizer; both buffers always have rows*cols entries.
struct Parameter {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::vector<double> grad;

  Parameter(std::string n, int r, int c)
      : name(std::move(n)),
        rows(r),
        cols(c),
        data(static_cast<size_t>(r) * c, 0.0),
        grad(static_cast<size_t>(r) * c, 0.0) {}

  size_t size() const { return data.size(); }

  Tensor tensor() const {
    Tensor t(rows, cols);
    t.data = data;
    return t;
  }
};

// Ordered registry of parameters. Registration order is the canonical
// iteration order everywhere (optimizer state, checkpoints, gradient checks).
class ParamStore {
 public:
  Parameter& add(const std::string& name, int rows, int cols) {
    if (find(name) != nullptr) throw ContractError("duplicate parameter name: " + name);
    items_.push_back(std::make_unique<Parameter>(name, rows, cols));
    return *items_.back();
  }

  Parameter* find(const std::string& name) {
    for (auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter* find(const std::string& name) const {
    for (auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  size_t count() const { return items_.size(); }
  size_t total_size() const {
    size_t n = 0;
    for (auto& p : items_) n += p->size();
    return n;
  }

  Parameter& operator[](size_t i) { return *items_[i]; }
  const Parameter& operator[](size_t i) const { return *items_[i]; }

  void zero_grad() {
    for (auto& p : items_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
};

// Scaled-uniform weight init, U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void init_glorot(Parameter& p, Rng& rng) {
  const double a = std::sqrt(6.0 / (p.rows + p.cols));
  for (double& w : p.data) w = rng.uniform(-a, a);
}

inline void init_constant(Parameter& p, double v) {
  std::fill(p.data.begin(), p.data.end(), v);
}

}  // namespace jointppo
