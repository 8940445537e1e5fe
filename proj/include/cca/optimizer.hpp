#pragma once

#include <cmath>
#include <vector>

#include "cca/encoder.hpp"

namespace cca {

struct AdamConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over one ParamStore.
template <class T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
    m_ = zero_grads(store);
    v_ = zero_grads(store);
  }

  void step(ParamStore<T>& store, const GradSet<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t p = 0; p < store.values.size(); ++p) {
      auto& w = store.values[p];
      const auto& g = grads[p];
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) -
                              cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  GradSet<T> m_, v_;
};

} // namespace cca
