#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lmcd/backbone.hpp"
#include "lmcd/errors.hpp"
#include "lmcd/tensor.hpp"

namespace lmcd {

// Adam over the trainable tensors of a parameter set. Tensor handles share
// buffers with the set, so updates land in place. Named tensors listed in
// `clamp_nonnegative` are clipped to [0, inf) after every step (monotone-MLP
// constraint).
template <typename R>
class Adam {
 public:
  explicit Adam(ParamSet<R>& params,
                std::vector<std::string> clamp_nonnegative = {},
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, t] : params.items()) {
      if (!t.requires_grad()) continue;
      bool clamp = false;
      for (const auto& c : clamp_nonnegative) clamp = clamp || c == name;
      entries_.push_back(Entry{name, t, std::vector<double>(t.size(), 0.0),
                               std::vector<double>(t.size(), 0.0), clamp});
    }
  }

  size_t num_params() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Decoupled weight decay (applied outside the moment estimates), i.e. a
  // Gaussian shrinkage prior on the raw parameters.
  void step(double lr, double weight_decay = 0.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& e : entries_) {
      const std::vector<R>& g = e.tensor.grad();
      std::vector<R>& x = e.tensor.data();
      for (size_t i = 0; i < x.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi)) {
          throw NumericError("non-finite gradient in " + e.name);
        }
        e.m[i] = beta1_ * e.m[i] + (1.0 - beta1_) * gi;
        e.v[i] = beta2_ * e.v[i] + (1.0 - beta2_) * gi * gi;
        const double update =
            lr * (e.m[i] / bc1) / (std::sqrt(e.v[i] / bc2) + eps_);
        double xi = static_cast<double>(x[i]) - update -
                    lr * weight_decay * static_cast<double>(x[i]);
        if (e.clamp && xi < 0.0) xi = 0.0;
        x[i] = static_cast<R>(xi);
      }
    }
  }

 private:
  struct Entry {
    std::string name;
    Tensor<R> tensor;  // shares buffers with the parameter set
    std::vector<double> m;
    std::vector<double> v;
    bool clamp = false;
  };

  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Entry> entries_;
};

}  // namespace lmcd
