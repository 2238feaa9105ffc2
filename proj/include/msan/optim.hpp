#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "msan/autodiff.hpp"
#include "msan/error.hpp"
#include "msan/params.hpp"
#include "msan/rng.hpp"

namespace msan {

// -------------------- learning rate --------------------

// lr(iter) = base_lr * (1 - iter / max_iter)^power
struct PolySchedule {
  double base_lr = 0.05;
  double power = 0.9;
  std::int64_t max_iter = 1;

  void validate() const {
    if (max_iter < 1)
      throw ConfigError("poly schedule: max_iter must be >= 1");
    if (!(base_lr >= 0.0) || !(power > 0.0))
      throw ConfigError("poly schedule: base_lr must be >= 0 and power > 0");
  }
};

inline double poly_lr(const PolySchedule &s, std::int64_t iter) {
  s.validate();
  if (iter < 0 || iter > s.max_iter)
    throw ValueError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                     std::to_string(s.max_iter) + "]");
  if (iter == s.max_iter)
    return 0.0;
  return s.base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(s.max_iter),
                              s.power);
}

// -------------------- SGD --------------------

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v
template <typename T>
void sgd_step(Tensor<T> &param, const Tensor<T> &grad, Tensor<T> &velocity, double lr,
              double momentum, double weight_decay) {
  param.check_same_shape(grad, "sgd_step grad");
  param.check_same_shape(velocity, "sgd_step velocity");
  if (!(lr >= 0.0))
    throw ValueError("sgd_step: learning rate must be >= 0");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    velocity[i] = static_cast<T>(v);
    param[i] = static_cast<T>(param[i] - lr * v);
  }
}

template <typename T> class Sgd {
public:
  Sgd(double momentum = 0.9, double weight_decay = 1e-4)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore<T> &params, const Gradients<T> &grads, double lr) {
    for (auto &e : params.entries()) {
      if (!e.trainable)
        continue;
      auto it = velocity_.find(e.name);
      if (it == velocity_.end())
        it = velocity_.emplace(e.name, Tensor<T>(e.value.shape())).first;
      sgd_step(e.value, grads.at(e.name), it->second, lr, momentum_, weight_decay_);
    }
  }

private:
  double momentum_, weight_decay_;
  std::unordered_map<std::string, Tensor<T>> velocity_;
};

// -------------------- finite-difference gradient check --------------------

struct GradCheckOptions {
  double step = 1e-6;        // h = step * max(1, |x|)
  std::size_t max_coords = 24; // per parameter; all coordinates when smaller
  double scale_floor = 1.0;  // relative error denominator floor
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares analytic gradients of a scalar loss against central differences
// for the listed parameters (all trainable ones when empty). The builder must
// recompute the loss from the current contents of the store.
template <typename T>
GradCheckResult grad_check(ParamStore<T> &store, const std::function<Var(Graph<T> &)> &build_loss,
                           std::vector<std::string> names = {}, GradCheckOptions opt = {}) {
  if constexpr (!std::is_same_v<T, double>) {
    throw ValueError("grad_check requires a real64 graph; real32 lacks the precision for "
                     "central differences");
  } else {
    if (names.empty())
      for (const auto &e : store.entries())
        if (e.trainable)
          names.push_back(e.name);

    // Snapshot buffers (e.g. running statistics) so every evaluation sees the
    // same state.
    const ParamStore<T> snapshot = store;
    auto restore_buffers = [&] {
      for (auto &e : store.entries())
        if (!e.trainable)
          e.value = snapshot.at(e.name);
    };
    auto eval = [&] {
      restore_buffers();
      Graph<T> g(false);
      return static_cast<double>(g.value(build_loss(g))[0]);
    };

    restore_buffers();
    Graph<T> g;
    Var loss = build_loss(g);
    const Gradients<T> analytic = g.backward(loss);

    Rng rng(opt.seed);
    GradCheckResult res;
    for (const auto &name : names) {
      Tensor<T> &p = store.at(name);
      const Tensor<T> &a = analytic.at(name);
      std::vector<std::size_t> coords;
      if (p.size() <= opt.max_coords) {
        for (std::size_t i = 0; i < p.size(); ++i)
          coords.push_back(i);
      } else {
        for (std::size_t k = 0; k < opt.max_coords; ++k)
          coords.push_back(static_cast<std::size_t>(rng.index(p.size())));
      }
      for (std::size_t i : coords) {
        const T orig = p[i];
        const double h = opt.step * std::max(1.0, std::abs(static_cast<double>(orig)));
        p[i] = orig + h;
        const double fp = eval();
        p[i] = orig - h;
        const double fm = eval();
        p[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double an = a[i];
        const double denom =
            std::max({std::abs(an), std::abs(numeric), opt.scale_floor});
        const double rel = std::abs(an - numeric) / denom;
        ++res.coords_checked;
        if (res.coords_checked == 1 || rel > res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = name;
          res.worst_index = i;
        }
      }
    }
    restore_buffers();
    return res;
  }
}

} // namespace msan
