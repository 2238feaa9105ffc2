#pragma once

// Tape-based reverse-mode differentiation. Nodes are appended in execution
// order, so the tape is always topologically sorted and backward() is a
// single reverse sweep.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/params.hpp"
#include "msan/tensor.hpp"

namespace msan {

struct Var {
  std::size_t id = 0;
};

template <typename T> struct Gradients {
  std::map<std::string, Tensor<T>> by_name;
  // Parameters that were registered but never reached from the loss.
  std::vector<std::string> detached;

  const Tensor<T> &at(const std::string &name) const {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ValueError("no gradient for parameter " + name);
    return it->second;
  }
};

template <typename T> class Graph {
public:
  using Backward = std::function<void(Graph &, const Tensor<T> &grad_out)>;

  explicit Graph(bool record = true) : record_(record) {}

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  Var parameter(const std::string &name, const Tensor<T> &value) {
    Var v = push(value, record_, {});
    nodes_[v.id].param_name = name;
    params_.push_back(v.id);
    return v;
  }

  Var parameter(ParamStore<T> &store, const std::string &name) {
    return parameter(name, store.at(name));
  }

  // Appends an op node. The backward callback is kept only when some input
  // needs a gradient.
  Var op(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    return op(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
  }

  Var op(Tensor<T> value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs)
      needs = needs || nodes_.at(v.id).requires_grad;
    needs = needs && record_;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T> &value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer for v, allocated on first use; nullptr when v is not
  // differentiable.
  Tensor<T> *grad_sink(Var v) {
    Node &nd = nodes_.at(v.id);
    if (!nd.requires_grad)
      return nullptr;
    if (!nd.grad)
      nd.grad = std::make_unique<Tensor<T>>(nd.value.shape());
    return nd.grad.get();
  }

  const Tensor<T> *grad(Var v) const { return nodes_.at(v.id).grad.get(); }

  Gradients<T> backward(Var loss) {
    if (nodes_.at(loss.id).value.size() != 1)
      throw ShapeError("backward: loss must be a scalar, got " +
                       nodes_[loss.id].value.shape().str());
    if (!record_)
      throw ValueError("backward: graph was built without recording");
    if (Tensor<T> *seed = grad_sink(loss))
      (*seed)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node &nd = nodes_[i];
      if (nd.backward && nd.grad)
        nd.backward(*this, *nd.grad);
    }
    Gradients<T> out;
    for (std::size_t id : params_) {
      const Node &nd = nodes_[id];
      auto [it, fresh] = out.by_name.try_emplace(nd.param_name, nd.value.shape());
      if (nd.grad)
        it->second += *nd.grad;
      (void)fresh;
    }
    for (auto &[name, g] : out.by_name) {
      bool reached = false;
      for (std::size_t id : params_)
        reached = reached || (nodes_[id].param_name == name && nodes_[id].grad);
      if (!reached)
        out.detached.push_back(name);
    }
    return out;
  }

private:
  struct Node {
    Tensor<T> value;
    std::unique_ptr<Tensor<T>> grad;
    bool requires_grad = false;
    std::string param_name;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward) {
    Node nd;
    nd.value = std::move(value);
    nd.requires_grad = requires_grad;
    nd.backward = std::move(backward);
    nodes_.push_back(std::move(nd));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
};

// -------------------- differentiable ops --------------------

namespace ad {

template <typename T>
Var conv2d(Graph<T> &g, Var x, Var kernel, std::optional<Var> bias, const ConvGeometry &geom) {
  std::vector<T> b;
  if (bias)
    b.assign(g.value(*bias).span().begin(), g.value(*bias).span().end());
  Tensor<T> y = msan::conv2d<T>(g.value(x), g.value(kernel), std::span<const T>(b), geom);
  if (!bias)
    return g.op(std::move(y), {x, kernel}, [=](Graph<T> &gr, const Tensor<T> &dy) {
      conv2d_backward<T>(gr.value(x), gr.value(kernel), geom, dy, gr.grad_sink(x),
                         gr.grad_sink(kernel), {});
    });
  return g.op(std::move(y), {x, kernel, *bias}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    Tensor<T> *db = gr.grad_sink(*bias);
    conv2d_backward<T>(gr.value(x), gr.value(kernel), geom, dy, gr.grad_sink(x),
                       gr.grad_sink(kernel), db ? db->span() : std::span<T>{});
  });
}

// Running statistics are updated in place in train mode.
template <typename T>
Var batchnorm(Graph<T> &g, Var x, Var gamma, Var beta, Tensor<T> &running_mean,
              Tensor<T> &running_var, Mode mode, double momentum, double epsilon) {
  auto cache = std::make_shared<BatchNormCache<T>>();
  Tensor<T> y = batchnorm2d<T>(g.value(x), g.value(gamma).span(), g.value(beta).span(),
                               running_mean.span(), running_var.span(), mode, momentum, epsilon,
                               g.recording() ? cache.get() : nullptr);
  return g.op(std::move(y), {x, gamma, beta}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    Tensor<T> *dg = gr.grad_sink(gamma);
    Tensor<T> *db = gr.grad_sink(beta);
    batchnorm2d_backward<T>(dy, *cache, gr.value(gamma).span(), mode, gr.grad_sink(x),
                            dg ? dg->span() : std::span<T>{}, db ? db->span() : std::span<T>{});
  });
}

template <typename T> Var relu(Graph<T> &g, Var x) {
  return g.op(msan::relu(g.value(x)), {x}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    const Tensor<T> &xv = gr.value(x);
    Tensor<T> &dx = *gr.grad_sink(x);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > T(0))
        dx[i] += dy[i];
  });
}

template <typename T> Var add(Graph<T> &g, Var a, Var b) {
  Tensor<T> y = g.value(a);
  y += g.value(b);
  return g.op(std::move(y), {a, b}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    if (Tensor<T> *da = gr.grad_sink(a))
      *da += dy;
    if (Tensor<T> *db = gr.grad_sink(b))
      *db += dy;
  });
}

template <typename T> Var scale(Graph<T> &g, Var x, T s) {
  Tensor<T> y = g.value(x);
  y *= s;
  return g.op(std::move(y), {x}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    Tensor<T> &dx = *gr.grad_sink(x);
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] += s * dy[i];
  });
}

template <typename T> Var mul(Graph<T> &g, Var a, Var b) {
  const Tensor<T> &av = g.value(a), &bv = g.value(b);
  av.check_same_shape(bv, "mul");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = av[i] * bv[i];
  return g.op(std::move(y), {a, b}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    const Tensor<T> &av = gr.value(a), &bv = gr.value(b);
    if (Tensor<T> *da = gr.grad_sink(a))
      for (std::size_t i = 0; i < dy.size(); ++i)
        (*da)[i] += dy[i] * bv[i];
    if (Tensor<T> *db = gr.grad_sink(b))
      for (std::size_t i = 0; i < dy.size(); ++i)
        (*db)[i] += dy[i] * av[i];
  });
}

template <typename T> Var sum(Graph<T> &g, Var x) {
  double s = 0.0;
  for (T v : g.value(x).span())
    s += v;
  return g.op(Tensor<T>(Shape{}, static_cast<T>(s)), {x},
              [=](Graph<T> &gr, const Tensor<T> &dy) {
                Tensor<T> &dx = *gr.grad_sink(x);
                for (std::size_t i = 0; i < dx.size(); ++i)
                  dx[i] += dy[0];
              });
}

// sum(x .* weights) with constant weights; a generic scalar probe for tests.
template <typename T> Var weighted_sum(Graph<T> &g, Var x, const Tensor<T> &weights) {
  const Tensor<T> &xv = g.value(x);
  xv.check_same_shape(weights, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i)
    s += static_cast<double>(xv[i]) * weights[i];
  return g.op(Tensor<T>(Shape{}, static_cast<T>(s)), {x},
              [=](Graph<T> &gr, const Tensor<T> &dy) {
                Tensor<T> &dx = *gr.grad_sink(x);
                for (std::size_t i = 0; i < dx.size(); ++i)
                  dx[i] += dy[0] * weights[i];
              });
}

template <typename T>
Var resize(Graph<T> &g, Var x, std::size_t out_h, std::size_t out_w, bool align_corners) {
  return g.op(bilinear_resize(g.value(x), out_h, out_w, align_corners), {x},
              [=](Graph<T> &gr, const Tensor<T> &dy) {
                bilinear_resize_backward(dy, align_corners, *gr.grad_sink(x));
              });
}

template <typename T> Var global_avg_pool(Graph<T> &g, Var x) {
  return g.op(msan::global_avg_pool(g.value(x)), {x}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    Tensor<T> &dx = *gr.grad_sink(x);
    const std::size_t P = dx.h() * dx.w();
    const T inv = T(1) / static_cast<T>(P);
    for (std::size_t n = 0; n < dx.n(); ++n)
      for (std::size_t c = 0; c < dx.c(); ++c) {
        T *p = dx.plane(n, c);
        const T v = dy(n, c, 0, 0) * inv;
        for (std::size_t i = 0; i < P; ++i)
          p[i] += v;
      }
  });
}

template <typename T> Var concat(Graph<T> &g, const std::vector<Var> &parts) {
  std::vector<const Tensor<T> *> ptrs;
  for (Var v : parts)
    ptrs.push_back(&g.value(v));
  Tensor<T> y = concat_channels<T>(std::span<const Tensor<T> *const>(ptrs));
  auto backward = [parts](Graph<T> &gr, const Tensor<T> &dy) {
    const std::size_t P = dy.h() * dy.w();
    std::size_t offset = 0;
    for (Var v : parts) {
      const std::size_t c = gr.value(v).c();
      if (Tensor<T> *dx = gr.grad_sink(v))
        for (std::size_t n = 0; n < dy.n(); ++n) {
          const T *src = dy.item(n) + offset * P;
          T *dst = dx->item(n);
          for (std::size_t i = 0; i < c * P; ++i)
            dst[i] += src[i];
        }
      offset += c;
    }
  };
  return g.op(std::move(y), std::span<const Var>(parts), backward);
}

// The attention map y of the non-local block (before the 1x1 projection).
template <typename T> Var nonlocal_mix(Graph<T> &g, Var x) {
  return g.op(msan::nonlocal_mix(g.value(x)), {x}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    nonlocal_mix_backward(gr.value(x), dy, *gr.grad_sink(x));
  });
}

// Mean over pixels of -w_y * log softmax(logits)_y. target is (n,1,h,w) in {0,1}.
template <typename T>
Var cross_entropy(Graph<T> &g, Var logits, const Tensor<T> &target,
                  std::array<double, 2> class_weights) {
  const Tensor<T> &z = g.value(logits);
  if (z.c() != 2)
    throw ShapeError("cross_entropy: expected 2-channel logits, got " + z.shape().str());
  if (target.n() != z.n() || target.c() != 1 || target.h() != z.h() || target.w() != z.w())
    throw ShapeError("cross_entropy: target " + target.shape().str() + " does not match logits " +
                     z.shape().str());
  for (T v : target.span())
    if (v != T(0) && v != T(1))
      throw ValueError("cross_entropy: target labels must be 0 or 1");
  const std::size_t P = z.h() * z.w();
  const double count = static_cast<double>(z.n() * P);
  double total = 0.0;
  for (std::size_t n = 0; n < z.n(); ++n) {
    const T *l0 = z.plane(n, 0), *l1 = z.plane(n, 1), *t = target.plane(n, 0);
    for (std::size_t i = 0; i < P; ++i) {
      const double a = l0[i], b = l1[i];
      const double m = std::max(a, b);
      const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      const int y = t[i] != T(0);
      total += class_weights[y] * (lse - (y ? b : a));
    }
  }
  Tensor<T> loss(Shape{}, static_cast<T>(total / count));
  ensure_finite(loss, "cross_entropy");
  return g.op(std::move(loss), {logits}, [=](Graph<T> &gr, const Tensor<T> &dy) {
    const Tensor<T> &z = gr.value(logits);
    Tensor<T> &dz = *gr.grad_sink(logits);
    for (std::size_t n = 0; n < z.n(); ++n) {
      const T *l0 = z.plane(n, 0), *l1 = z.plane(n, 1), *t = target.plane(n, 0);
      T *d0 = dz.plane(n, 0), *d1 = dz.plane(n, 1);
      for (std::size_t i = 0; i < P; ++i) {
        const double a = l0[i], b = l1[i];
        const double m = std::max(a, b);
        const double ea = std::exp(a - m), eb = std::exp(b - m);
        const double p1 = eb / (ea + eb), p0 = ea / (ea + eb);
        const int y = t[i] != T(0);
        const double k = class_weights[y] * static_cast<double>(dy[0]) / count;
        d0[i] += static_cast<T>(k * (p0 - (y ? 0.0 : 1.0)));
        d1[i] += static_cast<T>(k * (p1 - (y ? 1.0 : 0.0)));
      }
    }
  });
}

} // namespace ad
} // namespace msan
