#pragma once

// Multi-scale attentional segmentation network:
//
//   input -> residual encoder -+-> low-level features (stride 4) -> non-local block --+
//                              |                                                       |
//                              +-> high-level features (stride 8) -> ASPP -> upsample -+
//                                                                                      |
//            logits <- upsample <- 1x1 classifier <- 2 x (3x3 conv-bn-relu) <- concat -+

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msan/attention.hpp"
#include "msan/autodiff.hpp"
#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/params.hpp"
#include "msan/rng.hpp"

namespace msan {

struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 64, 128};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  int output_stride = 8;
  int low_level_stage = 1;
  // Inputs arrive windowed to [0, 255]; the stem rescales them by this factor.
  double input_scale = 1.0 / 255.0;

  void validate() const {
    if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size())
      throw ConfigError("backbone: stage_channels and blocks_per_stage must be non-empty and "
                        "of equal length");
    for (std::size_t i = 0; i < stage_channels.size(); ++i)
      if (stage_channels[i] < 1 || blocks_per_stage[i] < 1)
        throw ConfigError("backbone: channel and block counts must be >= 1");
    if (output_stride != 8 && output_stride != 16)
      throw ConfigError("backbone: output_stride must be 8 or 16");
    if (low_level_stage < 0 || low_level_stage >= static_cast<int>(stage_channels.size()))
      throw ConfigError("backbone: low_level_stage out of range");
    if (!(input_scale > 0.0))
      throw ConfigError("backbone: input_scale must be > 0");
  }
};

struct AsppConfig {
  std::vector<int> rates{12, 24, 36};
  int branch_channels = 64;
  bool include_1x1_branch = true;
  bool include_image_pool_branch = true;
  // Batch norm + ReLU after every branch and after the fuse conv. Without it
  // the module is a purely linear filter bank.
  bool branch_norm = true;

  void validate() const {
    if (rates.empty() && !include_1x1_branch && !include_image_pool_branch)
      throw ConfigError("aspp: at least one branch is required");
    std::set<int> seen;
    for (int r : rates) {
      if (r < 1)
        throw ConfigError("aspp: rates must be strictly positive");
      if (!seen.insert(r).second)
        throw ConfigError("aspp: rates must be distinct");
    }
    if (branch_channels < 1)
      throw ConfigError("aspp: branch_channels must be >= 1");
  }

  int branch_count() const {
    return static_cast<int>(rates.size()) + (include_1x1_branch ? 1 : 0) +
           (include_image_pool_branch ? 1 : 0);
  }
};

struct MsanConfig {
  BackboneConfig backbone;
  AsppConfig aspp;
  int decoder_channels = 64;
  bool attention = true;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const {
    backbone.validate();
    aspp.validate();
    if (decoder_channels < 1)
      throw ConfigError("decoder_channels must be >= 1");
    if (!(bn_epsilon > 0.0) || bn_momentum < 0.0 || bn_momentum > 1.0)
      throw ConfigError("batch norm: epsilon must be > 0 and momentum in [0, 1]");
  }
};

// Per-stage geometry derived from the output stride: stride 2 for the stem,
// stage 0 keeps resolution, later stages downsample until the output stride
// is reached and from then on double their dilation instead.
struct StagePlan {
  int stride;
  int dilation;
  int cumulative_stride;
};

inline std::vector<StagePlan> plan_stages(const BackboneConfig &cfg) {
  std::vector<StagePlan> plan;
  int current = 2, dilation = 1;
  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    int stride = 1;
    if (i > 0) {
      if (current < cfg.output_stride) {
        stride = 2;
        current *= 2;
      } else {
        dilation *= 2;
      }
    }
    plan.push_back({stride, dilation, current});
  }
  return plan;
}

namespace detail {

template <typename T>
void add_conv(ParamStore<T> &ps, const std::string &name, int out_c, int in_c, int k, Rng &rng,
              bool bias) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
  ps.add(name + ".weight",
         Tensor<T>::random_normal(Shape{static_cast<std::size_t>(out_c),
                                        static_cast<std::size_t>(in_c),
                                        static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                                  rng, std_dev));
  if (bias)
    ps.add(name + ".bias", Tensor<T>(Shape{1, static_cast<std::size_t>(out_c), 1, 1}));
}

template <typename T> void add_bn(ParamStore<T> &ps, const std::string &name, int c) {
  const Shape s{1, static_cast<std::size_t>(c), 1, 1};
  ps.add(name + ".gamma", Tensor<T>(s, T(1)));
  ps.add(name + ".beta", Tensor<T>(s));
  ps.add(name + ".running_mean", Tensor<T>(s), false);
  ps.add(name + ".running_var", Tensor<T>(s, T(1)), false);
}

} // namespace detail

// Layer-level helpers shared by the network and its standalone sub-modules.
template <typename T> struct Layers {
  ParamStore<T> &ps;
  Mode mode;
  double bn_momentum;
  double bn_epsilon;

  Var conv(Graph<T> &g, Var x, const std::string &name, ConvGeometry geom) const {
    std::optional<Var> b;
    if (ps.contains(name + ".bias"))
      b = g.parameter(ps, name + ".bias");
    return ad::conv2d(g, x, g.parameter(ps, name + ".weight"), b, geom);
  }

  Var bn(Graph<T> &g, Var x, const std::string &name) const {
    return ad::batchnorm(g, x, g.parameter(ps, name + ".gamma"), g.parameter(ps, name + ".beta"),
                         ps.at(name + ".running_mean"), ps.at(name + ".running_var"), mode,
                         bn_momentum, bn_epsilon);
  }

  Var conv_bn_relu(Graph<T> &g, Var x, const std::string &name, ConvGeometry geom) const {
    return ad::relu(g, bn(g, conv(g, x, name, geom), name + ".bn"));
  }
};

// -------------------- non-local attention --------------------

template <typename T> struct NonLocalParams {
  Tensor<T> w; // (c, c, 1, 1)
};

// z = w * y + x with y the dot-product non-local mix of x.
template <typename T> Var nonlocal_attention(Graph<T> &g, Var x, Var w) {
  Var y = ad::nonlocal_mix(g, x);
  Var wy = ad::conv2d(g, y, w, std::nullopt, ConvGeometry{});
  return ad::add(g, wy, x);
}

template <typename T> Tensor<T> nonlocal_attention(const Tensor<T> &x, const NonLocalParams<T> &p) {
  if (p.w.n() != x.c() || p.w.c() != x.c() || p.w.h() != 1 || p.w.w() != 1)
    throw ShapeError("nonlocal_attention: projection must be (c, c, 1, 1) for c = " +
                     std::to_string(x.c()));
  Graph<T> g(false);
  Var z = nonlocal_attention(g, g.constant(x), g.constant(p.w));
  return g.value(z);
}

// -------------------- ASPP --------------------

template <typename T>
void register_aspp(ParamStore<T> &ps, const std::string &prefix, int in_c, const AsppConfig &cfg,
                   Rng &rng) {
  cfg.validate();
  const int bc = cfg.branch_channels;
  const bool norm = cfg.branch_norm;
  auto branch = [&](const std::string &name, int k) {
    detail::add_conv(ps, name, bc, in_c, k, rng, !norm);
    if (norm)
      detail::add_bn(ps, name + ".bn", bc);
  };
  if (cfg.include_1x1_branch)
    branch(prefix + ".b1x1", 1);
  for (int r : cfg.rates)
    branch(prefix + ".rate" + std::to_string(r), 3);
  if (cfg.include_image_pool_branch)
    detail::add_conv(ps, prefix + ".pool", bc, in_c, 1, rng, true);
  detail::add_conv(ps, prefix + ".fuse", bc, bc * cfg.branch_count(), 1, rng, !norm);
  if (norm)
    detail::add_bn(ps, prefix + ".fuse.bn", bc);
}

// Every atrous branch must see real features at its off-centre taps; a rate at
// or beyond the feature extent would only ever sample padding.
inline void check_aspp_rates(const AsppConfig &cfg, std::size_t h, std::size_t w) {
  for (int r : cfg.rates)
    if (static_cast<std::size_t>(r) >= h || static_cast<std::size_t>(r) >= w)
      throw ShapeError("aspp: atrous rate " + std::to_string(r) +
                       " does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                       " feature map (effective extent " +
                       std::to_string(effective_extent(3, r)) + "); shrink the rates");
}

template <typename T>
Var aspp_forward(Graph<T> &g, Var features, const AsppConfig &cfg, const Layers<T> &L,
                 const std::string &prefix) {
  const Tensor<T> &f = g.value(features);
  check_aspp_rates(cfg, f.h(), f.w());
  const std::size_t h = f.h(), w = f.w();
  auto branch = [&](const std::string &name, ConvGeometry geom) {
    return cfg.branch_norm ? L.conv_bn_relu(g, features, name, geom)
                           : L.conv(g, features, name, geom);
  };
  std::vector<Var> parts;
  if (cfg.include_1x1_branch)
    parts.push_back(branch(prefix + ".b1x1", ConvGeometry{}));
  for (int r : cfg.rates)
    parts.push_back(branch(prefix + ".rate" + std::to_string(r), ConvGeometry::same(3, r)));
  if (cfg.include_image_pool_branch) {
    Var pooled = ad::global_avg_pool(g, features);
    Var proj = ad::relu(g, L.conv(g, pooled, prefix + ".pool", ConvGeometry{}));
    parts.push_back(ad::resize(g, proj, h, w, false));
  }
  Var cat = parts.size() == 1 ? parts.front() : ad::concat(g, parts);
  return cfg.branch_norm ? L.conv_bn_relu(g, cat, prefix + ".fuse", ConvGeometry{})
                         : L.conv(g, cat, prefix + ".fuse", ConvGeometry{});
}

// -------------------- full network --------------------

template <typename T> class MsanModel {
public:
  MsanModel(MsanConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto &bb = cfg_.backbone;
    const auto plan = plan_stages(bb);
    int in_c = bb.stage_channels[0];
    detail::add_conv(params_, "stem", in_c, 1, 3, rng, false);
    detail::add_bn(params_, "stem.bn", in_c);
    for (std::size_t s = 0; s < bb.stage_channels.size(); ++s) {
      const int out_c = bb.stage_channels[s];
      for (int b = 0; b < bb.blocks_per_stage[s]; ++b) {
        const std::string name = block_name(s, b);
        const bool project = b == 0 && (plan[s].stride != 1 || in_c != out_c);
        detail::add_conv(params_, name + ".conv1", out_c, in_c, 3, rng, false);
        detail::add_bn(params_, name + ".conv1.bn", out_c);
        detail::add_conv(params_, name + ".conv2", out_c, out_c, 3, rng, false);
        detail::add_bn(params_, name + ".conv2.bn", out_c);
        if (project) {
          detail::add_conv(params_, name + ".proj", out_c, in_c, 1, rng, false);
          detail::add_bn(params_, name + ".proj.bn", out_c);
        }
        in_c = out_c;
      }
    }
    register_aspp(params_, "aspp", in_c, cfg_.aspp, rng);
    const int low_c = bb.stage_channels[static_cast<std::size_t>(bb.low_level_stage)];
    const int dec = cfg_.decoder_channels;
    detail::add_conv(params_, "decoder.conv1", dec, low_c + cfg_.aspp.branch_channels, 3, rng,
                     false);
    detail::add_bn(params_, "decoder.conv1.bn", dec);
    detail::add_conv(params_, "decoder.conv2", dec, dec, 3, rng, false);
    detail::add_bn(params_, "decoder.conv2.bn", dec);
    detail::add_conv(params_, "classifier", 2, dec, 1, rng, true);
    if (cfg_.attention) {
      // Zero projection: the block starts as the identity map.
      const auto c = static_cast<std::size_t>(low_c);
      params_.add("attention.w", Tensor<T>(Shape{c, c, 1, 1}));
    }
  }

  const MsanConfig &config() const { return cfg_; }
  ParamStore<T> &params() { return params_; }
  const ParamStore<T> &params() const { return params_; }
  int output_stride() const { return cfg_.backbone.output_stride; }

  struct Taps {
    Var low_level;  // encoder stage feeding the attention block
    Var refined;    // after attention (== low_level when disabled)
    Var high_level; // encoder output
    Var context;    // ASPP output
    Var logits;
  };

  Taps forward_taps(Graph<T> &g, Var input, Mode mode) {
    const Tensor<T> &xin = g.value(input);
    const std::size_t os = static_cast<std::size_t>(cfg_.backbone.output_stride);
    if (xin.c() != 1)
      throw ShapeError("msan_forward: expected single-channel slices, got " + xin.shape().str());
    if (xin.h() % os != 0 || xin.w() % os != 0)
      throw ShapeError("msan_forward: spatial size " + std::to_string(xin.h()) + "x" +
                       std::to_string(xin.w()) + " is not divisible by output stride " +
                       std::to_string(os));
    const std::size_t H = xin.h(), W = xin.w();
    const Layers<T> L{params_, mode, cfg_.bn_momentum, cfg_.bn_epsilon};
    const auto &bb = cfg_.backbone;
    const auto plan = plan_stages(bb);

    Var x = ad::scale(g, input, static_cast<T>(bb.input_scale));
    x = L.conv_bn_relu(g, x, "stem", ConvGeometry{1, 2, 1});
    Taps taps{};
    for (std::size_t s = 0; s < bb.stage_channels.size(); ++s) {
      for (int b = 0; b < bb.blocks_per_stage[s]; ++b) {
        const std::string name = block_name(s, b);
        const int stride = b == 0 ? plan[s].stride : 1;
        const int d = plan[s].dilation;
        Var h1 = L.conv_bn_relu(g, x, name + ".conv1", ConvGeometry{d, stride, d});
        Var h2 = L.bn(g, L.conv(g, h1, name + ".conv2", ConvGeometry{d, 1, d}), name + ".conv2.bn");
        Var shortcut = x;
        if (params_.contains(name + ".proj.weight"))
          shortcut = L.bn(g, L.conv(g, x, name + ".proj", ConvGeometry{1, stride, 0}),
                          name + ".proj.bn");
        x = ad::relu(g, ad::add(g, h2, shortcut));
      }
      if (static_cast<int>(s) == bb.low_level_stage)
        taps.low_level = x;
    }
    taps.high_level = x;
    taps.refined = taps.low_level;
    if (cfg_.attention)
      taps.refined = nonlocal_attention(g, taps.low_level, g.parameter(params_, "attention.w"));

    taps.context = aspp_forward(g, taps.high_level, cfg_.aspp, L, "aspp");
    const Tensor<T> &low = g.value(taps.refined);
    Var up = ad::resize(g, taps.context, low.h(), low.w(), false);
    Var cat = ad::concat(g, std::vector<Var>{taps.refined, up});
    Var d = L.conv_bn_relu(g, cat, "decoder.conv1", ConvGeometry::same(3));
    d = L.conv_bn_relu(g, d, "decoder.conv2", ConvGeometry::same(3));
    Var logits = L.conv(g, d, "classifier", ConvGeometry{});
    taps.logits = ad::resize(g, logits, H, W, false);
    return taps;
  }

  Var forward(Graph<T> &g, Var input, Mode mode) { return forward_taps(g, input, mode).logits; }

  // Foreground probability (n,1,h,w) in eval mode.
  Tensor<T> foreground_probability(const Tensor<T> &batch) {
    Graph<T> g(false);
    const Tensor<T> probs = softmax_channels(g.value(forward(g, g.constant(batch), Mode::eval)));
    Tensor<T> fg(probs.n(), 1, probs.h(), probs.w());
    for (std::size_t n = 0; n < probs.n(); ++n)
      std::copy_n(probs.plane(n, 1), probs.h() * probs.w(), fg.plane(n, 0));
    return fg;
  }

private:
  static std::string block_name(std::size_t stage, int block) {
    return "stage" + std::to_string(stage) + ".block" + std::to_string(block);
  }

  MsanConfig cfg_;
  ParamStore<T> params_;
};

template <typename T> Var msan_forward(Graph<T> &g, Var slices, MsanModel<T> &model, Mode mode) {
  return model.forward(g, slices, mode);
}

} // namespace msan
