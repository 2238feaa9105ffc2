#pragma once

// Per-view training on 2-D slices drawn from a set of volumes.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msan/autodiff.hpp"
#include "msan/config.hpp"
#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/model.hpp"
#include "msan/multiscale.hpp"
#include "msan/optim.hpp"
#include "msan/preprocess.hpp"
#include "msan/rng.hpp"
#include "msan/volume.hpp"

namespace msan {

struct TrainingCase {
  std::string id;
  Volume windowed;
  Mask mask;
};

struct SliceRef {
  std::size_t case_index, slice;
};

// Draws foreground-bearing slices with probability p_fg, any slice otherwise.
class SliceSampler {
public:
  SliceSampler(const std::vector<TrainingCase> &cases, Axis a) {
    if (cases.empty())
      throw DataError("train: empty dataset");
    const Dims d = cases.front().windowed.dims();
    for (std::size_t k = 0; k < cases.size(); ++k) {
      const auto &c = cases[k];
      if (!(c.windowed.dims() == d) || !(c.mask.dims() == d))
        throw DataError("train: case " + c.id + " has dims " + c.windowed.dims().str() +
                        ", expected " + d.str() + " like the first case");
      const auto g = slice_geometry(d, a);
      for (std::size_t s = 0; s < g.count; ++s) {
        all_.push_back({k, s});
        bool fg = false;
        for (std::size_t r = 0; r < g.rows && !fg; ++r)
          for (std::size_t col = 0; col < g.cols && !fg; ++col)
            fg = c.mask[slice_voxel(d, a, s, r, col)] != 0;
        if (fg)
          foreground_.push_back({k, s});
      }
    }
  }

  SliceRef sample(Rng &rng, double p_fg) const {
    // Draw the coin unconditionally so the stream layout does not depend on
    // whether foreground slices exist.
    const bool want_fg = rng.uniform() < p_fg;
    const auto &pool = want_fg && !foreground_.empty() ? foreground_ : all_;
    return pool[rng.index(pool.size())];
  }

  std::size_t size() const { return all_.size(); }
  std::size_t foreground_count() const { return foreground_.size(); }

private:
  std::vector<SliceRef> all_, foreground_;
};

template <typename T> struct TrainBatch {
  Tensor<T> images;  // (n,1,h,w), windowed intensities
  Tensor<T> targets; // (n,1,h,w) in {0,1}
  double scale = 1.0;
};

// One augmented batch: a single scale for the whole batch, a rotation per
// sample, bottom/right zero padding up to the model stride.
template <typename T>
TrainBatch<T> make_batch(const std::vector<TrainingCase> &cases, const SliceSampler &sampler,
                         Axis a, int batch_size, std::size_t divisor, const AugmentSpec &aug,
                         double p_fg, Rng &rng) {
  TrainBatch<T> b;
  b.scale = sample_scale(aug, rng);
  const auto g = slice_geometry(cases.front().windowed.dims(), a);
  const std::size_t sh = scaled_extent(g.rows, b.scale), sw = scaled_extent(g.cols, b.scale);
  const std::size_t ph = round_up(sh, divisor), pw = round_up(sw, divisor);
  const auto n = static_cast<std::size_t>(batch_size);
  b.images = Tensor<T>(n, 1, ph, pw);
  b.targets = Tensor<T>(n, 1, ph, pw);
  for (std::size_t k = 0; k < n; ++k) {
    const SliceRef ref = sampler.sample(rng, p_fg);
    const auto &c = cases[ref.case_index];
    Tensor<T> img = extract_slice<T>(c.windowed, a, ref.slice);
    Tensor<T> lab = extract_slice<T>(c.mask, a, ref.slice);
    if (sh != g.rows || sw != g.cols) {
      img = bilinear_resize(img, sh, sw, false);
      lab = nearest_resize(lab, sh, sw);
    }
    auto [ri, rl] = random_rotation(img, lab, sample_rotation(aug, rng));
    for (std::size_t r = 0; r < sh; ++r)
      for (std::size_t col = 0; col < sw; ++col) {
        b.images(k, 0, r, col) = ri(0, 0, r, col);
        b.targets(k, 0, r, col) = rl(0, 0, r, col);
      }
  }
  return b;
}

struct TrainLogRow {
  std::int64_t iter;
  double loss;
  double lr;
};

// Stream seeds derived from the run seed, so every view and purpose gets its
// own independent sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t init_seed(const TrainConfig &tc, Axis a) {
  return derive_seed(tc.seed, 2 * static_cast<std::uint64_t>(a));
}
inline std::uint64_t sampling_seed(const TrainConfig &tc, Axis a) {
  return derive_seed(tc.seed, 2 * static_cast<std::uint64_t>(a) + 1);
}

// Runs tc.max_iter SGD iterations on `model`. `on_iter` (optional) sees every
// log row as it is produced.
template <typename T>
std::vector<TrainLogRow>
train_model(MsanModel<T> &model, const std::vector<TrainingCase> &cases, Axis a,
            const TrainConfig &tc, const AugmentSpec &aug,
            const std::function<void(const TrainLogRow &)> &on_iter = {}) {
  tc.validate();
  aug.validate();
  const SliceSampler sampler(cases, a);
  Rng rng(sampling_seed(tc, a));
  Sgd<T> opt(tc.momentum, tc.weight_decay);
  const PolySchedule sched = tc.schedule();
  const auto divisor = static_cast<std::size_t>(model.output_stride());
  std::vector<TrainLogRow> log;
  for (std::int64_t it = 0; it < tc.max_iter; ++it) {
    const auto batch = make_batch<T>(cases, sampler, a, tc.batch_size, divisor, aug,
                                     tc.foreground_slice_prob, rng);
    Graph<T> g;
    Var logits = model.forward(g, g.constant(batch.images), Mode::train);
    Var loss = ad::cross_entropy(g, logits, batch.targets, tc.class_weights);
    const double value = g.value(loss)[0];
    if (!std::isfinite(value))
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(it) +
                           " (view " + std::string(axis_name(a)) + ")");
    const double lr = poly_lr(sched, it);
    opt.step(model.params(), g.backward(loss), lr);
    for (const auto &e : model.params().entries())
      if (!e.value.all_finite())
        throw NumericalError("train: parameter " + e.name + " became non-finite at iteration " +
                             std::to_string(it));
    log.push_back({it, value, lr});
    if (on_iter)
      on_iter(log.back());
  }
  return log;
}

inline std::string train_log_csv(const std::vector<TrainLogRow> &log) {
  std::string out = "iter,loss,lr\n";
  char buf[96];
  for (const auto &r : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g\n", static_cast<long long>(r.iter), r.loss,
                  r.lr);
    out += buf;
  }
  return out;
}

} // namespace msan
