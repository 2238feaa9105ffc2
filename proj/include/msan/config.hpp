#pragma once

// RunConfig: every tunable of the pipeline in one JSON document.
// Missing keys keep their defaults; unknown keys are rejected.

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/model.hpp"
#include "msan/multiscale.hpp"
#include "msan/optim.hpp"
#include "msan/phantom.hpp"
#include "msan/preprocess.hpp"

namespace msan {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct TrainConfig {
  int batch_size = 4;
  std::int64_t max_iter = 2000;
  double base_lr = 0.05;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::array<double, 2> class_weights{1.0, 3.0};
  double foreground_slice_prob = 0.7;
  std::uint64_t seed = 0;

  PolySchedule schedule() const { return {base_lr, power, max_iter}; }

  void validate() const {
    if (batch_size < 1)
      throw ConfigError("train: batch_size must be >= 1");
    if (max_iter < 0)
      throw ConfigError("train: max_iter must be >= 0");
    if (!(base_lr >= 0.0) || !(power > 0.0))
      throw ConfigError("train: need base_lr >= 0 and power > 0");
    if (momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
      throw ConfigError("train: need momentum in [0, 1) and weight_decay >= 0");
    if (!(class_weights[0] > 0.0) || !(class_weights[1] > 0.0))
      throw ConfigError("train: class weights must be > 0");
    if (foreground_slice_prob < 0.0 || foreground_slice_prob > 1.0)
      throw ConfigError("train: foreground_slice_prob must be in [0, 1]");
  }
};

struct SeedRange {
  std::uint64_t first = 0, last = 0; // inclusive
  std::size_t count() const { return static_cast<std::size_t>(last - first + 1); }
  bool contains(std::uint64_t s) const { return first <= s && s <= last; }
};

struct DataConfig {
  SeedRange train_seeds{0, 44};
  SeedRange test_seeds{45, 64};

  void validate() const {
    if (train_seeds.first > train_seeds.last || test_seeds.first > test_seeds.last)
      throw ConfigError("data: seed ranges must satisfy first <= last");
    if (train_seeds.first <= test_seeds.last && test_seeds.first <= train_seeds.last)
      throw ConfigError("data: train and test seed ranges overlap");
  }
};

// Phantom-scale network: 64^3 volumes, stride-8 features of 10..14 pixels.
inline MsanConfig desk_model() {
  MsanConfig m;
  m.backbone.stage_channels = {8, 16, 32, 64};
  m.backbone.blocks_per_stage = {1, 1, 1, 1};
  m.aspp.rates = {2, 4, 6};
  m.aspp.branch_channels = 32;
  m.decoder_channels = 32;
  return m;
}

struct RunConfig {
  int schema_version = kSchemaVersion;
  WindowSpec window;
  AugmentSpec augment;
  MsanConfig model = desk_model();
  InferenceConfig inference;
  TrainConfig train;
  PhantomConfig phantom;
  DataConfig data;

  void validate() const {
    if (schema_version != kSchemaVersion)
      throw ConfigError("config: unsupported schema_version " + std::to_string(schema_version));
    window.validate();
    augment.validate();
    model.validate();
    inference.validate();
    train.validate();
    phantom.validate();
    data.validate();
  }
};

// -------------------- JSON --------------------

namespace detail {

class Fields {
public:
  Fields(const Json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object())
      throw ConfigError("config: " + path_ + " must be an object");
  }

  // Rejects any key that was not asked for.
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!known_.count(it.key()))
        throw ConfigError("config: unknown key " + path_ + "." + it.key());
  }

  template <typename V> void get(const char *key, V &out) {
    known_.insert(key);
    if (!j_.contains(key))
      return;
    try {
      out = j_.at(key).template get<V>();
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError("config: bad value for " + path_ + "." + key + ": " + e.what());
    }
  }

  template <typename Fn> void nested(const char *key, Fn &&fn) {
    known_.insert(key);
    if (!j_.contains(key))
      return;
    Fields sub(j_.at(key), path_ + "." + key);
    fn(sub);
    sub.done();
  }

private:
  const Json &j_;
  std::string path_;
  std::set<std::string> known_;
};

template <typename R> Json range_json(const R &r) { return Json::array({r.lo, r.hi}); }

template <typename R> void read_range(Fields &f, const char *key, R &r) {
  std::array<decltype(r.lo), 2> v{r.lo, r.hi};
  f.get(key, v);
  r.lo = v[0];
  r.hi = v[1];
}

inline std::string pad_name(PadPolicy p) { return p == PadPolicy::reflect ? "reflect" : "zero"; }
inline PadPolicy parse_pad(const std::string &s) {
  if (s == "reflect")
    return PadPolicy::reflect;
  if (s == "zero")
    return PadPolicy::zero;
  throw ConfigError("config: pad_policy must be 'reflect' or 'zero', got '" + s + "'");
}

} // namespace detail

inline Json to_json(const MsanConfig &m) {
  return Json{{"backbone",
               {{"stage_channels", m.backbone.stage_channels},
                {"blocks_per_stage", m.backbone.blocks_per_stage},
                {"output_stride", m.backbone.output_stride},
                {"low_level_stage", m.backbone.low_level_stage},
                {"input_scale", m.backbone.input_scale}}},
              {"aspp",
               {{"rates", m.aspp.rates},
                {"branch_channels", m.aspp.branch_channels},
                {"include_1x1_branch", m.aspp.include_1x1_branch},
                {"include_image_pool_branch", m.aspp.include_image_pool_branch},
                {"branch_norm", m.aspp.branch_norm}}},
              {"decoder_channels", m.decoder_channels},
              {"attention", m.attention},
              {"bn_momentum", m.bn_momentum},
              {"bn_epsilon", m.bn_epsilon}};
}

inline void read_model(detail::Fields &f, MsanConfig &m) {
  f.nested("backbone", [&](detail::Fields &g) {
    g.get("stage_channels", m.backbone.stage_channels);
    g.get("blocks_per_stage", m.backbone.blocks_per_stage);
    g.get("output_stride", m.backbone.output_stride);
    g.get("low_level_stage", m.backbone.low_level_stage);
    g.get("input_scale", m.backbone.input_scale);
  });
  f.nested("aspp", [&](detail::Fields &g) {
    g.get("rates", m.aspp.rates);
    g.get("branch_channels", m.aspp.branch_channels);
    g.get("include_1x1_branch", m.aspp.include_1x1_branch);
    g.get("include_image_pool_branch", m.aspp.include_image_pool_branch);
    g.get("branch_norm", m.aspp.branch_norm);
  });
  f.get("decoder_channels", m.decoder_channels);
  f.get("attention", m.attention);
  f.get("bn_momentum", m.bn_momentum);
  f.get("bn_epsilon", m.bn_epsilon);
}

inline MsanConfig model_from_json(const Json &j) {
  MsanConfig m;
  detail::Fields f(j, "model");
  read_model(f, m);
  f.done();
  m.validate();
  return m;
}

inline Json to_json(const WindowSpec &w) {
  return Json{{"hu_min", w.hu_min}, {"hu_max", w.hu_max}, {"out_max", w.out_max}};
}

inline Json to_json(const InferenceConfig &c) {
  return Json{{"scales", c.scales},
              {"rho", c.rho},
              {"pad_policy", detail::pad_name(c.pad_policy)},
              {"batch", c.batch}};
}

inline Json to_json(const RunConfig &c) {
  const auto &p = c.phantom;
  return Json{
      {"schema_version", c.schema_version},
      {"window", to_json(c.window)},
      {"augment",
       {{"rot_min_deg", c.augment.rot_min_deg},
        {"rot_max_deg", c.augment.rot_max_deg},
        {"train_scales", c.augment.train_scales},
        {"seed", c.augment.seed}}},
      {"model", to_json(c.model)},
      {"inference", to_json(c.inference)},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"max_iter", c.train.max_iter},
        {"base_lr", c.train.base_lr},
        {"power", c.train.power},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"class_weights", c.train.class_weights},
        {"foreground_slice_prob", c.train.foreground_slice_prob},
        {"seed", c.train.seed}}},
      {"phantom",
       {{"dims", {p.dims.W, p.dims.H, p.dims.L}},
        {"n_foci", detail::range_json(p.n_foci)},
        {"focus_radius_vox", detail::range_json(p.focus_radius_vox)},
        {"focus_intensity_hu", detail::range_json(p.focus_intensity_hu)},
        {"boundary_noise_amp", p.boundary_noise_amp},
        {"focus_gradient_hu", p.focus_gradient_hu},
        {"bone_rings", detail::range_json(p.bone_rings)},
        {"bone_hu", detail::range_json(p.bone_hu)},
        {"bone_major_radius_vox", detail::range_json(p.bone_major_radius_vox)},
        {"bone_minor_radius_vox", detail::range_json(p.bone_minor_radius_vox)},
        {"vessel_tubes", detail::range_json(p.vessel_tubes)},
        {"vessel_hu", detail::range_json(p.vessel_hu)},
        {"vessel_radius_vox", detail::range_json(p.vessel_radius_vox)},
        {"tissue_hu", p.tissue_hu},
        {"air_hu", p.air_hu},
        {"noise_sigma_hu", p.noise_sigma_hu},
        {"placement_retries", p.placement_retries}}},
      {"data",
       {{"train_seeds", {c.data.train_seeds.first, c.data.train_seeds.last}},
        {"test_seeds", {c.data.test_seeds.first, c.data.test_seeds.last}}}}};
}

inline RunConfig run_config_from_json(const Json &j) {
  RunConfig c;
  {
    detail::Fields f(j, "config");
    f.get("schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion)
      throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
    f.nested("window", [&](detail::Fields &g) {
      g.get("hu_min", c.window.hu_min);
      g.get("hu_max", c.window.hu_max);
      g.get("out_max", c.window.out_max);
    });
    f.nested("augment", [&](detail::Fields &g) {
      g.get("rot_min_deg", c.augment.rot_min_deg);
      g.get("rot_max_deg", c.augment.rot_max_deg);
      g.get("train_scales", c.augment.train_scales);
      g.get("seed", c.augment.seed);
    });
    f.nested("model", [&](detail::Fields &g) { read_model(g, c.model); });
    f.nested("inference", [&](detail::Fields &g) {
      g.get("scales", c.inference.scales);
      g.get("rho", c.inference.rho);
      std::string pad = detail::pad_name(c.inference.pad_policy);
      g.get("pad_policy", pad);
      c.inference.pad_policy = detail::parse_pad(pad);
      g.get("batch", c.inference.batch);
    });
    f.nested("train", [&](detail::Fields &g) {
      g.get("batch_size", c.train.batch_size);
      g.get("max_iter", c.train.max_iter);
      g.get("base_lr", c.train.base_lr);
      g.get("power", c.train.power);
      g.get("momentum", c.train.momentum);
      g.get("weight_decay", c.train.weight_decay);
      g.get("class_weights", c.train.class_weights);
      g.get("foreground_slice_prob", c.train.foreground_slice_prob);
      g.get("seed", c.train.seed);
    });
    f.nested("phantom", [&](detail::Fields &g) {
      auto &p = c.phantom;
            std::array<std::size_t, 3> dims{p.dims.W, p.dims.H, p.dims.L};
      g.get("dims", dims);
      p.dims = {dims[0], dims[1], dims[2]};
      detail::read_range(g, "n_foci", p.n_foci);
      detail::read_range(g, "focus_radius_vox", p.focus_radius_vox);
      detail::read_range(g, "focus_intensity_hu", p.focus_intensity_hu);
      g.get("boundary_noise_amp", p.boundary_noise_amp);
      g.get("focus_gradient_hu", p.focus_gradient_hu);
      detail::read_range(g, "bone_rings", p.bone_rings);
      detail::read_range(g, "bone_hu", p.bone_hu);
      detail::read_range(g, "bone_major_radius_vox", p.bone_major_radius_vox);
      detail::read_range(g, "bone_minor_radius_vox", p.bone_minor_radius_vox);
      detail::read_range(g, "vessel_tubes", p.vessel_tubes);
      detail::read_range(g, "vessel_hu", p.vessel_hu);
      detail::read_range(g, "vessel_radius_vox", p.vessel_radius_vox);
      g.get("tissue_hu", p.tissue_hu);
      g.get("air_hu", p.air_hu);
      g.get("noise_sigma_hu", p.noise_sigma_hu);
      g.get("placement_retries", p.placement_retries);
    });
    f.nested("data", [&](detail::Fields &g) {
      std::array<std::uint64_t, 2> tr{c.data.train_seeds.first, c.data.train_seeds.last};
      std::array<std::uint64_t, 2> te{c.data.test_seeds.first, c.data.test_seeds.last};
      g.get("train_seeds", tr);
      g.get("test_seeds", te);
      c.data.train_seeds = {tr[0], tr[1]};
      c.data.test_seeds = {te[0], te[1]};
    });
    f.done();
  }
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string &text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline std::string dump_config(const RunConfig &c) { return to_json(c).dump(2) + "\n"; }

} // namespace msan
