#pragma once

// File-level pipeline steps shared by the CLI and the experiment driver.
//
// Directory layout:
//   data dir   volume_<seed>.mvol, mask_<seed>.mvol, manifest.json, config.json
//   ckpt dir   model_<axis>.ckpt, train_<axis>.csv, config.json
//   pred dir   mask_<seed>.mvol, inference.json, config.json
//              report.csv, report.json (written by eval)

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msan/checkpoint.hpp"
#include "msan/config.hpp"
#include "msan/metrics.hpp"
#include "msan/multiview.hpp"
#include "msan/mvol.hpp"
#include "msan/phantom.hpp"
#include "msan/train.hpp"

namespace msan::pipeline {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create directory " + dir.string());
}

inline void write_text(const fs::path &p, const std::string &s) { bytes::write_file(p.string(), s); }

inline void echo_config(const fs::path &dir, const RunConfig &cfg) {
  write_text(dir / "config.json", dump_config(cfg));
}

inline std::string case_id(std::uint64_t seed) { return std::to_string(seed); }
inline std::string volume_file(const std::string &id) { return "volume_" + id + ".mvol"; }
inline std::string mask_file(const std::string &id) { return "mask_" + id + ".mvol"; }

// -------------------- phantom sets --------------------

struct ManifestEntry {
  std::string id;
  std::uint64_t seed;
  std::string split;
};

inline std::vector<ManifestEntry> planned_cases(const DataConfig &d) {
  std::vector<ManifestEntry> out;
  for (std::uint64_t s = d.train_seeds.first; s <= d.train_seeds.last; ++s)
    out.push_back({case_id(s), s, "train"});
  for (std::uint64_t s = d.test_seeds.first; s <= d.test_seeds.last; ++s)
    out.push_back({case_id(s), s, "test"});
  return out;
}

inline Json gen_phantoms(const RunConfig &cfg, const fs::path &out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  Json files = Json::array();
  std::size_t n_train = 0, n_test = 0;
  for (const auto &e : planned_cases(cfg.data)) {
    const Phantom ph = generate_phantom(cfg.phantom, e.seed);
    write_mvol((out_dir / volume_file(e.id)).string(), ph.volume);
    write_mvol((out_dir / mask_file(e.id)).string(), ph.mask);
    files.push_back({{"id", e.id},
                     {"seed", e.seed},
                     {"split", e.split},
                     {"volume", volume_file(e.id)},
                     {"mask", mask_file(e.id)},
                     {"foreground_voxels", ph.mask.foreground()}});
    (e.split == "train" ? n_train : n_test)++;
  }
  Json manifest{{"schema_version", kSchemaVersion},
                {"counts", {{"train", n_train}, {"test", n_test}}},
                {"files", files}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  echo_config(out_dir, cfg);
  return manifest;
}

inline std::vector<ManifestEntry> read_manifest(const fs::path &data_dir) {
  Json j;
  try {
    j = Json::parse(bytes::read_file((data_dir / "manifest.json").string()));
    std::vector<ManifestEntry> out;
    for (const auto &f : j.at("files"))
      out.push_back({f.at("id").get<std::string>(), f.at("seed").get<std::uint64_t>(),
                     f.at("split").get<std::string>()});
    return out;
  } catch (const nlohmann::json::exception &e) {
    throw DataError("manifest in " + data_dir.string() + " is malformed: " + e.what());
  }
}

inline std::vector<TrainingCase> load_split(const fs::path &data_dir, const std::string &split,
                                            const WindowSpec &window) {
  std::vector<TrainingCase> out;
  for (const auto &e : read_manifest(data_dir))
    if (e.split == split)
      out.push_back({e.id,
                     hu_window_normalize(read_volume((data_dir / volume_file(e.id)).string()), window),
                     read_mask((data_dir / mask_file(e.id)).string())});
  if (out.empty())
    throw DataError("no '" + split + "' cases listed in " + (data_dir / "manifest.json").string());
  return out;
}

// -------------------- checkpoints --------------------

inline std::string checkpoint_file(Axis a) { return "model_" + std::string(axis_name(a)) + ".ckpt"; }
inline std::string train_log_file(Axis a) { return "train_" + std::string(axis_name(a)) + ".csv"; }

inline std::string checkpoint_descriptor(const RunConfig &cfg, Axis a) {
  return Json{{"axis", axis_name(a)}, {"model", to_json(cfg.model)}}.dump();
}

using Model = MsanModel<float>;

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::string fingerprint; // FNV-1a of the checkpoint bytes
};

inline LoadedModel load_model(const fs::path &path, Axis expected) {
  const std::string bytes = bytes::read_file(path.string());
  auto ck = decode_checkpoint<float>(bytes);
  Json desc;
  try {
    desc = Json::parse(ck.descriptor);
    if (desc.at("axis").get<std::string>() != axis_name(expected))
      throw DataError(path.string() + " was trained for the " +
                      desc.at("axis").get<std::string>() + " view, expected " +
                      std::string(axis_name(expected)));
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError(path.string() + ": bad descriptor: " + e.what());
  }
  LoadedModel out{std::make_unique<Model>(model_from_json(desc.at("model")), 0), fnv1a_hex(bytes)};
  assign_params(out.model->params(), ck.params);
  return out;
}

// Trains one view and writes checkpoint, log and config echo into out_dir.
inline std::vector<TrainLogRow>
train_axis(const RunConfig &cfg, Axis a, const std::vector<TrainingCase> &cases,
           const fs::path &out_dir, const std::function<void(const TrainLogRow &)> &on_iter = {}) {
  cfg.validate();
  ensure_dir(out_dir);
  Model model(cfg.model, init_seed(cfg.train, a));
  const auto log = train_model(model, cases, a, cfg.train, cfg.augment, on_iter);
  save_checkpoint((out_dir / checkpoint_file(a)).string(), model.params(),
                  checkpoint_descriptor(cfg, a));
  write_text(out_dir / train_log_file(a), train_log_csv(log));
  echo_config(out_dir, cfg);
  return log;
}

// -------------------- inference --------------------

struct ModelSet {
  std::map<Axis, LoadedModel> models;

  std::map<Axis, SliceModel<float>> slice_models() const {
    std::map<Axis, SliceModel<float>> out;
    for (const auto &[a, m] : models)
      out.emplace(a, slice_model(*m.model));
    return out;
  }

  // Identifies the checkpoints in axis order.
  std::string fingerprint() const {
    std::string s;
    for (const auto &[a, m] : models)
      s += std::string(axis_name(a)) + ":" + m.fingerprint + ";";
    return s;
  }
};

inline ModelSet load_models(const fs::path &ckpt_dir, const std::vector<Axis> &axes) {
  ModelSet set;
  for (Axis a : axes) {
    const fs::path p = ckpt_dir / checkpoint_file(a);
    if (!fs::exists(p))
      throw DataError("missing checkpoint for the " + std::string(axis_name(a)) + " view: " +
                      p.string());
    set.models.emplace(a, load_model(p, a));
  }
  return set;
}

// Three-view inference, or a single view when `single` is set.
inline Mask infer_hu_volume(const ModelSet &set, const Volume &hu, const RunConfig &cfg,
                            std::optional<Axis> single = std::nullopt) {
  const auto models = set.slice_models();
  if (single) {
    auto it = models.find(*single);
    if (it == models.end())
      throw DataError("no model loaded for the " + std::string(axis_name(*single)) + " view");
    return infer_view(it->second, hu_window_normalize(hu, cfg.window), *single, cfg.inference);
  }
  return infer_volume(models, hu, cfg.window, cfg.inference);
}

inline std::string inference_fingerprint(const RunConfig &cfg, const ModelSet &set) {
  return fnv1a_hex(to_json(cfg.inference).dump() + to_json(cfg.window).dump() + set.fingerprint());
}

inline void write_inference_record(const fs::path &dir, const RunConfig &cfg, const ModelSet &set) {
  Json checkpoints = Json::object();
  for (const auto &[a, m] : set.models)
    checkpoints[std::string(axis_name(a))] = m.fingerprint;
  write_text(dir / "inference.json",
             Json{{"fingerprint", inference_fingerprint(cfg, set)},
                  {"inference", to_json(cfg.inference)},
                  {"checkpoints", checkpoints}}
                     .dump(2) +
                 "\n");
}

// Predicts every test case of data_dir into out_dir.
inline void infer_split(const RunConfig &cfg, const ModelSet &set, const fs::path &data_dir,
                        const fs::path &out_dir, std::optional<Axis> single = std::nullopt) {
  ensure_dir(out_dir);
  for (const auto &e : read_manifest(data_dir))
    if (e.split == "test")
      write_mvol((out_dir / mask_file(e.id)).string(),
                 infer_hu_volume(set, read_volume((data_dir / volume_file(e.id)).string()), cfg,
                                 single));
  write_inference_record(out_dir, cfg, set);
  echo_config(out_dir, cfg);
}

// -------------------- evaluation --------------------

// Pairs every mask_<id>.mvol in pred_dir with the same file in gt_dir and
// writes report.csv / report.json into pred_dir.
inline EvalReport eval_dirs(const fs::path &pred_dir, const fs::path &gt_dir) {
  if (!fs::is_directory(pred_dir) || !fs::is_directory(gt_dir))
    throw DataError("eval: both --pred and --gt must be directories");
  std::vector<std::string> ids;
  for (const auto &ent : fs::directory_iterator(pred_dir)) {
    const std::string name = ent.path().filename().string();
    if (name.rfind("mask_", 0) == 0 && ent.path().extension() == ".mvol")
      ids.push_back(name.substr(5, name.size() - 5 - 5));
  }
  if (ids.empty())
    throw DataError("eval: no mask_<id>.mvol files in " + pred_dir.string());
  std::sort(ids.begin(), ids.end());
  std::vector<Mask> preds, gts;
  for (const auto &id : ids) {
    const fs::path g = gt_dir / mask_file(id);
    if (!fs::exists(g))
      throw DataError("eval: case id '" + id + "' has no ground truth in " + gt_dir.string());
    preds.push_back(read_mask((pred_dir / mask_file(id)).string()));
    gts.push_back(read_mask(g.string()));
  }
  std::vector<EvalCase> cases;
  for (std::size_t k = 0; k < ids.size(); ++k)
    cases.push_back({ids[k], preds[k], gts[k]});
  std::string fp;
  const fs::path rec = pred_dir / "inference.json";
  if (fs::exists(rec)) {
    try {
      fp = Json::parse(bytes::read_file(rec.string())).at("fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
      throw DataError(rec.string() + " is malformed: " + e.what());
    }
  }
  const EvalReport r = evaluate_set(cases, fp);
  write_text(pred_dir / "report.csv", report_csv(r));
  write_text(pred_dir / "report.json", report_json(r).dump(2) + "\n");
  return r;
}

} // namespace msan::pipeline
