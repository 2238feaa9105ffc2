// msan: phantom generation, per-view training, inference, evaluation, selftest.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "msan/msan.hpp"
#include "msan/selftest.hpp"

namespace fs = std::filesystem;
using namespace msan;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numerical = 3 };

struct Options {
  std::string config;
  std::string out;
  std::string axis;
  std::string data;
  std::string ckpt_dir;
  std::string volume;
  std::string pred;
  std::string gt;
  int threads = 1;
  bool deterministic = false;
  bool single_axis = false;
};

RunConfig load_config(const Options &o) {
  if (o.config.empty())
    return RunConfig{};
  return parse_run_config(bytes::read_file(o.config));
}

void apply_threads(const Options &o) {
  if (o.threads < 1)
    throw ConfigError("--threads must be >= 1");
  // Reductions use a fixed order either way; deterministic mode also pins
  // the worker count.
  set_threads(o.deterministic ? 1 : o.threads);
}

int cmd_gen_phantom(const Options &o) {
  const RunConfig cfg = load_config(o);
  const Json m = pipeline::gen_phantoms(cfg, o.out);
  std::cout << "wrote " << m["counts"]["train"] << " train and " << m["counts"]["test"]
            << " test phantoms to " << o.out << "\n";
  return ok;
}

int cmd_train(const Options &o) {
  const RunConfig cfg = load_config(o);
  cfg.validate();
  const Axis a = parse_axis(o.axis);
  const auto cases = pipeline::load_split(o.data, "train", cfg.window);
  const auto every = std::max<std::int64_t>(1, cfg.train.max_iter / 20);
  pipeline::train_axis(cfg, a, cases, o.out, [&](const TrainLogRow &r) {
    if (r.iter % every == 0 || r.iter + 1 == cfg.train.max_iter)
      std::fprintf(stderr, "[%s] iter %lld  loss %.5f  lr %.5f\n", std::string(axis_name(a)).c_str(),
                   static_cast<long long>(r.iter), r.loss, r.lr);
  });
  std::cout << "wrote " << (fs::path(o.out) / pipeline::checkpoint_file(a)).string() << "\n";
  return ok;
}

int cmd_infer(const Options &o) {
  const RunConfig cfg = load_config(o);
  cfg.validate();
  std::optional<Axis> single;
  if (o.single_axis) {
    if (o.axis.empty())
      throw ConfigError("--single-axis needs --axis");
    single = parse_axis(o.axis);
  }
  const auto axes = single ? std::vector<Axis>{*single}
                           : std::vector<Axis>(kAllAxes.begin(), kAllAxes.end());
  const auto models = pipeline::load_models(o.ckpt_dir, axes);
  if (!o.volume.empty()) {
    const fs::path out(o.out);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    pipeline::ensure_dir(dir);
    write_mvol(out.string(), pipeline::infer_hu_volume(models, read_volume(o.volume), cfg, single));
    pipeline::write_inference_record(dir, cfg, models);
    pipeline::echo_config(dir, cfg);
    std::cout << "wrote " << out.string() << "\n";
  } else {
    pipeline::infer_split(cfg, models, o.data, o.out, single);
    std::cout << "wrote test-split predictions to " << o.out << "\n";
  }
  return ok;
}

int cmd_eval(const Options &o) {
  const EvalReport r = pipeline::eval_dirs(o.pred, o.gt);
  std::printf("%zu cases, mean DSC %.6f\n", r.per_case.size(), r.mean_dsc);
  return ok;
}

int cmd_selftest() {
  const auto results = selftest::run_all(std::cout);
  const bool pass = selftest::all_pass(results);
  std::cout << (pass ? "selftest: all checks passed\n" : "selftest: FAILED\n");
  return pass ? ok : numerical;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-scale attentional segmentation pipeline"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", o.deterministic, "Single worker, fixed reduction order");
  app.set_help_all_flag("--help-all");

  auto *gen = app.add_subcommand("gen-phantom", "Generate the phantom data set");
  gen->add_option("--config", o.config, "RunConfig JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();

  auto *train = app.add_subcommand("train", "Train the model for one view");
  train->add_option("--config", o.config, "RunConfig JSON")->check(CLI::ExistingFile);
  train->add_option("--axis", o.axis, "coronal, sagittal or axial")->required();
  train->add_option("--data", o.data, "Phantom directory (gen-phantom output)")->required();
  train->add_option("--out", o.out, "Checkpoint directory")->required();

  auto *infer = app.add_subcommand("infer", "Multi-scale, multi-view inference");
  infer->add_option("--config", o.config, "RunConfig JSON")->check(CLI::ExistingFile);
  infer->add_option("--ckpt-dir", o.ckpt_dir, "Directory with model_<axis>.ckpt")->required();
  auto *vol = infer->add_option("--volume", o.volume, "Single MVOL volume in HU");
  auto *dat = infer->add_option("--data", o.data, "Phantom directory; predicts its test split");
  vol->excludes(dat);
  infer->add_option("--out", o.out, "Output mask file (--volume) or directory (--data)")->required();
  infer->add_option("--axis", o.axis, "View used with --single-axis");
  infer->add_flag("--single-axis", o.single_axis, "Skip voting; use one view only");

  auto *eval = app.add_subcommand("eval", "DSC report for predicted masks");
  eval->add_option("--pred", o.pred, "Directory with mask_<id>.mvol predictions")->required();
  eval->add_option("--gt", o.gt, "Directory with mask_<id>.mvol ground truth")->required();

  auto *self = app.add_subcommand("selftest", "Kernel oracles, gradient checks, truth tables");

  for (auto *sub : {gen, train, infer, eval, self}) {
    sub->add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", o.deterministic, "Single worker, fixed reduction order");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    apply_threads(o);
    if (*infer && o.volume.empty() && o.data.empty())
      throw ConfigError("infer needs --volume or --data");
    if (*gen)
      return cmd_gen_phantom(o);
    if (*train)
      return cmd_train(o);
    if (*infer)
      return cmd_infer(o);
    if (*eval)
      return cmd_eval(o);
    return cmd_selftest();
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return numerical;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return data;
  } catch (const std::invalid_argument &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return data;
  }
}
