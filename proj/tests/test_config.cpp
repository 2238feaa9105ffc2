#include <gtest/gtest.h>
#include <json.hpp>

#include "msan/config.hpp"

using namespace msan;

namespace {

Json defaults_json() { return to_json(RunConfig{}); }

void expect_config_error(const Json &j, const std::string &needle) {
  try {
    run_config_from_json(j);
    ADD_FAILURE() << "accepted: " << j.dump();
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

} // namespace

TEST(Config, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.window.hu_min, -80.0);
  EXPECT_EQ(c.window.hu_max, 320.0);
  EXPECT_EQ(c.window.out_max, 255.0);
  EXPECT_EQ(c.inference.scales, (std::vector<double>{1.25, 1.5, 1.75}));
  EXPECT_EQ(c.augment.train_scales, (std::vector<double>{1.25, 1.5, 1.75}));
  EXPECT_EQ(c.inference.rho, 0.5);
  EXPECT_EQ(c.augment.rot_max_deg, 15.0);
  EXPECT_EQ(c.train.base_lr, 0.05);
  EXPECT_EQ(c.train.power, 0.9);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.train.batch_size, 4);
  EXPECT_EQ(c.train.max_iter, 2000);
  EXPECT_EQ(c.train.class_weights, (std::array<double, 2>{1.0, 3.0}));
  EXPECT_EQ(c.data.train_seeds.count(), 45u);
  EXPECT_EQ(c.data.test_seeds.count(), 20u);
  EXPECT_EQ(c.model.backbone.output_stride, 8);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, EmptyObjectGivesDefaults) {
  EXPECT_EQ(dump_config(parse_run_config("{}")), dump_config(RunConfig{}));
}

TEST(Config, RoundTripPreservesEveryField) {
  RunConfig c;
  c.window.hu_min = -100.5;
  c.augment.rot_max_deg = 7.25;
  c.augment.seed = 99;
  c.model.aspp.rates = {1, 3};
  c.model.attention = false;
  c.inference.scales = {1.0, 0.75};
  c.inference.rho = 0.3;
  c.inference.pad_policy = PadPolicy::zero;
  c.train.max_iter = 17;
  c.train.class_weights = {0.5, 2.0};
  c.train.seed = 12345678901234ULL;
  c.phantom.noise_sigma_hu = 3.5;
  c.data.train_seeds = {100, 109};
  c.data.test_seeds = {0, 4};
  const std::string text = dump_config(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.inference.pad_policy, PadPolicy::zero);
  EXPECT_EQ(back.train.seed, 12345678901234ULL);
  EXPECT_EQ(back.model.aspp.rates, (std::vector<int>{1, 3}));
  EXPECT_EQ(back.data.test_seeds.last, 4u);
  // partial files override only what they mention
  const RunConfig part = parse_run_config(R"({"train": {"max_iter": 3}})");
  EXPECT_EQ(part.train.max_iter, 3);
  EXPECT_EQ(part.train.base_lr, 0.05);
}

TEST(Config, UnknownKeysRejected) {
  Json j = defaults_json();
  j["extra"] = 1;
  expect_config_error(j, "config.extra");
  j = defaults_json();
  j["model"]["aspp"]["ratez"] = {1};
  expect_config_error(j, "config.model.aspp.ratez");
  j = defaults_json();
  j["inference"]["threshold"] = 0.5;
  expect_config_error(j, "config.inference.threshold");
}

TEST(Config, ParseErrors) {
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config("[]"), ConfigError);
  expect_config_error(Json{{"schema_version", 2}}, "schema_version");
  expect_config_error(Json{{"train", {{"max_iter", "ten"}}}}, "train.max_iter");
  expect_config_error(Json{{"window", 5}}, "window");
  expect_config_error(Json{{"inference", {{"scales", {1.0, "x"}}}}}, "inference.scales");
}

TEST(Config, ValidationErrors) {
  expect_config_error(Json{{"data", {{"train_seeds", {0, 10}}, {"test_seeds", {10, 20}}}}},
                      "overlap");
  expect_config_error(Json{{"data", {{"train_seeds", {5, 4}}}}}, "first <= last");
  expect_config_error(Json{{"inference", {{"rho", 1.0}}}}, "rho");
  expect_config_error(Json{{"inference", {{"rho", 0.0}}}}, "rho");
  expect_config_error(Json{{"inference", {{"scales", Json::array()}}}}, "scales");
  expect_config_error(Json{{"inference", {{"pad_policy", "wrap"}}}}, "pad_policy");
  expect_config_error(Json{{"window", {{"hu_min", 400}}}}, "window");
  expect_config_error(Json{{"augment", {{"rot_min_deg", 20}}}}, "augment");
  expect_config_error(Json{{"train", {{"momentum", 1.0}}}}, "momentum");
  expect_config_error(Json{{"train", {{"class_weights", {1.0, 0.0}}}}}, "class weights");
  expect_config_error(Json{{"phantom", {{"dims", {4, 64, 64}}}}}, "dims");
  expect_config_error(Json{{"phantom", {{"focus_radius_vox", {5, 40}}}}}, "fit");
  expect_config_error(Json{{"model", {{"backbone", {{"output_stride", 4}}}}}}, "output_stride");
  expect_config_error(Json{{"model", {{"aspp", {{"rates", {2, 2}}}}}}}, "distinct");
}

TEST(Config, ModelSectionStandsAlone) {
  const MsanConfig m = model_from_json(to_json(desk_model()));
  EXPECT_EQ(to_json(m), to_json(desk_model()));
  EXPECT_THROW(model_from_json(Json{{"decoder", 3}}), ConfigError);
}
