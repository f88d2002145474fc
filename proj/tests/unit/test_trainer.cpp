// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "changecap/error.hpp"
#include "changecap/ops.hpp"
#include "changecap/trainer.hpp"

using namespace changecap;

namespace {

std::vector<double> bytes_of(const ParameterList &list) {
  std::vector<double> out;
  for (const NamedTensor &p : list) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

struct Fixture {
  std::vector<Sample> samples;
  Model model;
};

Fixture small_setup(std::size_t count = 12) {
  SynthOptions o;
  o.count = count;
  std::vector<Sample> samples = to_samples(synth_dataset(o));
  std::vector<std::string> texts;
  for (const Sample &s : samples) {
    texts.push_back(s.prompt);
    texts.push_back(s.target);
  }
  ModelConfig c;
  c.blocks = 1;
  return {samples, Model::init(c, Vocab::build(texts))};
}

// Drives a scalar parameter's gradient to `g` through a linear loss.
void set_grad(Tensor &p, double g) {
  p.zero_grad();
  backward(scale(sum(p), g));
}

}  // namespace

// -- schedule ----------------------------------------------------------------

TEST(LrSchedule, Landmarks) {
  const std::size_t total = 1000;
  const std::size_t w = warmup_steps(total, 0.03);
  EXPECT_EQ(w, 30u);
  EXPECT_EQ(warmup_steps(100, 0.03), 3u);
  EXPECT_EQ(warmup_steps(10, 0.03), 1u);  // ceil
  EXPECT_EQ(lr_at_step(0, total, 1e-3, 0.03), 0.0);
  EXPECT_DOUBLE_EQ(lr_at_step(15, total, 1e-3, 0.03), 0.5e-3);
  EXPECT_DOUBLE_EQ(lr_at_step(w, total, 1e-3, 0.03), 1e-3);
  EXPECT_NEAR(lr_at_step(w + (total - w) / 2, total, 1e-3, 0.03), 0.5e-3, 1e-12);
  EXPECT_EQ(lr_at_step(total, total, 1e-3, 0.03), 0.0);
  EXPECT_DOUBLE_EQ(lr_at_step(0, 10, 2.0, 0.0), 2.0);
}

TEST(LrSchedule, CosineClosedForm) {
  const std::size_t total = 200, w = warmup_steps(total, 0.03);
  for (std::size_t s = w; s <= total; s += 7) {
    const double expect =
        0.5 * 1e-4 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(s - w) / static_cast<double>(total - w)));
    EXPECT_NEAR(lr_at_step(s, total, 1e-4, 0.03), expect, 1e-18);
  }
}

TEST(LrSchedule, Monotone) {
  for (std::size_t total : {1, 2, 7, 33, 400}) {
    const std::size_t w = warmup_steps(total, 0.03);
    for (std::size_t s = 1; s <= total; ++s) {
      const double prev = lr_at_step(s - 1, total, 1.0, 0.03), cur = lr_at_step(s, total, 1.0, 0.03);
      if (s <= w) {
        EXPECT_GE(cur, prev) << total << ' ' << s;
      } else {
        EXPECT_LE(cur, prev) << total << ' ' << s;
      }
      EXPECT_GE(cur, 0.0);
      EXPECT_LE(cur, 1.0);
    }
  }
}

TEST(LrSchedule, RangeErrors) {
  EXPECT_THROW(lr_at_step(0, 0, 1.0, 0.03), RangeError);
  EXPECT_THROW(lr_at_step(11, 10, 1.0, 0.03), RangeError);
  EXPECT_THROW(lr_at_step(1, 10, 1.0, 1.0), RangeError);
}

// -- AdamW -----------------------------------------------------------------------

TEST(AdamW, FirstStepMovesByLr) {
  Tensor theta = create({1}, Init::zeros(), true);
  AdamW opt({theta}, {.weight_decay = 0.0});
  set_grad(theta, 1.0);
  opt.step(0.1);
  EXPECT_NEAR(theta.item(), -0.1, 1e-7);
  EXPECT_NEAR(opt.first_moment(0)[0], 0.1, 1e-15);
  EXPECT_NEAR(opt.second_moment(0)[0], 0.001, 1e-15);
  set_grad(theta, 1.0);
  opt.step(0.1);
  EXPECT_NEAR(theta.item(), -0.2, 1e-7);  // bias correction keeps the step at lr
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(AdamW, StepOpposesGradientSign) {
  Tensor theta = create({1}, Init::zeros(), true);
  AdamW opt({theta}, {.weight_decay = 0.0});
  set_grad(theta, -3.0);
  opt.step(0.01);
  EXPECT_NEAR(theta.item(), 0.01, 1e-8);
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
  Tensor theta = create({1}, Init::constant(1.0), true);
  AdamW opt({theta});
  set_grad(theta, 0.0);
  opt.step(0.1);
  EXPECT_NEAR(theta.item(), 0.999, 1e-15);
}

TEST(AdamW, OnlyOwnedParametersChangeAndMissingGradThrows) {
  Tensor a = create({2}, Init::constant(1.0), true);
  Tensor b = create({2}, Init::constant(1.0), true);
  AdamW opt({a});
  backward(sum(mul(a, b)));
  opt.step(0.1);
  EXPECT_NE(a.data()[0], 1.0);
  EXPECT_EQ(b.to_vector(), (std::vector<double>{1.0, 1.0}));

  Tensor c = create({1}, Init::zeros(), true);
  AdamW lonely({c});
  EXPECT_THROW(lonely.step(0.1), ContractError);
}

// -- stages ------------------------------------------------------------------------

TEST(StagePlan, Validation) {
  StagePlan ok{"s", {"decoder"}};
  EXPECT_NO_THROW(ok.validate());
  EXPECT_THROW((StagePlan{"s", {}}.validate()), ConfigError);
  EXPECT_THROW((StagePlan{"s", {"vision"}}.validate()), ConfigError);
  StagePlan bad = ok;
  bad.warmup_ratio = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunStage, FrozenModulesKeepTheirBytes) {
  Fixture f = small_setup();
  const auto proj = bytes_of(f.model.module_parameters("projector"));
  const auto dec = bytes_of(f.model.module_parameters("decoder"));
  const auto ce = bytes_of(f.model.module_parameters("change-extraction"));
  std::vector<bool> flags;
  for (const NamedTensor &p : f.model.all_parameters()) flags.push_back(p.tensor.requires_grad());
  StagePlan plan{"stage1", {"change-extraction"}, 1e-3, 1, 4};
  const auto log = run_stage(plan, f.model, f.samples);
  EXPECT_EQ(log.size(), 3u);
  EXPECT_EQ(bytes_of(f.model.module_parameters("projector")), proj);
  EXPECT_EQ(bytes_of(f.model.module_parameters("decoder")), dec);
  EXPECT_NE(bytes_of(f.model.module_parameters("change-extraction")), ce);
  std::vector<bool> after;
  for (const NamedTensor &p : f.model.all_parameters()) after.push_back(p.tensor.requires_grad());
  EXPECT_EQ(after, flags);
}

TEST(RunStage, LogFollowsScheduleAndShortLastBatch) {
  Fixture f = small_setup(10);
  StagePlan plan{"s", {"decoder"}, 1e-3, 2, 4};
  std::vector<StepRecord> seen;
  const auto log = run_stage(plan, f.model, f.samples, [&](const StepRecord &r) { seen.push_back(r); }, 5);
  ASSERT_EQ(log.size(), 6u);  // ceil(10 / 4) * 2
  ASSERT_EQ(seen.size(), log.size());
  for (std::size_t k = 0; k < log.size(); ++k) {
    EXPECT_EQ(log[k].step, 5 + k);
    EXPECT_EQ(log[k].stage, "s");
    EXPECT_DOUBLE_EQ(log[k].lr, lr_at_step(k, 6, 1e-3, 0.03));
    EXPECT_TRUE(std::isfinite(log[k].loss));
  }
  const auto j = nlohmann::json::parse(step_record_json(log[0]));
  EXPECT_EQ(j.at("stage"), "s");
  EXPECT_EQ(j.at("step"), 5);
  EXPECT_EQ(j.at("lr").get<double>(), log[0].lr);
  EXPECT_EQ(j.at("loss").get<double>(), log[0].loss);
}

TEST(RunStage, DeterministicAndEmptyDatasetRejected) {
  Fixture a = small_setup(), b = small_setup();
  StagePlan plan{"s", {"change-extraction", "decoder"}, 1e-3, 1, 4, 0.03, 7};
  const auto la = run_stage(plan, a.model, a.samples);
  const auto lb = run_stage(plan, b.model, b.samples);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t k = 0; k < la.size(); ++k) EXPECT_EQ(la[k].loss, lb[k].loss);
  EXPECT_EQ(bytes_of(a.model.all_parameters()), bytes_of(b.model.all_parameters()));
  EXPECT_THROW(run_stage(plan, a.model, std::span<const Sample>{}), ConfigError);
}

TEST(TrainTwoStage, StagesRunInOrderWithGlobalSteps) {
  Fixture f = small_setup(8);
  TrainingRecipe r = default_recipe(0);
  r.pretrain->epochs = 1;
  r.stage1.epochs = 1;
  const TrainResult res = train_two_stage(r, f.model, f.samples, f.samples);
  ASSERT_EQ(res.log.size(), 3u);
  EXPECT_EQ(res.log[0].stage, "pretrain");
  EXPECT_EQ(res.log[1].stage, "stage1");
  EXPECT_EQ(res.log[2].stage, "stage2");
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(res.log[k].step, k);
}

TEST(Recipes, Defaults) {
  const TrainingRecipe d = default_recipe(3);
  ASSERT_TRUE(d.pretrain.has_value());
  EXPECT_EQ(d.stage1.trainable_modules, std::vector<std::string>{"change-extraction"});
  EXPECT_EQ(d.stage2.trainable_modules, std::vector<std::string>{"decoder"});
  EXPECT_EQ(d.stage1.peak_lr, 1e-3);
  EXPECT_EQ(d.stage2.peak_lr, 1e-4);
  EXPECT_EQ(d.stage1.epochs, 10u);
  EXPECT_EQ(d.stage2.epochs, 1u);
  EXPECT_EQ(d.stage1.warmup_ratio, 0.03);
  EXPECT_NE(d.stage1.seed, d.stage2.seed);
  const TrainingRecipe p = full_scale_recipe();
  EXPECT_FALSE(p.pretrain.has_value());
  EXPECT_EQ(p.stage1.batch_size, 128u);
  EXPECT_EQ(p.stage2.batch_size, 128u);
}

TEST(TrainConfig, ParsesAndResolvesPaths) {
  const TrainConfig c = parse_train_config(R"({
    "seed": 4,
    "model": {"patches": 64, "fusion": "concat", "blocks": 3},
    "data": {"manifest": "data/manifest.jsonl"},
    "stage2_extra": {"presence_vqa": 6},
    "pretrain": null,
    "stage1": {"epochs": 2, "peak_lr": 0.01, "batch_size": 4},
    "stage2": {"trainable": ["decoder", "projector"]}
  })", "/tmp/run");
  EXPECT_EQ(c.model.patches, 64u);
  EXPECT_EQ(c.model.blocks, 3u);
  EXPECT_EQ(c.model.fusion, FusionKind::concat);
  EXPECT_EQ(c.model.seed, 4u);
  EXPECT_EQ(*c.manifest, std::filesystem::path("/tmp/run/data/manifest.jsonl"));
  EXPECT_EQ(c.presence_vqa, 6u);
  EXPECT_FALSE(c.recipe.pretrain.has_value());
  EXPECT_EQ(c.recipe.stage1.epochs, 2u);
  EXPECT_EQ(c.recipe.stage1.peak_lr, 0.01);
  EXPECT_EQ(c.recipe.stage1.trainable_modules, std::vector<std::string>{"change-extraction"});
  EXPECT_EQ(c.recipe.stage2.trainable_modules, (std::vector<std::string>{"decoder", "projector"}));
  EXPECT_EQ(c.recipe.stage2.peak_lr, 1e-4);
}

TEST(TrainConfig, SyntheticBlockAndErrors) {
  const TrainConfig c = parse_train_config(
      R"({"data": {"synthetic": {"count": 5, "kinds": ["appear"], "style": "replace"}}})");
  EXPECT_FALSE(c.manifest.has_value());
  EXPECT_EQ(c.synthetic.count, 5u);
  EXPECT_EQ(c.synthetic.kinds, std::vector<ChangeKind>{ChangeKind::appear});
  EXPECT_EQ(c.synthetic.style, ChangeStyle::replace);
  EXPECT_THROW(parse_train_config("[1]"), ConfigError);
  EXPECT_THROW(parse_train_config("{not json"), ConfigError);
  EXPECT_THROW(parse_train_config(R"({"stage1": {"trainable": ["eyes"]}})"), ConfigError);
  EXPECT_THROW(parse_train_config(R"({"model": {"fusion": "sum"}})"), ConfigError);
}
