// SPDX-License-Identifier: Apache-2.0
#include "changecap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "changecap/error.hpp"
#include "changecap/metrics.hpp"
#include "changecap/ops.hpp"
#include "changecap/rng.hpp"

namespace changecap {

void StagePlan::validate() const {
  if (trainable_modules.empty()) throw ConfigError("stage '" + name + "' trains no module");
  for (const std::string &m : trainable_modules) {
    if (std::find(kModuleNames.begin(), kModuleNames.end(), m) == kModuleNames.end()) {
      throw ConfigError("stage '" + name + "' names unknown module '" + m + "'");
    }
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("warmup_ratio must be in [0, 1)");
  }
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at_step(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps < 1) throw RangeError("total_steps must be at least 1");
  if (step > total_steps) {
    throw RangeError("step " + std::to_string(step) + " exceeds total_steps " +
                     std::to_string(total_steps));
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw RangeError("warmup_ratio must be in [0, 1)");
  const std::size_t w = warmup_steps(total_steps, warmup_ratio);
  if (step < w) return peak_lr * static_cast<double>(step) / static_cast<double>(w);
  if (step == total_steps) return 0.0;
  // w < total_steps here: ceil(r * T) < T for r < 1
  const double progress =
      static_cast<double>(step - w) / static_cast<double>(total_steps - w);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor &p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const Tensor &p : params_) {
    if (!p.has_grad()) throw ContractError("trainable parameter has no gradient");
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor &p = params_[i];
    std::span<double> theta = p.mutable_data();
    std::span<const double> g = p.grad();
    std::vector<double> &m = m_[i];
    std::vector<double> &v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      theta[j] -= lr * options_.weight_decay * theta[j];
      theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

std::string step_record_json(const StepRecord &record) {
  nlohmann::ordered_json j = {
      {"stage", record.stage}, {"step", record.step}, {"lr", record.lr}, {"loss", record.loss}};
  return j.dump();
}

namespace {

/// Sets requires_grad on every parameter according to the plan and restores
/// the previous flags on scope exit.
class FreezeScope {
 public:
  FreezeScope(const Model &model, const StagePlan &plan) {
    for (std::string_view module : kModuleNames) {
      const bool train = std::find(plan.trainable_modules.begin(), plan.trainable_modules.end(),
                                   module) != plan.trainable_modules.end();
      for (NamedTensor &p : model.module_parameters(module)) {
        saved_.emplace_back(p.tensor, p.tensor.requires_grad());
        p.tensor.set_requires_grad(train);
        if (train) trainable_.push_back(p.tensor);
      }
    }
  }
  ~FreezeScope() {
    for (auto &[t, flag] : saved_) t.set_requires_grad(flag);
  }
  FreezeScope(const FreezeScope &) = delete;
  FreezeScope &operator=(const FreezeScope &) = delete;

  const std::vector<Tensor> &trainable() const { return trainable_; }

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
  std::vector<Tensor> trainable_;
};

}  // namespace

std::vector<StepRecord> run_stage(const StagePlan &plan, Model &model,
                                  std::span<const Sample> dataset, const StepCallback &on_step,
                                  std::size_t first_step) {
  plan.validate();
  if (dataset.empty()) throw ConfigError("stage '" + plan.name + "' has an empty dataset");

  FreezeScope freeze(model, plan);
  AdamWOptions opts;
  opts.weight_decay = plan.weight_decay;
  AdamW optimizer(freeze.trainable(), opts);

  const std::size_t n = dataset.size();
  const std::size_t per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const std::size_t total = per_epoch * plan.epochs;
  Rng rng(plan.seed);
  std::vector<std::size_t> order(n);
  std::vector<StepRecord> log;
  log.reserve(total);

  std::size_t k = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += plan.batch_size, ++k) {
      const std::size_t end = std::min(n, start + plan.batch_size);
      for (Tensor p : freeze.trainable()) p.zero_grad();
      std::vector<Tensor> losses;
      losses.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) losses.push_back(model.sample_loss(dataset[order[i]]));
      const Tensor batch =
          scale(sum(concat(std::span<const Tensor>(losses), 0)), 1.0 / static_cast<double>(end - start));
      backward(batch);
      const double lr = lr_at_step(k, total, plan.peak_lr, plan.warmup_ratio);
      optimizer.step(lr);
      StepRecord rec{plan.name, first_step + k, lr, batch.item()};
      if (on_step) on_step(rec);
      log.push_back(std::move(rec));
    }
  }
  return log;
}

namespace {

StagePlan make_plan(std::string name, std::vector<std::string> modules, double lr,
                    std::size_t epochs, std::size_t batch, std::uint64_t seed) {
  StagePlan p;
  p.name = std::move(name);
  p.trainable_modules = std::move(modules);
  p.peak_lr = lr;
  p.epochs = epochs;
  p.batch_size = batch;
  p.seed = seed;
  return p;
}

}  // namespace

TrainingRecipe default_recipe(std::uint64_t seed) {
  TrainingRecipe r;
  r.pretrain = make_plan("pretrain", {"change-extraction", "projector", "decoder"}, 3e-3, 100, 8,
                         mix_seed(seed, 100));
  r.stage1 = make_plan("stage1", {"change-extraction"}, 1e-3, 10, 8, mix_seed(seed, 101));
  r.stage2 = make_plan("stage2", {"decoder"}, 1e-4, 1, 8, mix_seed(seed, 102));
  return r;
}

TrainingRecipe full_scale_recipe(std::uint64_t seed) {
  TrainingRecipe r;
  r.stage1 = make_plan("stage1", {"change-extraction"}, 1e-3, 10, 128, mix_seed(seed, 101));
  r.stage2 = make_plan("stage2", {"decoder"}, 1e-4, 1, 128, mix_seed(seed, 102));
  return r;
}

TrainResult train_two_stage(const TrainingRecipe &recipe, Model &model,
                            std::span<const Sample> stage1_data,
                            std::span<const Sample> stage2_data, const StepCallback &on_step) {
  recipe.stage1.validate();
  recipe.stage2.validate();
  if (recipe.pretrain) recipe.pretrain->validate();
  TrainResult result;
  auto append = [&](const std::vector<StepRecord> &part) {
    result.log.insert(result.log.end(), part.begin(), part.end());
  };
  if (recipe.pretrain) append(run_stage(*recipe.pretrain, model, stage1_data, on_step, result.log.size()));
  append(run_stage(recipe.stage1, model, stage1_data, on_step, result.log.size()));
  append(run_stage(recipe.stage2, model, stage2_data, on_step, result.log.size()));
  return result;
}

double mean_loss(const Model &model, std::span<const Sample> samples) {
  if (samples.empty()) throw ConfigError("mean_loss needs at least one sample");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const Sample &s : samples) total += model.sample_loss(s).item();
  return total / static_cast<double>(samples.size());
}

double exact_match_rate(const Model &model, std::span<const Sample> samples) {
  if (samples.empty()) throw ConfigError("exact_match_rate needs at least one sample");
  std::size_t hits = 0;
  for (const Sample &s : samples) {
    if (tokenize(model.generate(s, s.prompt)) == tokenize(s.target)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace {

using nlohmann::json;

template <typename T>
void read_opt(const json &j, const char *key, T &out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

StagePlan parse_plan(const json &j, StagePlan plan) {
  if (!j.is_object()) throw ConfigError("stage plan must be a JSON object");
  read_opt(j, "name", plan.name);
  read_opt(j, "trainable", plan.trainable_modules);
  read_opt(j, "peak_lr", plan.peak_lr);
  read_opt(j, "epochs", plan.epochs);
  read_opt(j, "batch_size", plan.batch_size);
  read_opt(j, "warmup_ratio", plan.warmup_ratio);
  read_opt(j, "seed", plan.seed);
  read_opt(j, "weight_decay", plan.weight_decay);
  plan.validate();
  return plan;
}

}  // namespace

TrainConfig parse_train_config(std::string_view json_text, const std::filesystem::path &base_dir) {
  TrainConfig cfg;
  try {
    const json root = json::parse(json_text);
    if (!root.is_object()) throw ConfigError("training config must be a JSON object");
    std::uint64_t seed = 0;
    read_opt(root, "seed", seed);
    cfg.model.seed = seed;
    cfg.synthetic.seed = seed;
    cfg.recipe = default_recipe(seed);

    if (root.contains("model")) {
      const json &m = root.at("model");
      read_opt(m, "patches", cfg.model.patches);
      read_opt(m, "visual_width", cfg.model.visual_width);
      read_opt(m, "embed_width", cfg.model.embed_width);
      read_opt(m, "projector_hidden", cfg.model.projector_hidden);
      read_opt(m, "heads", cfg.model.heads);
      read_opt(m, "blocks", cfg.model.blocks);
      read_opt(m, "max_len", cfg.model.max_len);
      read_opt(m, "concat_hidden", cfg.model.concat_hidden);
      read_opt(m, "init_sigma", cfg.model.init_sigma);
      read_opt(m, "task_prompt", cfg.model.task_prompt);
      if (m.contains("fusion")) cfg.model.fusion = parse_fusion_kind(m.at("fusion").get<std::string>());
    }
    cfg.synthetic.patches = cfg.model.patches;
    cfg.synthetic.width = cfg.model.visual_width;

    if (root.contains("data")) {
      const json &d = root.at("data");
      if (d.contains("manifest")) {
        std::filesystem::path p = d.at("manifest").get<std::string>();
        cfg.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
      if (d.contains("synthetic")) {
        const json &s = d.at("synthetic");
        read_opt(s, "count", cfg.synthetic.count);
        read_opt(s, "patches", cfg.synthetic.patches);
        read_opt(s, "width", cfg.synthetic.width);
        read_opt(s, "seed", cfg.synthetic.seed);
        read_opt(s, "noise", cfg.synthetic.noise);
        read_opt(s, "amplitude", cfg.synthetic.amplitude);
        if (s.contains("style")) cfg.synthetic.style = parse_change_style(s.at("style").get<std::string>());
        if (s.contains("kinds")) {
          cfg.synthetic.kinds.clear();
          for (const auto &k : s.at("kinds")) cfg.synthetic.kinds.push_back(parse_change_kind(k.get<std::string>()));
        }
      }
    }
    if (root.contains("stage2_extra")) read_opt(root.at("stage2_extra"), "presence_vqa", cfg.presence_vqa);

    if (root.contains("pretrain")) {
      const json &p = root.at("pretrain");
      if (p.is_null()) {
        cfg.recipe.pretrain.reset();
      } else {
        cfg.recipe.pretrain = parse_plan(p, cfg.recipe.pretrain.value_or(StagePlan{"pretrain", {}}));
      }
    }
    if (root.contains("stage1")) cfg.recipe.stage1 = parse_plan(root.at("stage1"), cfg.recipe.stage1);
    if (root.contains("stage2")) cfg.recipe.stage2 = parse_plan(root.at("stage2"), cfg.recipe.stage2);
  } catch (const json::exception &e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return cfg;
}

}  // namespace changecap
