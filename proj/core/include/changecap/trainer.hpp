// SPDX-License-Identifier: Apache-2.0
//
// Staged optimisation: AdamW with decoupled weight decay, linear warmup then
// cosine decay to zero, and per-stage module freezing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "changecap/dataset.hpp"
#include "changecap/model.hpp"

namespace changecap {

struct StagePlan {
  std::string name;
  std::vector<std::string> trainable_modules;
  double peak_lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double warmup_ratio = 0.03;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;

  /// Throws ConfigError on an empty module set, unknown module names,
  /// warmup_ratio outside [0, 1), or zero epochs / batch size.
  void validate() const;
};

/// Linear warmup from 0 to `peak_lr` over W = ceil(warmup_ratio * total_steps)
/// steps, then peak * 0.5 * (1 + cos(pi * (step - W) / (total_steps - W))).
/// Throws RangeError unless 0 <= step <= total_steps and total_steps >= 1.
double lr_at_step(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio);
std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Only the tensors handed to the constructor are ever updated.
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor> params, AdamWOptions options = {});

  /// theta -= lr * wd * theta; theta -= lr * m_hat / (sqrt(v_hat) + eps).
  /// Throws ContractError if a parameter has no gradient.
  void step(double lr);

  std::size_t steps() const noexcept { return t_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWOptions options_;
  std::size_t t_ = 0;
};

struct StepRecord {
  std::string stage;
  std::size_t step = 0;  // global across stages, 0-based
  double lr = 0.0;
  double loss = 0.0;
};

/// {"stage","step","lr","loss"}
std::string step_record_json(const StepRecord &record);

using StepCallback = std::function<void(const StepRecord &)>;

/// Trains the plan's modules on `dataset`. Each epoch visits the samples in
/// an order shuffled by Rng(plan.seed) (one stream for the whole stage);
/// batches are consecutive runs of that order, the last may be short. The
/// batch loss is the mean of per-sample losses. Update k uses
/// lr_at_step(k, total). Parameters outside the plan are not touched.
std::vector<StepRecord> run_stage(const StagePlan &plan, Model &model,
                                  std::span<const Sample> dataset, const StepCallback &on_step = {},
                                  std::size_t first_step = 0);

/// Stage 1 trains only the fusion module at lr 1e-3; stage 2 trains only the
/// decoder at lr 1e-4. The optional pretrain stage trains every module and
/// stands in for the pretrained base model the two stages start from.
struct TrainingRecipe {
  std::optional<StagePlan> pretrain;
  StagePlan stage1;
  StagePlan stage2;
};

/// Desk-scale defaults.
TrainingRecipe default_recipe(std::uint64_t seed = 0);
/// Full-scale hyperparameters: batch 128, stage 1 10 epochs, stage 2 1 epoch.
TrainingRecipe full_scale_recipe(std::uint64_t seed = 0);

struct TrainResult {
  std::vector<StepRecord> log;
};

/// Runs pretrain (if any) on `stage1_data`, then stage 1 on `stage1_data`
/// and stage 2 on `stage2_data` (which may mix task types).
TrainResult train_two_stage(const TrainingRecipe &recipe, Model &model,
                            std::span<const Sample> stage1_data,
                            std::span<const Sample> stage2_data, const StepCallback &on_step = {});

/// Mean per-sample loss without recording a graph.
double mean_loss(const Model &model, std::span<const Sample> samples);
/// Fraction of samples whose greedy output under their own prompt equals the
/// tokenised target.
double exact_match_rate(const Model &model, std::span<const Sample> samples);

/// Everything the `train` command needs, parsed from a JSON config file.
///
/// {
///   "seed": 0,
///   "model": {"patches", "visual_width", "embed_width", "projector_hidden",
///             "heads", "blocks", "max_len", "fusion", "init_sigma", "task_prompt"},
///   "data": {"manifest": "path"} | {"synthetic": {"count", "patches",
///            "width", "seed", "kinds": [...], "noise", "amplitude", "style"}},
///   "stage2_extra": {"presence_vqa": count},
///   "pretrain": StagePlan | null,
///   "stage1": StagePlan, "stage2": StagePlan
/// }
///
/// StagePlan keys: "name", "trainable", "peak_lr", "epochs", "batch_size",
/// "warmup_ratio", "seed", "weight_decay". Missing keys keep defaults.
struct TrainConfig {
  ModelConfig model;
  std::optional<std::filesystem::path> manifest;
  SynthOptions synthetic;
  std::size_t presence_vqa = 0;
  TrainingRecipe recipe;
};

TrainConfig parse_train_config(std::string_view json_text,
                               const std::filesystem::path &base_dir = {});

}  // namespace changecap
