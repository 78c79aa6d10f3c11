#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wtal/eval.hpp"
#include "wtal/losses.hpp"
#include "wtal/model.hpp"
#include "wtal/synth.hpp"

namespace wtal {

struct RunConfig {
  GradMode mode = GradMode::Standard;
  bool use_ten = false;  // off: no continuity branch, so L_att = L_KL = 0
  Hyperparams hyper;     // hyper.iterations is the step count
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;
  double decay_fraction = 0.5;
  double weight_decay = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global-norm clip, 0 = off
  std::size_t workers = 1;
  std::filesystem::path checkpoint_path;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::filesystem::path log_path;    // per-step CSV, empty = none
};

struct StepLog {
  std::size_t step = 0;
  LossBreakdown losses;
  double learning_rate = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> log;
};

ModelShape model_shape_for(const TrainingView& data, const Hyperparams& hyper);

/// Mini-batch Adam training. Deterministic for a fixed config, dataset and seed.
TrainResult train(const TrainingView& data, const RunConfig& config);

/// Mean over the batch of one optimization step's gradient, without updating anything.
struct BatchGradient {
  std::vector<double> grads;
  LossBreakdown losses;
};
BatchGradient batch_gradient(const TrainingView& data, std::span<const std::size_t> batch,
                             const ModelParams& params, const RunConfig& config, Rng& rng);

std::string format_step_log_header();
std::string format_step_log(const StepLog& entry);

struct AblationVariant {
  std::string name;
  GradMode mode = GradMode::Standard;
  bool use_ten = false;
  std::optional<double> lambda;
  std::optional<std::size_t> k;
};

// BL, BL+BGES, TEN, TEN+BGES
std::vector<AblationVariant> component_variants();
// The component grid plus TEN+GRL, BL+GRL, BL+BVL, TEN+BVL, TEN+BVL+BGES
std::vector<AblationVariant> mode_variants();
// TEN+BGES for each sampling interval
std::vector<AblationVariant> interval_variants(std::span<const double> values);
// BL for each background-loss weight
std::vector<AblationVariant> lambda_variants(std::span<const double> values);

struct AblationRow {
  AblationVariant variant;
  EvalReport mean;
  std::vector<EvalReport> per_seed;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains every variant on the same data for `seeds` consecutive seeds starting at
/// base.seed and evaluates on `test`.
std::vector<AblationRow> ablate(const Dataset& train_set, const Dataset& test_set,
                                const RunConfig& base, std::span<const AblationVariant> variants,
                                std::size_t seeds, std::span<const double> iou_thresholds,
                                const ProgressFn& progress = {});

std::string format_ablation(std::span<const AblationRow> rows);

}  // namespace wtal
