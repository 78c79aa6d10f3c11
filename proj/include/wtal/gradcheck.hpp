#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "wtal/losses.hpp"
#include "wtal/model.hpp"
#include "wtal/ten.hpp"

namespace wtal {

struct GradcheckInstance {
  Matrix rgb;
  Matrix flow;
  std::vector<bool> label;
  SamplePlan plan;
  ModelParams params;
};

// Random features, non-empty label, random parameters (biases included) and a plan.
GradcheckInstance random_instance(const ModelShape& shape, std::size_t length, std::size_t k,
                                  Rng& rng);

struct GradcheckSettings {
  double epsilon = 1e-5;
  double tolerance = 1e-5;
  double floor = 1e-4;  // relative-error denominator floor for near-zero gradients
  bool use_ten = true;
  BackwardOptions options;
};

// Tolerance that scales with the step for central differences (error ~ eps^2).
double default_tolerance(double epsilon) noexcept;

struct BlockError {
  std::string block;
  double max_relative_error = 0.0;
};

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::string worst_block;
  std::vector<BlockError> blocks;
  std::vector<std::string> failing_blocks;
  // max |analytic - closed form| of the background-channel attention-logit factors;
  // negative when the mode has no closed form
  double closed_form_residual = -1.0;
  bool passed = false;
};

// L_all with consistency targets frozen at `at` when stop-gradient is active.
double total_loss(const GradcheckInstance& inst, const ModelParams& at, const Hyperparams& hyper,
                  GradMode mode, bool use_ten, const ConsistencyTargets* frozen);

GradcheckResult check_gradients(const GradcheckInstance& inst, const Hyperparams& hyper,
                                GradMode mode, const GradcheckSettings& settings);

}  // namespace wtal
