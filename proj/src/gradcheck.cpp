#include "wtal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace wtal {

GradcheckInstance random_instance(const ModelShape& shape, std::size_t length, std::size_t k,
                                  Rng& rng) {
  GradcheckInstance inst;
  inst.rgb = Matrix(length, shape.feature_dim);
  inst.flow = Matrix(length, shape.feature_dim);
  for (double& v : inst.rgb.data()) v = rng.normal();
  for (double& v : inst.flow.data()) v = rng.normal();
  inst.label.assign(shape.num_classes, false);
  for (std::size_t c = 0; c < shape.num_classes; ++c) inst.label[c] = rng.uniform() < 0.4;
  inst.label[rng.below(shape.num_classes)] = true;
  inst.params = init_params(shape, rng);
  for (Modality m : kModalities) {
    for (ParamBlock b : {ParamBlock::EmbedBias, ParamBlock::ClsBias, ParamBlock::AttBias}) {
      for (double& v : inst.params.block(m, b)) v = rng.uniform(-0.3, 0.3);
    }
  }
  inst.plan = make_plan(length, k, rng);
  return inst;
}

double default_tolerance(double epsilon) noexcept {
  const double r = epsilon / 1e-4;
  return 1e-5 * std::max(1.0, r * r);
}

double total_loss(const GradcheckInstance& inst, const ModelParams& at, const Hyperparams& hyper,
                  GradMode mode, bool use_ten, const ConsistencyTargets* frozen) {
  const auto fwd = forward(inst.rgb, inst.flow, at, norm_mode_for(mode));
  const auto target = make_target(inst.label);
  if (!use_ten) return compute_losses(fwd, nullptr, target, hyper, mode).total;
  const auto tcb = tcb_forward(inst.rgb, inst.flow, at, inst.plan);
  return compute_losses(fwd, &tcb, target, hyper, mode, frozen).total;
}

GradcheckResult check_gradients(const GradcheckInstance& inst, const Hyperparams& hyper,
                                GradMode mode, const GradcheckSettings& settings) {
  const auto& params = inst.params;
  const auto fwd = forward(inst.rgb, inst.flow, params, norm_mode_for(mode));
  const auto target = make_target(inst.label);
  std::optional<BranchOutputs> tcb;
  std::optional<ConsistencyTargets> frozen;
  if (settings.use_ten) {
    tcb = tcb_forward(inst.rgb, inst.flow, params, inst.plan);
    if (!hyper.full_consistency_backprop) {
      frozen = consistency_targets(fwd.branch, *tcb, hyper.smoothing);
    }
  }
  const auto analytic = backward(fwd, tcb ? &*tcb : nullptr, params, target, hyper, mode,
                                 settings.options);

  ModelParams probe = params;
  const auto fn = [&](std::span<const double> values) {
    std::copy(values.begin(), values.end(), probe.values().begin());
    return total_loss(inst, probe, hyper, mode, settings.use_ten, frozen ? &*frozen : nullptr);
  };
  const auto numeric = finite_diff_grad(fn, params.values(), settings.epsilon);

  GradcheckResult result;
  const auto grads = analytic.report.grads.values();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double err = relative_error(grads[i], numeric[i], settings.floor);
    const auto name = params.block_name_of(i);
    if (result.blocks.empty() || result.blocks.back().block != name) {
      result.blocks.push_back({name, 0.0});
    }
    auto& blk = result.blocks.back();
    blk.max_relative_error = std::max(blk.max_relative_error, err);
    if (err > result.max_relative_error || result.worst_block.empty()) {
      result.max_relative_error = err;
      result.worst_block = name;
    }
  }
  for (const auto& b : result.blocks) {
    if (!(b.max_relative_error < settings.tolerance)) result.failing_blocks.push_back(b.block);
  }
  result.passed = result.failing_blocks.empty();

  if ((mode == GradMode::Standard || mode == GradMode::Bges) && hyper.lambda != 0.0) {
    double residual = 0.0;
    for (Modality m : kModalities) {
      const auto closed = mode == GradMode::Standard
                              ? difference_closed_form(fwd, m, hyper.lambda)
                              : enhanced_closed_form(fwd, m, hyper.lambda);
      const auto& got = analytic.report.background.logit_bg_channel[static_cast<std::size_t>(m)];
      for (std::size_t i = 0; i < closed.size(); ++i) {
        residual = std::max(residual, std::abs(got[i] - closed[i]));
      }
    }
    result.closed_form_residual = residual;
  }
  return result;
}

}  // namespace wtal
