#include "wtal/ten.hpp"

#include <algorithm>
#include <string>

#include "wtal/errors.hpp"

namespace wtal {

SamplePlan make_plan(std::size_t length, std::size_t interval, Rng& rng) {
  if (interval == 0) throw InvalidArgument("make_plan: sampling interval k must be >= 1");
  if (length == 0) throw InvalidArgument("make_plan: sequence length must be >= 1");
  SamplePlan plan;
  plan.length = length;
  plan.interval = interval;
  const std::size_t segments = (length + interval - 1) / interval;
  plan.chosen.reserve(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t begin = s * interval;
    const std::size_t end = std::min(begin + interval, length);
    plan.chosen.push_back(begin + rng.below(end - begin));
  }
  return plan;
}

void validate_plan(const SamplePlan& plan) {
  if (plan.interval == 0) throw InvalidArgument("sample plan has zero interval");
  const std::size_t segments = (plan.length + plan.interval - 1) / plan.interval;
  if (plan.chosen.size() != segments) {
    throw InvalidArgument("sample plan has " + std::to_string(plan.chosen.size()) +
                          " segments, expected " + std::to_string(segments));
  }
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t begin = s * plan.interval;
    const std::size_t end = std::min(begin + plan.interval, plan.length);
    if (plan.chosen[s] < begin || plan.chosen[s] >= end) {
      throw InvalidArgument("sample plan segment " + std::to_string(s) +
                            " chooses snippet outside its segment");
    }
  }
}

Matrix refill(const Matrix& x, const SamplePlan& plan) {
  if (plan.length != x.rows()) {
    throw InvalidArgument("refill: plan covers " + std::to_string(plan.length) +
                          " snippets, sequence has " + std::to_string(x.rows()));
  }
  validate_plan(plan);
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto src = x.row(plan.source(t));
    std::copy(src.begin(), src.end(), out.row(t).begin());
  }
  return out;
}

BranchOutputs tcb_forward(const Matrix& x_rgb, const Matrix& x_flow, const ModelParams& params,
                          const SamplePlan& plan) {
  return forward_branch(refill(x_rgb, plan), refill(x_flow, plan), params);
}

}  // namespace wtal
