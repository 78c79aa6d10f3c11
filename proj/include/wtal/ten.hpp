#pragma once

#include <cstddef>
#include <vector>

#include "wtal/model.hpp"

namespace wtal {

/// Equal-interval sampling plan: segment s covers snippets [s*k, min((s+1)*k, T)) and
/// contributes one chosen snippet that is repeated over the whole segment.
struct SamplePlan {
  std::size_t length = 0;
  std::size_t interval = 1;
  std::vector<std::size_t> chosen;  // one absolute snippet index per segment

  std::size_t segment_count() const noexcept { return chosen.size(); }
  std::size_t source(std::size_t t) const noexcept { return chosen[t / interval]; }
};

SamplePlan make_plan(std::size_t length, std::size_t interval, Rng& rng);

/// Throws InvalidArgument unless every chosen index lies in its segment.
void validate_plan(const SamplePlan& plan);

Matrix refill(const Matrix& x, const SamplePlan& plan);

/// Base-branch model run on the refilled pair; rgb and flow share `plan`.
BranchOutputs tcb_forward(const Matrix& x_rgb, const Matrix& x_flow, const ModelParams& params,
                          const SamplePlan& plan);

}  // namespace wtal
