#include "wtal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "wtal/errors.hpp"
#include "wtal/localize.hpp"
#include "wtal/ten.hpp"

namespace wtal {

namespace {

struct VideoJob {
  std::size_t video = 0;
  std::optional<SamplePlan> plan;
};

BackwardResult video_gradient(const TrainingVideo& video, const VideoJob& job,
                              const ModelParams& params, const RunConfig& config) {
  const auto norm = norm_mode_for(config.mode);
  const auto fwd = forward(video.rgb, video.flow, params, norm);
  const auto target = make_target(video.label);
  if (job.plan) {
    const auto tcb = tcb_forward(video.rgb, video.flow, params, *job.plan);
    return backward(fwd, &tcb, params, target, config.hyper, config.mode);
  }
  return backward(fwd, nullptr, params, target, config.hyper, config.mode);
}

void add_losses(LossBreakdown& acc, const LossBreakdown& x, double scale) {
  acc.fg += scale * x.fg;
  acc.bg += scale * x.bg;
  acc.att += scale * x.att;
  acc.kl += scale * x.kl;
  acc.bvl += scale * x.bvl;
  acc.total += scale * x.total;
}

std::string describe_failure(const TrainingView& data, std::span<const VideoJob> jobs,
                             std::span<const BackwardResult> results, std::size_t step) {
  std::string msg = "non-finite loss or gradient at step " + std::to_string(step) + "; batch:";
  char buf[200];
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& l = results[j].losses;
    std::snprintf(buf, sizeof buf, "\n  %s L_fg=%g L_bg=%g L_att=%g L_KL=%g L_bvl=%g L_all=%g",
                  data[jobs[j].video].id.c_str(), l.fg, l.bg, l.att, l.kl, l.bvl, l.total);
    msg += buf;
  }
  return msg;
}

}  // namespace

ModelShape model_shape_for(const TrainingView& data, const Hyperparams& hyper) {
  ModelShape shape;
  shape.feature_dim = data.feature_dim();
  shape.embed_dim = hyper.embed_dim == 0 ? data.feature_dim() : hyper.embed_dim;
  shape.num_classes = data.num_classes();
  shape.kernel_size = hyper.kernel_size;
  return shape;
}

BatchGradient batch_gradient(const TrainingView& data, std::span<const std::size_t> batch,
                             const ModelParams& params, const RunConfig& config, Rng& rng) {
  std::vector<VideoJob> jobs;
  jobs.reserve(batch.size());
  for (std::size_t v : batch) {
    VideoJob job{v, std::nullopt};
    if (config.use_ten) job.plan = make_plan(data[v].rgb.rows(), config.hyper.k, rng);
    jobs.push_back(std::move(job));
  }

  std::vector<BackwardResult> results(jobs.size());
  const std::size_t workers = std::clamp<std::size_t>(config.workers, 1, jobs.size());
  if (workers == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      results[j] = video_gradient(data[jobs[j].video], jobs[j], params, config);
    }
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < jobs.size(); j += workers) {
            results[j] = video_gradient(data[jobs[j].video], jobs[j], params, config);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // fixed summation order keeps results independent of the worker count
  BatchGradient out;
  out.grads.assign(params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(jobs.size());
  bool finite = true;
  for (const auto& r : results) {
    const auto g = r.report.grads.values();
    for (std::size_t i = 0; i < g.size(); ++i) out.grads[i] += scale * g[i];
    add_losses(out.losses, r.losses, scale);
    finite = finite && std::isfinite(r.losses.total);
  }
  finite = finite && all_finite(out.grads);
  if (!finite) throw NumericError(describe_failure(data, jobs, results, 0));
  return out;
}

TrainResult train(const TrainingView& data, const RunConfig& config) {
  if (data.size() == 0) throw InvalidArgument("train: dataset is empty");
  if (config.batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
  Rng rng(config.seed);
  TrainResult result;
  result.params = init_params(model_shape_for(data, config.hyper), rng);
  auto& params = result.params;

  OptimizerState state(params.size(), config.learning_rate, config.weight_decay);
  state.decay_fraction = config.decay_fraction;
  const std::size_t iterations = config.hyper.iterations;

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open log " + config.log_path.string());
    log_file << format_step_log_header();
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::size_t> batch;
  const std::size_t batch_size = std::min(config.batch_size, data.size());

  for (std::size_t step = 0; step < iterations; ++step) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    BatchGradient g;
    try {
      g = batch_gradient(data, batch, params, config, rng);
    } catch (const NumericError& e) {
      std::string msg = e.what();
      const auto at = msg.find("step 0");
      if (at != std::string::npos) msg.replace(at, 6, "step " + std::to_string(step));
      throw NumericError(msg);
    }
    clip_global_norm(g.grads, config.grad_clip);
    state.learning_rate = scheduled_rate(config.learning_rate, config.final_learning_rate,
                                         state.decay_fraction, step, iterations);
    adam_step(params.values(), g.grads, state);

    StepLog entry{step, g.losses, state.learning_rate};
    if (log_file) log_file << format_step_log(entry);
    result.log.push_back(entry);

    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
        (step + 1) % config.checkpoint_every == 0) {
      write_checkpoint(config.checkpoint_path, params);
    }
  }
  if (!config.checkpoint_path.empty()) write_checkpoint(config.checkpoint_path, params);
  return result;
}

std::string format_step_log_header() { return "step,L_fg,L_bg,L_att,L_KL,L_all,lr\n"; }

std::string format_step_log(const StepLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g\n", e.step, e.losses.fg,
                e.losses.bg, e.losses.att, e.losses.kl, e.losses.total,
                e.learning_rate);
  return buf;
}

std::vector<AblationVariant> component_variants() {
  return {
      {"BL", GradMode::Standard, false, {}, {}},
      {"BL+BGES", GradMode::Bges, false, {}, {}},
      {"TEN", GradMode::Standard, true, {}, {}},
      {"TEN+BGES", GradMode::Bges, true, {}, {}},
  };
}

std::vector<AblationVariant> mode_variants() {
  auto out = component_variants();
  out.push_back({"BL+GRL", GradMode::Grl, false, {}, {}});
  out.push_back({"TEN+GRL", GradMode::Grl, true, {}, {}});
  out.push_back({"BL+BVL", GradMode::Bvl, false, {}, {}});
  out.push_back({"TEN+BVL", GradMode::Bvl, true, {}, {}});
  out.push_back({"TEN+BVL+BGES", GradMode::BvlPlusBges, true, {}, {}});
  return out;
}

std::vector<AblationVariant> interval_variants(std::span<const double> values) {
  std::vector<AblationVariant> out;
  for (double v : values) {
    if (!(v >= 1.0) || v != std::floor(v)) {
      throw InvalidArgument("sampling interval must be a positive integer");
    }
    const auto k = static_cast<std::size_t>(v);
    out.push_back({"TEN+BGES k=" + std::to_string(k), GradMode::Bges, true, {}, k});
  }
  return out;
}

std::vector<AblationVariant> lambda_variants(std::span<const double> values) {
  std::vector<AblationVariant> out;
  char buf[64];
  for (double v : values) {
    if (v < 0.0) throw InvalidArgument("lambda must be >= 0");
    std::snprintf(buf, sizeof buf, "BL lambda=%g", v);
    out.push_back({buf, GradMode::Standard, false, v, {}});
  }
  return out;
}

std::vector<AblationRow> ablate(const Dataset& train_set, const Dataset& test_set,
                                const RunConfig& base, std::span<const AblationVariant> variants,
                                std::size_t seeds, std::span<const double> iou_thresholds,
                                const ProgressFn& progress) {
  if (seeds == 0) throw InvalidArgument("ablate: need at least one seed");
  const TrainingView view(train_set);
  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    AblationRow row;
    row.variant = variant;
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig cfg = base;
      cfg.mode = variant.mode;
      cfg.use_ten = variant.use_ten;
      if (variant.lambda) cfg.hyper.lambda = *variant.lambda;
      if (variant.k) cfg.hyper.k = *variant.k;
      cfg.seed = base.seed + s;
      cfg.checkpoint_path.clear();
      cfg.log_path.clear();
      const auto trained = train(view, cfg);
      const auto proposals = localize_dataset(test_set, trained.params, cfg.hyper);
      row.per_seed.push_back(evaluate(proposals, test_set, iou_thresholds));
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed %llu: mAP@0.5 %.2f", variant.name.c_str(),
                      static_cast<unsigned long long>(cfg.seed),
                      100.0 * row.per_seed.back().average(0.5, 0.5));
        progress(buf);
      }
    }
    row.mean = average_reports(row.per_seed);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(std::span<const AblationRow> rows) {
  std::string out;
  if (rows.empty()) return out;
  char buf[64];
  out += "method";
  for (double t : rows.front().mean.thresholds) {
    std::snprintf(buf, sizeof buf, ",mAP@%.1f", t);
    out += buf;
  }
  out += ",AVG(0.1:0.5),AVG(0.3:0.7),AVG(0.1:0.7)\n";
  for (const auto& row : rows) {
    out += row.variant.name;
    for (double m : row.mean.map) {
      std::snprintf(buf, sizeof buf, ",%.2f", 100.0 * m);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f\n", 100.0 * row.mean.average(0.1, 0.5),
                  100.0 * row.mean.average(0.3, 0.7), 100.0 * row.mean.average(0.1, 0.7));
    out += buf;
  }
  return out;
}

}  // namespace wtal
