#include "wtal/losses.hpp"

#include <algorithm>
#include <cmath>

#include "wtal/errors.hpp"

namespace wtal {

namespace {

double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double safe_log(double p) noexcept { return std::log(std::max(p, kLogFloor)); }

// KL(p || softmax(q_logits)) for a fixed probability vector p.
double kl_to_logits(std::span<const double> p, std::span<const double> q_logits) {
  const auto log_q = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) kl += p[c] * (std::log(p[c]) - log_q[c]);
  }
  return kl;
}

Matrix row_softmax(const Matrix& y) {
  Matrix out(y.rows(), y.cols());
  for (std::size_t t = 0; t < y.rows(); ++t) {
    const auto p = softmax(y.row(t));
    std::copy(p.begin(), p.end(), out.row(t).begin());
  }
  return out;
}

void check_label(std::span<const double> label, std::size_t outputs) {
  if (label.size() != outputs) {
    throw ShapeError("label has " + std::to_string(label.size()) + " entries, expected " +
                     std::to_string(outputs));
  }
}

void check_pair(const BranchOutputs& base, const BranchOutputs& tcb) {
  if (base.length() != tcb.length() || base.cas.cols() != tcb.cas.cols()) {
    throw ShapeError("continuity branch outputs do not match base branch shape");
  }
}

// Accumulates parameter gradients of one branch given dL/dy and dL/da at the fused outputs.
void branch_backward(const BranchOutputs& branch, const Matrix& d_cas,
                     std::span<const double> d_att, const ModelParams& params,
                     ModelParams& grads) {
  const auto& shape = params.shape();
  const std::size_t length = branch.length();
  const std::size_t outputs = shape.outputs();
  const std::size_t embed = shape.embed_dim;
  std::vector<double> d_hidden(embed);
  std::vector<double> d_cas_m(outputs);

  for (Modality m : kModalities) {
    const ModalityOutputs& s = branch.stream(m);
    const auto w_cls = params.block(m, ParamBlock::ClsWeight);
    const auto w_att = params.block(m, ParamBlock::AttWeight);
    auto g_embed_w = grads.block(m, ParamBlock::EmbedWeight);
    auto g_embed_b = grads.block(m, ParamBlock::EmbedBias);
    auto g_cls_w = grads.block(m, ParamBlock::ClsWeight);
    auto g_cls_b = grads.block(m, ParamBlock::ClsBias);
    auto g_att_w = grads.block(m, ParamBlock::AttWeight);
    auto g_att_b = grads.block(m, ParamBlock::AttBias);
    const std::size_t width = s.windows.cols();

    for (std::size_t t = 0; t < length; ++t) {
      // fusion halves both streams' gradients
      for (std::size_t c = 0; c < outputs; ++c) d_cas_m[c] = 0.5 * d_cas(t, c);
      const double a = s.attention[t];
      const double d_logit = 0.5 * d_att[t] * a * (1.0 - a);

      auto h = s.embedded.row(t);
      for (std::size_t c = 0; c < outputs; ++c) g_cls_b[c] += d_cas_m[c];
      g_att_b[0] += d_logit;
      for (std::size_t e = 0; e < embed; ++e) {
        const double* w = w_cls.data() + e * outputs;
        double* gw = g_cls_w.data() + e * outputs;
        double acc = w_att[e] * d_logit;
        for (std::size_t c = 0; c < outputs; ++c) {
          gw[c] += h[e] * d_cas_m[c];
          acc += w[c] * d_cas_m[c];
        }
        g_att_w[e] += h[e] * d_logit;
        d_hidden[e] = acc;
      }

      auto win = s.windows.row(t);
      for (std::size_t e = 0; e < embed; ++e) {
        if (!(s.preact(t, e) > 0.0)) continue;
        const double dz = d_hidden[e];
        g_embed_b[e] += dz;
        double* gw = g_embed_w.data() + e * width;
        for (std::size_t j = 0; j < width; ++j) gw[j] += dz * win[j];
      }
    }
  }
}

std::vector<double> closed_form(const ForwardOutputs& fwd, Modality m, double weight,
                                double bg_sign) {
  if (fwd.empty()) throw StateError("closed form requested on an empty forward");
  const auto& pooled = fwd.pooled;
  const std::size_t bg = pooled.p_bg.size() - 1;
  const double p = pooled.p_bg[bg];
  const double video_bg = pooled.bg_aggregate[bg];
  const double norm = pooled.bg_normalizer();
  const auto& stream = fwd.branch.stream(m);
  std::vector<double> out(fwd.branch.length());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = stream.attention[i];
    const double diff = bg_sign * video_bg - fwd.branch.cas(i, bg);
    out[i] = weight * (1.0 - p) / -2.0 * diff / norm * a * (1.0 - a);
  }
  return out;
}

}  // namespace

std::string_view to_string(GradMode mode) noexcept {
  switch (mode) {
    case GradMode::Standard:
      return "standard";
    case GradMode::Bges:
      return "bges";
    case GradMode::Grl:
      return "grl";
    case GradMode::Bvl:
      return "bvl";
    case GradMode::BvlPlusBges:
      return "bvl+bges";
  }
  return "?";
}

GradMode parse_grad_mode(std::string_view name) {
  if (name == "standard" || name == "bl") return GradMode::Standard;
  if (name == "bges") return GradMode::Bges;
  if (name == "grl") return GradMode::Grl;
  if (name == "bvl") return GradMode::Bvl;
  if (name == "bvl+bges" || name == "bvl_bges") return GradMode::BvlPlusBges;
  throw InvalidArgument("unknown gradient mode \"" + std::string(name) +
                        "\" (expected standard, bges, grl, bvl, bvl+bges)");
}

NormMode norm_mode_for(GradMode mode) noexcept {
  return (mode == GradMode::Bges || mode == GradMode::BvlPlusBges) ? NormMode::Bges
                                                                    : NormMode::Standard;
}

bool uses_bvl(GradMode mode) noexcept {
  return mode == GradMode::Bvl || mode == GradMode::BvlPlusBges;
}

std::vector<double> make_target(const std::vector<bool>& video_label) {
  std::vector<double> target(video_label.size() + 1, 0.0);
  for (std::size_t c = 0; c < video_label.size(); ++c) target[c] = video_label[c] ? 1.0 : 0.0;
  target.back() = 1.0;
  return target;
}

double loss_fg(std::span<const double> p_fg, std::span<const double> label) {
  check_label(label, p_fg.size());
  double mass = 0.0;
  for (double v : label) mass += v;
  if (!(mass > 0.0)) throw InvalidArgument("loss_fg: label has no positive entry");
  double loss = 0.0;
  for (std::size_t c = 0; c < p_fg.size(); ++c) {
    if (label[c] != 0.0) loss -= (label[c] / mass) * safe_log(p_fg[c]);
  }
  return loss;
}

double loss_bg(std::span<const double> p_bg) {
  if (p_bg.empty()) throw InvalidArgument("loss_bg: empty probability vector");
  return -safe_log(p_bg.back());
}

double loss_bvl(const Matrix& y) {
  if (y.rows() == 0) throw InvalidArgument("loss_bvl: empty sequence");
  std::vector<double> mean(y.cols(), 0.0);
  for (std::size_t t = 0; t < y.rows(); ++t) {
    for (std::size_t c = 0; c < y.cols(); ++c) mean[c] += y(t, c);
  }
  for (double& v : mean) v /= static_cast<double>(y.rows());
  return -log_softmax(mean).back();
}

double loss_att(std::span<const double> a, std::span<const double> a_tcb,
                const SmoothingConfig& smoothing) {
  if (a.size() != a_tcb.size()) {
    throw ShapeError("loss_att: attention lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(a_tcb.size()) + " differ");
  }
  const auto g_base = gaussian_smooth(a, smoothing);
  const auto g_tcb = gaussian_smooth(a_tcb, smoothing);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += std::abs(a[i] - g_tcb[i]) + std::abs(a_tcb[i] - g_base[i]);
  }
  return sum / static_cast<double>(a.size());
}

double loss_kl(const Matrix& y, const Matrix& y_tcb) {
  if (y.rows() != y_tcb.rows() || y.cols() != y_tcb.cols()) {
    throw ShapeError("loss_kl: CAS shapes differ");
  }
  if (y.rows() == 0) throw InvalidArgument("loss_kl: empty sequence");
  double sum = 0.0;
  for (std::size_t t = 0; t < y.rows(); ++t) {
    const auto lp = log_softmax(y.row(t));
    const auto lq = log_softmax(y_tcb.row(t));
    for (std::size_t c = 0; c < lp.size(); ++c) {
      const double p = std::exp(lp[c]);
      const double q = std::exp(lq[c]);
      sum += q * (lq[c] - lp[c]) + p * (lp[c] - lq[c]);
    }
  }
  return sum / static_cast<double>(y.rows());
}

ConsistencyTargets consistency_targets(const BranchOutputs& base, const BranchOutputs& tcb,
                                       const SmoothingConfig& smoothing) {
  check_pair(base, tcb);
  ConsistencyTargets out;
  out.smoothed_base = gaussian_smooth(base.attention, smoothing);
  out.smoothed_tcb = gaussian_smooth(tcb.attention, smoothing);
  out.probs_base = row_softmax(base.cas);
  out.probs_tcb = row_softmax(tcb.cas);
  return out;
}

LossBreakdown compute_losses(const ForwardOutputs& base, const BranchOutputs* tcb,
                             std::span<const double> label, const Hyperparams& hyper,
                             GradMode mode, const ConsistencyTargets* frozen) {
  if (base.empty()) throw StateError("compute_losses: forward outputs are empty");
  LossBreakdown out;
  out.fg = loss_fg(base.pooled.p_fg, label);
  out.bg = loss_bg(base.pooled.p_bg);
  if (uses_bvl(mode)) out.bvl = loss_bvl(base.branch.cas);
  if (tcb != nullptr) {
    check_pair(base.branch, *tcb);
    if (frozen != nullptr && !hyper.full_consistency_backprop) {
      const std::size_t length = base.branch.length();
      double att = 0.0;
      double kl = 0.0;
      for (std::size_t i = 0; i < length; ++i) {
        att += std::abs(base.branch.attention[i] - frozen->smoothed_tcb[i]) +
               std::abs(tcb->attention[i] - frozen->smoothed_base[i]);
        kl += kl_to_logits(frozen->probs_tcb.row(i), base.branch.cas.row(i)) +
              kl_to_logits(frozen->probs_base.row(i), tcb->cas.row(i));
      }
      out.att = att / static_cast<double>(length);
      out.kl = kl / static_cast<double>(length);
    } else {
      out.att = loss_att(base.branch.attention, tcb->attention, hyper.smoothing);
      out.kl = loss_kl(base.branch.cas, tcb->cas);
    }
  }
  out.total = out.fg + hyper.lambda * out.bg + hyper.beta * (out.kl + out.att);
  if (uses_bvl(mode)) out.total += hyper.effective_bvl_weight() * out.bvl;
  return out;
}

BackwardResult backward(const ForwardOutputs& base, const BranchOutputs* tcb,
                        const ModelParams& params, std::span<const double> label,
                        const Hyperparams& hyper, GradMode mode, const BackwardOptions& options) {
  if (base.empty()) throw StateError("backward called without a forward pass");
  if (base.pooled.mode != norm_mode_for(mode)) {
    throw StateError("backward: forward normalization does not match gradient mode " +
                     std::string(to_string(mode)));
  }
  const auto& shape = params.shape();
  const std::size_t length = base.branch.length();
  const std::size_t outputs = shape.outputs();
  const std::size_t bg = shape.background();
  check_label(label, outputs);
  if (base.branch.cas.cols() != outputs) throw ShapeError("backward: CAS width mismatch");

  BackwardResult result;
  result.losses = compute_losses(base, tcb, label, hyper, mode);
  result.report.grads = ModelParams(shape);
  auto& factors = result.report.background;
  factors.fused.assign(length, 0.0);
  factors.fused_bg_channel.assign(length, 0.0);

  const auto& y = base.branch.cas;
  const auto& a = base.branch.attention;
  const auto& pooled = base.pooled;
  Matrix d_cas(length, outputs);
  std::vector<double> d_att(length, 0.0);

  // foreground: dL/du_fg = P_fg - normalized label
  {
    double mass = 0.0;
    for (double v : label) mass += v;
    std::vector<double> g(outputs);
    for (std::size_t c = 0; c < outputs; ++c) g[c] = pooled.p_fg[c] - label[c] / mass;
    for (std::size_t i = 0; i < length; ++i) {
      double da = 0.0;
      for (std::size_t c = 0; c < outputs; ++c) {
        d_cas(i, c) += g[c] * a[i] / pooled.n_f;
        da += g[c] * (y(i, c) - pooled.fg_aggregate[c]);
      }
      d_att[i] += da / pooled.n_f;
    }
  }

  // background: the three modes differ only in the difference term on the attention path
  if (hyper.lambda != 0.0) {
    std::vector<double> g(outputs);
    for (std::size_t c = 0; c < outputs; ++c) {
      g[c] = hyper.lambda * (pooled.p_bg[c] - (c == bg ? 1.0 : 0.0));
    }
    const double norm = pooled.bg_normalizer();
    const auto& u = pooled.bg_aggregate;
    for (std::size_t i = 0; i < length; ++i) {
      double da = 0.0;
      double da_bg = 0.0;
      for (std::size_t c = 0; c < outputs; ++c) {
        d_cas(i, c) += g[c] * (1.0 - a[i]) / norm;
        double diff = 0.0;
        switch (mode) {
          case GradMode::Bges:
          case GradMode::BvlPlusBges:
            diff = -u[c] - y(i, c);
            break;
          case GradMode::Grl:
            diff = y(i, c) - u[c];
            break;
          case GradMode::Standard:
          case GradMode::Bvl:
            diff = u[c] - y(i, c);
            break;
        }
        const double term = g[c] * diff / norm;
        da += term;
        if (c == bg) da_bg = term;
      }
      d_att[i] += da;
      factors.fused[i] = da;
      factors.fused_bg_channel[i] = da_bg;
    }
  }

  if (uses_bvl(mode)) {
    const double weight = hyper.effective_bvl_weight();
    if (weight != 0.0) {
      std::vector<double> mean(outputs, 0.0);
      for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t c = 0; c < outputs; ++c) mean[c] += y(i, c);
      }
      for (double& v : mean) v /= static_cast<double>(length);
      auto q = softmax(mean);
      q[bg] -= 1.0;
      for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t c = 0; c < outputs; ++c) {
          d_cas(i, c) += weight * q[c] / static_cast<double>(length);
        }
      }
    }
  }

  Matrix d_cas_tcb;
  std::vector<double> d_att_tcb;
  if (tcb != nullptr) {
    check_pair(base.branch, *tcb);
    d_cas_tcb = Matrix(length, outputs);
    d_att_tcb.assign(length, 0.0);
    if (hyper.beta != 0.0) {
      const double scale = hyper.beta / static_cast<double>(length);
      const auto& a_r = tcb->attention;
      const auto g_base = gaussian_smooth(a, hyper.smoothing);
      const auto g_tcb = gaussian_smooth(a_r, hyper.smoothing);
      std::vector<double> s_base(length);
      std::vector<double> s_tcb(length);
      for (std::size_t i = 0; i < length; ++i) {
        s_base[i] = sign(a[i] - g_tcb[i]);
        s_tcb[i] = sign(a_r[i] - g_base[i]);
        d_att[i] += scale * s_base[i];
        d_att_tcb[i] += scale * s_tcb[i];
      }
      if (hyper.full_consistency_backprop) {
        const auto back_base = gaussian_smooth_adjoint(s_tcb, hyper.smoothing);
        const auto back_tcb = gaussian_smooth_adjoint(s_base, hyper.smoothing);
        for (std::size_t i = 0; i < length; ++i) {
          d_att[i] -= scale * back_base[i];
          d_att_tcb[i] -= scale * back_tcb[i];
        }
      }

      for (std::size_t i = 0; i < length; ++i) {
        const auto lp = log_softmax(y.row(i));
        const auto lq = log_softmax(tcb->cas.row(i));
        std::vector<double> p(outputs);
        std::vector<double> q(outputs);
        for (std::size_t c = 0; c < outputs; ++c) {
          p[c] = std::exp(lp[c]);
          q[c] = std::exp(lq[c]);
        }
        for (std::size_t c = 0; c < outputs; ++c) {
          d_cas(i, c) += scale * (p[c] - q[c]);
          d_cas_tcb(i, c) += scale * (q[c] - p[c]);
        }
        if (hyper.full_consistency_backprop) {
          double kl_pq = 0.0;
          double kl_qp = 0.0;
          for (std::size_t c = 0; c < outputs; ++c) {
            kl_pq += p[c] * (lp[c] - lq[c]);
            kl_qp += q[c] * (lq[c] - lp[c]);
          }
          for (std::size_t c = 0; c < outputs; ++c) {
            d_cas(i, c) += scale * p[c] * (lp[c] - lq[c] - kl_pq);
            d_cas_tcb(i, c) += scale * q[c] * (lq[c] - lp[c] - kl_qp);
          }
        }
      }
    }
  }

  for (Modality m : kModalities) {
    const auto& stream = base.branch.stream(m);
    auto& logit = factors.logit[static_cast<std::size_t>(m)];
    auto& logit_bg = factors.logit_bg_channel[static_cast<std::size_t>(m)];
    logit.resize(length);
    logit_bg.resize(length);
    for (std::size_t i = 0; i < length; ++i) {
      const double s = 0.5 * stream.attention[i] * (1.0 - stream.attention[i]);
      logit[i] = factors.fused[i] * s;
      logit_bg[i] = factors.fused_bg_channel[i] * s;
    }
  }

  branch_backward(base.branch, d_cas, d_att, params, result.report.grads);
  if (tcb != nullptr) branch_backward(*tcb, d_cas_tcb, d_att_tcb, params, result.report.grads);

  if (options.inject_sign_bug) {
    for (double& g : result.report.grads.block(Modality::Flow, ParamBlock::AttWeight)) g = -g;
  }
  return result;
}

std::vector<double> difference_closed_form(const ForwardOutputs& fwd, Modality m, double weight) {
  return closed_form(fwd, m, weight, 1.0);
}

std::vector<double> enhanced_closed_form(const ForwardOutputs& fwd, Modality m, double weight) {
  return closed_form(fwd, m, weight, -1.0);
}

std::vector<double> enhancement_increment(const ForwardOutputs& fwd, Modality m, double weight) {
  if (fwd.empty()) throw StateError("closed form requested on an empty forward");
  const auto& pooled = fwd.pooled;
  const std::size_t bg = pooled.p_bg.size() - 1;
  const double val = weight * (1.0 - pooled.p_bg[bg]) / pooled.bg_normalizer();
  const double video_bg = pooled.bg_aggregate[bg];
  const auto& stream = fwd.branch.stream(m);
  std::vector<double> out(fwd.branch.length());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = stream.attention[i];
    out[i] = val * video_bg * a * (1.0 - a);
  }
  return out;
}

}  // namespace wtal
