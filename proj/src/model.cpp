#include "wtal/model.hpp"

#include <cmath>
#include <string>

#include "wtal/binary_io.hpp"
#include "wtal/errors.hpp"

namespace wtal {

namespace {

constexpr std::string_view kCheckpointMagic = "WTALCK01";
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr std::array<const char*, kBlocksPerModality> kBlockNames = {
    "embed_weight", "embed_bias", "cls_weight", "cls_bias", "att_weight", "att_bias"};

std::size_t block_index(Modality m, ParamBlock b) noexcept {
  return static_cast<std::size_t>(m) * kBlocksPerModality + static_cast<std::size_t>(b);
}

void check_features(const Matrix& x, const ModelShape& shape, const char* what) {
  if (x.cols() != shape.feature_dim) {
    throw ShapeError(std::string(what) + ": feature dimension " + std::to_string(x.cols()) +
                     " does not match model dimension " + std::to_string(shape.feature_dim));
  }
}

Matrix im2col(const Matrix& x, std::size_t kernel) {
  const std::size_t length = x.rows();
  const std::size_t dim = x.cols();
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  Matrix windows(length, dim * kernel);
  for (std::size_t t = 0; t < length; ++t) {
    auto dst = windows.row(t);
    for (std::size_t k = 0; k < kernel; ++k) {
      const auto src_t =
          reflect_index(static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half,
                        length);
      auto src = x.row(src_t);
      for (std::size_t d = 0; d < dim; ++d) dst[d * kernel + k] = src[d];
    }
  }
  return windows;
}

Matrix conv_preact(const Matrix& windows, const ModelParams& params, Modality m) {
  const auto& shape = params.shape();
  const auto weight = params.block(m, ParamBlock::EmbedWeight);
  const auto bias = params.block(m, ParamBlock::EmbedBias);
  const std::size_t width = windows.cols();
  Matrix pre(windows.rows(), shape.embed_dim);
  for (std::size_t t = 0; t < windows.rows(); ++t) {
    auto win = windows.row(t);
    for (std::size_t e = 0; e < shape.embed_dim; ++e) {
      const double* w = weight.data() + e * width;
      double acc = bias[e];
      for (std::size_t j = 0; j < width; ++j) acc += w[j] * win[j];
      pre(t, e) = acc;
    }
  }
  return pre;
}

Matrix relu(const Matrix& pre) {
  Matrix out = pre;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

void check_embedded(const Matrix& embedded, const ModelShape& shape, const char* what) {
  if (embedded.cols() != shape.embed_dim) {
    throw ShapeError(std::string(what) + ": embedding width " + std::to_string(embedded.cols()) +
                     " does not match model embed_dim " + std::to_string(shape.embed_dim));
  }
}

ModalityOutputs forward_stream(const Matrix& x, const ModelParams& params, Modality m) {
  check_features(x, params.shape(), "forward");
  ModalityOutputs out;
  out.windows = im2col(x, params.shape().kernel_size);
  out.preact = conv_preact(out.windows, params, m);
  out.embedded = relu(out.preact);
  out.cas = cas(out.embedded, params, m);
  out.attention = attention(out.embedded, params, m);
  return out;
}

}  // namespace

ModelParams::ModelParams(const ModelShape& shape) : shape_(shape) {
  if (shape.feature_dim == 0 || shape.embed_dim == 0 || shape.num_classes == 0 ||
      shape.kernel_size == 0) {
    throw InvalidArgument("model shape dimensions must all be positive");
  }
  if (shape.kernel_size % 2 == 0) {
    throw InvalidArgument("temporal kernel size must be odd, got " +
                          std::to_string(shape.kernel_size));
  }
  std::size_t offset = 0;
  for (Modality m : kModalities) {
    for (std::size_t b = 0; b < kBlocksPerModality; ++b) {
      offsets_[block_index(m, static_cast<ParamBlock>(b))] = offset;
      offset += block_size(static_cast<ParamBlock>(b));
    }
  }
  offsets_.back() = offset;
  data_.assign(offset, 0.0);
}

std::size_t ModelParams::block_size(ParamBlock b) const noexcept {
  switch (b) {
    case ParamBlock::EmbedWeight:
      return shape_.embed_dim * shape_.feature_dim * shape_.kernel_size;
    case ParamBlock::EmbedBias:
      return shape_.embed_dim;
    case ParamBlock::ClsWeight:
      return shape_.embed_dim * shape_.outputs();
    case ParamBlock::ClsBias:
      return shape_.outputs();
    case ParamBlock::AttWeight:
      return shape_.embed_dim;
    case ParamBlock::AttBias:
      return 1;
  }
  return 0;
}

std::span<double> ModelParams::block(Modality m, ParamBlock b) noexcept {
  const auto i = block_index(m, b);
  return std::span(data_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::span<const double> ModelParams::block(Modality m, ParamBlock b) const noexcept {
  const auto i = block_index(m, b);
  return std::span(data_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

std::string ModelParams::block_name(Modality m, ParamBlock b) {
  return std::string(m == Modality::Rgb ? "rgb." : "flow.") +
         kBlockNames[static_cast<std::size_t>(b)];
}

std::string ModelParams::block_name_of(std::size_t flat_index) const {
  for (std::size_t i = 0; i + 1 < offsets_.size(); ++i) {
    if (flat_index >= offsets_[i] && flat_index < offsets_[i + 1]) {
      return block_name(static_cast<Modality>(i / kBlocksPerModality),
                        static_cast<ParamBlock>(i % kBlocksPerModality));
    }
  }
  return "<out of range>";
}

std::vector<double> Hyperparams::default_proposal_thresholds() {
  std::vector<double> out;
  for (int i = 0; i <= 12; ++i) out.push_back(0.10 + 0.05 * i);
  return out;
}

ModelParams init_params(const ModelShape& shape, Rng& rng) {
  ModelParams params(shape);
  auto fill = [&rng](std::span<double> block, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : block) w = rng.uniform(-bound, bound);
  };
  for (Modality m : kModalities) {
    fill(params.block(m, ParamBlock::EmbedWeight), shape.feature_dim * shape.kernel_size);
    fill(params.block(m, ParamBlock::ClsWeight), shape.embed_dim);
    fill(params.block(m, ParamBlock::AttWeight), shape.embed_dim);
  }
  return params;
}

Matrix embed(const Matrix& x, const ModelParams& params, Modality m) {
  check_features(x, params.shape(), "embed");
  if (x.rows() == 0) throw InvalidArgument("embed: empty sequence");
  return relu(conv_preact(im2col(x, params.shape().kernel_size), params, m));
}

Matrix cas(const Matrix& embedded, const ModelParams& params, Modality m) {
  const auto& shape = params.shape();
  check_embedded(embedded, shape, "cas");
  const auto weight = params.block(m, ParamBlock::ClsWeight);
  const auto bias = params.block(m, ParamBlock::ClsBias);
  const std::size_t outputs = shape.outputs();
  Matrix y(embedded.rows(), outputs);
  for (std::size_t t = 0; t < embedded.rows(); ++t) {
    auto dst = y.row(t);
    for (std::size_t c = 0; c < outputs; ++c) dst[c] = bias[c];
    for (std::size_t e = 0; e < shape.embed_dim; ++e) {
      const double h = embedded(t, e);
      if (h == 0.0) continue;
      const double* w = weight.data() + e * outputs;
      for (std::size_t c = 0; c < outputs; ++c) dst[c] += h * w[c];
    }
  }
  return y;
}

std::vector<double> attention(const Matrix& embedded, const ModelParams& params, Modality m) {
  check_embedded(embedded, params.shape(), "attention");
  const auto weight = params.block(m, ParamBlock::AttWeight);
  const double bias = params.block(m, ParamBlock::AttBias)[0];
  std::vector<double> a(embedded.rows());
  for (std::size_t t = 0; t < embedded.rows(); ++t) {
    auto h = embedded.row(t);
    double logit = bias;
    for (std::size_t e = 0; e < h.size(); ++e) logit += h[e] * weight[e];
    a[t] = sigmoid(logit);
  }
  return a;
}

PoolOutputs pool(const Matrix& y, std::span<const double> a, NormMode mode) {
  if (y.rows() == 0) throw InvalidArgument("pool: empty sequence");
  if (a.size() != y.rows()) {
    throw ShapeError("pool: attention length " + std::to_string(a.size()) +
                     " does not match CAS length " + std::to_string(y.rows()));
  }
  PoolOutputs out;
  out.mode = mode;
  double n_f = 0.0;
  double n_b = 0.0;
  for (double ai : a) {
    n_f += ai;
    n_b += 1.0 - ai;
  }
  out.n_f = std::max(n_f, kNormalizerFloor);
  out.n_b = std::max(n_b, kNormalizerFloor);
  const std::size_t outputs = y.cols();
  out.fg_aggregate.assign(outputs, 0.0);
  out.bg_aggregate.assign(outputs, 0.0);
  for (std::size_t t = 0; t < y.rows(); ++t) {
    auto row = y.row(t);
    for (std::size_t c = 0; c < outputs; ++c) {
      out.fg_aggregate[c] += a[t] * row[c];
      out.bg_aggregate[c] += (1.0 - a[t]) * row[c];
    }
  }
  const double bg_norm = out.bg_normalizer();
  for (std::size_t c = 0; c < outputs; ++c) {
    out.fg_aggregate[c] /= out.n_f;
    out.bg_aggregate[c] /= bg_norm;
  }
  out.p_fg = softmax(out.fg_aggregate);
  out.p_bg = softmax(out.bg_aggregate);
  return out;
}

BranchOutputs forward_branch(const Matrix& x_rgb, const Matrix& x_flow,
                             const ModelParams& params) {
  if (x_rgb.rows() != x_flow.rows()) {
    throw ShapeError("forward: rgb has " + std::to_string(x_rgb.rows()) + " snippets, flow has " +
                     std::to_string(x_flow.rows()));
  }
  if (x_rgb.rows() == 0) throw InvalidArgument("forward: empty sequence");
  BranchOutputs out;
  out.rgb = forward_stream(x_rgb, params, Modality::Rgb);
  out.flow = forward_stream(x_flow, params, Modality::Flow);
  out.cas = Matrix(out.rgb.cas.rows(), out.rgb.cas.cols());
  auto fused = out.cas.data();
  auto yr = out.rgb.cas.data();
  auto yo = out.flow.cas.data();
  for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = (yr[i] + yo[i]) * 0.5;
  out.attention.resize(x_rgb.rows());
  for (std::size_t t = 0; t < out.attention.size(); ++t) {
    out.attention[t] = (out.rgb.attention[t] + out.flow.attention[t]) * 0.5;
  }
  return out;
}

ForwardOutputs forward(const Matrix& x_rgb, const Matrix& x_flow, const ModelParams& params,
                       NormMode mode) {
  ForwardOutputs out;
  out.branch = forward_branch(x_rgb, x_flow, params);
  out.pooled = pool(out.branch.cas, out.branch.attention, mode);
  return out;
}

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  const std::size_t payload = w.size();
  const auto& shape = params.shape();
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(shape.feature_dim));
  w.u32(static_cast<std::uint32_t>(shape.embed_dim));
  w.u32(static_cast<std::uint32_t>(shape.num_classes));
  w.u32(static_cast<std::uint32_t>(shape.kernel_size));
  w.u64(params.size());
  w.f64s(params.values());
  w.crc_from(payload);
  return w.take();
}

ModelParams deserialize_params(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kCheckpointMagic);
  const std::size_t payload = r.offset();
  const std::size_t version_at = r.offset();
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  ModelShape shape;
  shape.feature_dim = r.u32();
  shape.embed_dim = r.u32();
  shape.num_classes = r.u32();
  shape.kernel_size = r.u32();
  const std::size_t count_at = r.offset();
  const auto count = r.u64();
  ModelParams params;
  try {
    params = ModelParams(shape);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid checkpoint shape: ") + e.what(), payload + 4);
  }
  if (count != params.size()) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match shape (" +
                          std::to_string(params.size()) + ")",
                      count_at);
  }
  r.f64s(params.values());
  r.verify_crc_from(payload);
  r.expect_end();
  return params;
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  io::write_file(path, serialize_params(params));
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(io::read_file(path));
}

}  // namespace wtal
