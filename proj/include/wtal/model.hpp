#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wtal/numerics.hpp"

namespace wtal {

enum class Modality : std::size_t { Rgb = 0, Flow = 1 };
inline constexpr std::array<Modality, 2> kModalities{Modality::Rgb, Modality::Flow};

// How the background aggregate is normalized. Bges divides by N_f instead of N_b.
enum class NormMode { Standard, Bges };

enum class ParamBlock : std::size_t {
  EmbedWeight = 0,  // E x D x kernel, index [e][d][k]
  EmbedBias,        // E
  ClsWeight,        // E x (C+1)
  ClsBias,          // C+1
  AttWeight,        // E
  AttBias,          // 1
};
inline constexpr std::size_t kBlocksPerModality = 6;

struct ModelShape {
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 0;
  std::size_t num_classes = 0;  // action classes; index num_classes is background
  std::size_t kernel_size = 3;

  std::size_t outputs() const noexcept { return num_classes + 1; }
  std::size_t background() const noexcept { return num_classes; }
  bool operator==(const ModelShape&) const = default;
};

/// Parameters of both modality streams stored contiguously in a fixed block order:
/// rgb blocks then flow blocks, each in ParamBlock order. The checkpoint format uses
/// the same order.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelShape& shape);

  const ModelShape& shape() const noexcept { return shape_; }

  std::span<double> block(Modality m, ParamBlock b) noexcept;
  std::span<const double> block(Modality m, ParamBlock b) const noexcept;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  // Which block a flat index belongs to, e.g. "flow.att_weight".
  std::string block_name_of(std::size_t flat_index) const;
  static std::string block_name(Modality m, ParamBlock b);

  bool operator==(const ModelParams&) const = default;

 private:
  std::size_t block_size(ParamBlock b) const noexcept;

  ModelShape shape_;
  std::vector<double> data_;
  std::array<std::size_t, 2 * kBlocksPerModality + 1> offsets_{};
};

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
ModelParams init_params(const ModelShape& shape, Rng& rng);

struct Hyperparams {
  double lambda = 0.1;              // background loss weight
  double beta = 0.1;                // temporal-consistency loss weight
  std::size_t k = 4;                // sampling interval of the continuity branch
  double epsilon = 0.5;             // score fusion weight
  double rho_cls = 0.1;             // class probability threshold
  double nms_iou = 0.5;
  std::vector<double> proposal_thresholds = default_proposal_thresholds();
  std::size_t embed_dim = 0;        // 0 means "same as the feature dimension"
  std::size_t kernel_size = 3;
  std::size_t iterations = 6000;
  double bvl_weight = -1.0;         // negative means "use lambda"
  SmoothingConfig smoothing{};
  bool full_consistency_backprop = false;  // off: smoothed/softened targets are constants

  double effective_bvl_weight() const noexcept { return bvl_weight < 0.0 ? lambda : bvl_weight; }
  static std::vector<double> default_proposal_thresholds();
};

struct ModalityOutputs {
  Matrix windows;         // T x (D*kernel) im2col of the reflect-padded input
  Matrix preact;          // T x E before ReLU
  Matrix embedded;        // T x E
  Matrix cas;             // T x (C+1)
  std::vector<double> attention;
};

struct BranchOutputs {
  ModalityOutputs rgb;
  ModalityOutputs flow;
  Matrix cas;                     // 0.5 * (rgb.cas + flow.cas)
  std::vector<double> attention;  // 0.5 * (rgb.attention + flow.attention)

  std::size_t length() const noexcept { return attention.size(); }
  const ModalityOutputs& stream(Modality m) const noexcept {
    return m == Modality::Rgb ? rgb : flow;
  }
};

struct PoolOutputs {
  std::vector<double> fg_aggregate;  // sum a_i y_i / N_f
  std::vector<double> bg_aggregate;  // sum (1-a_i) y_i / N_b  (or / N_f under Bges)
  std::vector<double> p_fg;
  std::vector<double> p_bg;
  double n_f = 0.0;
  double n_b = 0.0;
  NormMode mode = NormMode::Standard;

  double bg_normalizer() const noexcept { return mode == NormMode::Bges ? n_f : n_b; }
};

struct ForwardOutputs {
  BranchOutputs branch;
  PoolOutputs pooled;

  bool empty() const noexcept { return branch.length() == 0; }
};

inline constexpr double kNormalizerFloor = 1e-12;

Matrix embed(const Matrix& x, const ModelParams& params, Modality m);
Matrix cas(const Matrix& embedded, const ModelParams& params, Modality m);
std::vector<double> attention(const Matrix& embedded, const ModelParams& params, Modality m);
PoolOutputs pool(const Matrix& y, std::span<const double> a, NormMode mode);

/// Both modality streams plus fusion, with everything backward needs cached.
BranchOutputs forward_branch(const Matrix& x_rgb, const Matrix& x_flow, const ModelParams& params);
ForwardOutputs forward(const Matrix& x_rgb, const Matrix& x_flow, const ModelParams& params,
                       NormMode mode);

// Checkpoint container: "WTALCK01", u32 version, u32 D, E, C, kernel, u64 count,
// float64 values in block order, CRC32 of everything after the magic.
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(const std::filesystem::path& path);

}  // namespace wtal
