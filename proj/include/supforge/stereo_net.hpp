#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "supforge/scenegen.hpp"
#include "supforge/stereo_ops.hpp"
#include "supforge/tensor.hpp"

namespace supforge {

enum class CostMode { kConcat, kCorrelation };
enum class ConvMode { kStandard, kDeformable };

const char* cost_mode_name(CostMode m);
const char* conv_mode_name(ConvMode m);
CostMode parse_cost_mode(const std::string& s);
ConvMode parse_conv_mode(const std::string& s);

struct StereoNetConfig {
  int encoder_layers = 4;
  int channels = 16;
  int downsample = 2;  // power of two
  int d_max = 24;      // full-resolution disparity range
  CostMode cost_mode = CostMode::kCorrelation;
  ConvMode conv_mode = ConvMode::kStandard;
  // Encoder layers that use deformable convolution when conv_mode is
  // kDeformable; empty means every layer.
  std::set<int> deformable_layers;
  bool use_isa = false;
  std::uint64_t seed = 0;

  int d_max_feature() const { return d_max / downsample; }
  /// Indices of deformable encoder layers (empty for kStandard).
  std::set<int> active_deformable_layers() const;
  void validate() const;
  std::string summary() const;
};

/// Closed-form parameter count:
///   encoder   sum_l 9*cin_l*C + C,  cin_0 = 3, cin_l = C
///   offsets   sum_{l deformable} 18*9*cin_l + 18
///   matching  CORRELATION: 1 (gain); CONCAT: 2C*C + C + C + 1
///   ISA       9 + 18*9*C + 18
std::size_t expected_parameter_count(const StereoNetConfig& cfg);

class StereoNet {
 public:
  using Param = std::pair<std::string, Tensor>;

  StereoNet() = default;
  /// Seeded init: weights ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
  /// biases and offset branches zero. The CONCAT matching layers start
  /// proportional to a sum of |a_k . (fL - fR)| terms.
  explicit StereoNet(StereoNetConfig cfg);
  // Copies own their parameters; training a copy never touches the source.
  StereoNet(const StereoNet& other);
  StereoNet& operator=(const StereoNet& other);
  StereoNet(StereoNet&&) = default;
  StereoNet& operator=(StereoNet&&) = default;

  const StereoNetConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool has_param(const std::string& name) const;
  std::size_t parameter_count() const;
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

 private:
  StereoNetConfig cfg_;
  std::vector<Param> params_;
  bool trained_ = false;
};

StereoNet init(const StereoNetConfig& cfg);

/// Per-layer encoder activations of one image, [C, h_l, w_l] each.
std::vector<Tensor> encode(const StereoNet& net, const Tensor& image, bool param_grads = false);

/// Matching cost volume [d_max_feature, h, w]. For CORRELATION this is the
/// raw feature correlation; for CONCAT the learned reduction of stacked
/// features.
Tensor build_cost_volume(const StereoNet& net, const Tensor& feat_left,
                         const Tensor& feat_right, bool param_grads = false);

struct ForwardResult {
  Tensor disparity;  // [H, W]
  std::vector<Tensor> left_features;
  std::vector<Tensor> right_features;
  Tensor cost;       // final cost fed to soft-argmin
};

/// Full disparity estimate. Records onto the active tape when inputs (or,
/// with param_grads, parameters) require gradients.
ForwardResult forward_full(const StereoNet& net, const Tensor& left, const Tensor& right,
                           bool param_grads = false);
Tensor forward(const StereoNet& net, const Tensor& left, const Tensor& right,
               bool param_grads = false);

enum class LossKind { kSmoothL1 };

struct LossSpec {
  LossKind kind = LossKind::kSmoothL1;
  double beta = 1.0;
  Reduction reduction = Reduction::kMean;
};

Tensor compute_loss(const LossSpec& spec, const Tensor& pred, const Tensor& target);

struct TrainConfig {
  int epochs = 30;
  double lr = 0.08;
  std::uint64_t seed = 0;
};

struct TrainResult {
  StereoNet net;
  std::vector<double> epoch_losses;  // mean loss per epoch
};

/// Plain per-sample SGD in a seeded order; throws NumericError on NaN.
TrainResult train(StereoNet net, const std::vector<StereoSample>& dataset, const LossSpec& loss,
                  const TrainConfig& cfg);

/// Per-sample learning rate for epoch e (0-based); used by fine-tuning.
using LrSchedule = std::vector<double>;
TrainResult train_scheduled(StereoNet net, const std::vector<StereoSample>& dataset,
                            const LossSpec& loss, const LrSchedule& lr_per_epoch,
                            std::uint64_t seed,
                            const std::function<std::pair<Tensor, Tensor>(
                                const StereoSample&, std::mt19937_64&)>& augment);

}  // namespace supforge
