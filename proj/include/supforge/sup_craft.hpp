#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/tensor.hpp"

namespace supforge {

/// A stereo universal perturbation: one signed tile per view, repeated over
/// the image without overlap, each bounded by epsilon in the max norm.
struct PerturbationPair {
  Tensor left;   // [3, tile_h, tile_w]
  Tensor right;  // [3, tile_h, tile_w]
  double epsilon = 0.0;
  int tile_h = 0;
  int tile_w = 0;
  std::string source_net;  // id of the network the pair was crafted on

  static PerturbationPair zeros(int tile_h, int tile_w, double epsilon);
};

struct CraftConfig {
  double epsilon = 0.02;
  double alpha = 0.0002;
  int tile_h = 32;
  int tile_w = 32;
  int passes = 1;
  std::uint64_t seed = 0;
  // Radius of the seeded uniform start for both tiles; 0 starts from zero.
  // From zero the prediction equals its pseudo ground truth and the loss
  // gradient vanishes, so crafting never leaves the origin.
  double init_radius = 0.002;
  // Loss used to score the attacked prediction against pseudo ground truth.
  LossSpec loss{LossKind::kSmoothL1, 1.0, Reduction::kSum};

  void validate() const;
};

/// Element-wise clamp to [-xi, xi], the Euclidean projection onto the
/// max-norm ball.
Tensor project_linf(const Tensor& v, double xi);

/// image + v on every tile of the regular grid; differentiable in both.
Tensor apply_tiled(const Tensor& image, const Tensor& tile);

/// Arithmetic mean of all tile_h x tile_w tiles of a [3,H,W] gradient.
Tensor average_tile_gradients(const Tensor& grad, int tile_h, int tile_w);

/// Clean, detached predictions used as crafting targets.
std::vector<Tensor> pseudo_ground_truth(const StereoNet& net, const std::vector<StereoSample>& dataset);

struct CraftResult {
  PerturbationPair pair;
  std::vector<double> linf_left;   // max |v_L| after every update
  std::vector<double> linf_right;
  std::vector<double> losses;      // attacked loss seen at every update
};

/// Sequential crafting: for each sample (seeded order per pass) take the
/// loss gradient at the perturbed inputs, average it over tiles, project
/// the step onto the alpha ball and the accumulated tile onto the epsilon
/// ball.
CraftResult craft_sup(const StereoNet& net, const std::vector<StereoSample>& dataset,
                      const CraftConfig& cfg);

enum class NoiseKind { kUniform, kGaussian };

/// Uniform U(-eps, eps) or Gaussian N(0, (eps/4)^2) clipped to eps.
std::pair<Tensor, Tensor> noise_attack(const Tensor& left, const Tensor& right, NoiseKind kind,
                                       double epsilon, std::uint64_t seed);

/// Image-specific iterative sign attack against the clean prediction,
/// starting from U(-eps/10, eps/10) seeded by the sample.
std::pair<Tensor, Tensor> fgsm_image_specific(const StereoNet& net, const StereoSample& sample,
                                              double epsilon, int steps);

/// Applies a universal pair to both views.
std::pair<Tensor, Tensor> apply_perturbation(const PerturbationPair& pair, const Tensor& left,
                                             const Tensor& right);

}  // namespace supforge
