#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "supforge/tensor.hpp"

namespace supforge {

enum class Region : std::uint8_t { kFlat = 0, kChecker = 1, kNoise = 2, kBackground = 3 };

inline constexpr int kRegionCount = 4;
const char* region_name(Region r);

/// Rectified stereo pair with exact ground truth. Images are [3,H,W] with
/// values on the 1/255 lattice of [0,1]; disparity and labels live on the
/// left view.
struct StereoSample {
  Tensor left;
  Tensor right;
  Tensor gt_disparity;                       // [H,W], pixels
  std::vector<std::uint8_t> region_labels;   // H*W, Region values
  std::vector<std::uint8_t> occluded;        // H*W, 1 where the left pixel is hidden in the right view
  std::uint64_t seed = 0;

  std::size_t height() const { return gt_disparity.dim(0); }
  std::size_t width() const { return gt_disparity.dim(1); }
};

struct SceneConfig {
  int height = 64;
  int width = 128;
  int d_max = 24;
  int n_sprites_min = 3;
  int n_sprites_max = 6;
  int background_disparity_min = 2;
  int background_disparity_max = 5;
  // Relative frequencies of sprite textures.
  double weight_flat = 0.4;
  double weight_checker = 0.3;
  double weight_noise = 0.3;
  // Texture contrast in 8-bit levels: half-range of noise jitter and the
  // offset between the two checker colours.
  int noise_amplitude = 35;
  int checker_contrast = 52;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent settings, including
  /// d_max >= width / 4.
  void validate() const;
};

StereoSample generate(const SceneConfig& cfg);

/// Sample i is generated with seed base_seed + i.
std::vector<StereoSample> generate_dataset(const SceneConfig& cfg, int n,
                                           std::uint64_t base_seed);

/// Fraction of occluded pixels in a sample.
double occluded_fraction(const StereoSample& sample);

}  // namespace supforge
