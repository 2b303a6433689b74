#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"
#include "supforge/tensor.hpp"

namespace supforge {

/// Normalized histogram of predicted disparities. Values outside [lo, hi)
/// land in the first or last bin so the bins always sum to one.
struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> bins;
  double mean = 0.0;  // mean of the raw values
  std::size_t count = 0;

  double bin_width() const { return (hi - lo) / static_cast<double>(bins.size()); }
};

Histogram disparity_histogram(const std::vector<Tensor>& preds, int n_bins, double lo, double hi);

/// Pearson correlation over flattened entries. Throws on shape mismatch or
/// zero variance.
double pearson(const Tensor& a, const Tensor& b);

/// One value per encoder layer, averaged over samples.
using CorrelationTrace = std::vector<double>;

struct LayerCorrelation {
  CorrelationTrace left;   // corr(f(x_L), f(x_L + v_L)) per layer
  CorrelationTrace right;  // corr(f(x_R), f(x_R + v_R)) per layer
};

LayerCorrelation layer_correlation(const StereoNet& net, const std::vector<StereoSample>& samples,
                                   const PerturbationPair& pair);

struct RegisteredCorrelation {
  CorrelationTrace clean;      // corr(f_L, warped f_R) on clean inputs
  CorrelationTrace perturbed;  // same on perturbed inputs
  // Smallest visible fraction of feature pixels seen at any layer/sample.
  double min_visible_fraction = 1.0;
};

/// Left features against right features warped by the true disparity
/// (divided by the layer's decimation). Pixels whose source leaves the map
/// or is occluded are masked out.
RegisteredCorrelation registered_correlation(const StereoNet& net,
                                             const std::vector<StereoSample>& samples,
                                             const PerturbationPair& pair);

/// Masked Pearson between left features and right features sampled at
/// x - disparity / scale, over visible pixels only; also returns the
/// number of visible feature pixels.
double registered_pearson(const Tensor& feat_left, const Tensor& feat_right, const Tensor& gt,
                          const std::vector<std::uint8_t>& occluded, std::size_t* n_visible);

// CSV / gnuplot emission.
std::string histogram_csv(const std::vector<std::string>& names,
                          const std::vector<Histogram>& hists);
std::string histogram_dat(const std::vector<std::string>& names,
                          const std::vector<Histogram>& hists);
std::string trace_csv(const std::vector<std::string>& names,
                      const std::vector<CorrelationTrace>& traces);
std::string trace_dat(const std::vector<std::string>& names,
                      const std::vector<CorrelationTrace>& traces);

}  // namespace supforge
