#pragma once

#include <cstddef>

#include "supforge/tensor.hpp"

namespace supforge {

inline constexpr double kDefaultLeakySlope = 0.1;

// Elementwise. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double s);
/// x * s where s is a single-element tensor (a learnable gain).
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kDefaultLeakySlope);
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

/// Cross-correlation with zero padding; weight is [C_out, C_in, k, k], k odd.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int pad = 0);

/// Bilinear read of every channel of a [C,H,W] map at (y, x); neighbours
/// outside the map contribute zero. `coords` is a [2] tensor holding (y, x).
Tensor bilinear_sample(const Tensor& input, const Tensor& coords);
Tensor bilinear_sample(const Tensor& input, double y, double x);

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Concatenate [C_i, ...] tensors along axis 0.
Tensor concat(const std::vector<Tensor>& parts);
/// out(c, y, x) = in(c, y, x - shift), zero where x - shift leaves the map.
Tensor shift_columns(const Tensor& input, int shift);

namespace bilinear {

/// Neighbour indices and weights of a bilinear read in an H x W plane.
/// Index -1 marks an out-of-bounds neighbour.
struct Stencil {
  long idx[4];
  double w[4];
  // d(weight)/dy and d(weight)/dx for the same four neighbours.
  double dwy[4];
  double dwx[4];
};

Stencil stencil(double y, double x, long height, long width);

inline double read(const double* plane, const Stencil& s) {
  double v = 0.0;
  for (int k = 0; k < 4; ++k) {
    v += s.w[k] * (s.idx[k] >= 0 ? plane[s.idx[k]] : 0.0);
  }
  return v;
}

}  // namespace bilinear

}  // namespace supforge
