#pragma once

#include "supforge/tensor.hpp"

namespace supforge {

/// Deformable convolution: every kernel tap p_n of output location p0 reads
/// the input at p0 * stride - pad + p_n + offset_n(p0) through bilinear
/// interpolation. `offsets` is [2k^2, H_out, W_out] with channel 2n holding
/// the row displacement of tap n and channel 2n+1 the column displacement.
/// With all offsets zero the result equals conv2d bit for bit.
Tensor deform_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     const Tensor& offsets, int stride = 1, int pad = -1);

/// Explicit-matching cost volume:
///   C(d, y, x) = 1/C_feat * sum_c left(c, y, x) * right(c, y, x - d),
/// zero where x - d falls outside the map. Output is [d_count, h, w].
Tensor correlation_volume(const Tensor& feat_left, const Tensor& feat_right,
                          int d_count);

/// Adaptive aggregation over every disparity slice of a [D,h,w] volume:
///   out(d, p) = sum_k w_k * C(d, p + p_k + offset_k(p))
/// with p_k the 3x3 grid, `weights` [3,3] and `offsets` [18,h,w] shared by
/// all slices.
Tensor isa_aggregate(const Tensor& cost, const Tensor& weights, const Tensor& offsets);

/// d(p) = sum_d d * softmax_d(-cost(., p)) over a [D,h,w] volume.
Tensor soft_argmin(const Tensor& cost);

/// Bilinear upsampling of an [h,w] map by an integer factor (half-pixel
/// centres, edge clamped), each output multiplied by `scale`.
Tensor upsample_bilinear(const Tensor& map, int factor, double scale = 1.0);

enum class Reduction { kMean, kSum };

/// Smooth-L1 (Huber with threshold beta) between pred and target over the
/// pixels where target > 0. The target is treated as a constant.
Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, double beta,
                      Reduction reduction = Reduction::kMean);

}  // namespace supforge
