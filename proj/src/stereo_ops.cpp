#include "supforge/stereo_ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "supforge/ops.hpp"

namespace supforge {

using detail::grad_sink;
using detail::make_result;

Tensor deform_conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     const Tensor& offsets, int stride, int pad) {
  if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1 || offsets.rank() != 3) {
    throw ShapeError("deform_conv2d: expected input [C,H,W], weight [O,C,k,k], bias [O], "
                     "offsets [2k^2,Ho,Wo]; got " + shape_str(input.shape()) + ", " +
                     shape_str(weight.shape()) + ", " + shape_str(bias.shape()) + ", " +
                     shape_str(offsets.shape()));
  }
  const long C = static_cast<long>(input.dim(0));
  const long H = static_cast<long>(input.dim(1));
  const long W = static_cast<long>(input.dim(2));
  const long O = static_cast<long>(weight.dim(0));
  const long K = static_cast<long>(weight.dim(2));
  if (weight.dim(1) != static_cast<std::size_t>(C) || weight.dim(3) != weight.dim(2) ||
      bias.dim(0) != static_cast<std::size_t>(O) || K % 2 == 0) {
    throw ShapeError("deform_conv2d: incompatible input " + shape_str(input.shape()) +
                     ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  if (pad < 0) pad = static_cast<int>(K / 2);
  if (stride < 1) throw std::invalid_argument("deform_conv2d: stride must be >= 1");
  const long Ho = (H + 2 * pad - K) / stride + 1;
  const long Wo = (W + 2 * pad - K) / stride + 1;
  const long taps = K * K;
  if (offsets.dim(0) != static_cast<std::size_t>(2 * taps)) {
    throw ShapeError("deform_conv2d: offsets need " + std::to_string(2 * taps) +
                     " channels for a " + std::to_string(K) + "x" + std::to_string(K) +
                     " kernel, got " + std::to_string(offsets.dim(0)));
  }
  if (offsets.dim(1) != static_cast<std::size_t>(Ho) ||
      offsets.dim(2) != static_cast<std::size_t>(Wo)) {
    throw ShapeError("deform_conv2d: offsets " + shape_str(offsets.shape()) +
                     " not aligned with output grid " + std::to_string(Ho) + "x" +
                     std::to_string(Wo));
  }
  const long P = Ho * Wo;
  const double* off = offsets.values().data();

  auto stencils = std::make_shared<std::vector<bilinear::Stencil>>(
      static_cast<std::size_t>(taps * P));
  for (long n = 0; n < taps; ++n) {
    const long ky = n / K, kx = n % K;
    for (long oy = 0; oy < Ho; ++oy) {
      for (long ox = 0; ox < Wo; ++ox) {
        const long p = oy * Wo + ox;
        const double y = static_cast<double>(oy * stride - pad + ky) + off[(2 * n) * P + p];
        const double x = static_cast<double>(ox * stride - pad + kx) + off[(2 * n + 1) * P + p];
        (*stencils)[n * P + p] = bilinear::stencil(y, x, H, W);
      }
    }
  }
  // Sampled columns: col[c][n][p].
  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C * taps * P));
  const double* in = input.values().data();
  for (long c = 0; c < C; ++c) {
    const double* plane = in + c * H * W;
    for (long n = 0; n < taps; ++n) {
      double* cp = col->data() + (c * taps + n) * P;
      const bilinear::Stencil* st = stencils->data() + n * P;
      for (long p = 0; p < P; ++p) cp[p] = bilinear::read(plane, st[p]);
    }
  }
  std::vector<double> out(static_cast<std::size_t>(O * P));
  const double* w = weight.values().data();
  for (long o = 0; o < O; ++o) {
    double* op = out.data() + o * P;
    std::fill(op, op + P, bias[static_cast<std::size_t>(o)]);
    for (long c = 0; c < C; ++c) {
      for (long n = 0; n < taps; ++n) {
        const double wv = w[(o * C + c) * taps + n];
        const double* cp = col->data() + (c * taps + n) * P;
        for (long p = 0; p < P; ++p) op[p] += wv * cp[p];
      }
    }
  }

  return make_result(
      {static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)},
      std::move(out), {input, weight, bias, offsets},
      [=](const std::vector<double>& g) {
        double* gin = grad_sink(input.impl());
        double* gw = grad_sink(weight.impl());
        double* gb = grad_sink(bias.impl());
        double* goff = grad_sink(offsets.impl());
        const double* w = weight.values().data();
        if (gb) {
          for (long o = 0; o < O; ++o) {
            double acc = 0.0;
            for (long p = 0; p < P; ++p) acc += g[o * P + p];
            gb[o] += acc;
          }
        }
        if (gw) {
          for (long o = 0; o < O; ++o) {
            const double* gp = g.data() + o * P;
            for (long c = 0; c < C; ++c) {
              for (long n = 0; n < taps; ++n) {
                const double* cp = col->data() + (c * taps + n) * P;
                double acc = 0.0;
                for (long p = 0; p < P; ++p) acc += gp[p] * cp[p];
                gw[(o * C + c) * taps + n] += acc;
              }
            }
          }
        }
        if (!gin && !goff) return;
        const double* in = input.values().data();
        std::vector<double> gcol(static_cast<std::size_t>(P));
        for (long c = 0; c < C; ++c) {
          const double* plane = in + c * H * W;
          for (long n = 0; n < taps; ++n) {
            std::fill(gcol.begin(), gcol.end(), 0.0);
            for (long o = 0; o < O; ++o) {
              const double wv = w[(o * C + c) * taps + n];
              const double* gp = g.data() + o * P;
              for (long p = 0; p < P; ++p) gcol[p] += wv * gp[p];
            }
            const bilinear::Stencil* st = stencils->data() + n * P;
            for (long p = 0; p < P; ++p) {
              const double gv = gcol[p];
              if (gv == 0.0) continue;
              double dy = 0.0, dx = 0.0;
              for (int k = 0; k < 4; ++k) {
                const long idx = st[p].idx[k];
                if (idx < 0) continue;
                if (gin) gin[c * H * W + idx] += gv * st[p].w[k];
                dy += st[p].dwy[k] * plane[idx];
                dx += st[p].dwx[k] * plane[idx];
              }
              if (goff) {
                goff[(2 * n) * P + p] += gv * dy;
                goff[(2 * n + 1) * P + p] += gv * dx;
              }
            }
          }
        }
      });
}

Tensor correlation_volume(const Tensor& feat_left, const Tensor& feat_right, int d_count) {
  if (feat_left.rank() != 3 || feat_left.shape() != feat_right.shape()) {
    throw ShapeError("correlation_volume: feature shapes " + shape_str(feat_left.shape()) +
                     " and " + shape_str(feat_right.shape()) + " must match as [C,h,w]");
  }
  const long C = static_cast<long>(feat_left.dim(0));
  const long h = static_cast<long>(feat_left.dim(1));
  const long w = static_cast<long>(feat_left.dim(2));
  if (d_count < 1 || d_count >= w) {
    throw ShapeError("correlation_volume: disparity count " + std::to_string(d_count) +
                     " must lie in [1, w) with w = " + std::to_string(w));
  }
  const long D = d_count;
  const double inv_c = 1.0 / static_cast<double>(C);
  const double* fl = feat_left.values().data();
  const double* fr = feat_right.values().data();
  std::vector<double> out(static_cast<std::size_t>(D * h * w), 0.0);
  for (long d = 0; d < D; ++d) {
    for (long c = 0; c < C; ++c) {
      for (long y = 0; y < h; ++y) {
        const double* lrow = fl + (c * h + y) * w;
        const double* rrow = fr + (c * h + y) * w;
        double* orow = out.data() + (d * h + y) * w;
        for (long x = d; x < w; ++x) orow[x] += lrow[x] * rrow[x - d];
      }
    }
    for (long i = 0; i < h * w; ++i) out[d * h * w + i] *= inv_c;
  }
  return make_result(
      {static_cast<std::size_t>(D), static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
      std::move(out), {feat_left, feat_right},
      [=](const std::vector<double>& g) {
        double* gl = grad_sink(feat_left.impl());
        double* gr = grad_sink(feat_right.impl());
        const double* fl = feat_left.values().data();
        const double* fr = feat_right.values().data();
        for (long d = 0; d < D; ++d) {
          for (long c = 0; c < C; ++c) {
            for (long y = 0; y < h; ++y) {
              const double* grow = g.data() + (d * h + y) * w;
              const long row = (c * h + y) * w;
              for (long x = d; x < w; ++x) {
                const double gv = grow[x] * inv_c;
                if (gl) gl[row + x] += gv * fr[row + x - d];
                if (gr) gr[row + x - d] += gv * fl[row + x];
              }
            }
          }
        }
      });
}

Tensor isa_aggregate(const Tensor& cost, const Tensor& weights, const Tensor& offsets) {
  if (cost.rank() != 3 || weights.numel() != 9 || offsets.rank() != 3 ||
      offsets.dim(0) != 18 || offsets.dim(1) != cost.dim(1) || offsets.dim(2) != cost.dim(2)) {
    throw ShapeError("isa_aggregate: expected cost [D,h,w], weights [3,3], offsets [18,h,w]; got " +
                     shape_str(cost.shape()) + ", " + shape_str(weights.shape()) + ", " +
                     shape_str(offsets.shape()));
  }
  const long D = static_cast<long>(cost.dim(0));
  const long h = static_cast<long>(cost.dim(1));
  const long w = static_cast<long>(cost.dim(2));
  const long P = h * w;
  const double* off = offsets.values().data();
  auto stencils = std::make_shared<std::vector<bilinear::Stencil>>(static_cast<std::size_t>(9 * P));
  for (long k = 0; k < 9; ++k) {
    const long ky = k / 3 - 1, kx = k % 3 - 1;
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const long p = y * w + x;
        (*stencils)[k * P + p] = bilinear::stencil(static_cast<double>(y + ky) + off[2 * k * P + p],
                                                   static_cast<double>(x + kx) + off[(2 * k + 1) * P + p],
                                                   h, w);
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(D * P), 0.0);
  const double* cv = cost.values().data();
  for (long d = 0; d < D; ++d) {
    const double* plane = cv + d * P;
    double* op = out.data() + d * P;
    for (long k = 0; k < 9; ++k) {
      const double wk = weights[static_cast<std::size_t>(k)];
      const bilinear::Stencil* st = stencils->data() + k * P;
      for (long p = 0; p < P; ++p) op[p] += wk * bilinear::read(plane, st[p]);
    }
  }
  return make_result(cost.shape(), std::move(out), {cost, weights, offsets},
                     [=](const std::vector<double>& g) {
                       double* gc = grad_sink(cost.impl());
                       double* gw = grad_sink(weights.impl());
                       double* go = grad_sink(offsets.impl());
                       const double* cv = cost.values().data();
                       for (long d = 0; d < D; ++d) {
                         const double* plane = cv + d * P;
                         const double* gp = g.data() + d * P;
                         for (long k = 0; k < 9; ++k) {
                           const double wk = weights[static_cast<std::size_t>(k)];
                           const bilinear::Stencil* st = stencils->data() + k * P;
                           double wacc = 0.0;
                           for (long p = 0; p < P; ++p) {
                             const double gv = gp[p];
                             double v = 0.0, dy = 0.0, dx = 0.0;
                             for (int j = 0; j < 4; ++j) {
                               const long idx = st[p].idx[j];
                               if (idx < 0) continue;
                               v += st[p].w[j] * plane[idx];
                               dy += st[p].dwy[j] * plane[idx];
                               dx += st[p].dwx[j] * plane[idx];
                               if (gc) gc[d * P + idx] += gv * wk * st[p].w[j];
                             }
                             wacc += gv * v;
                             if (go) {
                               go[2 * k * P + p] += gv * wk * dy;
                               go[(2 * k + 1) * P + p] += gv * wk * dx;
                             }
                           }
                           if (gw) gw[k] += wacc;
                         }
                       }
                     });
}

Tensor soft_argmin(const Tensor& cost) {
  if (cost.rank() != 3) {
    throw ShapeError("soft_argmin: expected [D,h,w], got " + shape_str(cost.shape()));
  }
  const long D = static_cast<long>(cost.dim(0));
  const long P = static_cast<long>(cost.dim(1) * cost.dim(2));
  const double* cv = cost.values().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(D * P));
  std::vector<double> out(static_cast<std::size_t>(P), 0.0);
  for (long p = 0; p < P; ++p) {
    double m = -cv[p];
    for (long d = 1; d < D; ++d) m = std::max(m, -cv[d * P + p]);
    double z = 0.0;
    for (long d = 0; d < D; ++d) {
      const double e = std::exp(-cv[d * P + p] - m);
      (*probs)[d * P + p] = e;
      z += e;
    }
    double acc = 0.0;
    for (long d = 0; d < D; ++d) {
      (*probs)[d * P + p] /= z;
      acc += static_cast<double>(d) * (*probs)[d * P + p];
    }
    out[p] = acc;
  }
  auto result_vals = std::make_shared<std::vector<double>>(out);
  return make_result({cost.dim(1), cost.dim(2)}, std::move(out), {cost},
                     [=](const std::vector<double>& g) {
                       double* gc = grad_sink(cost.impl());
                       if (!gc) return;
                       for (long d = 0; d < D; ++d) {
                         for (long p = 0; p < P; ++p) {
                           const double pr = (*probs)[d * P + p];
                           gc[d * P + p] -= g[p] * pr * (static_cast<double>(d) - (*result_vals)[p]);
                         }
                       }
                     });
}

Tensor upsample_bilinear(const Tensor& map, int factor, double scale) {
  if (map.rank() != 2 || factor < 1) {
    throw ShapeError("upsample_bilinear: expected [h,w] and factor >= 1, got " +
                     shape_str(map.shape()) + ", factor " + std::to_string(factor));
  }
  const long h = static_cast<long>(map.dim(0));
  const long w = static_cast<long>(map.dim(1));
  const long H = h * factor, W = w * factor;
  struct Tap {
    long i0, i1;
    double a0, a1;
  };
  auto axis_taps = [factor](long n_out, long n_in) {
    std::vector<Tap> taps(static_cast<std::size_t>(n_out));
    for (long o = 0; o < n_out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const long i0 = static_cast<long>(std::floor(src));
      const long i1 = std::min(i0 + 1, n_in - 1);
      const double t = src - static_cast<double>(i0);
      taps[o] = {i0, i1, 1.0 - t, t};
    }
    return taps;
  };
  const auto ty = axis_taps(H, h);
  const auto tx = axis_taps(W, w);
  const double* in = map.values().data();
  std::vector<double> out(static_cast<std::size_t>(H * W));
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const Tap& a = ty[y];
      const Tap& b = tx[x];
      const double v = a.a0 * (b.a0 * in[a.i0 * w + b.i0] + b.a1 * in[a.i0 * w + b.i1]) +
                       a.a1 * (b.a0 * in[a.i1 * w + b.i0] + b.a1 * in[a.i1 * w + b.i1]);
      out[y * W + x] = scale * v;
    }
  }
  return make_result({static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, std::move(out),
                     {map}, [=](const std::vector<double>& g) {
                       double* gm = grad_sink(map.impl());
                       if (!gm) return;
                       for (long y = 0; y < H; ++y) {
                         for (long x = 0; x < W; ++x) {
                           const Tap& a = ty[y];
                           const Tap& b = tx[x];
                           const double gv = scale * g[y * W + x];
                           gm[a.i0 * w + b.i0] += gv * a.a0 * b.a0;
                           gm[a.i0 * w + b.i1] += gv * a.a0 * b.a1;
                           gm[a.i1 * w + b.i0] += gv * a.a1 * b.a0;
                           gm[a.i1 * w + b.i1] += gv * a.a1 * b.a1;
                         }
                       }
                     });
}

Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, double beta,
                      Reduction reduction) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("smooth_l1_loss: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1_loss: beta must be > 0");
  std::size_t n_valid = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (!(target[i] > 0.0)) continue;
    ++n_valid;
    const double a = std::fabs(pred[i] - target[i]);
    acc += a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
  }
  if (n_valid == 0) throw std::invalid_argument("smooth_l1_loss: no valid target pixels");
  const double norm = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n_valid) : 1.0;
  return make_result({1}, {acc * norm}, {pred, target},
                     [=](const std::vector<double>& g) {
                       double* gp = grad_sink(pred.impl());
                       if (!gp) return;
                       for (std::size_t i = 0; i < pred.numel(); ++i) {
                         if (!(target[i] > 0.0)) continue;
                         const double diff = pred[i] - target[i];
                         const double dl = std::fabs(diff) < beta
                                               ? diff / beta
                                               : (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
                         gp[i] += g[0] * norm * dl;
                       }
                     });
}

}  // namespace supforge
