#include "supforge/ops.hpp"

#include <algorithm>
#include <cmath>

namespace supforge {

using detail::grad_sink;
using detail::make_result;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [x, deriv](const std::vector<double>& g) {
                       double* gx = grad_sink(x.impl());
                       if (!gx) return;
                       const auto& v = x.values();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * deriv(v[i]);
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const std::vector<double>& g) {
                       if (double* ga = grad_sink(a.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (double* gb = grad_sink(b.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const std::vector<double>& g) {
                       if (double* ga = grad_sink(a.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (double* gb = grad_sink(b.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const std::vector<double>& g) {
                       if (double* ga = grad_sink(a.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                       }
                       if (double* gb = grad_sink(b.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                       }
                     });
}

Tensor scalar_mul(const Tensor& x, double s) {
  return unary(
      x, [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw ShapeError("scale_by: gain must hold one element, got " +
                     shape_str(s.shape()));
  }
  const double k = s[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
  return make_result(x.shape(), std::move(out), {x, s},
                     [x, s](const std::vector<double>& g) {
                       if (double* gx = grad_sink(x.impl())) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[0];
                       }
                       if (double* gs = grad_sink(s.impl())) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                         gs[0] += acc;
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result({1}, {acc}, {x}, [x](const std::vector<double>& g) {
    if (double* gx = grad_sink(x.impl())) {
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scalar_mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  std::vector<double> out(x.numel());
  const auto& in = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      double m = in[base];
      for (std::size_t k = 1; k < n; ++k) m = std::max(m, in[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        out[base + k * inner] = std::exp(in[base + k * inner] - m);
        z += out[base + k * inner];
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  auto probs = out;
  return make_result(
      shape, std::move(out), {x},
      [x, probs = std::move(probs), outer, inner, n](const std::vector<double>& g) {
        double* gx = grad_sink(x.impl());
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * n * inner + j;
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              dot += g[base + k * inner] * probs[base + k * inner];
            }
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = base + k * inner;
              gx[i] += probs[i] * (g[i] - dot);
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError("conv2d: expected input [C,H,W], weight [O,C,k,k], bias [O]; got " +
                     shape_str(input.shape()) + ", " + shape_str(weight.shape()) +
                     ", " + shape_str(bias.shape()));
  }
  const long C = static_cast<long>(input.dim(0));
  const long H = static_cast<long>(input.dim(1));
  const long W = static_cast<long>(input.dim(2));
  const long O = static_cast<long>(weight.dim(0));
  const long K = static_cast<long>(weight.dim(2));
  if (weight.dim(1) != static_cast<std::size_t>(C) || weight.dim(3) != weight.dim(2) ||
      bias.dim(0) != static_cast<std::size_t>(O)) {
    throw ShapeError("conv2d: incompatible operands input " + shape_str(input.shape()) +
                     ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  if (K % 2 == 0) {
    throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(K));
  }
  if (stride < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
  }
  const long Ho = (H + 2 * pad - K) / stride + 1;
  const long Wo = (W + 2 * pad - K) / stride + 1;
  if (H + 2 * pad < K || W + 2 * pad < K || Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(K) + " does not fit input " +
                     shape_str(input.shape()) + " with pad " + std::to_string(pad));
  }
  const long s = stride;
  // Valid output column range for a kernel column kx.
  auto col_range = [=](long kx, long& lo, long& hi) {
    const long off = kx - pad;  // ix = ox * s + off
    lo = off >= 0 ? 0 : (-off + s - 1) / s;
    hi = (W - 1 - off) < 0 ? -1 : std::min(Wo - 1, (W - 1 - off) / s);
  };

  std::vector<double> out(static_cast<std::size_t>(O * Ho * Wo));
  const double* in = input.values().data();
  const double* w = weight.values().data();
  for (long o = 0; o < O; ++o) {
    double* op = out.data() + o * Ho * Wo;
    std::fill(op, op + Ho * Wo, bias[static_cast<std::size_t>(o)]);
    for (long c = 0; c < C; ++c) {
      const double* ip = in + c * H * W;
      for (long ky = 0; ky < K; ++ky) {
        for (long kx = 0; kx < K; ++kx) {
          const double wv = w[((o * C + c) * K + ky) * K + kx];
          long lo, hi;
          col_range(kx, lo, hi);
          for (long oy = 0; oy < Ho; ++oy) {
            const long iy = oy * s + ky - pad;
            if (iy < 0 || iy >= H) continue;
            const double* row = ip + iy * W + (kx - pad);
            double* orow = op + oy * Wo;
            for (long ox = lo; ox <= hi; ++ox) orow[ox] += wv * row[ox * s];
          }
        }
      }
    }
  }

  return make_result(
      {static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
       static_cast<std::size_t>(Wo)},
      std::move(out), {input, weight, bias},
      [=](const std::vector<double>& g) {
        double* gin = grad_sink(input.impl());
        double* gw = grad_sink(weight.impl());
        double* gb = grad_sink(bias.impl());
        const double* in = input.values().data();
        const double* w = weight.values().data();
        for (long o = 0; o < O; ++o) {
          const double* gp = g.data() + o * Ho * Wo;
          if (gb) {
            double acc = 0.0;
            for (long i = 0; i < Ho * Wo; ++i) acc += gp[i];
            gb[o] += acc;
          }
          for (long c = 0; c < C; ++c) {
            const double* ip = in + c * H * W;
            double* gip = gin ? gin + c * H * W : nullptr;
            for (long ky = 0; ky < K; ++ky) {
              for (long kx = 0; kx < K; ++kx) {
                const long widx = ((o * C + c) * K + ky) * K + kx;
                const double wv = w[widx];
                long lo, hi;
                col_range(kx, lo, hi);
                double acc = 0.0;
                for (long oy = 0; oy < Ho; ++oy) {
                  const long iy = oy * s + ky - pad;
                  if (iy < 0 || iy >= H) continue;
                  const long base = iy * W + (kx - pad);
                  const double* grow = gp + oy * Wo;
                  if (gw) {
                    const double* row = ip + base;
                    for (long ox = lo; ox <= hi; ++ox) acc += grow[ox] * row[ox * s];
                  }
                  if (gip) {
                    double* girow = gip + base;
                    for (long ox = lo; ox <= hi; ++ox) girow[ox * s] += wv * grow[ox];
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
      });
}

namespace bilinear {

Stencil stencil(double y, double x, long height, long width) {
  Stencil s{};
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double ly = y - fy, lx = x - fx;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const double w[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const double dwy[4] = {-hx, -lx, hx, lx};
  const double dwx[4] = {-hy, hy, -ly, ly};
  for (int k = 0; k < 4; ++k) {
    const bool inside = ys[k] >= 0 && ys[k] < height && xs[k] >= 0 && xs[k] < width;
    s.idx[k] = inside ? ys[k] * width + xs[k] : -1;
    s.w[k] = w[k];
    s.dwy[k] = dwy[k];
    s.dwx[k] = dwx[k];
  }
  return s;
}

}  // namespace bilinear

Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
  if (input.rank() != 3 || coords.numel() != 2) {
    throw ShapeError("bilinear_sample: expected input [C,H,W] and coords [2], got " +
                     shape_str(input.shape()) + " and " + shape_str(coords.shape()));
  }
  const long C = static_cast<long>(input.dim(0));
  const long H = static_cast<long>(input.dim(1));
  const long W = static_cast<long>(input.dim(2));
  const auto st = bilinear::stencil(coords[0], coords[1], H, W);
  std::vector<double> out(static_cast<std::size_t>(C));
  for (long c = 0; c < C; ++c) out[c] = bilinear::read(input.values().data() + c * H * W, st);
  return make_result({static_cast<std::size_t>(C)}, std::move(out), {input, coords},
                     [=](const std::vector<double>& g) {
                       double* gin = grad_sink(input.impl());
                       double* gc = grad_sink(coords.impl());
                       for (long c = 0; c < C; ++c) {
                         const double* plane = input.values().data() + c * H * W;
                         for (int k = 0; k < 4; ++k) {
                           if (st.idx[k] < 0) continue;
                           if (gin) gin[c * H * W + st.idx[k]] += g[c] * st.w[k];
                           if (gc) {
                             gc[0] += g[c] * st.dwy[k] * plane[st.idx[k]];
                             gc[1] += g[c] * st.dwx[k] * plane[st.idx[k]];
                           }
                         }
                       }
                     });
}

Tensor bilinear_sample(const Tensor& input, double y, double x) {
  return bilinear_sample(input, Tensor({2}, {y, x}));
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner = parts.front().shape();
  for (const auto& p : parts) require_same_shape(parts.front(), p, "stack");
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t n = parts.front().numel();
  std::vector<double> out;
  out.reserve(n * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor result(shape, std::move(out));
  Tape* tape = active_tape();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!tape || !any) return result;
  result.set_requires_grad(true);
  Tape::Node node;
  for (const auto& p : parts) node.inputs.push_back(p.impl());
  node.output = result.impl();
  node.backward = [parts, n](const std::vector<double>& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (double* gp = grad_sink(parts[i].impl())) {
        for (std::size_t j = 0; j < n; ++j) gp[j] += g[i * n + j];
      }
    }
  };
  tape->record(std::move(node));
  return result;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  shape[0] = 0;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape ref(parts.front().shape().begin() + 1, parts.front().shape().end());
    if (tail != ref) {
      throw ShapeError("concat: trailing dims differ " + shape_str(p.shape()) + " vs " +
                       shape_str(parts.front().shape()));
    }
    shape[0] += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor result(shape, std::move(out));
  Tape* tape = active_tape();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!tape || !any) return result;
  result.set_requires_grad(true);
  Tape::Node node;
  for (const auto& p : parts) node.inputs.push_back(p.impl());
  node.output = result.impl();
  node.backward = [parts](const std::vector<double>& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (double* gp = grad_sink(p.impl())) {
        for (std::size_t j = 0; j < p.numel(); ++j) gp[j] += g[off + j];
      }
      off += p.numel();
    }
  };
  tape->record(std::move(node));
  return result;
}

Tensor shift_columns(const Tensor& input, int shift) {
  if (input.rank() != 3) {
    throw ShapeError("shift_columns: expected [C,H,W], got " + shape_str(input.shape()));
  }
  const long C = static_cast<long>(input.dim(0));
  const long H = static_cast<long>(input.dim(1));
  const long W = static_cast<long>(input.dim(2));
  std::vector<double> out(input.numel(), 0.0);
  const double* in = input.values().data();
  for (long r = 0; r < C * H; ++r) {
    for (long x = 0; x < W; ++x) {
      const long sx = x - shift;
      if (sx >= 0 && sx < W) out[r * W + x] = in[r * W + sx];
    }
  }
  return make_result(input.shape(), std::move(out), {input},
                     [=](const std::vector<double>& g) {
                       double* gi = grad_sink(input.impl());
                       if (!gi) return;
                       for (long r = 0; r < C * H; ++r) {
                         for (long x = 0; x < W; ++x) {
                           const long sx = x - shift;
                           if (sx >= 0 && sx < W) gi[r * W + sx] += g[r * W + x];
                         }
                       }
                     });
}

}  // namespace supforge
