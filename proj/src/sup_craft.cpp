#include "supforge/sup_craft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "supforge/ops.hpp"

namespace supforge {

PerturbationPair PerturbationPair::zeros(int tile_h, int tile_w, double epsilon) {
  PerturbationPair p;
  const Shape shape{3, static_cast<std::size_t>(tile_h), static_cast<std::size_t>(tile_w)};
  p.left = Tensor::zeros(shape);
  p.right = Tensor::zeros(shape);
  p.epsilon = epsilon;
  p.tile_h = tile_h;
  p.tile_w = tile_w;
  return p;
}

void CraftConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("craft: epsilon must be > 0");
  if (!(alpha > 0.0) || alpha > epsilon) {
    throw std::invalid_argument("craft: alpha must satisfy 0 < alpha <= epsilon");
  }
  if (tile_h < 1 || tile_w < 1) throw std::invalid_argument("craft: tile size must be positive");
  if (passes < 1) throw std::invalid_argument("craft: passes must be >= 1");
  if (init_radius < 0.0 || init_radius > epsilon) {
    throw std::invalid_argument("craft: init_radius must lie in [0, epsilon]");
  }
}

Tensor project_linf(const Tensor& v, double xi) {
  if (!(xi > 0.0)) throw std::invalid_argument("project_linf: radius must be > 0");
  std::vector<double> out(v.values());
  for (auto& x : out) x = std::clamp(x, -xi, xi);
  return Tensor(v.shape(), std::move(out));
}

namespace {

void check_tiling(std::size_t H, std::size_t W, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || H % h != 0 || W % w != 0) {
    throw ShapeError("tile " + std::to_string(h) + "x" + std::to_string(w) +
                     " does not divide image " + std::to_string(H) + "x" + std::to_string(W));
  }
}

}  // namespace

Tensor apply_tiled(const Tensor& image, const Tensor& tile) {
  if (image.rank() != 3 || tile.rank() != 3 || image.dim(0) != tile.dim(0)) {
    throw ShapeError("apply_tiled: image " + shape_str(image.shape()) + " and tile " +
                     shape_str(tile.shape()) + " must be [C,H,W] and [C,h,w]");
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t h = tile.dim(1), w = tile.dim(2);
  check_tiling(H, W, h, w);
  std::vector<double> out(image.numel());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = (c * H + y) * W + x;
        out[i] = image[i] + tile[(c * h + y % h) * w + x % w];
      }
    }
  }
  return detail::make_result(image.shape(), std::move(out), {image, tile},
                             [=](const std::vector<double>& g) {
                               double* gi = detail::grad_sink(image.impl());
                               double* gt = detail::grad_sink(tile.impl());
                               for (std::size_t c = 0; c < C; ++c) {
                                 for (std::size_t y = 0; y < H; ++y) {
                                   for (std::size_t x = 0; x < W; ++x) {
                                     const std::size_t i = (c * H + y) * W + x;
                                     if (gi) gi[i] += g[i];
                                     if (gt) gt[(c * h + y % h) * w + x % w] += g[i];
                                   }
                                 }
                               }
                             });
}

Tensor average_tile_gradients(const Tensor& grad, int tile_h, int tile_w) {
  if (grad.rank() != 3 || tile_h < 1 || tile_w < 1) {
    throw ShapeError("average_tile_gradients: expected [C,H,W] and a positive tile, got " +
                     shape_str(grad.shape()));
  }
  const std::size_t C = grad.dim(0), H = grad.dim(1), W = grad.dim(2);
  const std::size_t h = static_cast<std::size_t>(tile_h), w = static_cast<std::size_t>(tile_w);
  check_tiling(H, W, h, w);
  std::vector<double> out(C * h * w, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        out[(c * h + y % h) * w + x % w] += grad[(c * H + y) * W + x];
      }
    }
  }
  const double scale = static_cast<double>(h * w) / static_cast<double>(H * W);
  for (auto& v : out) v *= scale;
  return Tensor({C, h, w}, std::move(out));
}

std::vector<Tensor> pseudo_ground_truth(const StereoNet& net, const std::vector<StereoSample>& dataset) {
  std::vector<Tensor> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) out.push_back(forward(net, s.left, s.right).detach());
  return out;
}

namespace {

struct InputGrads {
  Tensor left;
  Tensor right;
  double loss = 0.0;
};

// Loss gradient with respect to both (already perturbed) network inputs.
InputGrads input_gradients(const StereoNet& net, const Tensor& left, const Tensor& right,
                           const Tensor& target, const LossSpec& loss) {
  Tensor l = left.detach().set_requires_grad(true);
  Tensor r = right.detach().set_requires_grad(true);
  Tape tape;
  TapeGuard guard(tape);
  Tensor value = compute_loss(loss, forward(net, l, r), target);
  if (!std::isfinite(value.item())) throw NumericError("attack: non-finite loss");
  tape.backward(value);
  return {Tensor(l.shape(), l.grad()), Tensor(r.shape(), r.grad()), value.item()};
}

double linf(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace

CraftResult craft_sup(const StereoNet& net, const std::vector<StereoSample>& dataset,
                      const CraftConfig& cfg) {
  cfg.validate();
  if (!net.trained()) throw std::invalid_argument("craft: network is not trained");
  if (dataset.empty()) throw std::invalid_argument("craft: empty dataset");
  for (const auto& s : dataset) {
    check_tiling(s.height(), s.width(), static_cast<std::size_t>(cfg.tile_h),
                 static_cast<std::size_t>(cfg.tile_w));
  }
  const auto targets = pseudo_ground_truth(net, dataset);
  CraftResult result;
  result.pair = PerturbationPair::zeros(cfg.tile_h, cfg.tile_w, cfg.epsilon);
  std::mt19937_64 rng(cfg.seed);
  if (cfg.init_radius > 0.0) {
    std::uniform_real_distribution<double> u(-cfg.init_radius, cfg.init_radius);
    for (auto* t : {&result.pair.left, &result.pair.right}) {
      for (auto& v : t->mutable_data()) v = u(rng);
    }
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int pass = 0; pass < cfg.passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const StereoSample& s = dataset[idx];
      const InputGrads g = input_gradients(net, apply_tiled(s.left, result.pair.left),
                                           apply_tiled(s.right, result.pair.right),
                                           targets[idx], cfg.loss);
      auto step = [&](const Tensor& v, const Tensor& grad) {
        const Tensor mean_grad = average_tile_gradients(grad, cfg.tile_h, cfg.tile_w);
        return project_linf(add(v, project_linf(mean_grad, cfg.alpha)), cfg.epsilon);
      };
      result.pair.left = step(result.pair.left, g.left);
      result.pair.right = step(result.pair.right, g.right);
      result.linf_left.push_back(linf(result.pair.left));
      result.linf_right.push_back(linf(result.pair.right));
      result.losses.push_back(g.loss);
    }
  }
  return result;
}

std::pair<Tensor, Tensor> noise_attack(const Tensor& left, const Tensor& right, NoiseKind kind,
                                       double epsilon, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("noise_attack: epsilon must be > 0");
  std::mt19937_64 rng(seed);
  auto perturb = [&](const Tensor& x) {
    std::vector<double> out(x.values());
    if (kind == NoiseKind::kUniform) {
      std::uniform_real_distribution<double> u(-epsilon, epsilon);
      for (auto& v : out) v += u(rng);
    } else {
      std::normal_distribution<double> n(0.0, epsilon / 4.0);
      for (auto& v : out) v += std::clamp(n(rng), -epsilon, epsilon);
    }
    return Tensor(x.shape(), std::move(out));
  };
  Tensor l = perturb(left);
  Tensor r = perturb(right);
  return {l, r};
}

constexpr double kFgsmStartFraction = 0.1;

std::pair<Tensor, Tensor> fgsm_image_specific(const StereoNet& net, const StereoSample& sample,
                                              double epsilon, int steps) {
  if (!(epsilon > 0.0) || steps < 1) {
    throw std::invalid_argument("fgsm: need epsilon > 0 and steps >= 1");
  }
  const Tensor target = forward(net, sample.left, sample.right).detach();
  const LossSpec loss{LossKind::kSmoothL1, 1.0, Reduction::kSum};
  // The clean prediction is its own target, so the attack starts from a small
  // random point seeded by the sample to get a non-zero gradient.
  std::mt19937_64 rng(sample.seed);
  std::uniform_real_distribution<double> u(-kFgsmStartFraction * epsilon,
                                           kFgsmStartFraction * epsilon);
  auto start = [&](const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(shape, std::move(v));
  };
  Tensor vl = start(sample.left.shape());
  Tensor vr = start(sample.right.shape());
  const double step = epsilon / steps;
  auto sign_step = [&](const Tensor& v, const Tensor& g) {
    std::vector<double> out(v.values());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      out[i] += step * s;
    }
    return project_linf(Tensor(v.shape(), std::move(out)), epsilon);
  };
  for (int k = 0; k < steps; ++k) {
    const InputGrads g =
        input_gradients(net, add(sample.left, vl), add(sample.right, vr), target, loss);
    vl = sign_step(vl, g.left);
    vr = sign_step(vr, g.right);
  }
  return {add(sample.left, vl), add(sample.right, vr)};
}

std::pair<Tensor, Tensor> apply_perturbation(const PerturbationPair& pair, const Tensor& left,
                                             const Tensor& right) {
  return {apply_tiled(left, pair.left), apply_tiled(right, pair.right)};
}

}  // namespace supforge
