#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "supforge/ops.hpp"
#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"

using namespace supforge;
using supforge::testing::random_tensor;

namespace {

SceneConfig tiny_scene() {
  SceneConfig c;
  c.height = 16;
  c.width = 64;
  c.d_max = 8;
  c.background_disparity_min = 1;
  c.background_disparity_max = 3;
  c.n_sprites_min = 1;
  c.n_sprites_max = 3;
  return c;
}

StereoNet tiny_net() {
  StereoNetConfig c;
  c.encoder_layers = 2;
  c.channels = 4;
  c.d_max = 8;
  c.seed = 21;
  StereoNet net(c);
  net.set_trained(true);
  return net;
}

CraftConfig tiny_craft() {
  CraftConfig c;
  c.epsilon = 0.02;
  c.alpha = 0.002;
  c.tile_h = 8;
  c.tile_w = 8;
  c.seed = 5;
  return c;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace

TEST(ProjectLinf, ClampExample) {
  const Tensor p = project_linf(Tensor({2}, {0.03, -0.01}), 0.02);
  EXPECT_EQ(p.values(), (std::vector<double>{0.02, -0.01}));
  EXPECT_THROW(project_linf(p, 0.0), std::invalid_argument);
}

TEST(ProjectLinf, InsideBallUnchangedAndIdempotent) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Tensor v = random_tensor({3, 4, 4}, rng, -0.05, 0.05);
    const Tensor once = project_linf(v, 0.02);
    EXPECT_EQ(project_linf(once, 0.02).values(), once.values());
    EXPECT_LE(max_abs(once), 0.02);
    const Tensor small = random_tensor({3, 4, 4}, rng, -0.01, 0.01);
    EXPECT_EQ(project_linf(small, 0.02).values(), small.values());
    // Nearest point of the ball: every coordinate moves by the minimum amount.
    for (std::size_t j = 0; j < v.numel(); ++j) {
      EXPECT_EQ(std::fabs(v[j] - once[j]), std::max(0.0, std::fabs(v[j]) - 0.02));
    }
  }
}

TEST(ApplyTiled, TileOriginsOnFourByFour) {
  // A one-hot tile marks where each tile origin lands.
  Tensor tile = Tensor::zeros({1, 2, 2});
  tile.mutable_data()[0] = 1.0;
  const Tensor out = apply_tiled(Tensor::zeros({1, 4, 4}), tile);
  std::vector<std::pair<int, int>> origins;
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      if (out[static_cast<std::size_t>(y * 4 + x)] == 1.0) origins.emplace_back(y, x);
    }
  }
  EXPECT_EQ(origins, (std::vector<std::pair<int, int>>{{0, 0}, {0, 2}, {2, 0}, {2, 2}}));
}

TEST(ApplyTiled, TileCountIsAreaRatio) {
  for (auto [H, W, h, w] : {std::array<std::size_t, 4>{8, 16, 2, 4}, {64, 128, 32, 32},
                            {64, 128, 16, 16}, {12, 12, 3, 4}}) {
    Tensor tile = Tensor::zeros({3, h, w});
    tile.mutable_data()[h * w + w + 1] = 1.0;
    const Tensor out = apply_tiled(Tensor::zeros({3, H, W}), tile);
    double hits = 0.0;
    for (double v : out.values()) hits += v;
    EXPECT_EQ(hits, static_cast<double>((H * W) / (h * w)));
  }
}

TEST(ApplyTiled, ZeroTileFullTileAndErrors) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 4, 6}, rng);
  EXPECT_EQ(apply_tiled(x, Tensor::zeros({3, 2, 3})).values(), x.values());
  const Tensor v = random_tensor({3, 4, 6}, rng);
  EXPECT_EQ(apply_tiled(x, v).values(), add(x, v).values());
  EXPECT_THROW(apply_tiled(x, Tensor::zeros({3, 3, 3})), ShapeError);
  EXPECT_THROW(apply_tiled(x, Tensor::zeros({1, 2, 3})), ShapeError);
}

TEST(AverageTileGradients, ConstantAndWorkedExample) {
  const Tensor c = average_tile_gradients(Tensor::full({3, 8, 8}, 0.7), 4, 2);
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, 0.7);
  const Tensor g({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(average_tile_gradients(g, 1, 1).values(), std::vector<double>{2.5});
  EXPECT_THROW(average_tile_gradients(g, 3, 1), ShapeError);
}

TEST(AverageTileGradients, ChainRuleAgainstFiniteDifferences) {
  // L(v) = f(apply_tiled(x, v)) with f non-linear; dL/dv is the sum of the
  // per-tile image gradients, i.e. the tile mean times the tile count.
  std::mt19937_64 rng(3);
  const std::size_t H = 4, W = 4, h = 2, w = 2;
  for (int inst = 0; inst < 20; ++inst) {
    const Tensor x = random_tensor({3, H, W}, rng);
    const Tensor a = random_tensor({3, H, W}, rng);
    const Tensor v0 = random_tensor({3, h, w}, rng, -0.1, 0.1);
    auto f = [&](const Tensor& img) { return sum(mul(a, leaky_relu(mul(img, img)))); };
    auto L = [&](const Tensor& v) { return f(apply_tiled(x, v)).item(); };

    Tensor xhat = apply_tiled(x, v0).detach().set_requires_grad(true);
    {
      Tape tape;
      TapeGuard guard(tape);
      tape.backward(f(xhat));
    }
    const Tensor avg = average_tile_gradients(Tensor(xhat.shape(), xhat.grad()), h, w);
    const double tiles = static_cast<double>((H * W) / (h * w));
    Tensor v = v0.detach();
    for (std::size_t j = 0; j < v.numel(); ++j) {
      const double saved = v[j];
      const double step = 1e-6;
      v.mutable_data()[j] = saved + step;
      const double up = L(v);
      v.mutable_data()[j] = saved - step;
      const double down = L(v);
      v.mutable_data()[j] = saved;
      const double fd = (up - down) / (2.0 * step);
      EXPECT_LT(std::fabs(avg[j] * tiles - fd) / std::max(1.0, std::fabs(fd)), 1e-4);
    }
  }
}

TEST(PseudoGroundTruth, DeterministicInRangeAndSelfConsistent) {
  const StereoNet net = tiny_net();
  const auto data = generate_dataset(tiny_scene(), 3, 10);
  const auto a = pseudo_ground_truth(net, data);
  const auto b = pseudo_ground_truth(net, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(a[i].values(), b[i].values());
    EXPECT_FALSE(a[i].requires_grad());
    for (double v : a[i].values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 8.0);
    }
    const double self = compute_loss(LossSpec{}, forward(net, data[i].left, data[i].right), a[i]).item();
    EXPECT_LT(self, 1e-8);
  }
}

TEST(CraftSup, ZeroStartNeverMoves) {
  const StereoNet net = tiny_net();
  CraftConfig cfg = tiny_craft();
  cfg.init_radius = 0.0;
  const auto r = craft_sup(net, generate_dataset(tiny_scene(), 1, 30), cfg);
  for (double v : r.pair.left.values()) EXPECT_EQ(v, 0.0);
  for (double v : r.pair.right.values()) EXPECT_EQ(v, 0.0);
}

TEST(CraftSup, FirstStepUnrollsExactly) {
  const StereoNet net = tiny_net();
  const auto data = generate_dataset(tiny_scene(), 1, 40);
  CraftConfig cfg = tiny_craft();
  const auto r = craft_sup(net, data, cfg);

  // Start point: U(-r, r) for the left tile, then the right tile, from the seed.
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-cfg.init_radius, cfg.init_radius);
  const Shape tile{3, 8, 8};
  std::vector<double> l0(64 * 3), r0(64 * 3);
  for (auto& v : l0) v = u(rng);
  for (auto& v : r0) v = u(rng);
  Tensor vl(tile, l0), vr(tile, r0);

  const auto target = pseudo_ground_truth(net, data)[0];
  Tensor xl = apply_tiled(data[0].left, vl).detach().set_requires_grad(true);
  Tensor xr = apply_tiled(data[0].right, vr).detach().set_requires_grad(true);
  {
    Tape tape;
    TapeGuard guard(tape);
    tape.backward(compute_loss(cfg.loss, forward(net, xl, xr), target));
  }
  const Tensor gl = average_tile_gradients(Tensor(xl.shape(), xl.grad()), 8, 8);
  const Tensor gr = average_tile_gradients(Tensor(xr.shape(), xr.grad()), 8, 8);
  EXPECT_GT(max_abs(gl), 0.0);
  EXPECT_EQ(r.pair.left.values(), project_linf(add(vl, project_linf(gl, cfg.alpha)), cfg.epsilon).values());
  EXPECT_EQ(r.pair.right.values(), project_linf(add(vr, project_linf(gr, cfg.alpha)), cfg.epsilon).values());
}

TEST(CraftSup, BudgetHoldsAfterEveryUpdate) {
  const StereoNet net = tiny_net();
  CraftConfig cfg = tiny_craft();
  cfg.alpha = cfg.epsilon;  // saturating steps
  cfg.passes = 2;
  const auto r = craft_sup(net, generate_dataset(tiny_scene(), 10, 50), cfg);
  ASSERT_EQ(r.linf_left.size(), 20u);
  ASSERT_EQ(r.losses.size(), 20u);
  for (std::size_t i = 0; i < r.linf_left.size(); ++i) {
    EXPECT_LE(r.linf_left[i], cfg.epsilon);
    EXPECT_LE(r.linf_right[i], cfg.epsilon);
  }
  EXPECT_LE(max_abs(r.pair.left), cfg.epsilon);
  EXPECT_LE(max_abs(r.pair.right), cfg.epsilon);
  EXPECT_EQ(r.pair.epsilon, cfg.epsilon);
  EXPECT_EQ(r.pair.tile_h, 8);
}

TEST(CraftSup, ReproducibleFromSeed) {
  const StereoNet net = tiny_net();
  const auto data = generate_dataset(tiny_scene(), 4, 60);
  CraftConfig cfg = tiny_craft();
  const auto a = craft_sup(net, data, cfg);
  const auto b = craft_sup(net, data, cfg);
  EXPECT_EQ(a.pair.left.values(), b.pair.left.values());
  EXPECT_EQ(a.pair.right.values(), b.pair.right.values());
  cfg.seed = 6;
  EXPECT_NE(craft_sup(net, data, cfg).pair.left.values(), a.pair.left.values());
}

TEST(CraftSup, RejectsBadConfigs) {
  const StereoNet net = tiny_net();
  const auto data = generate_dataset(tiny_scene(), 1, 70);
  CraftConfig cfg = tiny_craft();
  cfg.alpha = 0.0;
  EXPECT_THROW(craft_sup(net, data, cfg), std::invalid_argument);
  cfg = tiny_craft();
  cfg.alpha = 2 * cfg.epsilon;
  EXPECT_THROW(craft_sup(net, data, cfg), std::invalid_argument);
  cfg = tiny_craft();
  cfg.tile_w = 24;
  EXPECT_THROW(craft_sup(net, data, cfg), ShapeError);
  StereoNet untrained = tiny_net();
  untrained.set_trained(false);
  EXPECT_THROW(craft_sup(untrained, data, tiny_craft()), std::invalid_argument);
}

TEST(NoiseAttack, BudgetSpreadAndDeterminism) {
  const Tensor x = Tensor::full({3, 64, 128}, 0.5);
  const double eps = 0.02;
  for (auto kind : {NoiseKind::kUniform, NoiseKind::kGaussian}) {
    const auto [l, r] = noise_attack(x, x, kind, eps, 9);
    const auto [l2, r2] = noise_attack(x, x, kind, eps, 9);
    EXPECT_EQ(l.values(), l2.values());
    EXPECT_EQ(r.values(), r2.values());
    EXPECT_NE(l.values(), r.values());
    double ss = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double d = l[i] - x[i];
      EXPECT_LE(std::fabs(d), eps + 1e-15);  // rounding of x + delta
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(x.numel()));
    const double want = kind == NoiseKind::kUniform ? eps / std::sqrt(3.0) : eps / 4.0;
    EXPECT_NEAR(sd, want, 0.03 * want);
  }
}

TEST(Fgsm, BudgetAndDeterminism) {
  const StereoNet net = tiny_net();
  const auto data = generate_dataset(tiny_scene(), 1, 80);
  for (int steps : {1, 3}) {
    const auto [l, r] = fgsm_image_specific(net, data[0], 0.01, steps);
    const auto [l2, r2] = fgsm_image_specific(net, data[0], 0.01, steps);
    EXPECT_EQ(l.values(), l2.values());
    EXPECT_LE(max_abs(sub(l, data[0].left)), 0.01 + 1e-15);
    EXPECT_LE(max_abs(sub(r, data[0].right)), 0.01 + 1e-15);
    const Tensor clean = forward(net, data[0].left, data[0].right);
    EXPECT_GT(compute_loss(LossSpec{}, forward(net, l, r), clean).item(), 0.0);
  }
  EXPECT_THROW(fgsm_image_specific(net, data[0], 0.01, 0), std::invalid_argument);
}
