#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "supforge/analysis.hpp"
#include "supforge/ops.hpp"

using namespace supforge;
using supforge::testing::random_tensor;

namespace {

StereoNet default_net() {
  StereoNetConfig c;
  c.seed = 12;
  StereoNet net(c);
  net.set_trained(true);
  return net;
}

}  // namespace

TEST(Histogram, ConstantMapsFillOneBin) {
  const std::vector<Tensor> maps{Tensor::full({4, 4}, 7.2), Tensor::full({2, 8}, 7.2)};
  const Histogram h = disparity_histogram(maps, 24, 0.0, 24.0);
  EXPECT_EQ(h.count, 32u);
  EXPECT_NEAR(h.mean, 7.2, 1e-12);
  for (std::size_t b = 0; b < h.bins.size(); ++b) EXPECT_EQ(h.bins[b], b == 7 ? 1.0 : 0.0);
}

TEST(Histogram, BinsSumToOneAndEdgesClamp) {
  std::mt19937_64 rng(1);
  const std::vector<Tensor> maps{random_tensor({8, 8}, rng, -5.0, 30.0), random_tensor({4, 4}, rng, 0.0, 24.0)};
  const Histogram h = disparity_histogram(maps, 12, 0.0, 24.0);
  EXPECT_NEAR(std::accumulate(h.bins.begin(), h.bins.end(), 0.0), 1.0, 1e-12);
  const Histogram below = disparity_histogram({Tensor::full({2, 2}, -3.0)}, 4, 0.0, 8.0);
  EXPECT_EQ(below.bins[0], 1.0);
  const Histogram above = disparity_histogram({Tensor::full({2, 2}, 8.0)}, 4, 0.0, 8.0);
  EXPECT_EQ(above.bins[3], 1.0);
  EXPECT_THROW(disparity_histogram({}, 4, 0.0, 8.0), std::invalid_argument);
  EXPECT_THROW(disparity_histogram(maps, 0, 0.0, 8.0), std::invalid_argument);
}

TEST(Pearson, Identities) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = random_tensor({3, 5, 5}, rng), b = random_tensor({3, 5, 5}, rng);
    EXPECT_NEAR(pearson(a, a), 1.0, 1e-12);
    EXPECT_NEAR(pearson(a, scalar_mul(a, -1.0)), -1.0, 1e-12);
    EXPECT_NEAR(pearson(a, add(a, Tensor::full(a.shape(), 3.7))), 1.0, 1e-12);
    EXPECT_NEAR(pearson(a, b), pearson(b, a), 1e-12);
    EXPECT_NEAR(pearson(a, scalar_mul(b, 4.2)), pearson(a, b), 1e-12);
    EXPECT_LE(std::fabs(pearson(a, b)), 1.0);
  }
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson(Tensor::full({4}, 1.0), Tensor({4}, {1, 2, 3, 4})), std::invalid_argument);
  EXPECT_THROW(pearson(Tensor::zeros({4}), Tensor::zeros({5})), ShapeError);
}

TEST(LayerCorrelation, ZeroPerturbationGivesOnes) {
  const StereoNet net = default_net();
  const auto samples = generate_dataset(SceneConfig{}, 2, 7);
  const auto lc = layer_correlation(net, samples, PerturbationPair::zeros(32, 32, 0.02));
  ASSERT_EQ(lc.left.size(), 4u);
  ASSERT_EQ(lc.right.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_NEAR(lc.left[l], 1.0, 1e-12);
    EXPECT_NEAR(lc.right[l], 1.0, 1e-12);
  }
}

TEST(RegisteredPearson, ExactShiftIsPerfectAndMaskDropsOccluded) {
  std::mt19937_64 rng(3);
  const std::size_t C = 3, H = 6, W = 20;
  const double d = 3.0;
  const Tensor right = random_tensor({C, H, W}, rng);
  // left(x) = right(x - d); occluded pixels get unrelated values.
  std::vector<double> lv(C * H * W);
  std::vector<std::uint8_t> occ(H * W, 0);
  std::bernoulli_distribution hide(0.2);
  std::uniform_real_distribution<double> junk(-5.0, 5.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      occ[y * W + x] = hide(rng) ? 1 : 0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (c * H + y) * W + x;
        lv[i] = (x >= 3 && !occ[y * W + x]) ? right[(c * H + y) * W + x - 3] : junk(rng);
      }
    }
  }
  const Tensor left({C, H, W}, lv);
  std::size_t n = 0;
  const double r = registered_pearson(left, right, Tensor::full({H, W}, d), occ, &n);
  EXPECT_NEAR(r, 1.0, 1e-12);
  std::size_t want = 0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 3; x < W; ++x) want += occ[y * W + x] ? 0 : 1;
  }
  EXPECT_EQ(n, want);
}

TEST(RegisteredPearson, DecimatedGridUsesScaledDisparity) {
  std::mt19937_64 rng(4);
  // Full resolution 8x32, features at 4x16, disparity 4 px = 2 feature px.
  const Tensor right = random_tensor({2, 4, 16}, rng);
  const Tensor left = shift_columns(right, 2);
  std::size_t n = 0;
  const double r = registered_pearson(left, right, Tensor::full({8, 32}, 4.0),
                                      std::vector<std::uint8_t>(8 * 32, 0), &n);
  EXPECT_NEAR(r, 1.0, 1e-12);
  EXPECT_EQ(n, 4u * 14u);
  EXPECT_THROW(registered_pearson(left, right, Tensor::full({8, 30}, 4.0),
                                  std::vector<std::uint8_t>(8 * 30, 0), nullptr),
               ShapeError);
}

TEST(RegisteredCorrelation, VisibleSetIsLargeAndTracesFinite) {
  const StereoNet net = default_net();
  const auto samples = generate_dataset(SceneConfig{}, 4, 11);
  PerturbationPair p = PerturbationPair::zeros(32, 32, 0.02);
  std::mt19937_64 rng(5);
  p.left = random_tensor({3, 32, 32}, rng, -0.02, 0.02);
  p.right = random_tensor({3, 32, 32}, rng, -0.02, 0.02);
  const auto rc = registered_correlation(net, samples, p);
  ASSERT_EQ(rc.clean.size(), 4u);
  EXPECT_GT(rc.min_visible_fraction, 0.5);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_TRUE(std::isfinite(rc.clean[l]));
    EXPECT_TRUE(std::isfinite(rc.perturbed[l]));
    EXPECT_LE(std::fabs(rc.clean[l]), 1.0);
  }
  // Integer disparities register exactly before any decimation blur.
  EXPECT_GT(rc.clean[0], 0.9);
}

TEST(Reports, CsvAndDatLayout) {
  Histogram h;
  h.lo = 0.0;
  h.hi = 2.0;
  h.bins = {0.25, 0.75};
  const std::string csv = histogram_csv({"clean", "attacked"}, {h, h});
  EXPECT_EQ(csv, "bin_lo,bin_hi,clean,attacked\n0,1,0.25,0.25\n1,2,0.75,0.75\n");
  EXPECT_EQ(histogram_dat({"clean"}, {h}), "# bin_lo bin_hi clean\n0 1 0.25\n1 2 0.75\n");
  EXPECT_EQ(trace_csv({"left", "right"}, {{1.0, 0.5}, {0.9, 0.4}}), "layer,left,right\n1,1,0.9\n2,0.5,0.4\n");
  EXPECT_THROW(trace_csv({"left"}, {{1.0}, {0.5}}), std::invalid_argument);
}
