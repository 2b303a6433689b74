#include "supforge/scenegen.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>

namespace supforge {

const char* region_name(Region r) {
  switch (r) {
    case Region::kFlat: return "flat";
    case Region::kChecker: return "checker";
    case Region::kNoise: return "noise";
    case Region::kBackground: return "background";
  }
  return "unknown";
}

void SceneConfig::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("scene: image size must be positive");
  if (d_max < 1) throw std::invalid_argument("scene: d_max must be >= 1");
  if (4 * d_max >= width) {
    throw std::invalid_argument("scene: d_max " + std::to_string(d_max) +
                                " must be below width/4 = " + std::to_string(width / 4.0));
  }
  if (n_sprites_min < 0 || n_sprites_max < n_sprites_min) {
    throw std::invalid_argument("scene: invalid sprite count range");
  }
  if (background_disparity_min < 1 || background_disparity_max < background_disparity_min ||
      background_disparity_max + 2 > d_max) {
    throw std::invalid_argument("scene: background disparity range must lie in [1, d_max-2]");
  }
  if (noise_amplitude < 0 || noise_amplitude > 127 || checker_contrast < 1 || checker_contrast > 127) {
    throw std::invalid_argument("scene: texture contrast must lie in [0, 127] levels");
  }
  if (weight_flat < 0 || weight_checker < 0 || weight_noise < 0 ||
      weight_flat + weight_checker + weight_noise <= 0) {
    throw std::invalid_argument("scene: texture weights must be non-negative with positive sum");
  }
}

namespace {

using Rgb = std::array<int, 3>;  // 8-bit levels

// Noise grain in pixels; finer grain is invisible to a stride-2 encoder.
constexpr int kGrain = 2;

struct Texture {
  Region kind = Region::kFlat;
  Rgb base{};
  Rgb alt{};
  int cell = 4;
  int cells_w = 0;
  std::vector<std::uint8_t> cells;  // which colour each cell takes, cells_w columns
  int noise_w = 0;
  std::vector<std::array<std::uint8_t, 3>> noise;  // row-major, noise_w columns

  Rgb at(int ty, int tx) const {
    switch (kind) {
      case Region::kFlat:
        return base;
      case Region::kChecker:
        return cells[static_cast<std::size_t>(ty / cell) * cells_w + tx / cell] ? alt : base;
      default: {
        const auto& n = noise[static_cast<std::size_t>(ty / kGrain) * noise_w + tx / kGrain];
        return {n[0], n[1], n[2]};
      }
    }
  }
};

struct Layer {
  int x0 = 0, y0 = 0, w = 0, h = 0;  // left-view bounding box
  bool ellipse = false;
  int disparity = 0;
  Texture tex;

  bool covers(int ty, int tx) const {
    if (ty < 0 || tx < 0 || ty >= h || tx >= w) return false;
    if (!ellipse) return true;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double ry = h / 2.0, rx = w / 2.0;
    const double ny = (ty - cy) / ry, nx = (tx - cx) / rx;
    return ny * ny + nx * nx <= 1.0;
  }
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(30, 225);
  return {level(rng), level(rng), level(rng)};
}

Texture make_texture(const SceneConfig& cfg, Region kind, int rows, int cols,
                     std::mt19937_64& rng) {
  Texture t;
  t.kind = kind;
  t.base = random_color(rng);
  if (kind == Region::kChecker) {
    std::uniform_int_distribution<int> cell(2, 5);
    t.cell = cell(rng);
    // Push the alternate colour well away from the base one.
    for (int c = 0; c < 3; ++c) {
      t.alt[c] = t.base[c] < 128 ? std::min(255, t.base[c] + cfg.checker_contrast)
                                : std::max(0, t.base[c] - cfg.checker_contrast);
    }
    // Cells take the two colours at random; a strict alternation would be
    // periodic well inside the disparity range and alias under matching.
    t.cells_w = cols / t.cell + 1;
    t.cells.resize(static_cast<std::size_t>(rows / t.cell + 1) * t.cells_w);
    std::bernoulli_distribution pick(0.5);
    for (auto& c : t.cells) c = pick(rng) ? 1 : 0;
  } else if (kind == Region::kNoise) {
    t.noise_w = cols / kGrain + 1;
    t.noise.resize(static_cast<std::size_t>(rows / kGrain + 1) * t.noise_w);
    std::uniform_int_distribution<int> jitter(-cfg.noise_amplitude, cfg.noise_amplitude);
    for (auto& px : t.noise) {
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<std::uint8_t>(std::clamp(t.base[c] + jitter(rng), 0, 255));
      }
    }
  }
  return t;
}

struct View {
  std::vector<int> layer;  // -1 = background
  std::vector<Rgb> color;
};

}  // namespace

StereoSample generate(const SceneConfig& cfg) {
  cfg.validate();
  const int H = cfg.height, W = cfg.width;
  std::mt19937_64 rng(cfg.seed);

  std::uniform_int_distribution<int> bg_disp(cfg.background_disparity_min,
                                             cfg.background_disparity_max);
  const int d_bg = bg_disp(rng);
  const Region bg_kind = std::bernoulli_distribution(0.5)(rng) ? Region::kNoise : Region::kChecker;
  const Texture background = make_texture(cfg, bg_kind, H, W + cfg.d_max + 1, rng);

  std::uniform_int_distribution<int> count(cfg.n_sprites_min, cfg.n_sprites_max);
  const int n_sprites = count(rng);
  std::discrete_distribution<int> kind_pick({cfg.weight_flat, cfg.weight_checker, cfg.weight_noise});
  std::uniform_int_distribution<int> disp(d_bg + 2, cfg.d_max);
  std::vector<Layer> layers;
  for (int i = 0; i < n_sprites; ++i) {
    Layer l;
    l.w = std::uniform_int_distribution<int>(std::max(4, W / 12), std::max(5, W / 4))(rng);
    l.h = std::uniform_int_distribution<int>(std::max(4, H / 6), std::max(5, H / 2))(rng);
    l.x0 = std::uniform_int_distribution<int>(-l.w / 3, W - 1 - (2 * l.w) / 3)(rng);
    l.y0 = std::uniform_int_distribution<int>(-l.h / 3, H - 1 - (2 * l.h) / 3)(rng);
    l.ellipse = std::bernoulli_distribution(0.5)(rng);
    l.disparity = disp(rng);
    l.tex = make_texture(cfg, static_cast<Region>(kind_pick(rng)), l.h, l.w, rng);
    layers.push_back(std::move(l));
  }
  // Painter's order: nearer (larger disparity) drawn last.
  std::stable_sort(layers.begin(), layers.end(),
                   [](const Layer& a, const Layer& b) { return a.disparity < b.disparity; });

  // The right view moves every surface left by its disparity.
  auto render = [&](bool right_view) {
    View v;
    v.layer.assign(static_cast<std::size_t>(H) * W, -1);
    v.color.resize(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        v.color[p] = background.at(y, right_view ? x + d_bg : x);
        for (std::size_t li = 0; li < layers.size(); ++li) {
          const Layer& l = layers[li];
          const int sx = right_view ? x + l.disparity : x;
          const int ty = y - l.y0, tx = sx - l.x0;
          if (l.covers(ty, tx)) {
            v.layer[p] = static_cast<int>(li);
            v.color[p] = l.tex.at(ty, tx);
          }
        }
      }
    }
    return v;
  };
  const View lv = render(false);
  const View rv = render(true);

  StereoSample s;
  s.seed = cfg.seed;
  std::vector<double> left(3 * static_cast<std::size_t>(H) * W);
  std::vector<double> right(left.size());
  std::vector<double> disp_map(static_cast<std::size_t>(H) * W);
  s.region_labels.resize(disp_map.size());
  s.occluded.resize(disp_map.size());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      left[c * plane + p] = lv.color[p][c] / 255.0;
      right[c * plane + p] = rv.color[p][c] / 255.0;
    }
    const int li = lv.layer[p];
    const int d = li < 0 ? d_bg : layers[li].disparity;
    disp_map[p] = d;
    s.region_labels[p] = static_cast<std::uint8_t>(li < 0 ? Region::kBackground : layers[li].tex.kind);
    const int x = static_cast<int>(p % W);
    s.occluded[p] = (x - d < 0 || rv.layer[p - d] != li) ? 1 : 0;
  }
  s.left = Tensor({3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, std::move(left));
  s.right = Tensor({3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, std::move(right));
  s.gt_disparity = Tensor({static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, std::move(disp_map));
  return s;
}

std::vector<StereoSample> generate_dataset(const SceneConfig& cfg, int n, std::uint64_t base_seed) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::vector<StereoSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SceneConfig c = cfg;
    c.seed = base_seed + static_cast<std::uint64_t>(i);
    out.push_back(generate(c));
  }
  return out;
}

double occluded_fraction(const StereoSample& sample) {
  std::size_t n = 0;
  for (auto o : sample.occluded) n += o;
  return static_cast<double>(n) / static_cast<double>(sample.occluded.size());
}

}  // namespace supforge
