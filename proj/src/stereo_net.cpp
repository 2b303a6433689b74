#include "supforge/stereo_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "supforge/ops.hpp"

namespace supforge {

const char* cost_mode_name(CostMode m) {
  return m == CostMode::kConcat ? "concat" : "correlation";
}

const char* conv_mode_name(ConvMode m) {
  return m == ConvMode::kStandard ? "standard" : "deformable";
}

CostMode parse_cost_mode(const std::string& s) {
  if (s == "concat") return CostMode::kConcat;
  if (s == "correlation") return CostMode::kCorrelation;
  throw std::invalid_argument("unknown cost mode '" + s + "'");
}

ConvMode parse_conv_mode(const std::string& s) {
  if (s == "standard") return ConvMode::kStandard;
  if (s == "deformable") return ConvMode::kDeformable;
  throw std::invalid_argument("unknown conv mode '" + s + "'");
}

std::set<int> StereoNetConfig::active_deformable_layers() const {
  if (conv_mode == ConvMode::kStandard) return {};
  if (!deformable_layers.empty()) return deformable_layers;
  std::set<int> all;
  for (int l = 0; l < encoder_layers; ++l) all.insert(l);
  return all;
}

void StereoNetConfig::validate() const {
  if (encoder_layers < 1) throw std::invalid_argument("net: encoder_layers must be >= 1");
  if (channels < 1) throw std::invalid_argument("net: channels must be >= 1");
  if (downsample < 1 || (downsample & (downsample - 1)) != 0) {
    throw std::invalid_argument("net: downsample must be a power of two");
  }
  int strided = 0;
  while ((1 << strided) < downsample) ++strided;
  if (strided > encoder_layers) {
    throw std::invalid_argument("net: downsample needs more encoder layers");
  }
  if (d_max < 1 || d_max % downsample != 0) {
    throw std::invalid_argument("net: d_max " + std::to_string(d_max) +
                                " must be a positive multiple of downsample " +
                                std::to_string(downsample));
  }
  if (d_max_feature() < 2) throw std::invalid_argument("net: need at least two disparity hypotheses");
  for (int l : deformable_layers) {
    if (l < 0 || l >= encoder_layers) {
      throw std::invalid_argument("net: deformable layer index " + std::to_string(l) +
                                  " outside the encoder");
    }
  }
}

std::string StereoNetConfig::summary() const {
  std::ostringstream os;
  os << cost_mode_name(cost_mode) << '+' << conv_mode_name(conv_mode);
  const auto dl = active_deformable_layers();
  if (!dl.empty()) os << '-' << dl.size() << "dc";
  if (use_isa) os << "+isa";
  return os.str();
}

namespace {

int strided_layers(const StereoNetConfig& cfg) {
  int n = 0;
  while ((1 << n) < cfg.downsample) ++n;
  return n;
}

int layer_in_channels(const StereoNetConfig& cfg, int l) { return l == 0 ? 3 : cfg.channels; }

std::string layer_name(int l, const char* what) {
  return "enc" + std::to_string(l) + "." + what;
}

constexpr double kInitialMatchGain = -30.0;

// Inputs are shifted to zero mean before the first layer.
constexpr double kInputCentre = 0.5;

// Offset branches emit scaled-down displacements; otherwise plain SGD moves
// the sampling grid far faster than the weights it feeds.
constexpr double kOffsetScale = 0.1;

}  // namespace

std::size_t expected_parameter_count(const StereoNetConfig& cfg) {
  const std::size_t C = static_cast<std::size_t>(cfg.channels);
  std::size_t n = 0;
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::size_t cin = static_cast<std::size_t>(layer_in_channels(cfg, l));
    n += 9 * cin * C + C;
  }
  for (int l : cfg.active_deformable_layers()) {
    const std::size_t cin = static_cast<std::size_t>(layer_in_channels(cfg, l));
    n += 18 * 9 * cin + 18;
  }
  n += cfg.cost_mode == CostMode::kCorrelation ? 1 : 2 * C * C + C + C + 1;
  if (cfg.use_isa) n += 9 + 18 * 9 * C + 18;
  return n;
}

StereoNet::StereoNet(StereoNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  auto uniform = [&](const Shape& shape, std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(shape, std::move(v));
  };
  const std::size_t C = static_cast<std::size_t>(cfg_.channels);
  const auto deformable = cfg_.active_deformable_layers();
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::size_t cin = static_cast<std::size_t>(layer_in_channels(cfg_, l));
    params_.emplace_back(layer_name(l, "weight"), uniform({C, cin, 3, 3}, cin * 9, C * 9));
    params_.emplace_back(layer_name(l, "bias"), Tensor::zeros({C}));
    if (deformable.count(l)) {
      params_.emplace_back(layer_name(l, "offset.weight"), Tensor::zeros({18, cin, 3, 3}));
      params_.emplace_back(layer_name(l, "offset.bias"), Tensor::zeros({18}));
    }
  }
  if (cfg_.cost_mode == CostMode::kCorrelation) {
    params_.emplace_back("match.gain", Tensor::scalar(kInitialMatchGain));
  } else {
    // Hidden units come in +/- pairs over fL - fR and the output sums them
    // with one positive weight, so the initial cost is a projected absolute
    // difference that is lowest at the true match.
    Tensor hidden = uniform({C, 2 * C, 1, 1}, 2 * C, C);
    auto h = hidden.mutable_data();
    for (std::size_t u = 0; u < C; ++u) {
      const double sign = u % 2 == 0 ? 1.0 : -1.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double a = h[(u - u % 2) * 2 * C + c];
        h[u * 2 * C + c] = sign * a;
        h[u * 2 * C + C + c] = -sign * a;
      }
    }
    params_.emplace_back("match.hidden.weight", hidden);
    params_.emplace_back("match.hidden.bias", Tensor::zeros({C}));
    params_.emplace_back("match.out.weight", Tensor::full({1, C, 1, 1}, 1.0));
    params_.emplace_back("match.out.bias", Tensor::zeros({1}));
  }
  if (cfg_.use_isa) {
    std::vector<double> identity(9, 0.0);
    identity[4] = 1.0;
    params_.emplace_back("isa.weight", Tensor({3, 3}, identity));
    params_.emplace_back("isa.offset.weight", Tensor::zeros({18, C, 3, 3}));
    params_.emplace_back("isa.offset.bias", Tensor::zeros({18}));
  }
  for (auto& [name, t] : params_) t.set_requires_grad(true);
}

StereoNet::StereoNet(const StereoNet& other) : cfg_(other.cfg_), trained_(other.trained_) {
  params_.reserve(other.params_.size());
  for (const auto& [name, t] : other.params_) {
    params_.emplace_back(name, t.detach().set_requires_grad(true));
  }
}

StereoNet& StereoNet::operator=(const StereoNet& other) {
  if (this != &other) *this = StereoNet(other);
  return *this;
}

bool StereoNet::has_param(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Param& p) { return p.first == name; });
}

const Tensor& StereoNet::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

Tensor& StereoNet::param(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

std::size_t StereoNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

StereoNet init(const StereoNetConfig& cfg) { return StereoNet(cfg); }

namespace {

// Parameters either as trainable leaves or as constants for this pass.
struct ParamView {
  const StereoNet& net;
  bool grads;
  Tensor operator()(const std::string& name) const {
    const Tensor& t = net.param(name);
    return grads ? t : t.detach();
  }
};

}  // namespace

std::vector<Tensor> encode(const StereoNet& net, const Tensor& image, bool param_grads) {
  const auto& cfg = net.config();
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode: expected image [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % static_cast<std::size_t>(cfg.downsample) != 0 ||
      image.dim(2) % static_cast<std::size_t>(cfg.downsample) != 0) {
    throw ShapeError("encode: image " + shape_str(image.shape()) +
                     " not divisible by downsample " + std::to_string(cfg.downsample));
  }
  ParamView P{net, param_grads};
  const auto deformable = cfg.active_deformable_layers();
  const int n_strided = strided_layers(cfg);
  std::vector<Tensor> features;
  Tensor x = add(image, Tensor::full(image.shape(), -kInputCentre));
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const int stride = l < n_strided ? 2 : 1;
    Tensor y;
    if (deformable.count(l)) {
      Tensor offsets = scalar_mul(conv2d(x, P(layer_name(l, "offset.weight")),
                                         P(layer_name(l, "offset.bias")), stride, 1),
                                  kOffsetScale);
      y = deform_conv2d(x, P(layer_name(l, "weight")), P(layer_name(l, "bias")), offsets,
                        stride, 1);
    } else {
      y = conv2d(x, P(layer_name(l, "weight")), P(layer_name(l, "bias")), stride, 1);
    }
    if (l + 1 < cfg.encoder_layers) y = leaky_relu(y);
    features.push_back(y);
    x = y;
  }
  return features;
}

Tensor build_cost_volume(const StereoNet& net, const Tensor& feat_left, const Tensor& feat_right,
                         bool param_grads) {
  const auto& cfg = net.config();
  if (feat_left.shape() != feat_right.shape() || feat_left.rank() != 3) {
    throw ShapeError("build_cost_volume: feature shapes " + shape_str(feat_left.shape()) +
                     " and " + shape_str(feat_right.shape()) + " differ");
  }
  const int D = cfg.d_max_feature();
  if (static_cast<std::size_t>(D) >= feat_left.dim(2)) {
    throw ShapeError("build_cost_volume: d_max_feature " + std::to_string(D) +
                     " must be below feature width " + std::to_string(feat_left.dim(2)));
  }
  if (cfg.cost_mode == CostMode::kCorrelation) {
    return correlation_volume(feat_left, feat_right, D);
  }
  ParamView P{net, param_grads};
  const Tensor w1 = P("match.hidden.weight"), b1 = P("match.hidden.bias");
  const Tensor w2 = P("match.out.weight"), b2 = P("match.out.bias");
  std::vector<Tensor> slices;
  slices.reserve(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) {
    Tensor stacked = concat({feat_left, shift_columns(feat_right, d)});
    Tensor hidden = leaky_relu(conv2d(stacked, w1, b1));
    slices.push_back(conv2d(hidden, w2, b2));
  }
  return concat(slices);
}

ForwardResult forward_full(const StereoNet& net, const Tensor& left, const Tensor& right,
                           bool param_grads) {
  const auto& cfg = net.config();
  if (left.shape() != right.shape()) {
    throw ShapeError("forward: left " + shape_str(left.shape()) + " vs right " +
                     shape_str(right.shape()));
  }
  ParamView P{net, param_grads};
  ForwardResult r;
  r.left_features = encode(net, left, param_grads);
  r.right_features = encode(net, right, param_grads);
  Tensor cost = build_cost_volume(net, r.left_features.back(), r.right_features.back(), param_grads);
  if (cfg.cost_mode == CostMode::kCorrelation) cost = scale_by(cost, P("match.gain"));
  if (cfg.use_isa) {
    Tensor offsets = scalar_mul(
        conv2d(r.left_features.back(), P("isa.offset.weight"), P("isa.offset.bias"), 1, 1),
        kOffsetScale);
    cost = isa_aggregate(cost, P("isa.weight"), offsets);
  }
  r.cost = cost;
  r.disparity = upsample_bilinear(soft_argmin(cost), cfg.downsample,
                                  static_cast<double>(cfg.downsample));
  return r;
}

Tensor forward(const StereoNet& net, const Tensor& left, const Tensor& right, bool param_grads) {
  return forward_full(net, left, right, param_grads).disparity;
}

Tensor compute_loss(const LossSpec& spec, const Tensor& pred, const Tensor& target) {
  if (!(spec.beta > 0.0)) throw std::invalid_argument("loss: beta must be > 0");
  return smooth_l1_loss(pred, target, spec.beta, spec.reduction);
}

TrainResult train_scheduled(StereoNet net, const std::vector<StereoSample>& dataset,
                            const LossSpec& loss, const LrSchedule& lr_per_epoch,
                            std::uint64_t seed,
                            const std::function<std::pair<Tensor, Tensor>(
                                const StereoSample&, std::mt19937_64&)>& augment) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult result;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double lr : lr_per_epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const StereoSample& s = dataset[idx];
      auto [left, right] = augment ? augment(s, rng) : std::pair<Tensor, Tensor>{s.left, s.right};
      Tape tape;
      TapeGuard guard(tape);
      Tensor pred = forward(net, left, right, true);
      Tensor l = compute_loss(loss, pred, s.gt_disparity);
      if (!std::isfinite(l.item())) throw NumericError("train: non-finite loss");
      tape.backward(l);
      epoch_loss += l.item();
      for (auto& [name, p] : net.params()) {
        if (lr != 0.0) {
          const auto g = p.grad();
          auto data = p.mutable_data();
          for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
        }
        p.zero_grad();
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  for (const auto& [name, p] : net.params()) {
    if (!p.all_finite()) throw NumericError("train: parameter " + name + " became non-finite");
  }
  net.set_trained(true);
  result.net = std::move(net);
  return result;
}

TrainResult train(StereoNet net, const std::vector<StereoSample>& dataset, const LossSpec& loss,
                  const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  return train_scheduled(std::move(net), dataset, loss,
                         LrSchedule(static_cast<std::size_t>(cfg.epochs), cfg.lr), cfg.seed,
                         nullptr);
}

}  // namespace supforge
