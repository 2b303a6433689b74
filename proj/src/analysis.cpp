#include "supforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "supforge/ops.hpp"

namespace supforge {

Histogram disparity_histogram(const std::vector<Tensor>& preds, int n_bins, double lo, double hi) {
  if (preds.empty()) throw std::invalid_argument("histogram: no maps");
  if (n_bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: need n_bins >= 1 and hi > lo");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.bins.assign(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> counts(h.bins.size(), 0);
  double total = 0.0;
  const double width = h.bin_width();
  for (const auto& p : preds) {
    for (double v : p.values()) {
      const double pos = std::floor((v - lo) / width);
      const long b = std::clamp(static_cast<long>(pos), 0L, static_cast<long>(n_bins - 1));
      ++counts[static_cast<std::size_t>(b)];
      total += v;
      ++h.count;
    }
  }
  if (h.count == 0) throw std::invalid_argument("histogram: maps are empty");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    h.bins[i] = static_cast<double>(counts[i]) / static_cast<double>(h.count);
  }
  h.mean = total / static_cast<double>(h.count);
  return h;
}

namespace {

double pearson_values(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("pearson: need equally sized non-empty inputs, got " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw std::invalid_argument("pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

double pearson(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("pearson: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  return pearson_values(a.values(), b.values());
}

LayerCorrelation layer_correlation(const StereoNet& net, const std::vector<StereoSample>& samples,
                                   const PerturbationPair& pair) {
  if (samples.empty()) throw std::invalid_argument("layer_correlation: no samples");
  const std::size_t L = static_cast<std::size_t>(net.config().encoder_layers);
  LayerCorrelation out{CorrelationTrace(L, 0.0), CorrelationTrace(L, 0.0)};
  for (const auto& s : samples) {
    const auto [pl, pr] = apply_perturbation(pair, s.left, s.right);
    const auto fl = encode(net, s.left), fl_hat = encode(net, pl);
    const auto fr = encode(net, s.right), fr_hat = encode(net, pr);
    for (std::size_t l = 0; l < L; ++l) {
      out.left[l] += pearson(fl[l], fl_hat[l]);
      out.right[l] += pearson(fr[l], fr_hat[l]);
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    out.left[l] /= static_cast<double>(samples.size());
    out.right[l] /= static_cast<double>(samples.size());
  }
  return out;
}

double registered_pearson(const Tensor& feat_left, const Tensor& feat_right, const Tensor& gt,
                          const std::vector<std::uint8_t>& occluded, std::size_t* n_visible) {
  if (feat_left.shape() != feat_right.shape() || feat_left.rank() != 3 || gt.rank() != 2) {
    throw ShapeError("registered_pearson: features " + shape_str(feat_left.shape()) + " / " +
                     shape_str(feat_right.shape()) + ", disparity " + shape_str(gt.shape()));
  }
  const std::size_t C = feat_left.dim(0), h = feat_left.dim(1), w = feat_left.dim(2);
  const std::size_t H = gt.dim(0), W = gt.dim(1);
  if (H % h != 0 || W % w != 0 || H / h != W / w || occluded.size() != H * W) {
    throw ShapeError("registered_pearson: feature grid " + std::to_string(h) + "x" +
                     std::to_string(w) + " is not a decimation of " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  const std::size_t scale = H / h;
  std::vector<double> a, b;
  std::size_t visible = 0;
  const double* fr = feat_right.values().data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = (y * scale) * W + x * scale;
      if (occluded[p]) continue;
      const double src = static_cast<double>(x) - gt[p] / static_cast<double>(scale);
      if (src < 0.0 || src > static_cast<double>(w - 1)) continue;
      ++visible;
      const auto st = bilinear::stencil(static_cast<double>(y), src, static_cast<long>(h),
                                        static_cast<long>(w));
      for (std::size_t c = 0; c < C; ++c) {
        a.push_back(feat_left[(c * h + y) * w + x]);
        b.push_back(bilinear::read(fr + c * h * w, st));
      }
    }
  }
  if (n_visible) *n_visible = visible;
  return pearson_values(a, b);
}

RegisteredCorrelation registered_correlation(const StereoNet& net,
                                             const std::vector<StereoSample>& samples,
                                             const PerturbationPair& pair) {
  if (samples.empty()) throw std::invalid_argument("registered_correlation: no samples");
  const std::size_t L = static_cast<std::size_t>(net.config().encoder_layers);
  RegisteredCorrelation out{CorrelationTrace(L, 0.0), CorrelationTrace(L, 0.0), 1.0};
  for (const auto& s : samples) {
    const auto [pl, pr] = apply_perturbation(pair, s.left, s.right);
    const auto fl = encode(net, s.left), fr = encode(net, s.right);
    const auto fl_hat = encode(net, pl), fr_hat = encode(net, pr);
    for (std::size_t l = 0; l < L; ++l) {
      std::size_t n = 0;
      out.clean[l] += registered_pearson(fl[l], fr[l], s.gt_disparity, s.occluded, &n);
      out.perturbed[l] += registered_pearson(fl_hat[l], fr_hat[l], s.gt_disparity, s.occluded, nullptr);
      const double grid = static_cast<double>(fl[l].dim(1) * fl[l].dim(2));
      out.min_visible_fraction = std::min(out.min_visible_fraction, static_cast<double>(n) / grid);
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    out.clean[l] /= static_cast<double>(samples.size());
    out.perturbed[l] /= static_cast<double>(samples.size());
  }
  return out;
}

namespace {

void check_columns(std::size_t names, std::size_t columns) {
  if (names != columns) {
    throw std::invalid_argument("report: " + std::to_string(names) + " names for " +
                                std::to_string(columns) + " columns");
  }
}

std::string table(const std::vector<std::string>& header,
                  const std::vector<std::vector<double>>& rows, const char* sep,
                  const char* comment) {
  std::string out = comment;
  for (std::size_t i = 0; i < header.size(); ++i) {
    out += (i ? sep : "") + header[i];
  }
  out += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      out += fmt::format("{}{}", i ? sep : "", r[i]);
    }
    out += "\n";
  }
  return out;
}

std::string histogram_table(const std::vector<std::string>& names,
                            const std::vector<Histogram>& hists, const char* sep,
                            const char* comment) {
  check_columns(names.size(), hists.size());
  if (hists.empty()) throw std::invalid_argument("report: no histograms");
  for (const auto& h : hists) {
    if (h.bins.size() != hists[0].bins.size() || h.lo != hists[0].lo || h.hi != hists[0].hi) {
      throw std::invalid_argument("report: histograms use different binnings");
    }
  }
  std::vector<std::string> header{"bin_lo", "bin_hi"};
  header.insert(header.end(), names.begin(), names.end());
  std::vector<std::vector<double>> rows;
  const double w = hists[0].bin_width();
  for (std::size_t b = 0; b < hists[0].bins.size(); ++b) {
    std::vector<double> r{hists[0].lo + w * static_cast<double>(b),
                          hists[0].lo + w * static_cast<double>(b + 1)};
    for (const auto& h : hists) r.push_back(h.bins[b]);
    rows.push_back(std::move(r));
  }
  return table(header, rows, sep, comment);
}

std::string trace_table(const std::vector<std::string>& names,
                        const std::vector<CorrelationTrace>& traces, const char* sep,
                        const char* comment) {
  check_columns(names.size(), traces.size());
  if (traces.empty()) throw std::invalid_argument("report: no traces");
  std::vector<std::string> header{"layer"};
  header.insert(header.end(), names.begin(), names.end());
  std::vector<std::vector<double>> rows;
  for (std::size_t l = 0; l < traces[0].size(); ++l) {
    std::vector<double> r{static_cast<double>(l + 1)};
    for (const auto& t : traces) {
      if (t.size() != traces[0].size()) throw std::invalid_argument("report: trace lengths differ");
      r.push_back(t[l]);
    }
    rows.push_back(std::move(r));
  }
  return table(header, rows, sep, comment);
}

}  // namespace

std::string histogram_csv(const std::vector<std::string>& names,
                          const std::vector<Histogram>& hists) {
  return histogram_table(names, hists, ",", "");
}

std::string histogram_dat(const std::vector<std::string>& names,
                          const std::vector<Histogram>& hists) {
  return histogram_table(names, hists, " ", "# ");
}

std::string trace_csv(const std::vector<std::string>& names,
                      const std::vector<CorrelationTrace>& traces) {
  return trace_table(names, traces, ",", "");
}

std::string trace_dat(const std::vector<std::string>& names,
                      const std::vector<CorrelationTrace>& traces) {
  return trace_table(names, traces, " ", "# ");
}

}  // namespace supforge
