#include "supforge/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace supforge {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("metrics: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                     shape_str(gt.shape()));
  }
}

bool is_outlier(double err, double gt) {
  return err > kD1AbsThreshold && err / gt > kD1RelThreshold;
}

struct Tally {
  std::size_t valid = 0;
  std::size_t outliers = 0;
  double abs_sum = 0.0;

  void add(const Tensor& pred, const Tensor& gt) {
    const auto& p = pred.values();
    const auto& g = gt.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!(g[i] > 0.0)) continue;
      const double err = std::fabs(p[i] - g[i]);
      ++valid;
      abs_sum += err;
      if (is_outlier(err, g[i])) ++outliers;
    }
  }

  MetricReport report() const {
    if (valid == 0) throw std::invalid_argument("metrics: no pixels with valid ground truth");
    return {static_cast<double>(outliers) / static_cast<double>(valid),
            abs_sum / static_cast<double>(valid), valid};
  }
};

}  // namespace

MetricReport evaluate(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  Tally t;
  t.add(pred, gt);
  return t.report();
}

double d1_error(const Tensor& pred, const Tensor& gt) { return evaluate(pred, gt).d1; }

double epe(const Tensor& pred, const Tensor& gt) { return evaluate(pred, gt).epe; }

MetricReport evaluate_all(std::span<const Tensor> preds, std::span<const Tensor> gts) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("metrics: prediction and ground-truth counts differ");
  }
  Tally t;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_pair(preds[i], gts[i]);
    t.add(preds[i], gts[i]);
  }
  return t.report();
}

void RegionAccumulator::add(const Tensor& pred, const Tensor& gt,
                            std::span<const std::uint8_t> labels) {
  check_pair(pred, gt);
  if (labels.size() != gt.numel()) {
    throw ShapeError("region_error: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(gt.shape()) + " map");
  }
  const auto& p = pred.values();
  const auto& g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(g[i] > 0.0)) continue;
    const auto r = static_cast<Region>(labels[i]);
    ++valid_[r];
    if (is_outlier(std::fabs(p[i] - g[i]), g[i])) ++errors_[r];
  }
}

std::map<Region, RegionStat> RegionAccumulator::result() const {
  std::map<Region, RegionStat> out;
  for (const auto& [r, n] : valid_) {
    if (n == 0) continue;
    const auto it = errors_.find(r);
    const std::size_t e = it == errors_.end() ? 0 : it->second;
    out[r] = {static_cast<double>(e) / static_cast<double>(n), n};
  }
  return out;
}

std::map<Region, RegionStat> region_error(const Tensor& pred, const Tensor& gt,
                                          std::span<const std::uint8_t> labels) {
  RegionAccumulator acc;
  acc.add(pred, gt, labels);
  return acc.result();
}

std::string to_csv_line(const MetricRow& row) {
  return fmt::format("{},{},{},{},{},{},{}", row.experiment_id, row.net_id,
                     row.attack_id, row.epsilon, row.report.d1, row.report.epe,
                     row.report.n_valid);
}

std::string to_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kMetricCsvHeader) + "\n";
  for (const auto& r : rows) out += to_csv_line(r) + "\n";
  return out;
}

}  // namespace supforge
