#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "supforge/scenegen.hpp"
#include "supforge/tensor.hpp"

namespace supforge {

/// KITTI outlier rule: error above 3 px and above 5% of the true disparity.
inline constexpr double kD1AbsThreshold = 3.0;
inline constexpr double kD1RelThreshold = 0.05;

struct MetricReport {
  double d1 = 0.0;
  double epe = 0.0;
  std::size_t n_valid = 0;
};

/// Both metrics are taken over pixels with gt > 0 and throw
/// std::invalid_argument when there are none.
double d1_error(const Tensor& pred, const Tensor& gt);
double epe(const Tensor& pred, const Tensor& gt);
MetricReport evaluate(const Tensor& pred, const Tensor& gt);

/// Pools pixels across several maps (every valid pixel weighs the same).
MetricReport evaluate_all(std::span<const Tensor> preds, std::span<const Tensor> gts);

struct RegionStat {
  double d1 = 0.0;
  std::size_t n_valid = 0;
};

/// D1 restricted to each region's valid pixels; regions without valid
/// pixels are absent from the map.
std::map<Region, RegionStat> region_error(const Tensor& pred, const Tensor& gt,
                                          std::span<const std::uint8_t> labels);

/// Accumulates region counts over many maps.
class RegionAccumulator {
 public:
  void add(const Tensor& pred, const Tensor& gt, std::span<const std::uint8_t> labels);
  std::map<Region, RegionStat> result() const;

 private:
  std::map<Region, std::size_t> errors_;
  std::map<Region, std::size_t> valid_;
};

/// One line of the metrics CSV.
struct MetricRow {
  std::string experiment_id;
  std::string net_id;
  std::string attack_id;
  double epsilon = 0.0;
  MetricReport report;
};

inline constexpr const char* kMetricCsvHeader = "experiment_id,net_id,attack_id,epsilon,d1,epe,n_valid";
std::string to_csv_line(const MetricRow& row);
std::string to_csv(const std::vector<MetricRow>& rows);

}  // namespace supforge
