#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "supforge/metrics.hpp"
#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"

namespace supforge {

struct FinetuneConfig {
  int epochs = 9;
  double lr = 0.04;
  double probability = 0.5;  // chance that a step sees a perturbed pair
  std::uint64_t seed = 0;
};

/// lr for the first third of the epochs, lr/2 for the second, lr/5 after.
LrSchedule staged_schedule(double lr, int epochs);

/// Fine-tunes against the true disparity; each step applies, with the
/// configured probability, one SUP drawn uniformly from `sups` to both views.
TrainResult finetune_adversarial(const StereoNet& net, const std::vector<StereoSample>& dataset,
                                 const std::vector<PerturbationPair>& sups,
                                 const FinetuneConfig& cfg);

struct Variant {
  std::string id;
  StereoNetConfig config;
};

/// {CONCAT, CORRELATION} x {STANDARD, DEFORMABLE} (deformable meaning every
/// encoder layer), followed by CONCAT with only the last encoder layer
/// deformable. Together with the CONCAT grid cells this sweeps the
/// deformable-layer count over none, one and all.
std::vector<Variant> variant_matrix(const StereoNetConfig& base);

struct NamedNet {
  std::string id;
  const StereoNet* net = nullptr;
};

struct NamedSup {
  std::string id;
  const PerturbationPair* pair = nullptr;
};

/// Rows are networks; column 0 is clean, column j+1 is SUP j.
struct TransferMatrix {
  std::vector<std::string> net_ids;
  std::vector<std::string> sup_ids;
  std::vector<std::vector<MetricReport>> cells;

  std::size_t rows() const { return net_ids.size(); }
  std::size_t cols() const { return sup_ids.size() + 1; }
  const MetricReport& clean(std::size_t net) const { return cells[net][0]; }
  const MetricReport& attacked(std::size_t net, std::size_t sup) const { return cells[net][sup + 1]; }
  /// Mean attacked D1 of a network over all SUPs.
  double mean_attacked_d1(std::size_t net) const;
};

/// Evaluates every (net, SUP) pair and every clean net on `dataset`. Cells
/// are computed independently, so the result does not depend on order or
/// thread count.
TransferMatrix transfer_eval(const std::vector<NamedNet>& nets, const std::vector<NamedSup>& sups,
                             const std::vector<StereoSample>& dataset);

/// Clean and attacked metrics of one experiment with its provenance.
struct AttackReport {
  std::string experiment_id;
  std::vector<std::pair<std::string, std::string>> metadata;  // seeds, configs, hashes
  std::vector<MetricRow> rows;

  std::string csv() const;
  std::string summary() const;
};

AttackReport transfer_report(const std::string& experiment_id, const TransferMatrix& m,
                             double epsilon);

}  // namespace supforge
