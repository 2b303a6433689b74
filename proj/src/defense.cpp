#include "supforge/defense.hpp"

#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "supforge/parallel.hpp"

namespace supforge {

LrSchedule staged_schedule(double lr, int epochs) {
  if (epochs < 0) throw std::invalid_argument("schedule: epochs must be >= 0");
  LrSchedule s;
  for (int e = 0; e < epochs; ++e) {
    const int third = (3 * e) / epochs;
    s.push_back(third == 0 ? lr : third == 1 ? lr / 2.0 : lr / 5.0);
  }
  return s;
}

TrainResult finetune_adversarial(const StereoNet& net, const std::vector<StereoSample>& dataset,
                                 const std::vector<PerturbationPair>& sups,
                                 const FinetuneConfig& cfg) {
  if (sups.empty()) throw std::invalid_argument("finetune: no perturbations given");
  if (!net.trained()) throw std::invalid_argument("finetune: network is not trained");
  if (cfg.probability < 0.0 || cfg.probability > 1.0) {
    throw std::invalid_argument("finetune: probability must lie in [0, 1]");
  }
  auto augment = [&](const StereoSample& s, std::mt19937_64& rng) {
    if (!std::bernoulli_distribution(cfg.probability)(rng)) {
      return std::pair<Tensor, Tensor>{s.left, s.right};
    }
    std::uniform_int_distribution<std::size_t> pick(0, sups.size() - 1);
    return apply_perturbation(sups[pick(rng)], s.left, s.right);
  };
  return train_scheduled(net, dataset, LossSpec{}, staged_schedule(cfg.lr, cfg.epochs), cfg.seed,
                         augment);
}

std::vector<Variant> variant_matrix(const StereoNetConfig& base) {
  std::vector<Variant> out;
  for (CostMode cost : {CostMode::kConcat, CostMode::kCorrelation}) {
    for (ConvMode conv : {ConvMode::kStandard, ConvMode::kDeformable}) {
      StereoNetConfig c = base;
      c.cost_mode = cost;
      c.conv_mode = conv;
      c.deformable_layers.clear();
      c.use_isa = false;
      out.push_back({c.summary(), c});
    }
  }
  StereoNetConfig c = base;
  c.cost_mode = CostMode::kConcat;
  c.conv_mode = ConvMode::kDeformable;
  c.deformable_layers = {base.encoder_layers - 1};
  c.use_isa = false;
  out.push_back({c.summary(), c});
  for (auto& v : out) v.config.validate();
  return out;
}

double TransferMatrix::mean_attacked_d1(std::size_t net) const {
  if (sup_ids.empty()) throw std::invalid_argument("transfer matrix has no perturbations");
  double s = 0.0;
  for (std::size_t j = 0; j < sup_ids.size(); ++j) s += attacked(net, j).d1;
  return s / static_cast<double>(sup_ids.size());
}

TransferMatrix transfer_eval(const std::vector<NamedNet>& nets, const std::vector<NamedSup>& sups,
                             const std::vector<StereoSample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("transfer_eval: empty dataset");
  for (const auto& s : sups) {
    if (s.pair == nullptr || s.pair->source_net.empty()) {
      throw std::invalid_argument("transfer_eval: perturbation '" + s.id +
                                  "' is not tagged with its source network");
    }
  }
  TransferMatrix m;
  for (const auto& n : nets) m.net_ids.push_back(n.id);
  for (const auto& s : sups) m.sup_ids.push_back(s.id);
  m.cells.assign(nets.size(), std::vector<MetricReport>(sups.size() + 1));
  const std::size_t cols = sups.size() + 1;
  parallel_for(nets.size() * cols, [&](std::size_t cell) {
    const std::size_t i = cell / cols, j = cell % cols;
    std::vector<Tensor> preds, gts;
    for (const auto& s : dataset) {
      if (j == 0) {
        preds.push_back(forward(*nets[i].net, s.left, s.right));
      } else {
        const auto [l, r] = apply_perturbation(*sups[j - 1].pair, s.left, s.right);
        preds.push_back(forward(*nets[i].net, l, r));
      }
      gts.push_back(s.gt_disparity);
    }
    m.cells[i][j] = evaluate_all(preds, gts);
  });
  return m;
}

std::string AttackReport::csv() const { return to_csv(rows); }

std::string AttackReport::summary() const {
  std::string out = fmt::format("experiment {}\n", experiment_id);
  for (const auto& [k, v] : metadata) out += fmt::format("  {} = {}\n", k, v);
  out += fmt::format("{:<28} {:<28} {:>8} {:>8} {:>8}\n", "net", "attack", "epsilon", "D1 %", "EPE");
  for (const auto& r : rows) {
    out += fmt::format("{:<28} {:<28} {:>8.4f} {:>8.2f} {:>8.3f}\n", r.net_id, r.attack_id,
                       r.epsilon, 100.0 * r.report.d1, r.report.epe);
  }
  return out;
}

AttackReport transfer_report(const std::string& experiment_id, const TransferMatrix& m,
                             double epsilon) {
  AttackReport rep;
  rep.experiment_id = experiment_id;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rep.rows.push_back({experiment_id, m.net_ids[i], "clean", 0.0, m.clean(i)});
    for (std::size_t j = 0; j < m.sup_ids.size(); ++j) {
      rep.rows.push_back({experiment_id, m.net_ids[i], "sup:" + m.sup_ids[j], epsilon,
                          m.attacked(i, j)});
    }
  }
  return rep;
}

}  // namespace supforge
