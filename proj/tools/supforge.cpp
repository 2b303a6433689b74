// Batch front end: every subcommand runs inside an experiment directory and
// leaves a config snapshot and a manifest behind.

#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "experiment.hpp"
#include "supforge/analysis.hpp"
#include "supforge/defense.hpp"
#include "supforge/io.hpp"
#include "supforge/metrics.hpp"
#include "supforge/parallel.hpp"
#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"

using namespace supforge;
using supforge::cli::Experiment;

namespace {

// Validation scenes are seeded far away from training scenes.
constexpr std::uint64_t kValSeedOffset = 1'000'000;

using Perturb = std::function<std::pair<Tensor, Tensor>(const StereoSample&, std::size_t)>;

std::vector<Tensor> predict_all(const StereoNet& net, const std::vector<StereoSample>& samples,
                                const Perturb& perturb) {
  std::vector<Tensor> preds(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto [l, r] = perturb ? perturb(samples[i], i)
                                : std::pair<Tensor, Tensor>{samples[i].left, samples[i].right};
    preds[i] = forward(net, l, r);
  });
  for (const auto& p : preds) {
    if (!p.all_finite()) throw NumericError("prediction contains non-finite values");
  }
  return preds;
}

std::vector<Tensor> gts_of(const std::vector<StereoSample>& samples) {
  std::vector<Tensor> g;
  for (const auto& s : samples) g.push_back(s.gt_disparity);
  return g;
}

MetricReport score(const std::vector<Tensor>& preds, const std::vector<StereoSample>& samples) {
  return evaluate_all(preds, gts_of(samples));
}

Perturb with_sup(const PerturbationPair& pair) {
  return [&pair](const StereoSample& s, std::size_t) {
    return apply_perturbation(pair, s.left, s.right);
  };
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string losses_csv(const char* index_name, const std::vector<double>& losses) {
  std::string out = fmt::format("{},loss\n", index_name);
  for (std::size_t i = 0; i < losses.size(); ++i) out += fmt::format("{},{}\n", i, losses[i]);
  return out;
}

void run_gen_data(Experiment& ex) {
  const SceneConfig sc = cli::scene_config(ex.config());
  const int n_train = ex.config().get_int("data.n_train", 40);
  const int n_val = ex.config().get_int("data.n_val", 10);
  if (n_train < 1 || n_val < 1) throw ConfigError("data.n_train and data.n_val must be >= 1");
  std::string index = "split,index,seed\n";
  auto emit = [&](const std::string& split, int n, std::uint64_t base) {
    const auto samples = generate_dataset(sc, n, base);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (const auto& p : sample_paths(fs::path("data") / split, i)) ex.output(p);
      save_sample(ex.root() / "data" / split, i, samples[i]);
      index += fmt::format("{},{},{}\n", split, i, samples[i].seed);
    }
  };
  emit("train", n_train, ex.seed());
  emit("val", n_val, ex.seed() + kValSeedOffset);
  ex.write_text_output("data/index.csv", index);
}

void run_train(Experiment& ex) {
  const auto& c = ex.config();
  const std::string name = c.get_string("train.name", "base");
  const auto train_set = ex.load_split("train");
  const auto val = ex.load_split("val");
  TrainConfig tc;
  tc.epochs = c.get_int("train.epochs", tc.epochs);
  tc.lr = c.get_double("train.lr", tc.lr);
  tc.seed = ex.seed() + 1;
  const auto result = train(StereoNet(cli::net_config(c, ex.seed())), train_set, LossSpec{}, tc);
  ex.save_net(name, result.net);
  ex.write_text_output(fmt::format("logs/train_{}.csv", name), losses_csv("epoch", result.epoch_losses));
  const MetricReport m = score(predict_all(result.net, val, nullptr), val);
  ex.write_text_output(fmt::format("metrics/train_{}.csv", name),
                       to_csv({{"train", name, "clean", 0.0, m}}));
  std::printf("%s: val D1 %.4f EPE %.4f\n", name.c_str(), m.d1, m.epe);
}

void run_eval(Experiment& ex) {
  const auto& c = ex.config();
  const std::string net_name = c.get_string("eval.net", "base");
  const std::string sup_name = c.get_string("eval.sup", "");
  const auto samples = ex.load_split(c.get_string("eval.split", "val"));
  const StereoNet net = ex.load_net(net_name);
  MetricRow row{"eval", net_name, "clean", 0.0, {}};
  if (sup_name.empty()) {
    row.report = score(predict_all(net, samples, nullptr), samples);
  } else {
    const PerturbationPair pair = ex.load_sup(sup_name);
    row.attack_id = "sup:" + sup_name;
    row.epsilon = pair.epsilon;
    row.report = score(predict_all(net, samples, with_sup(pair)), samples);
  }
  const std::string suffix = sup_name.empty() ? "" : "_" + sup_name;
  ex.write_text_output(fmt::format("metrics/eval_{}{}.csv", net_name, suffix), to_csv({row}));
  std::printf("%s %s: D1 %.4f EPE %.4f\n", net_name.c_str(), row.attack_id.c_str(), row.report.d1,
              row.report.epe);
}

void run_craft(Experiment& ex) {
  const auto& c = ex.config();
  const std::string net_name = c.get_string("craft.net", "base");
  const std::string name = c.get_string("craft.name", "sup");
  const CraftConfig cc = cli::craft_config(c, ex.seed());
  const StereoNet net = ex.load_net(net_name);
  const auto train_set = ex.load_split("train");
  CraftResult r = craft_sup(net, train_set, cc);
  r.pair.source_net = net_name;
  ex.save_sup(name, r.pair);
  write_ppm(ex.output(fmt::format("sups/{}_left.ppm", name)),
            visualize_perturbation(r.pair.left, r.pair.epsilon));
  write_ppm(ex.output(fmt::format("sups/{}_right.ppm", name)),
            visualize_perturbation(r.pair.right, r.pair.epsilon));
  std::string log = "update,loss,linf_left,linf_right\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    log += fmt::format("{},{},{},{}\n", i, r.losses[i], r.linf_left[i], r.linf_right[i]);
  }
  ex.write_text_output(fmt::format("logs/craft_{}.csv", name), log);
}

void run_attack(Experiment& ex) {
  const auto& c = ex.config();
  const std::string net_name = c.get_string("attack.net", "base");
  const std::string sup_name = c.get_string("attack.sup", "sup");
  const int fgsm_steps = c.get_int("attack.fgsm_steps", 3);
  const StereoNet net = ex.load_net(net_name);
  const PerturbationPair pair = ex.load_sup(sup_name);
  const auto val = ex.load_split("val");
  const double eps = pair.epsilon;

  const auto clean = predict_all(net, val, nullptr);
  const auto attacked = predict_all(net, val, with_sup(pair));
  std::vector<MetricRow> rows{{"attack", net_name, "clean", 0.0, score(clean, val)},
                              {"attack", net_name, "sup:" + sup_name, eps, score(attacked, val)}};
  for (auto [kind, id] : {std::pair{NoiseKind::kUniform, "uniform"},
                          std::pair{NoiseKind::kGaussian, "gaussian"}}) {
    const NoiseKind k = kind;
    const auto preds = predict_all(net, val, [&](const StereoSample& s, std::size_t i) {
      return noise_attack(s.left, s.right, k, eps, ex.seed() + i);
    });
    rows.push_back({"attack", net_name, id, eps, score(preds, val)});
  }
  if (fgsm_steps > 0) {
    const auto preds = predict_all(net, val, [&](const StereoSample& s, std::size_t) {
      return fgsm_image_specific(net, s, eps, fgsm_steps);
    });
    rows.push_back({"attack", net_name, "fgsm", eps, score(preds, val)});
  }
  ex.write_text_output("metrics/attack.csv", to_csv(rows));

  RegionAccumulator rc, ra;
  for (std::size_t i = 0; i < val.size(); ++i) {
    rc.add(clean[i], val[i].gt_disparity, val[i].region_labels);
    ra.add(attacked[i], val[i].gt_disparity, val[i].region_labels);
  }
  const auto before = rc.result();
  const auto after = ra.result();
  std::string regions = "region,n_valid,clean_d1,attacked_d1\n";
  for (const auto& [region, st] : before) {
    regions += fmt::format("{},{},{},{}\n", region_name(region), st.n_valid, st.d1,
                           after.at(region).d1);
  }
  ex.write_text_output("metrics/regions.csv", regions);

  const auto [pl, pr] = apply_perturbation(pair, val[0].left, val[0].right);
  write_ppm(ex.output("renders/val000_left_attacked.ppm"), pl);
  write_pgm(ex.output("renders/val000_disp_gt.pgm"), encode_disparity(val[0].gt_disparity));
  write_pgm(ex.output("renders/val000_disp_clean.pgm"), encode_disparity(clean[0]));
  write_pgm(ex.output("renders/val000_disp_attacked.pgm"), encode_disparity(attacked[0]));
  std::printf("%s", AttackReport{"attack", {}, rows}.summary().c_str());
}

void run_analyze(Experiment& ex) {
  const auto& c = ex.config();
  const StereoNet net = ex.load_net(c.get_string("analyze.net", "base"));
  const PerturbationPair pair = ex.load_sup(c.get_string("analyze.sup", "sup"));
  const int bins = c.get_int("analyze.bins", 48);
  const auto val = ex.load_split("val");
  const double hi = net.config().d_max;
  const Histogram hc = disparity_histogram(predict_all(net, val, nullptr), bins, 0.0, hi);
  const Histogram ha = disparity_histogram(predict_all(net, val, with_sup(pair)), bins, 0.0, hi);
  ex.write_text_output("analysis/histogram.csv", histogram_csv({"clean", "attacked"}, {hc, ha}));
  ex.write_text_output("analysis/histogram.dat", histogram_dat({"clean", "attacked"}, {hc, ha}));

  const LayerCorrelation lc = layer_correlation(net, val, pair);
  ex.write_text_output("analysis/layer_correlation.csv", trace_csv({"left", "right"}, {lc.left, lc.right}));
  ex.write_text_output("analysis/layer_correlation.dat", trace_dat({"left", "right"}, {lc.left, lc.right}));
  const RegisteredCorrelation rc = registered_correlation(net, val, pair);
  ex.write_text_output("analysis/registered_correlation.csv",
                       trace_csv({"clean", "perturbed"}, {rc.clean, rc.perturbed}));
  ex.write_text_output("analysis/registered_correlation.dat",
                       trace_dat({"clean", "perturbed"}, {rc.clean, rc.perturbed}));
  ex.write_text_output("analysis/summary.csv",
                       fmt::format("clean_mean_disparity,attacked_mean_disparity,min_visible_fraction\n"
                                   "{},{},{}\n",
                                   hc.mean, ha.mean, rc.min_visible_fraction));
  std::printf("mean disparity clean %.3f attacked %.3f\n", hc.mean, ha.mean);
}

void run_finetune(Experiment& ex) {
  const auto& c = ex.config();
  const std::string net_name = c.get_string("finetune.net", "base");
  const std::string out_name = c.get_string("finetune.output", "base_ft");
  const auto sup_names = split_list(c.get_string("finetune.sups", "sup"));
  if (sup_names.empty()) throw ConfigError("finetune.sups names no perturbation");
  const StereoNet net = ex.load_net(net_name);
  std::vector<PerturbationPair> sups;
  for (const auto& n : sup_names) sups.push_back(ex.load_sup(n));
  const auto train_set = ex.load_split("train");
  const auto val = ex.load_split("val");
  FinetuneConfig fc;
  fc.epochs = c.get_int("finetune.epochs", fc.epochs);
  fc.lr = c.get_double("finetune.lr", fc.lr);
  fc.probability = c.get_double("finetune.probability", fc.probability);
  fc.seed = ex.seed();
  const TrainResult r = finetune_adversarial(net, train_set, sups, fc);
  ex.save_net(out_name, r.net);
  ex.write_text_output(fmt::format("logs/finetune_{}.csv", out_name), losses_csv("epoch", r.epoch_losses));
  std::vector<MetricRow> rows;
  for (const auto& [id, model] : {std::pair<std::string, const StereoNet*>{net_name, &net},
                                  std::pair<std::string, const StereoNet*>{out_name, &r.net}}) {
    rows.push_back({"finetune", id, "clean", 0.0, score(predict_all(*model, val, nullptr), val)});
    for (std::size_t j = 0; j < sups.size(); ++j) {
      rows.push_back({"finetune", id, "sup:" + sup_names[j], sups[j].epsilon,
                      score(predict_all(*model, val, with_sup(sups[j])), val)});
    }
  }
  ex.write_text_output("metrics/finetune.csv", to_csv(rows));
  std::printf("%s", AttackReport{"finetune", {}, rows}.summary().c_str());
}

void run_matrix(Experiment& ex) {
  const auto& c = ex.config();
  const auto variants = variant_matrix(cli::net_config(c, ex.seed()));
  const CraftConfig cc = cli::craft_config(c, ex.seed());
  TrainConfig tc;
  tc.epochs = c.get_int("matrix.epochs", 15);
  tc.lr = c.get_double("train.lr", tc.lr);
  tc.seed = ex.seed() + 1;
  const auto train_set = ex.load_split("train");
  const auto val = ex.load_split("val");

  std::vector<StereoNet> nets(variants.size());
  std::vector<PerturbationPair> sups(variants.size());
  parallel_for(variants.size(), [&](std::size_t i) {
    nets[i] = train(StereoNet(variants[i].config), train_set, LossSpec{}, tc).net;
    sups[i] = craft_sup(nets[i], train_set, cc).pair;
    sups[i].source_net = variants[i].id;
  });
  std::vector<NamedNet> named_nets;
  std::vector<NamedSup> named_sups;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    ex.save_net("matrix/" + variants[i].id, nets[i]);
    ex.save_sup("matrix/" + variants[i].id, sups[i]);
    named_nets.push_back({variants[i].id, &nets[i]});
    named_sups.push_back({variants[i].id, &sups[i]});
  }
  const TransferMatrix m = transfer_eval(named_nets, named_sups, val);
  AttackReport rep = transfer_report("matrix", m, cc.epsilon);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    rep.metadata.emplace_back("net." + variants[i].id,
                              cli::net_path("matrix/" + variants[i].id).generic_string());
  }
  ex.write_text_output("matrix/transfer.csv", rep.csv());
  ex.write_text_output("matrix/summary.txt", rep.summary());
  std::string mean = "net_id,clean_d1,mean_attacked_d1\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    mean += fmt::format("{},{},{}\n", m.net_ids[i], m.clean(i).d1, m.mean_attacked_d1(i));
  }
  ex.write_text_output("matrix/mean_attacked.csv", mean);
  std::printf("%s", rep.summary().c_str());
}

std::vector<MetricRow> parse_metric_csv(const std::string& text, const fs::path& origin) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != kMetricCsvHeader) throw IoError("unexpected header in " + origin.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw IoError("malformed row in " + origin.string() + ": " + line);
    try {
      rows.push_back({f[0], f[1], f[2], std::stod(f[3]),
                      {std::stod(f[4]), std::stod(f[5]), static_cast<std::size_t>(std::stoull(f[6]))}});
    } catch (const std::exception&) {
      throw IoError("malformed row in " + origin.string() + ": " + line);
    }
  }
  return rows;
}

void run_report(Experiment& ex) {
  std::vector<fs::path> files;
  if (fs::is_directory(ex.root() / "metrics")) {
    for (const auto& e : fs::directory_iterator(ex.root() / "metrics")) {
      if (e.path().extension() == ".csv" && e.path().filename() != "regions.csv") {
        files.push_back(fs::relative(e.path(), ex.root()));
      }
    }
  }
  if (fs::exists(ex.root() / "matrix" / "transfer.csv")) files.push_back("matrix/transfer.csv");
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("missing artifact: no metric CSVs under " + ex.root().string());
  AttackReport rep;
  rep.experiment_id = "report";
  for (const auto& f : files) {
    const fs::path p = ex.input(f);
    rep.metadata.emplace_back(f.generic_string(), sha256_file(p));
    for (auto& r : parse_metric_csv(read_text(p), p)) rep.rows.push_back(std::move(r));
  }
  ex.write_text_output("report/metrics.csv", rep.csv());
  ex.write_text_output("report/summary.txt", rep.summary());
  std::printf("%s", rep.summary().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"supforge: stereo universal perturbation experiments"};
  app.require_subcommand(1);
  const std::map<std::string, std::pair<std::string, std::function<void(Experiment&)>>> commands = {
      {"gen-data", {"generate training and validation scenes", run_gen_data}},
      {"train", {"train a stereo network", run_train}},
      {"craft", {"craft a universal perturbation pair", run_craft}},
      {"attack", {"score a perturbation against clean, noise and per-image baselines", run_attack}},
      {"eval", {"score a network on one split", run_eval}},
      {"analyze", {"disparity histograms and feature correlations", run_analyze}},
      {"finetune", {"adversarial fine-tuning", run_finetune}},
      {"matrix", {"train, attack and cross-evaluate the architecture variants", run_matrix}},
      {"report", {"collect metric CSVs into one summary", run_report}},
  };
  std::string exp_dir, config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--exp", exp_dir, "experiment directory")->required();
    sub->add_option("--seed", seed, "seed for every random choice of this run")->required();
    sub->add_option("--config", config_path, "key = value settings file");
    sub->add_option("--set", overrides, "override one setting, key=value");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    for (const auto& [name, entry] : commands) {
      if (!app.got_subcommand(name)) continue;
      Experiment ex(exp_dir, name, cli::resolve_config(config_path, overrides), seed);
      entry.second(ex);
      ex.finish();
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
