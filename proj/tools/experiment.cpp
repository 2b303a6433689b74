#include "experiment.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "supforge/io.hpp"

namespace supforge::cli {

const std::vector<std::pair<std::string, std::string>>& default_settings() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"scene.height", "64"},
      {"scene.width", "128"},
      {"scene.d_max", "24"},
      {"scene.n_sprites_min", "3"},
      {"scene.n_sprites_max", "6"},
      {"scene.background_disparity_min", "2"},
      {"scene.background_disparity_max", "5"},
      {"scene.weight_flat", "0.4"},
      {"scene.weight_checker", "0.3"},
      {"scene.weight_noise", "0.3"},
      {"scene.noise_amplitude", "35"},
      {"scene.checker_contrast", "52"},
      {"data.n_train", "40"},
      {"data.n_val", "10"},
      {"net.encoder_layers", "4"},
      {"net.channels", "16"},
      {"net.downsample", "2"},
      {"net.d_max", "24"},
      {"net.cost_mode", "correlation"},
      {"net.conv_mode", "standard"},
      {"net.deformable_layers", ""},
      {"net.use_isa", "false"},
      {"train.name", "base"},
      {"train.epochs", "30"},
      {"train.lr", "0.08"},
      {"craft.net", "base"},
      {"craft.name", "sup"},
      {"craft.epsilon", "0.02"},
      {"craft.alpha", "0.002"},
      {"craft.tile_h", "32"},
      {"craft.tile_w", "32"},
      {"craft.passes", "2"},
      {"craft.init_radius", "0.002"},
      {"attack.net", "base"},
      {"attack.sup", "sup"},
      {"attack.fgsm_steps", "3"},
      {"eval.net", "base"},
      {"eval.sup", ""},
      {"eval.split", "val"},
      {"analyze.net", "base"},
      {"analyze.sup", "sup"},
      {"analyze.bins", "48"},
      {"finetune.net", "base"},
      {"finetune.sups", "sup"},
      {"finetune.output", "base_ft"},
      {"finetune.epochs", "9"},
      {"finetune.lr", "0.04"},
      {"finetune.probability", "0.5"},
      {"matrix.epochs", "15"},
  };
  return d;
}

namespace {

// Each value must parse as the type of its default.
void check_types(const Config& c) {
  for (const auto& [k, d] : default_settings()) {
    if (d == "true" || d == "false") {
      c.get_bool(k, false);
    } else if (!d.empty() && d.find_first_not_of("0123456789") == std::string::npos) {
      c.get_int(k, 0);
    } else if (!d.empty() && d.find_first_not_of("0123456789.e-") == std::string::npos) {
      c.get_double(k, 0.0);
    }
  }
}

}  // namespace

Config resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  std::set<std::string> known;
  Config c;
  for (const auto& [k, v] : default_settings()) {
    known.insert(k);
    c.set(k, v);
  }
  if (!config_path.empty()) {
    const Config file = Config::load(config_path);
    file.require_known(known);
    for (const auto& [k, v] : file.values()) c.set(k, v);
  }
  for (const auto& o : overrides) {
    const Config one = Config::parse(o, "--set " + o);
    if (one.values().size() != 1) throw ConfigError("--set expects key=value, got '" + o + "'");
    one.require_known(known);
    for (const auto& [k, v] : one.values()) c.set(k, v);
  }
  check_types(c);
  scene_config(c);
  net_config(c, 0);
  craft_config(c, 0);
  return c;
}

SceneConfig scene_config(const Config& c) {
  SceneConfig s;
  s.height = c.get_int("scene.height", s.height);
  s.width = c.get_int("scene.width", s.width);
  s.d_max = c.get_int("scene.d_max", s.d_max);
  s.n_sprites_min = c.get_int("scene.n_sprites_min", s.n_sprites_min);
  s.n_sprites_max = c.get_int("scene.n_sprites_max", s.n_sprites_max);
  s.background_disparity_min = c.get_int("scene.background_disparity_min", s.background_disparity_min);
  s.background_disparity_max = c.get_int("scene.background_disparity_max", s.background_disparity_max);
  s.weight_flat = c.get_double("scene.weight_flat", s.weight_flat);
  s.weight_checker = c.get_double("scene.weight_checker", s.weight_checker);
  s.weight_noise = c.get_double("scene.weight_noise", s.weight_noise);
  s.noise_amplitude = c.get_int("scene.noise_amplitude", s.noise_amplitude);
  s.checker_contrast = c.get_int("scene.checker_contrast", s.checker_contrast);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

StereoNetConfig net_config(const Config& c, std::uint64_t seed) {
  std::string text;
  for (const auto& [k, v] : c.values()) {
    if (k.rfind("net.", 0) == 0) text += k + " = " + v + "\n";
  }
  try {
    StereoNetConfig n = parse_net_config_text(text);
    n.seed = seed;
    n.validate();
    return n;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

CraftConfig craft_config(const Config& c, std::uint64_t seed) {
  CraftConfig k;
  k.epsilon = c.get_double("craft.epsilon", k.epsilon);
  k.alpha = c.get_double("craft.alpha", k.alpha);
  k.tile_h = c.get_int("craft.tile_h", k.tile_h);
  k.tile_w = c.get_int("craft.tile_w", k.tile_w);
  k.passes = c.get_int("craft.passes", k.passes);
  k.init_radius = c.get_double("craft.init_radius", k.init_radius);
  k.seed = seed;
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return k;
}

fs::path net_path(const std::string& name) { return fs::path("nets") / (name + ".ckpt"); }
fs::path sup_path(const std::string& name) { return fs::path("sups") / (name + ".ckpt"); }

Experiment::Experiment(fs::path root, std::string command, Config config, std::uint64_t seed)
    : root_(std::move(root)), command_(std::move(command)), config_(std::move(config)), seed_(seed) {
  config_.set("seed", std::to_string(seed));
}

fs::path Experiment::input(const fs::path& rel) {
  const fs::path p = root_ / rel;
  if (!fs::is_regular_file(p)) throw IoError("missing artifact: " + p.string());
  if (std::find(inputs_.begin(), inputs_.end(), rel) == inputs_.end()) inputs_.push_back(rel);
  return p;
}

fs::path Experiment::output(const fs::path& rel) {
  const fs::path p = root_ / rel;
  fs::create_directories(p.parent_path());
  if (std::find(outputs_.begin(), outputs_.end(), rel) == outputs_.end()) outputs_.push_back(rel);
  return p;
}

void Experiment::write_text_output(const fs::path& rel, const std::string& text) {
  write_text(output(rel), text);
}

std::vector<StereoSample> Experiment::load_split(const std::string& split) {
  const fs::path dir = fs::path("data") / split;
  if (!fs::is_directory(root_ / dir)) throw IoError("missing artifact: " + (root_ / dir).string());
  std::vector<StereoSample> out;
  for (std::size_t i = 0; fs::exists(sample_paths(root_ / dir, i)[0]); ++i) {
    for (const auto& p : sample_paths(dir, i)) input(p);
    out.push_back(load_sample(root_ / dir, i));
  }
  if (out.empty()) throw IoError("no samples in " + (root_ / dir).string());
  return out;
}

StereoNet Experiment::load_net(const std::string& name) {
  return supforge::load_net(input(net_path(name)));
}

PerturbationPair Experiment::load_sup(const std::string& name) {
  return supforge::load_sup(input(sup_path(name)));
}

void Experiment::save_net(const std::string& name, const StereoNet& net) {
  supforge::save_net(output(net_path(name)), net);
}

void Experiment::save_sup(const std::string& name, const PerturbationPair& pair) {
  supforge::save_sup(output(sup_path(name)), pair);
}

void Experiment::finish() {
  const fs::path snapshot = fs::path("config") / (command_ + ".cfg");
  write_text_output(snapshot, config_.text());
  auto listing = [&](const std::vector<fs::path>& files) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : files) {
      arr.push_back({{"path", f.generic_string()}, {"sha256", sha256_file(root_ / f)}});
    }
    return arr;
  };
  nlohmann::json m;
  m["command"] = command_;
  m["seed"] = seed_;
  m["config"] = snapshot.generic_string();
  m["inputs"] = listing(inputs_);
  m["outputs"] = listing(outputs_);
  write_text(root_ / "manifest" / (command_ + ".json"), m.dump(2) + "\n");
}

}  // namespace supforge::cli
