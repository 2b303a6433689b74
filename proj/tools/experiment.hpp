#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "supforge/config.hpp"
#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"

namespace supforge::cli {

namespace fs = std::filesystem;

/// Every accepted key with its default value.
const std::vector<std::pair<std::string, std::string>>& default_settings();

/// Defaults, then the file (if any), then `key=value` overrides. Unknown
/// keys raise ConfigError naming the key.
Config resolve_config(const std::string& config_path, const std::vector<std::string>& overrides);

SceneConfig scene_config(const Config& c);
StereoNetConfig net_config(const Config& c, std::uint64_t seed);
CraftConfig craft_config(const Config& c, std::uint64_t seed);

/// One subcommand run inside an experiment directory. Reads and writes go
/// through this object so the manifest lists every file touched.
class Experiment {
 public:
  Experiment(fs::path root, std::string command, Config config, std::uint64_t seed);

  const fs::path& root() const { return root_; }
  const Config& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Absolute path of an existing input; throws IoError naming it if absent.
  fs::path input(const fs::path& rel);
  /// Absolute path of an output; parent directories are created.
  fs::path output(const fs::path& rel);

  void write_text_output(const fs::path& rel, const std::string& text);

  std::vector<StereoSample> load_split(const std::string& split);
  StereoNet load_net(const std::string& name);
  PerturbationPair load_sup(const std::string& name);
  void save_net(const std::string& name, const StereoNet& net);
  void save_sup(const std::string& name, const PerturbationPair& pair);

  /// Writes the config snapshot and the manifest of hashed inputs/outputs.
  void finish();

 private:
  fs::path root_;
  std::string command_;
  Config config_;
  std::uint64_t seed_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

fs::path net_path(const std::string& name);
fs::path sup_path(const std::string& name);

}  // namespace supforge::cli
