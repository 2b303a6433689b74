#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "supforge/scenegen.hpp"
#include "supforge/stereo_net.hpp"
#include "supforge/sup_craft.hpp"
#include "supforge/tensor.hpp"

namespace supforge {

namespace fs = std::filesystem;

/// Raised for unreadable or malformed files; the message names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary Netpbm. Colour images are [3,H,W] in [0,1], written clamped and
// rounded to 8 bits.
void write_ppm(const fs::path& path, const Tensor& image);
Tensor read_ppm(const fs::path& path);

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;
};

/// 8-bit when maxval < 256, otherwise 16-bit big-endian samples.
void write_pgm(const fs::path& path, const GrayImage& img);
GrayImage read_pgm(const fs::path& path);

/// Disparity stored as round(256 * d) in a 16-bit PGM.
GrayImage encode_disparity(const Tensor& disparity);
Tensor decode_disparity(const GrayImage& img);

/// Files of one sample: {index:06}_{left,right,disp,seg,occ}.{ppm,pgm}.
std::vector<fs::path> sample_paths(const fs::path& split_dir, std::size_t index);
void save_sample(const fs::path& split_dir, std::size_t index, const StereoSample& s);
StereoSample load_sample(const fs::path& split_dir, std::size_t index);

// Checkpoint container: "SUPF", u32 version, 4-byte kind tag, u32 config
// length + UTF-8 config text, u32 record count, then per record u32 name
// length + name, u32 rank, u64 extents, little-endian f64 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kKindNet = "NET ";
inline constexpr const char* kKindSup = "SUPP";

struct Record {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string kind;
  std::string config;  // key = value lines
  std::vector<Record> records;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);
void write_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const fs::path& path);

/// Config text of a network (net.* keys) and the reverse.
std::string net_config_text(const StereoNetConfig& cfg);
StereoNetConfig parse_net_config_text(const std::string& text);

void save_net(const fs::path& path, const StereoNet& net);
StereoNet load_net(const fs::path& path);
void save_sup(const fs::path& path, const PerturbationPair& pair);
PerturbationPair load_sup(const fs::path& path);

/// Renders a tile as 0.5 + v / (2 eps) for viewing.
Tensor visualize_perturbation(const Tensor& v, double epsilon);

// Whole-file helpers.
std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const fs::path& path);

}  // namespace supforge
