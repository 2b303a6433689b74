#include "supforge/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "supforge/config.hpp"

namespace supforge {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

namespace {

struct NetpbmHeader {
  std::string magic;
  std::size_t width = 0, height = 0;
  int maxval = 0;
  std::size_t offset = 0;  // first sample byte
};

NetpbmHeader parse_header(const std::vector<std::uint8_t>& b, const fs::path& path) {
  NetpbmHeader h;
  std::size_t i = 0;
  auto skip = [&] {
    while (i < b.size()) {
      if (b[i] == '#') {
        while (i < b.size() && b[i] != '\n') ++i;
      } else if (std::isspace(b[i])) {
        ++i;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip();
    std::string t;
    while (i < b.size() && !std::isspace(b[i]) && b[i] != '#') t += static_cast<char>(b[i++]);
    if (t.empty()) throw IoError("truncated Netpbm header in " + path.string());
    return t;
  };
  auto number = [&] {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), ::isdigit)) {
      throw IoError("bad Netpbm header field '" + t + "' in " + path.string());
    }
    return std::stoul(t);
  };
  h.magic = token();
  h.width = number();
  h.height = number();
  h.maxval = static_cast<int>(number());
  if (i >= b.size() || !std::isspace(b[i])) throw IoError("bad Netpbm header in " + path.string());
  h.offset = i + 1;
  if (h.width == 0 || h.height == 0 || h.maxval < 1 || h.maxval > 65535) {
    throw IoError("unsupported Netpbm geometry in " + path.string());
  }
  return h;
}

std::string header(const char* magic, std::size_t w, std::size_t h, int maxval) {
  return fmt::format("{}\n{} {}\n{}\n", magic, w, h, maxval);
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t H = image.dim(1), W = image.dim(2), plane = H * W;
  const std::string hdr = header("P6", W, H, 255);
  std::vector<std::uint8_t> out(hdr.begin(), hdr.end());
  out.reserve(out.size() + 3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  write_bytes(path, out);
}

Tensor read_ppm(const fs::path& path) {
  const auto b = read_bytes(path);
  const auto h = parse_header(b, path);
  if (h.magic != "P6" || h.maxval != 255) throw IoError("expected an 8-bit P6 file: " + path.string());
  const std::size_t plane = h.width * h.height;
  if (b.size() < h.offset + 3 * plane) throw IoError("truncated image data in " + path.string());
  std::vector<double> data(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) data[c * plane + p] = b[h.offset + 3 * p + c] / 255.0;
  }
  return Tensor({3, h.height, h.width}, std::move(data));
}

void write_pgm(const fs::path& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height || img.maxval < 1 || img.maxval > 65535) {
    throw ShapeError("write_pgm: inconsistent image for " + path.string());
  }
  const std::string hdr = header("P5", img.width, img.height, img.maxval);
  std::vector<std::uint8_t> out(hdr.begin(), hdr.end());
  for (auto v : img.pixels) {
    if (v > img.maxval) throw std::invalid_argument("write_pgm: sample above maxval in " + path.string());
    if (img.maxval < 256) {
      out.push_back(static_cast<std::uint8_t>(v));
    } else {
      out.push_back(static_cast<std::uint8_t>(v >> 8));
      out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
  }
  write_bytes(path, out);
}

GrayImage read_pgm(const fs::path& path) {
  const auto b = read_bytes(path);
  const auto h = parse_header(b, path);
  if (h.magic != "P5") throw IoError("expected a P5 file: " + path.string());
  GrayImage img{h.height, h.width, h.maxval, {}};
  const std::size_t n = h.width * h.height;
  const std::size_t bytes = h.maxval < 256 ? 1 : 2;
  if (b.size() < h.offset + bytes * n) throw IoError("truncated image data in " + path.string());
  img.pixels.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t o = h.offset + bytes * p;
    img.pixels[p] = bytes == 1 ? b[o] : static_cast<std::uint16_t>((b[o] << 8) | b[o + 1]);
  }
  return img;
}

GrayImage encode_disparity(const Tensor& disparity) {
  if (disparity.rank() != 2) throw ShapeError("disparity map must be [H,W]");
  GrayImage img{disparity.dim(0), disparity.dim(1), 65535, {}};
  for (double d : disparity.values()) {
    const double v = std::round(256.0 * d);
    if (v < 0.0 || v > 65535.0) throw std::invalid_argument("disparity outside the 16-bit range");
    img.pixels.push_back(static_cast<std::uint16_t>(v));
  }
  return img;
}

Tensor decode_disparity(const GrayImage& img) {
  std::vector<double> d;
  d.reserve(img.pixels.size());
  for (auto v : img.pixels) d.push_back(v / 256.0);
  return Tensor({img.height, img.width}, std::move(d));
}

std::vector<fs::path> sample_paths(const fs::path& split_dir, std::size_t index) {
  const std::string stem = fmt::format("{:06}", index);
  return {split_dir / (stem + "_left.ppm"), split_dir / (stem + "_right.ppm"),
          split_dir / (stem + "_disp.pgm"), split_dir / (stem + "_seg.pgm"),
          split_dir / (stem + "_occ.pgm")};
}

void save_sample(const fs::path& split_dir, std::size_t index, const StereoSample& s) {
  const auto p = sample_paths(split_dir, index);
  write_ppm(p[0], s.left);
  write_ppm(p[1], s.right);
  write_pgm(p[2], encode_disparity(s.gt_disparity));
  const std::size_t H = s.height(), W = s.width();
  write_pgm(p[3], {H, W, 255, std::vector<std::uint16_t>(s.region_labels.begin(), s.region_labels.end())});
  write_pgm(p[4], {H, W, 255, std::vector<std::uint16_t>(s.occluded.begin(), s.occluded.end())});
}

StereoSample load_sample(const fs::path& split_dir, std::size_t index) {
  const auto p = sample_paths(split_dir, index);
  StereoSample s;
  s.left = read_ppm(p[0]);
  s.right = read_ppm(p[1]);
  s.gt_disparity = decode_disparity(read_pgm(p[2]));
  const auto seg = read_pgm(p[3]);
  const auto occ = read_pgm(p[4]);
  const std::size_t H = s.gt_disparity.dim(0), W = s.gt_disparity.dim(1);
  if (s.left.shape() != Shape{3, H, W} || s.right.shape() != s.left.shape() ||
      seg.height != H || seg.width != W || occ.height != H || occ.width != W) {
    throw IoError("sample " + std::to_string(index) + " in " + split_dir.string() +
                  " has inconsistent image sizes");
  }
  for (auto v : seg.pixels) {
    if (v >= kRegionCount) throw IoError("bad region label in " + p[3].string());
    s.region_labels.push_back(static_cast<std::uint8_t>(v));
  }
  for (auto v : occ.pixels) s.occluded.push_back(v ? 1 : 0);
  return s;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    std::uint8_t b[sizeof(T)];
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<std::uint8_t>(bits >> (8 * i));
    bytes(b, sizeof(T));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string origin) : b_(b), origin_(std::move(origin)) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw IoError("truncated checkpoint " + origin_);
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::string str() { return raw(le<std::uint32_t>()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  if (ck.kind.size() != 4) throw std::invalid_argument("checkpoint kind tag must be 4 bytes");
  Writer w;
  w.bytes("SUPF", 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.bytes(ck.kind.data(), 4);
  w.str(ck.config);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    w.str(r.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.value.rank()));
    for (auto e : r.value.shape()) w.le<std::uint64_t>(e);
    for (double v : r.value.values()) w.le<double>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.raw(4) != "SUPF") throw IoError("not a checkpoint (bad magic): " + origin);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + origin);
  }
  Checkpoint ck;
  ck.kind = r.raw(4);
  ck.config = r.str();
  const auto n = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Record rec;
    rec.name = r.str();
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw IoError("implausible tensor rank in " + origin);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.le<std::uint64_t>());
      numel *= shape.back();
    }
    r.need(8 * numel);
    std::vector<double> data(numel);
    for (auto& v : data) v = r.le<double>();
    rec.value = Tensor(shape, std::move(data));
    ck.records.push_back(std::move(rec));
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint " + origin);
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  write_bytes(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_bytes(path), path.string());
}

std::string net_config_text(const StereoNetConfig& cfg) {
  Config c;
  c.set("net.encoder_layers", std::to_string(cfg.encoder_layers));
  c.set("net.channels", std::to_string(cfg.channels));
  c.set("net.downsample", std::to_string(cfg.downsample));
  c.set("net.d_max", std::to_string(cfg.d_max));
  c.set("net.cost_mode", cost_mode_name(cfg.cost_mode));
  c.set("net.conv_mode", conv_mode_name(cfg.conv_mode));
  std::string layers;
  for (int l : cfg.deformable_layers) layers += (layers.empty() ? "" : ",") + std::to_string(l);
  c.set("net.deformable_layers", layers);
  c.set("net.use_isa", cfg.use_isa ? "true" : "false");
  c.set("net.seed", std::to_string(cfg.seed));
  return c.text();
}

namespace {

std::set<int> parse_layer_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.insert(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad deformable layer index '" + item + "'");
    }
  }
  return out;
}

}  // namespace

StereoNetConfig parse_net_config_text(const std::string& text) {
  const Config c = Config::parse(text, "checkpoint config");
  StereoNetConfig cfg;
  cfg.encoder_layers = c.get_int("net.encoder_layers", cfg.encoder_layers);
  cfg.channels = c.get_int("net.channels", cfg.channels);
  cfg.downsample = c.get_int("net.downsample", cfg.downsample);
  cfg.d_max = c.get_int("net.d_max", cfg.d_max);
  cfg.cost_mode = parse_cost_mode(c.get_string("net.cost_mode", cost_mode_name(cfg.cost_mode)));
  cfg.conv_mode = parse_conv_mode(c.get_string("net.conv_mode", conv_mode_name(cfg.conv_mode)));
  cfg.deformable_layers = parse_layer_list(c.get_string("net.deformable_layers", ""));
  cfg.use_isa = c.get_bool("net.use_isa", cfg.use_isa);
  cfg.seed = c.get_u64("net.seed", cfg.seed);
  return cfg;
}

void save_net(const fs::path& path, const StereoNet& net) {
  Checkpoint ck;
  ck.kind = kKindNet;
  ck.config = net_config_text(net.config()) + "trained = " + (net.trained() ? "true" : "false") + "\n";
  for (const auto& [name, t] : net.params()) ck.records.push_back({name, t.detach()});
  write_checkpoint(path, ck);
}

StereoNet load_net(const fs::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.kind != kKindNet) throw IoError(path.string() + " does not hold a network");
  StereoNet net(parse_net_config_text(ck.config));
  if (ck.records.size() != net.params().size()) {
    throw IoError(path.string() + ": parameter count does not match its config");
  }
  for (std::size_t i = 0; i < ck.records.size(); ++i) {
    auto& [name, t] = net.params()[i];
    const auto& rec = ck.records[i];
    if (rec.name != name || rec.value.shape() != t.shape()) {
      throw IoError(path.string() + ": record '" + rec.name + "' does not match parameter '" +
                    name + "' " + shape_str(t.shape()));
    }
    std::copy(rec.value.values().begin(), rec.value.values().end(), t.mutable_data().begin());
  }
  net.set_trained(Config::parse(ck.config).get_bool("trained", false));
  return net;
}

void save_sup(const fs::path& path, const PerturbationPair& pair) {
  Config c;
  c.set("sup.epsilon", fmt::format("{}", pair.epsilon));
  c.set("sup.tile_h", std::to_string(pair.tile_h));
  c.set("sup.tile_w", std::to_string(pair.tile_w));
  c.set("sup.source_net", pair.source_net.empty() ? "-" : pair.source_net);
  write_checkpoint(path, {kKindSup, c.text(), {{"left", pair.left}, {"right", pair.right}}});
}

PerturbationPair load_sup(const fs::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.kind != kKindSup || ck.records.size() != 2 || ck.records[0].name != "left" ||
      ck.records[1].name != "right") {
    throw IoError(path.string() + " does not hold a perturbation pair");
  }
  const Config c = Config::parse(ck.config, path.string());
  PerturbationPair p;
  p.left = ck.records[0].value;
  p.right = ck.records[1].value;
  p.epsilon = c.get_double("sup.epsilon", 0.0);
  p.tile_h = c.get_int("sup.tile_h", 0);
  p.tile_w = c.get_int("sup.tile_w", 0);
  p.source_net = c.get_string("sup.source_net", "-");
  if (p.source_net == "-") p.source_net.clear();
  const Shape want{3, static_cast<std::size_t>(p.tile_h), static_cast<std::size_t>(p.tile_w)};
  if (p.left.shape() != want || p.right.shape() != want) {
    throw IoError(path.string() + ": tile shape does not match its header");
  }
  return p;
}

Tensor visualize_perturbation(const Tensor& v, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("visualize: epsilon must be > 0");
  std::vector<double> out(v.values());
  for (auto& x : out) x = 0.5 + x / (2.0 * epsilon);
  return Tensor(v.shape(), std::move(out));
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

}  // namespace supforge
