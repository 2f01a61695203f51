#include "riunet/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "riunet/rng.hpp"
#include "riunet/synth.hpp"
#include "riunet/wire.hpp"

namespace fs = std::filesystem;

namespace riunet {
namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

void finish(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + path);
}

template <class T>
std::string fmt_number(T v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

// --- point clouds & labels --------------------------------------------------

PointCloud read_point_cloud(const std::string& path) {
  std::ifstream is = open_in(path);
  is.seekg(0, std::ios::end);
  const int64_t bytes = is.tellg();
  is.seekg(0);
  if (bytes % 16 != 0)
    throw std::runtime_error(path + ": size " + std::to_string(bytes) + " is not a multiple of 16");
  const size_t n = size_t(bytes) / 16;
  PointCloud cloud;
  cloud.points.resize(n);
  cloud.intensity.resize(n);
  for (size_t i = 0; i < n; ++i) {
    float rec[4];
    wire::get_f32_array(is, rec, 4, "point record");
    for (int k = 0; k < 4; ++k)
      if (!std::isfinite(rec[k]))
        throw std::runtime_error(path + ": non-finite value at byte offset " + std::to_string(i * 16 + size_t(k) * 4));
    cloud.points[i] = {rec[0], rec[1], rec[2]};
    cloud.intensity[i] = rec[3];
  }
  return cloud;
}

void write_point_cloud(const std::string& path, const PointCloud& cloud) {
  if (!cloud.intensity.empty() && cloud.intensity.size() != cloud.size())
    throw std::invalid_argument("write_point_cloud: intensity length mismatch");
  std::ofstream os = open_out(path);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const float rec[4] = {cloud.points[i].x, cloud.points[i].y, cloud.points[i].z,
                          cloud.intensity.empty() ? 0.0f : cloud.intensity[i]};
    wire::put_f32_array(os, rec, 4);
  }
  finish(os, path);
}

std::vector<uint8_t> read_labels(const std::string& path) {
  std::ifstream is = open_in(path);
  is.seekg(0, std::ios::end);
  const int64_t bytes = is.tellg();
  is.seekg(0);
  if (bytes % 4 != 0)
    throw std::runtime_error(path + ": size " + std::to_string(bytes) + " is not a multiple of 4");
  std::vector<uint8_t> labels(size_t(bytes) / 4);
  for (size_t i = 0; i < labels.size(); ++i) {
    const uint32_t v = wire::get_u32(is, "label record");
    if (v > 255)
      throw std::runtime_error(path + ": label " + std::to_string(v) + " at record " + std::to_string(i) +
                               " out of range");
    labels[i] = uint8_t(v);
  }
  return labels;
}

void write_labels(const std::string& path, const std::vector<uint8_t>& labels) {
  std::ofstream os = open_out(path);
  for (uint8_t v : labels) wire::put_u32(os, v);
  finish(os, path);
}

// --- range-image files --------------------------------------------------------

static const char kRimgMagic[4] = {'R', 'I', 'M', 'G'};

void write_range_image(const std::string& path, const RangeImage& image) {
  validate_range_image(image);
  std::ofstream os = open_out(path);
  wire::put_bytes(os, kRimgMagic, 4);
  wire::put_u32(os, kRangeImageVersion);
  wire::put_u32(os, uint32_t(image.height));
  wire::put_u32(os, uint32_t(image.width));
  wire::put_u32(os, 2);
  wire::put_f32_array(os, image.depth.data(), image.depth.size());
  wire::put_f32_array(os, image.elevation.data(), image.elevation.size());
  wire::put_bytes(os, image.mask.data(), image.mask.size());
  const unsigned char has_labels = image.has_labels ? 1 : 0;
  wire::put_bytes(os, &has_labels, 1);
  if (image.has_labels) wire::put_bytes(os, image.labels.data(), image.labels.size());
  const unsigned char has_weights = image.has_weights ? 1 : 0;
  wire::put_bytes(os, &has_weights, 1);
  if (image.has_weights) wire::put_f32_array(os, image.weights.data(), image.weights.size());
  finish(os, path);
}

RangeImage read_range_image(const std::string& path) {
  std::ifstream is = open_in(path);
  char magic[4];
  wire::get_bytes(is, magic, 4, "range-image magic");
  if (std::memcmp(magic, kRimgMagic, 4) != 0) throw std::runtime_error(path + ": bad magic");
  const uint32_t version = wire::get_u32(is, "range-image version");
  if (version != kRangeImageVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  RangeImage image;
  const uint32_t h = wire::get_u32(is, "height");
  const uint32_t w = wire::get_u32(is, "width");
  const uint32_t c = wire::get_u32(is, "channel count");
  if (h == 0 || w == 0 || h > 1u << 16 || w > 1u << 16)
    throw std::runtime_error(path + ": implausible dimensions");
  if (c != 2) throw std::runtime_error(path + ": expected 2 channels, got " + std::to_string(c));
  image.height = int(h);
  image.width = int(w);
  const size_t hw = image.pixel_count();
  image.depth.resize(hw);
  image.elevation.resize(hw);
  image.mask.resize(hw);
  wire::get_f32_array(is, image.depth.data(), hw, "depth plane");
  wire::get_f32_array(is, image.elevation.data(), hw, "elevation plane");
  wire::get_bytes(is, image.mask.data(), hw, "mask plane");
  unsigned char flag = 0;
  wire::get_bytes(is, &flag, 1, "label presence flag");
  if (flag > 1) throw std::runtime_error(path + ": bad label presence flag");
  image.has_labels = flag == 1;
  if (image.has_labels) {
    image.labels.resize(hw);
    wire::get_bytes(is, image.labels.data(), hw, "label plane");
  }
  wire::get_bytes(is, &flag, 1, "weight presence flag");
  if (flag > 1) throw std::runtime_error(path + ": bad weight presence flag");
  image.has_weights = flag == 1;
  if (image.has_weights) {
    image.weights.resize(hw);
    wire::get_f32_array(is, image.weights.data(), hw, "weight plane");
  }
  wire::expect_eof(is, "range-image payload");
  try {
    validate_range_image(image);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return image;
}

// --- manifest -------------------------------------------------------------------

std::vector<int> DatasetManifest::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < ids.size(); ++i)
    if (!is_val[i]) out.push_back(int(i));
  return out;
}

std::vector<int> DatasetManifest::val_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < ids.size(); ++i)
    if (is_val[i]) out.push_back(int(i));
  return out;
}

std::string DatasetManifest::sample_path(int index) const {
  return (fs::path(root) / (ids[size_t(index)] + ".rimg")).string();
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  if (m.ids.size() != m.is_val.size()) throw std::invalid_argument("write_manifest: ids/split mismatch");
  if (int(m.class_names.size()) != m.num_classes ||
      int(m.train_class_pixels.size()) != m.num_classes || int(m.class_weights.size()) != m.num_classes)
    throw std::invalid_argument("write_manifest: class table length mismatch");
  for (const std::string& id : m.ids)
    if (id.empty() || id.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("write_manifest: sample id '" + id + "' has whitespace");
  std::ofstream os = open_out(path);
  os << "riunet-manifest 1\n";
  os << "width " << m.projection.width << "\n";
  os << "height " << m.projection.height << "\n";
  os << "theta_min " << fmt_number(m.projection.theta_min) << "\n";
  os << "theta_max " << fmt_number(m.projection.theta_max) << "\n";
  os << "phi_min " << fmt_number(m.projection.phi_min) << "\n";
  os << "phi_max " << fmt_number(m.projection.phi_max) << "\n";
  os << "classes " << m.num_classes << "\n";
  for (int k = 0; k < m.num_classes; ++k) os << "class " << k << " " << m.class_names[size_t(k)] << "\n";
  for (int ch = 0; ch < 2; ++ch) os << "mean " << ch << " " << fmt_number(m.stats.mean[ch]) << "\n";
  for (int ch = 0; ch < 2; ++ch) os << "std " << ch << " " << fmt_number(m.stats.stdev[ch]) << "\n";
  for (int k = 0; k < m.num_classes; ++k)
    os << "class_pixels " << k << " " << m.train_class_pixels[size_t(k)] << "\n";
  for (int k = 0; k < m.num_classes; ++k)
    os << "class_weight " << k << " " << fmt_number(m.class_weights[size_t(k)]) << "\n";
  os << "samples " << m.ids.size() << "\n";
  for (size_t i = 0; i < m.ids.size(); ++i)
    os << "sample " << m.ids[i] << " " << (m.is_val[i] ? "val" : "train") << "\n";
  finish(os, path);
}

namespace {

struct LineReader {
  std::istream& is;
  const std::string& path;
  int line_no = 0;

  std::vector<std::string> next(const char* expected_key) {
    std::string line;
    if (!std::getline(is, line))
      throw std::runtime_error(path + ": truncated manifest, expected '" + expected_key + "'");
    ++line_no;
    std::vector<std::string> tokens;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty() || tokens[0] != expected_key)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected '" + expected_key + "'");
    return tokens;
  }
};

template <class T>
T parse_number(const std::string& s, const std::string& path) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(path + ": bad number '" + s + "'");
  return v;
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is = open_in(path);
  LineReader reader{is, path};
  auto field = [&](const char* key, size_t arity) {
    auto tokens = reader.next(key);
    if (tokens.size() != arity + 1)
      throw std::runtime_error(path + ": field '" + std::string(key) + "' expects " + std::to_string(arity) +
                               " values");
    return tokens;
  };

  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";

  auto header = field("riunet-manifest", 1);
  if (header[1] != "1") throw std::runtime_error(path + ": unsupported manifest version " + header[1]);
  m.projection.width = parse_number<int>(field("width", 1)[1], path);
  m.projection.height = parse_number<int>(field("height", 1)[1], path);
  m.projection.theta_min = parse_number<double>(field("theta_min", 1)[1], path);
  m.projection.theta_max = parse_number<double>(field("theta_max", 1)[1], path);
  m.projection.phi_min = parse_number<double>(field("phi_min", 1)[1], path);
  m.projection.phi_max = parse_number<double>(field("phi_max", 1)[1], path);
  m.projection.validate();
  m.num_classes = parse_number<int>(field("classes", 1)[1], path);
  if (m.num_classes < 2 || m.num_classes > 255) throw std::runtime_error(path + ": bad class count");
  m.class_names.resize(size_t(m.num_classes));
  for (int k = 0; k < m.num_classes; ++k) {
    auto tokens = field("class", 2);
    if (parse_number<int>(tokens[1], path) != k) throw std::runtime_error(path + ": class ids must be 0..K-1 in order");
    m.class_names[size_t(k)] = tokens[2];
  }
  for (int ch = 0; ch < 2; ++ch) {
    auto tokens = field("mean", 2);
    if (parse_number<int>(tokens[1], path) != ch) throw std::runtime_error(path + ": mean channels out of order");
    m.stats.mean[ch] = parse_number<float>(tokens[2], path);
  }
  for (int ch = 0; ch < 2; ++ch) {
    auto tokens = field("std", 2);
    if (parse_number<int>(tokens[1], path) != ch) throw std::runtime_error(path + ": std channels out of order");
    m.stats.stdev[ch] = parse_number<float>(tokens[2], path);
    if (!(m.stats.stdev[ch] > 0)) throw std::runtime_error(path + ": channel std must be positive");
  }
  m.train_class_pixels.resize(size_t(m.num_classes));
  for (int k = 0; k < m.num_classes; ++k) {
    auto tokens = field("class_pixels", 2);
    if (parse_number<int>(tokens[1], path) != k) throw std::runtime_error(path + ": class_pixels out of order");
    m.train_class_pixels[size_t(k)] = parse_number<int64_t>(tokens[2], path);
  }
  m.class_weights.resize(size_t(m.num_classes));
  for (int k = 0; k < m.num_classes; ++k) {
    auto tokens = field("class_weight", 2);
    if (parse_number<int>(tokens[1], path) != k) throw std::runtime_error(path + ": class_weight out of order");
    m.class_weights[size_t(k)] = parse_number<float>(tokens[2], path);
  }
  const size_t count = parse_number<size_t>(field("samples", 1)[1], path);
  if (count > 1u << 24) throw std::runtime_error(path + ": implausible sample count");
  m.ids.reserve(count);
  m.is_val.reserve(count);
  std::set<std::string> seen;
  for (size_t i = 0; i < count; ++i) {
    auto tokens = field("sample", 2);
    if (!seen.insert(tokens[1]).second) throw std::runtime_error(path + ": duplicate sample id " + tokens[1]);
    if (tokens[2] != "train" && tokens[2] != "val")
      throw std::runtime_error(path + ": bad split '" + tokens[2] + "'");
    m.ids.push_back(tokens[1]);
    m.is_val.push_back(tokens[2] == "val" ? 1 : 0);
  }
  std::string extra;
  while (std::getline(is, extra))
    if (!extra.empty()) throw std::runtime_error(path + ": trailing content '" + extra + "'");
  return m;
}

// --- dataset build ------------------------------------------------------------------

DatasetManifest build_dataset(const std::vector<std::string>& ids, const std::vector<PointCloud>& clouds,
                              const DatasetBuildConfig& cfg, const std::string& out_dir) {
  if (ids.size() != clouds.size()) throw std::invalid_argument("build_dataset: ids/clouds length mismatch");
  if (ids.empty()) throw std::invalid_argument("build_dataset: no samples");
  cfg.projection.validate();
  if (!(cfg.val_fraction >= 0 && cfg.val_fraction < 1))
    throw std::invalid_argument("build_dataset: val_fraction must be in [0,1)");
  {
    std::set<std::string> seen;
    for (const std::string& id : ids)
      if (!seen.insert(id).second) throw std::invalid_argument("build_dataset: duplicate id " + id);
  }

  DatasetManifest m;
  m.root = out_dir;
  m.ids = ids;
  m.projection = cfg.projection;
  m.num_classes = cfg.num_classes;
  m.class_names = cfg.class_names.empty() ? default_class_names() : cfg.class_names;
  if (int(m.class_names.size()) != m.num_classes)
    throw std::invalid_argument("build_dataset: class name count != num_classes");

  std::vector<RangeImage> images;
  images.reserve(clouds.size());
  for (size_t i = 0; i < clouds.size(); ++i) {
    if (!clouds[i].has_labels()) throw std::invalid_argument("build_dataset: cloud " + ids[i] + " has no labels");
    images.push_back(project(clouds[i], cfg.projection));
    for (uint8_t l : images.back().labels)
      if (l >= cfg.num_classes)
        throw std::invalid_argument("build_dataset: label " + std::to_string(l) + " in " + ids[i] +
                                    " exceeds class count");
  }

  // Seeded split: shuffle indices, last val_count entries become validation.
  const int n = int(ids.size());
  const int val_count = int(std::llround(cfg.val_fraction * n));
  if (val_count >= n) throw std::invalid_argument("build_dataset: split leaves no training samples");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  Rng split_rng(mix_seed(cfg.seed, 0x5b117ull));
  split_rng.shuffle(order);
  m.is_val.assign(size_t(n), 0);
  for (int i = n - val_count; i < n; ++i) m.is_val[size_t(order[size_t(i)])] = 1;

  // Train-split channel stats and class pixel counts over valid pixels.
  double sum[2] = {0, 0}, sumsq[2] = {0, 0};
  int64_t valid = 0;
  std::vector<int64_t> class_pixels(size_t(cfg.num_classes), 0);
  for (int i = 0; i < n; ++i) {
    if (m.is_val[size_t(i)]) continue;
    const RangeImage& img = images[size_t(i)];
    for (size_t p = 0; p < img.pixel_count(); ++p) {
      if (!img.mask[p]) continue;
      ++valid;
      sum[0] += img.depth[p];
      sumsq[0] += double(img.depth[p]) * img.depth[p];
      sum[1] += img.elevation[p];
      sumsq[1] += double(img.elevation[p]) * img.elevation[p];
      ++class_pixels[img.labels[p]];
    }
  }
  if (valid == 0) throw std::invalid_argument("build_dataset: train split has no valid pixels");
  for (int ch = 0; ch < 2; ++ch) {
    const double mean = sum[ch] / double(valid);
    const double var = std::max(sumsq[ch] / double(valid) - mean * mean, 0.0);
    m.stats.mean[ch] = float(mean);
    m.stats.stdev[ch] = float(std::max(std::sqrt(var), 1e-6));
  }
  m.train_class_pixels = class_pixels;

  std::vector<double> wc(size_t(cfg.num_classes), 1.0);
  if (cfg.weight_params.class_balance)
    wc = class_balance_weights(class_pixels, cfg.weight_params.balance_clamp_lo,
                               cfg.weight_params.balance_clamp_hi);
  m.class_weights.assign(wc.begin(), wc.end());

  fs::create_directories(out_dir);
  for (int i = 0; i < n; ++i) {
    RangeImage& img = images[size_t(i)];
    img.weights = boundary_weight_map(img.labels, img.mask, img.height, img.width, cfg.weight_params, wc);
    img.has_weights = true;
    img.index_map.clear();  // not part of the stored sample
    write_range_image(m.sample_path(i), img);
  }
  write_manifest((fs::path(out_dir) / "manifest.txt").string(), m);
  return m;
}

// --- batching ---------------------------------------------------------------------

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& indices, int batch_size,
                                            uint64_t seed, int64_t epoch) {
  if (batch_size <= 0) throw std::invalid_argument("epoch_batches: batch_size must be positive");
  if (indices.empty()) throw std::invalid_argument("epoch_batches: empty split");
  std::vector<int> order = indices;
  Rng rng(mix_seed(mix_seed(seed, 0xba7c4ull), uint64_t(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
    const size_t stop = std::min(order.size(), start + size_t(batch_size));
    batches.emplace_back(order.begin() + long(start), order.begin() + long(stop));
  }
  return batches;
}

}  // namespace riunet
