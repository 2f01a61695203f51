#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "riunet/io.hpp"
#include "riunet/rng.hpp"
#include "riunet/synth.hpp"

using namespace riunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<unsigned> counter{std::random_device{}()};
    path = fs::temp_directory_path() / ("riunet_io_test_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

PointCloud random_cloud(Rng& rng, size_t n, bool labels) {
  PointCloud cloud;
  for (size_t i = 0; i < n; ++i) {
    cloud.points.push_back({float(rng.uniform(-40.0, 40.0)), float(rng.uniform(-40.0, 40.0)),
                            float(rng.uniform(-2.0, 4.0))});
    cloud.intensity.push_back(float(rng.uniform()));
    if (labels) cloud.labels.push_back(uint8_t(rng.uniform_int(4)));
  }
  return cloud;
}

RangeImage random_image(Rng& rng, int h, int w) {
  RangeImage img;
  img.height = h;
  img.width = w;
  const size_t npix = img.pixel_count();
  img.depth.assign(npix, 0);
  img.elevation.assign(npix, 0);
  img.mask.assign(npix, 0);
  img.labels.assign(npix, 0);
  img.weights.assign(npix, 0);
  img.has_labels = true;
  img.has_weights = true;
  for (size_t i = 0; i < npix; ++i) {
    if (rng.uniform() < 0.7) {
      img.mask[i] = 1;
      img.depth[i] = float(rng.uniform(0.5, 80.0));
      img.elevation[i] = float(rng.uniform(-3.0, 5.0));
      img.labels[i] = uint8_t(rng.uniform_int(4));
      img.weights[i] = float(rng.uniform(0.1, 12.0));
    }
  }
  return img;
}

}  // namespace

TEST_CASE("point clouds round trip bit-exactly") {
  TempDir dir;
  Rng rng(4401);
  auto cloud = random_cloud(rng, 10000, false);
  const auto path = dir.file("cloud.bin");
  write_point_cloud(path, cloud);
  auto loaded = read_point_cloud(path);
  REQUIRE(loaded.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(loaded.points[i].x == cloud.points[i].x);
    CHECK(loaded.points[i].y == cloud.points[i].y);
    CHECK(loaded.points[i].z == cloud.points[i].z);
    CHECK(loaded.intensity[i] == cloud.intensity[i]);
  }
  CHECK(fs::file_size(path) == cloud.size() * 16);

  write_point_cloud(path, loaded);
  CHECK(slurp(path) == slurp(path));
}

TEST_CASE("empty and tiny point cloud files") {
  TempDir dir;
  const auto path = dir.file("empty.bin");
  dump(path, {});
  auto empty = read_point_cloud(path);
  CHECK(empty.size() == 0);

  PointCloud two;
  two.points = {{1.5f, -2.0f, 0.25f}, {3.0f, 4.0f, 5.0f}};
  two.intensity = {0.5f, 0.75f};
  const auto p2 = dir.file("two.bin");
  write_point_cloud(p2, two);
  CHECK(fs::file_size(p2) == 32);
  auto loaded = read_point_cloud(p2);
  CHECK(loaded.points[1].y == 4.0f);
  CHECK(loaded.intensity[0] == 0.5f);
}

TEST_CASE("point cloud reader rejects malformed files") {
  TempDir dir;
  const auto path = dir.file("bad.bin");
  dump(path, std::vector<char>(20, 0));  // not a multiple of 16
  CHECK_THROWS_AS(read_point_cloud(path), std::runtime_error);

  std::vector<char> rec(16, 0);
  const uint32_t nan_bits = 0x7fc00000u;
  std::memcpy(rec.data() + 4, &nan_bits, 4);
  dump(path, rec);
  CHECK_THROWS_WITH_AS(read_point_cloud(path),
                       doctest::Contains("non-finite"), std::runtime_error);

  CHECK_THROWS_AS(read_point_cloud(dir.file("missing.bin")), std::runtime_error);
}

TEST_CASE("labels round trip and reject wide values") {
  TempDir dir;
  const auto path = dir.file("scan.label");
  std::vector<uint8_t> labels = {0, 1, 2, 3, 255, 0, 7};
  write_labels(path, labels);
  CHECK(fs::file_size(path) == labels.size() * 4);
  CHECK(read_labels(path) == labels);

  std::vector<char> raw(8, 0);
  const uint32_t wide = 256;
  std::memcpy(raw.data() + 4, &wide, 4);
  dump(path, raw);
  CHECK_THROWS_WITH_AS(read_labels(path), doctest::Contains("1"), std::runtime_error);

  dump(path, std::vector<char>(6, 0));
  CHECK_THROWS_AS(read_labels(path), std::runtime_error);
}

TEST_CASE("range images round trip bit-identically") {
  TempDir dir;
  Rng rng(4402);

  RangeImage one;
  one.height = 1;
  one.width = 1;
  one.depth = {4.5f};
  one.elevation = {-1.0f};
  one.mask = {1};
  const auto p1 = dir.file("one.rimg");
  write_range_image(p1, one);
  auto l1 = read_range_image(p1);
  CHECK(l1.depth == one.depth);
  CHECK(l1.elevation == one.elevation);
  CHECK(l1.mask == one.mask);
  CHECK_FALSE(l1.has_labels);
  CHECK_FALSE(l1.has_weights);

  auto img = random_image(rng, 64, 512);
  const auto path = dir.file("image.rimg");
  write_range_image(path, img);
  auto loaded = read_range_image(path);
  CHECK(loaded.height == img.height);
  CHECK(loaded.width == img.width);
  CHECK(loaded.depth == img.depth);
  CHECK(loaded.elevation == img.elevation);
  CHECK(loaded.mask == img.mask);
  CHECK(loaded.labels == img.labels);
  CHECK(loaded.weights == img.weights);

  const auto copy = dir.file("copy.rimg");
  write_range_image(copy, loaded);
  CHECK(slurp(copy) == slurp(path));
}

TEST_CASE("range image reader rejects corruption") {
  TempDir dir;
  Rng rng(4403);
  auto img = random_image(rng, 8, 16);
  const auto path = dir.file("image.rimg");
  write_range_image(path, img);
  auto bytes = slurp(path);

  auto bad = bytes;
  bad[0] = 'X';
  dump(dir.file("magic.rimg"), bad);
  CHECK_THROWS_WITH_AS(read_range_image(dir.file("magic.rimg")), doctest::Contains("magic"),
                       std::runtime_error);

  bad = bytes;
  bad[4] = 9;  // version field
  dump(dir.file("version.rimg"), bad);
  CHECK_THROWS_WITH_AS(read_range_image(dir.file("version.rimg")), doctest::Contains("version"),
                       std::runtime_error);

  bad = bytes;
  bad.resize(bytes.size() - 7);
  dump(dir.file("trunc.rimg"), bad);
  CHECK_THROWS_WITH_AS(read_range_image(dir.file("trunc.rimg")), doctest::Contains("truncated"),
                       std::runtime_error);

  bad = bytes;
  bad.push_back('\0');
  dump(dir.file("trail.rimg"), bad);
  CHECK_THROWS_WITH_AS(read_range_image(dir.file("trail.rimg")), doctest::Contains("trailing"),
                       std::runtime_error);

  // A stored image violating the mask/fill coupling is rejected at read time.
  auto broken = img;
  bool flipped = false;
  for (size_t i = 0; i < broken.pixel_count() && !flipped; ++i)
    if (!broken.mask[i]) {
      broken.depth[i] = 3.0f;
      flipped = true;
    }
  REQUIRE(flipped);
  CHECK_THROWS_AS(write_range_image(dir.file("broken.rimg"), broken), std::runtime_error);
}

TEST_CASE("manifest round trips byte-identically") {
  TempDir dir;
  DatasetManifest m;
  m.root = dir.path.string();
  m.ids = {"scene0000", "scene0001", "scene0002"};
  m.is_val = {0, 1, 0};
  m.num_classes = 4;
  m.class_names = default_class_names();
  m.stats.mean[0] = 17.25f;
  m.stats.stdev[0] = 9.5f;
  m.stats.mean[1] = -1.133333f;
  m.stats.stdev[1] = 0.87f;
  m.train_class_pixels = {120000, 4000, 900, 1100};
  m.class_weights = {0.61f, 5.0f, 8.25f, 7.75f};

  const auto path = dir.file("manifest.txt");
  write_manifest(path, m);
  auto loaded = read_manifest(path);
  CHECK(loaded.root == dir.path.string());
  CHECK(loaded.ids == m.ids);
  CHECK(loaded.is_val == m.is_val);
  CHECK(loaded.class_names == m.class_names);
  CHECK(loaded.stats.mean[1] == m.stats.mean[1]);
  CHECK(loaded.train_class_pixels == m.train_class_pixels);
  CHECK(loaded.class_weights == m.class_weights);
  CHECK(loaded.projection.width == m.projection.width);
  CHECK(loaded.projection.theta_min == m.projection.theta_min);

  const auto copy = dir.file("copy.txt");
  write_manifest(copy, loaded);
  CHECK(slurp(copy) == slurp(path));

  CHECK(loaded.train_indices() == std::vector<int>({0, 2}));
  CHECK(loaded.val_indices() == std::vector<int>({1}));
  CHECK(loaded.sample_path(1) == (dir.path / "scene0001.rimg").string());
}

TEST_CASE("manifest parser rejects structural damage") {
  TempDir dir;
  DatasetManifest m;
  m.ids = {"a", "b"};
  m.is_val = {0, 0};
  m.class_names = default_class_names();
  m.train_class_pixels = {1, 1, 1, 1};
  m.class_weights = {1, 1, 1, 1};
  const auto path = dir.file("manifest.txt");
  write_manifest(path, m);
  const auto bytes = slurp(path);
  const std::string text(bytes.begin(), bytes.end());

  auto write_text = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir.file(name));
    out << body;
    return dir.file(name);
  };

  CHECK_THROWS_AS(read_manifest(write_text("h.txt", "bogus header\n")), std::runtime_error);
  CHECK_THROWS_AS(read_manifest(write_text("t.txt", text + "extra junk\n")), std::runtime_error);
  auto missing = text.substr(0, text.rfind("sample "));
  CHECK_THROWS_AS(read_manifest(write_text("m.txt", missing)), std::runtime_error);
  auto dup = text;
  const auto pos = dup.find("sample a train");
  dup.replace(pos, 14, "sample b train");
  CHECK_THROWS_AS(read_manifest(write_text("d.txt", dup)), std::runtime_error);
}

TEST_CASE("build_dataset writes a loadable, reproducible dataset") {
  TempDir dir_a, dir_b;
  std::vector<std::string> ids;
  std::vector<PointCloud> clouds;
  for (int i = 0; i < 10; ++i) {
    SceneSpec spec;
    spec.seed = mix_seed(91, uint64_t(i));
    spec.beams.width = 64;
    spec.beams.height = 16;
    char name[32];
    std::snprintf(name, sizeof name, "scene%04d", i);
    ids.push_back(name);
    clouds.push_back(generate_scene(spec));
  }
  DatasetBuildConfig cfg;
  cfg.projection.width = 64;
  cfg.projection.height = 16;
  cfg.val_fraction = 0.2;
  cfg.seed = 19;

  auto manifest = build_dataset(ids, clouds, cfg, dir_a.path.string());
  CHECK(manifest.ids.size() == 10);
  CHECK(manifest.val_indices().size() == 2);
  CHECK(manifest.train_indices().size() == 8);

  // Split is a disjoint cover.
  std::set<int> seen;
  for (int i : manifest.train_indices()) seen.insert(i);
  for (int i : manifest.val_indices()) seen.insert(i);
  CHECK(seen.size() == 10);

  // Stats recompute from the stored train samples.
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  int64_t count = 0;
  for (int idx : manifest.train_indices()) {
    auto img = read_range_image(manifest.sample_path(idx));
    REQUIRE(img.has_labels);
    REQUIRE(img.has_weights);
    for (size_t px = 0; px < img.pixel_count(); ++px) {
      if (!img.mask[px]) continue;
      sum[0] += img.depth[px];
      sum[1] += img.elevation[px];
      sq[0] += double(img.depth[px]) * img.depth[px];
      sq[1] += double(img.elevation[px]) * img.elevation[px];
      ++count;
    }
  }
  REQUIRE(count > 0);
  for (int c = 0; c < 2; ++c) {
    const double mean = sum[c] / double(count);
    const double var = sq[c] / double(count) - mean * mean;
    CHECK(double(manifest.stats.mean[c]) == doctest::Approx(mean).epsilon(1e-5));
    CHECK(double(manifest.stats.stdev[c]) == doctest::Approx(std::sqrt(var)).epsilon(1e-4));
  }

  // Rebuild into a second directory: every file byte-identical.
  auto again = build_dataset(ids, clouds, cfg, dir_b.path.string());
  CHECK(again.is_val == manifest.is_val);
  for (const auto& id : ids) {
    CHECK(slurp((dir_a.path / (id + ".rimg")).string()) ==
          slurp((dir_b.path / (id + ".rimg")).string()));
  }
  CHECK(slurp((dir_a.path / "manifest.txt").string()) ==
        slurp((dir_b.path / "manifest.txt").string()));

  // Manifest reloads to the same state it was returned in.
  auto reloaded = read_manifest((dir_a.path / "manifest.txt").string());
  CHECK(reloaded.ids == manifest.ids);
  CHECK(reloaded.is_val == manifest.is_val);
  CHECK(reloaded.stats.mean[0] == manifest.stats.mean[0]);
  CHECK(reloaded.class_weights == manifest.class_weights);

  std::vector<std::string> dup_ids = {"x", "x"};
  std::vector<PointCloud> dup_clouds = {clouds[0], clouds[1]};
  CHECK_THROWS_AS(build_dataset(dup_ids, dup_clouds, cfg, dir_b.path.string()), std::invalid_argument);
}

TEST_CASE("epoch batches shuffle deterministically and keep stragglers") {
  std::vector<int> indices = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto batches = epoch_batches(indices, 4, 99, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 3);

  std::multiset<int> seen;
  for (const auto& b : batches)
    for (int i : b) seen.insert(i);
  CHECK(seen == std::multiset<int>(indices.begin(), indices.end()));

  auto same = epoch_batches(indices, 4, 99, 0);
  CHECK(same == batches);
  auto shifted = epoch_batches(indices, 4, 99, 1);
  CHECK(shifted != batches);
  auto reseeded = epoch_batches(indices, 4, 100, 0);
  CHECK(reseeded != batches);
}

TEST_CASE("assemble_batch stacks normalized samples") {
  Rng rng(4404);
  auto a = random_image(rng, 8, 16);
  auto b = random_image(rng, 8, 16);
  ChannelStats stats;
  stats.mean[0] = 20.0f;
  stats.stdev[0] = 10.0f;
  stats.mean[1] = 0.0f;
  stats.stdev[1] = 2.0f;

  auto batch = assemble_batch<double>({&a, &b}, stats, {"a", "b"});
  REQUIRE(batch.input.shape() == std::vector<Index>({2, 2, 8, 16}));
  CHECK(batch.height == 8);
  CHECK(batch.width == 16);
  CHECK(batch.labels.size() == 2 * 8 * 16);
  CHECK(batch.mask.size() == 2 * 8 * 16);
  CHECK(batch.weights.size() == 2 * 8 * 16);
  CHECK(batch.ids == std::vector<std::string>({"a", "b"}));

  const Index hw = 8 * 16;
  for (Index i = 0; i < hw; ++i) {
    if (a.mask[size_t(i)]) {
      CHECK(batch.input.data()[i] ==
            doctest::Approx((double(a.depth[size_t(i)]) - 20.0) / 10.0).epsilon(1e-6));
      CHECK(batch.labels[size_t(i)] == int32_t(a.labels[size_t(i)]));
      CHECK(batch.weights[i] == doctest::Approx(double(a.weights[size_t(i)])).epsilon(1e-6));
    } else {
      CHECK(batch.input.data()[i] == 0.0);
    }
    if (b.mask[size_t(i)])
      CHECK(batch.input.data()[2 * hw + i] ==
            doctest::Approx((double(b.depth[size_t(i)]) - 20.0) / 10.0).epsilon(1e-6));
  }

  auto plain = a;
  plain.has_weights = false;
  plain.weights.clear();
  CHECK_THROWS_AS(assemble_batch<double>({&plain}, stats), std::runtime_error);
  auto mismatched = random_image(rng, 4, 16);
  CHECK_THROWS_AS(assemble_batch<double>({&a, &mismatched}, stats), std::runtime_error);
}
