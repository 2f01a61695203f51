#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "riunet/projection.hpp"

namespace riunet {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

// background mid-gray, cars blue, pedestrians lime, cyclists red; classes
// beyond the table cycle through spares. Invalid pixels render black.
inline Rgb class_color(int label) {
  static const Rgb table[] = {
      {128, 128, 128},  // background
      {0, 0, 255},      // car
      {0, 255, 0},      // pedestrian
      {255, 0, 0},      // cyclist
      {255, 255, 0}, {255, 0, 255}, {0, 255, 255}, {255, 128, 0},
  };
  return table[label % int(sizeof table / sizeof table[0])];
}

inline void write_ppm(const std::string& path, const std::vector<Rgb>& pixels, int height, int width) {
  if (int64_t(pixels.size()) != int64_t(height) * width)
    throw std::invalid_argument("write_ppm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  for (const Rgb& p : pixels) {
    const char raw[3] = {char(p.r), char(p.g), char(p.b)};
    os.write(raw, 3);
  }
  os.flush();
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

// Label grid to image; mask=0 pixels go black.
inline void render_labels(const std::string& path, const RangeImage& image) {
  if (!image.has_labels) throw std::invalid_argument("render_labels: image has no labels");
  std::vector<Rgb> pixels(image.pixel_count());
  for (size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = image.mask[i] ? class_color(image.labels[i]) : Rgb{0, 0, 0};
  write_ppm(path, pixels, image.height, image.width);
}

}  // namespace riunet
