#include "hle/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "hle/numeric.hpp"

namespace hle {

namespace {

std::uint8_t to_byte(double t01) {
  const double v = std::clamp(t01, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(v));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, int width, int height,
               std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("write_ppm: buffer size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw std::runtime_error("write_ppm: cannot open " + path.string());
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::filesystem::path> viz_embeddings(
    const FieldGrid& e, const std::filesystem::path& prefix) {
  std::vector<std::filesystem::path> written;
  const int groups = (e.channels + 2) / 3;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(e.pixels()) * 3);
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < e.pixels(); ++i) {
      const auto v = e.pixel(i);
      for (int c = 0; c < 3; ++c) {
        const int ch = g * 3 + c;
        const double x = ch < e.channels ? v[static_cast<std::size_t>(ch)] : -1.0;
        rgb[static_cast<std::size_t>(i) * 3 + c] = to_byte((x + 1.0) / 2.0);
      }
    }
    std::filesystem::path path = prefix;
    path += "." + std::to_string(g) + ".ppm";
    write_ppm(path, e.width, e.height, rgb);
    written.push_back(std::move(path));
  }
  return written;
}

void viz_scalar(const FieldGrid& g, double lo, double hi,
                const std::filesystem::path& path) {
  if (g.channels != 1)
    throw std::invalid_argument("viz_scalar: expected a 1-channel grid");
  if (!(hi > lo)) throw std::invalid_argument("viz_scalar: hi must exceed lo");
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(g.pixels()) * 3);
  for (int i = 0; i < g.pixels(); ++i) {
    const std::uint8_t b =
        to_byte((g.data[static_cast<std::size_t>(i)] - lo) / (hi - lo));
    rgb[static_cast<std::size_t>(i) * 3 + 0] = b;
    rgb[static_cast<std::size_t>(i) * 3 + 1] = b;
    rgb[static_cast<std::size_t>(i) * 3 + 2] = b;
  }
  write_ppm(path, g.width, g.height, rgb);
}

void viz_distance(const FieldGrid& e, int row, int col,
                  const std::filesystem::path& path) {
  if (row < 0 || row >= e.height || col < 0 || col >= e.width)
    throw std::invalid_argument("viz_distance: target pixel out of bounds");
  const auto target = e.pixel(row * e.width + col);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(e.pixels()) * 3);
  for (int i = 0; i < e.pixels(); ++i) {
    const double d = cosine_distance(e.pixel(i), target);
    const double t = 1.0 - d / 2.0;  // 1 at the target, 0 at the antipode
    rgb[static_cast<std::size_t>(i) * 3 + 0] = to_byte(t);
    rgb[static_cast<std::size_t>(i) * 3 + 1] = 0;
    rgb[static_cast<std::size_t>(i) * 3 + 2] = to_byte(1.0 - t);
  }
  write_ppm(path, e.width, e.height, rgb);
}

}  // namespace hle
