#pragma once

// Single-channel rasters and binary PGM (P5) I/O.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mtsgl/error.hpp"

namespace mtsgl {

template <typename T>
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> pixels;

  Raster() = default;
  Raster(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), pixels(w * h, fill) {}

  T& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool contains(long x, long y) const {
    return x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height);
  }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using GrayImage = Raster<std::uint8_t>;
using FloatImage = Raster<double>;

/// Row-major booleans; one byte per pixel (0 or 1).
struct BinaryMask : Raster<std::uint8_t> {
  using Raster<std::uint8_t>::Raster;

  bool get(std::size_t x, std::size_t y) const { return at(x, y) != 0; }
  void set(std::size_t x, std::size_t y, bool v) { at(x, y) = v ? 1 : 0; }
  std::size_t area() const {
    std::size_t n = 0;
    for (auto v : pixels) n += v != 0;
    return n;
  }
  bool empty_foreground() const { return area() == 0; }
};

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  detail::require(static_cast<bool>(os), "write_pgm", "cannot open '", path, "'");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  detail::require(static_cast<bool>(os), "write_pgm", "write failed for '", path, "'");
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::require(static_cast<bool>(is), "read_pgm", "cannot open '", path, "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string comment;
        std::getline(is, comment);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  detail::require(token() == "P5", "read_pgm", "'", path, "' is not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    detail::require(std::stoul(token()) == 255, "read_pgm", "'", path,
                    "' is not an 8-bit PGM");
  } catch (const std::logic_error&) {
    detail::fail("read_pgm", "malformed header in '", path, "'");
  }
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  detail::require(is.gcount() == static_cast<std::streamsize>(img.pixels.size()), "read_pgm",
                  "truncated pixel data in '", path, "'");
  return img;
}

/// Masks are stored as 0/255 graymaps.
inline GrayImage mask_to_gray(const BinaryMask& m) {
  GrayImage g(m.width, m.height);
  for (std::size_t i = 0; i < m.size(); ++i) g.pixels[i] = m.pixels[i] ? 255 : 0;
  return g;
}

inline BinaryMask gray_to_mask(const GrayImage& g) {
  BinaryMask m(g.width, g.height);
  for (std::size_t i = 0; i < g.size(); ++i) m.pixels[i] = g.pixels[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace mtsgl
