#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cliptime {

/// Interleaved 8-bit RGB raster, row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // width * height * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(std::size_t(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb[(std::size_t(y) * width + x) * 3];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Lossless PNG I/O. Reading converts any PNG colour type to 8-bit RGB.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace cliptime
