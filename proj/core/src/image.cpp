#include "cliptime/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>

#include "cliptime/common.hpp"

namespace cliptime {
namespace {

png_image make_descriptor(const Image& image) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_RGB;
  return desc;
}

void check_shape(const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != std::size_t(image.width) * image.height * 3) {
    throw ShapeError("image buffer does not match its declared dimensions");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  check_shape(image);
  png_image desc = make_descriptor(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.rgb.data(), 0,
                                 nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.rgb.data(),
                                 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.c_str())) {
    throw DataError("cannot read image " + path.string() + ": " + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(desc.width), static_cast<int>(desc.height));
  if (!png_image_finish_read(&desc, nullptr, image.rgb.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw DataError("cannot decode image " + path.string() + ": " + desc.message);
  }
  return image;
}

}  // namespace cliptime
