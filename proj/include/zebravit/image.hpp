#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace zebravit {

/// 8-bit interleaved image, row-major, channel-last.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c = 3)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8-bit colour PNG as RGB (alpha, if any, is composited away).
inline Image8 read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError("cannot read PNG " + path.string() + ": " + img.message);
  if ((img.format & PNG_FORMAT_FLAG_COLOR) == 0) {
    png_image_free(&img);
    throw ImageError("PNG " + path.string() + " is not an RGB image");
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
    throw ImageError("cannot decode PNG " + path.string() + ": " + img.message);
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 3 && image.channels != 1) throw ImageError("write_png supports 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw ImageError("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace zebravit
