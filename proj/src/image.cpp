#include "adunet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "adunet/kernels.hpp"

namespace adunet {
namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

void check_rank3(const Tensor<float>& t, std::int64_t channels, const char* what) {
  if (t.rank() != 3 || t.dim(0) != channels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     shape_string(t.shape()));
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str()))
    throw DataError("cannot decode " + path.string() + ": " + png.image.message);
  png.image.format = PNG_FORMAT_RGB;
  const std::size_t h = png.image.height, w = png.image.width;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr))
    throw DataError("cannot decode " + path.string() + ": " + png.image.message);
  Image out({3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i)
      out[static_cast<std::int64_t>(c * h * w + i)] = static_cast<float>(buffer[i * 3 + c]) / 255.0f;
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
  check_rank3(image, 3, "write_png_rgb");
  const std::size_t h = static_cast<std::size_t>(image.dim(1)), w = static_cast<std::size_t>(image.dim(2));
  std::vector<png_byte> buffer(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) {
      const float v = std::clamp(image[static_cast<std::int64_t>(c * h * w + i)], 0.0f, 1.0f);
      buffer[i * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(w);
  png.image.height = static_cast<png_uint_32>(h);
  png.image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw DataError("cannot write " + path.string() + ": " + png.image.message);
}

void write_png_gray16(const std::filesystem::path& path, const Tensor<float>& map) {
  check_rank3(map, 1, "write_png_gray16");
  std::vector<png_uint_16> buffer(static_cast<std::size_t>(map.numel()));
  for (std::size_t i = 0; i < buffer.size(); ++i)
    buffer[i] = static_cast<png_uint_16>(
        std::lround(std::clamp(map[static_cast<std::int64_t>(i)], 0.0f, 1.0f) * 65535.0f));
  PngImage png;
  png.image.width = static_cast<png_uint_32>(map.dim(2));
  png.image.height = static_cast<png_uint_32>(map.dim(1));
  png.image.format = PNG_FORMAT_LINEAR_Y;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw DataError("cannot write " + path.string() + ": " + png.image.message);
}

Tensor<float> read_png_gray16(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str()))
    throw DataError("cannot decode " + path.string() + ": " + png.image.message);
  png.image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<png_uint_16> buffer(PNG_IMAGE_SIZE(png.image) / 2);
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr))
    throw DataError("cannot decode " + path.string() + ": " + png.image.message);
  Tensor<float> out({1, static_cast<std::int64_t>(png.image.height), static_cast<std::int64_t>(png.image.width)});
  for (std::size_t i = 0; i < buffer.size(); ++i) out[static_cast<std::int64_t>(i)] = buffer[i] / 65535.0f;
  return out;
}

template <typename T>
Tensor<T> resize_image(const Tensor<T>& image, std::int64_t height, std::int64_t width) {
  if (image.rank() != 3) throw ShapeError("resize_image: expected [C,H,W], got " + shape_string(image.shape()));
  if (height < 1 || width < 1) throw ShapeError("resize_image: target size must be positive");
  const Tensor<T> out =
      kernels::resize_bilinear(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), height, width);
  return out.reshaped({image.dim(0), height, width});
}

namespace {
std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}
}  // namespace

template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& image, std::int64_t multiple) {
  if (image.rank() != 3) throw ShapeError("reflect_pad: expected [C,H,W], got " + shape_string(image.shape()));
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::int64_t ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor<T> out({c, ph, pw});
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < ph; ++y) {
      const std::int64_t sy = mirror(y, h);
      for (std::int64_t x = 0; x < pw; ++x) out[(k * ph + y) * pw + x] = image[(k * h + sy) * w + mirror(x, w)];
    }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::int64_t height, std::int64_t width) {
  if (image.rank() != 3 || height > image.dim(1) || width > image.dim(2))
    throw ShapeError("crop: cannot take " + std::to_string(height) + "x" + std::to_string(width) + " from " +
                     shape_string(image.shape()));
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (height == h && width == w) return image;
  Tensor<T> out({c, height, width});
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < height; ++y)
      std::copy_n(image.data() + (k * h + y) * w, width, out.data() + (k * height + y) * width);
  return out;
}

template <typename T>
Tensor<T> clamp01(Tensor<T> image) {
  for (auto& v : image.values()) v = std::clamp(v, T(0), T(1));
  return image;
}

template Tensor<float> resize_image(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> resize_image(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> reflect_pad_to_multiple(const Tensor<float>&, std::int64_t);
template Tensor<double> reflect_pad_to_multiple(const Tensor<double>&, std::int64_t);
template Tensor<float> crop(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> crop(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> clamp01(Tensor<float>);
template Tensor<double> clamp01(Tensor<double>);

}  // namespace adunet
