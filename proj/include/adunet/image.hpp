#pragma once

#include <filesystem>

#include "adunet/tensor.hpp"

namespace adunet {

/// Images are [3,H,W] float tensors in [0,1]; depth maps are [1,H,W].
using Image = Tensor<float>;

/// Decodes any PNG to 8-bit RGB and scales by 1/255. Throws DataError naming
/// the path when the file cannot be decoded.
Image read_png_rgb(const std::filesystem::path& path);

/// Clamps to [0,1] and rounds to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const Image& image);

/// 16-bit grayscale, values in [0,1].
void write_png_gray16(const std::filesystem::path& path, const Tensor<float>& map);
Tensor<float> read_png_gray16(const std::filesystem::path& path);

/// Bilinear resize of a [C,H,W] tensor (half-pixel centres).
template <typename T>
Tensor<T> resize_image(const Tensor<T>& image, std::int64_t height, std::int64_t width);

/// Mirror padding (edge pixel not repeated) on the bottom and right so both
/// spatial sizes become multiples of `multiple`.
template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& image, std::int64_t multiple);

/// Top-left [C,height,width] window.
template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::int64_t height, std::int64_t width);

template <typename T>
Tensor<T> clamp01(Tensor<T> image);

}  // namespace adunet
