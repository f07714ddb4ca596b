#pragma once

#include "irra/tensor.hpp"

#include <cstddef>
#include <vector>

namespace irra {

/// Height x width x channels image, row-major with interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t row, std::size_t col, std::size_t ch) {
    return pixels[(row * width + col) * channels + ch];
  }
  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return pixels[(row * width + col) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

/// Splits an image into non-overlapping P x P patches in raster order.
/// Row i of the result is patch i flattened as (patch row, patch col, channel).
/// Throws ConfigError unless P divides both height and width.
RowMatrix patchify(const Image& image, std::size_t patch);

/// Inverse of patchify.
Image unpatchify(const RowMatrix& patches, std::size_t height, std::size_t width,
                 std::size_t channels, std::size_t patch);

}  // namespace irra
