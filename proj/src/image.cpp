#include "irra/image.hpp"

#include "irra/errors.hpp"

namespace irra {

namespace {

void check_grid(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not tile a " +
                      std::to_string(height) + "x" + std::to_string(width) + " image");
  }
}

}  // namespace

RowMatrix patchify(const Image& image, std::size_t patch) {
  check_grid(image.height, image.width, patch);
  const auto grid_w = image.width / patch;
  const auto count = (image.height / patch) * grid_w;
  const auto c = image.channels;
  RowMatrix out(count, patch * patch * c);
  for (std::size_t n = 0; n < count; ++n) {
    const auto r0 = (n / grid_w) * patch;
    const auto c0 = (n % grid_w) * patch;
    std::size_t k = 0;
    for (std::size_t r = 0; r < patch; ++r) {
      for (std::size_t col = 0; col < patch; ++col) {
        for (std::size_t ch = 0; ch < c; ++ch) out(n, k++) = image.at(r0 + r, c0 + col, ch);
      }
    }
  }
  return out;
}

Image unpatchify(const RowMatrix& patches, std::size_t height, std::size_t width,
                 std::size_t channels, std::size_t patch) {
  check_grid(height, width, patch);
  const auto grid_w = width / patch;
  const auto count = (height / patch) * grid_w;
  if (static_cast<std::size_t>(patches.rows()) != count ||
      static_cast<std::size_t>(patches.cols()) != patch * patch * channels) {
    throw ShapeError("unpatchify: patch matrix does not match image geometry");
  }
  Image img(height, width, channels);
  for (std::size_t n = 0; n < count; ++n) {
    const auto r0 = (n / grid_w) * patch;
    const auto c0 = (n % grid_w) * patch;
    std::size_t k = 0;
    for (std::size_t r = 0; r < patch; ++r) {
      for (std::size_t col = 0; col < patch; ++col) {
        for (std::size_t ch = 0; ch < channels; ++ch) img.at(r0 + r, c0 + col, ch) = patches(n, k++);
      }
    }
  }
  return img;
}

}  // namespace irra
