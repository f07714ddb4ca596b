#include "irra/data.hpp"

#include <algorithm>
#include <cmath>

namespace irra {

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        out.at(r, image.width - 1 - c, ch) = image.at(r, c, ch);
      }
    }
  }
  return out;
}

namespace {

Image pad_and_crop(const Image& image, std::size_t pad, Rng& rng) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
  const auto top = offset(rng);
  const auto left = offset(rng);
  Image out(image.height, image.width, image.channels, 0.0);
  for (std::size_t r = 0; r < image.height; ++r) {
    // Row r of the crop is row (top + r - pad) of the source.
    const auto src_r = static_cast<std::ptrdiff_t>(top + r) - static_cast<std::ptrdiff_t>(pad);
    if (src_r < 0 || src_r >= static_cast<std::ptrdiff_t>(image.height)) continue;
    for (std::size_t c = 0; c < image.width; ++c) {
      const auto src_c = static_cast<std::ptrdiff_t>(left + c) - static_cast<std::ptrdiff_t>(pad);
      if (src_c < 0 || src_c >= static_cast<std::ptrdiff_t>(image.width)) continue;
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        out.at(r, c, ch) = image.at(static_cast<std::size_t>(src_r), static_cast<std::size_t>(src_c), ch);
      }
    }
  }
  return out;
}

void random_erase(Image& image, Rng& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double area = static_cast<double>(image.height * image.width);
  // Up to ten attempts at a rectangle that fits, as in the usual recipe.
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target =
        area * (config.erase_min_area + (config.erase_max_area - config.erase_min_area) * unit(rng));
    const double log_lo = std::log(config.erase_min_aspect);
    const double aspect = std::exp(log_lo + (-2.0 * log_lo) * unit(rng));
    const auto h = static_cast<std::size_t>(std::round(std::sqrt(target * aspect)));
    const auto w = static_cast<std::size_t>(std::round(std::sqrt(target / aspect)));
    if (h == 0 || w == 0 || h >= image.height || w >= image.width) continue;
    std::uniform_int_distribution<std::size_t> top_d(0, image.height - h);
    std::uniform_int_distribution<std::size_t> left_d(0, image.width - w);
    const auto top = top_d(rng);
    const auto left = left_d(rng);
    for (std::size_t r = top; r < top + h; ++r) {
      for (std::size_t c = left; c < left + w; ++c) {
        for (std::size_t ch = 0; ch < image.channels; ++ch) image.at(r, c, ch) = unit(rng);
      }
    }
    return;
  }
}

}  // namespace

Image augment_image(const Image& image, Rng& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image out = unit(rng) < config.flip_prob ? flip_horizontal(image) : image;
  if (config.crop_padding > 0 && unit(rng) < config.crop_prob) out = pad_and_crop(out, config.crop_padding, rng);
  if (unit(rng) < config.erase_prob) random_erase(out, rng, config);
  return out;
}

}  // namespace irra
