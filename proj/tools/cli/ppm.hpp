#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg::cli {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline constexpr double kPerturbationGain = 16.0;

std::uint8_t to_byte(double v);

// [C,H,W] image in [0,1]; one channel is shown as gray.
RgbImage image_to_rgb(const Tensor& image);
// Each pixel shows 0.5 + gain * (x_adv - x), clipped to [0,1].
RgbImage perturbation_to_rgb(const Tensor& x_adv, const Tensor& x, double gain = kPerturbationGain);
// Fixed colour per class id.
RgbImage labels_to_rgb(const LabelMap& labels);

// Binary P6 with maxval 255.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

}  // namespace tseg::cli
