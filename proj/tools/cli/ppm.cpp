#include "ppm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "tseg/error.hpp"

namespace tseg::cli {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kLabelColors{{
    {0, 0, 0},
    {230, 25, 75},
    {60, 180, 75},
    {0, 130, 200},
    {255, 225, 25},
    {145, 30, 180},
    {70, 240, 240},
    {245, 130, 48},
}};

RgbImage blank(int width, int height) {
  return RgbImage{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
}

}  // namespace

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

RgbImage image_to_rgb(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("image_to_rgb: expected [C,H,W], got " + shape_string(image.shape()));
  const int c = image.dim(0);
  const int h = image.dim(1);
  const int w = image.dim(2);
  RgbImage out = blank(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) {
        out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + k] = to_byte(image.at(std::min(k, c - 1), y, x));
      }
    }
  }
  return out;
}

RgbImage perturbation_to_rgb(const Tensor& x_adv, const Tensor& x, double gain) {
  if (x_adv.shape() != x.shape()) {
    throw ShapeError("perturbation_to_rgb: shapes " + shape_string(x_adv.shape()) + " and " + shape_string(x.shape()) +
                     " differ");
  }
  Tensor shifted(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x_adv[i]) - static_cast<double>(x[i]);
    shifted[i] = static_cast<float>(0.5 + gain * d);
  }
  return image_to_rgb(shifted);
}

RgbImage labels_to_rgb(const LabelMap& labels) {
  RgbImage out = blank(labels.width(), labels.height());
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const int cls = labels.at(y, x);
      std::array<std::uint8_t, 3> col;
      if (cls < static_cast<int>(kLabelColors.size())) {
        col = kLabelColors[cls];
      } else {
        const auto s = static_cast<std::uint32_t>(cls) * 2654435761u;
        col = {static_cast<std::uint8_t>(s >> 24), static_cast<std::uint8_t>(s >> 16), static_cast<std::uint8_t>(s >> 8)};
      }
      std::copy(col.begin(), col.end(), out.pixels.begin() + (static_cast<std::size_t>(y) * labels.width() + x) * 3);
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  RgbImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0) {
    throw FormatError(path.string() + ": not an 8-bit P6 image");
  }
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw TruncationError(path.string() + ": pixel data truncated", 0);
  }
  return img;
}

}  // namespace tseg::cli
