#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

enum class ShapeKind { rectangle, disk, triangle };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

// Scene generator parameters. Foreground class c (1..M-1) is always drawn as
// shape_kinds[(c-1) % shape_kinds.size()] in its own base color.
struct SceneSpec {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 4;
  int min_shapes = 1;
  int max_shapes = 4;
  std::vector<ShapeKind> shape_kinds{ShapeKind::rectangle, ShapeKind::disk, ShapeKind::triangle};
  double color_jitter = 0.03;
  double noise_sigma = 0.02;
  // Distance scale of the class colors from mid-gray.
  double palette_contrast = 0.045;
  double texture_amplitude = 0.04;

  // Throws ConfigError.
  void validate() const;
};

struct Sample {
  Tensor image;  // [C,H,W], values in [0,1]
  LabelMap labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  int num_classes = 0;
  std::vector<Sample> samples;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Base RGB color of a class; class 0 (background) is mid-gray.
std::array<double, 3> class_color(int cls, double contrast);

Sample generate_sample(std::uint64_t seed, const SceneSpec& spec);

// Sample i is generate_sample(mix_seed(seed, i), spec).
Dataset generate_dataset(std::uint64_t seed, const SceneSpec& spec, int count);

// TSEGDATA container:
//   "TSEGDATA" | u32 version=1 | u32 n | u32 H | u32 W | u32 C | u32 M
//   then per sample: C*H*W f32 (CHW order) followed by H*W u16 labels.
// All integers and floats little-endian.
inline constexpr char kDatasetMagic[8] = {'T', 'S', 'E', 'G', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Throws MagicError, VersionError, TruncationError (with record index) or
// IoError.
Dataset load_dataset(const std::filesystem::path& path);

// FNV-1a over the image bytes and labels of one sample.
std::uint64_t sample_hash(const Sample& sample);

}  // namespace tseg
