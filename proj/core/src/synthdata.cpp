#include "tseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "binary_io.hpp"
#include "tseg/error.hpp"
#include "tseg/rng.hpp"

namespace tseg {
namespace {

// Color offsets from mid-gray per foreground class, scaled by the palette
// contrast. Class 0 (background) sits at mid-gray.
constexpr std::array<std::array<double, 3>, 7> kOffsets{{
    {1.0, -0.5, -0.5},
    {-0.5, 1.0, -0.5},
    {-0.5, -0.5, 1.0},
    {0.7, 0.7, -1.0},
    {0.7, -1.0, 0.7},
    {-1.0, 0.7, 0.7},
    {1.0, 1.0, 1.0},
}};

struct Point {
  double x;
  double y;
};

double edge(Point a, Point b, Point p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::disk: return "disk";
    case ShapeKind::triangle: return "triangle";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "disk") return ShapeKind::disk;
  if (name == "triangle") return ShapeKind::triangle;
  throw ConfigError("unknown shape kind '" + name + "'");
}

void SceneSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("scene must be at least 4x4");
  if (channels != 3) throw ConfigError("scenes are RGB; channels must be 3");
  if (num_classes < 2 || num_classes > 65535) throw ConfigError("num_classes must be in [2, 65535]");
  if (min_shapes < 0 || min_shapes > max_shapes) {
    throw ConfigError("shape count range must satisfy 0 <= min <= max");
  }
  if (shape_kinds.empty()) throw ConfigError("at least one shape kind is required");
  const std::size_t distinct = [&] {
    auto kinds = shape_kinds;
    std::sort(kinds.begin(), kinds.end());
    return static_cast<std::size_t>(std::unique(kinds.begin(), kinds.end()) - kinds.begin());
  }();
  if (static_cast<std::size_t>(num_classes - 1) < distinct) {
    throw ConfigError("need at least one foreground class per distinct shape kind");
  }
  if (!(color_jitter >= 0.0 && color_jitter <= 0.2)) throw ConfigError("color_jitter must be in [0, 0.2]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(palette_contrast > 0.0 && palette_contrast <= 0.5)) throw ConfigError("palette_contrast must be in (0, 0.5]");
  if (!(texture_amplitude >= 0.0 && texture_amplitude <= 0.25)) {
    throw ConfigError("texture_amplitude must be in [0, 0.25]");
  }
}

std::array<double, 3> class_color(int cls, double contrast) {
  std::array<double, 3> c{0.5, 0.5, 0.5};
  if (cls == 0) return c;
  if (cls <= static_cast<int>(kOffsets.size())) {
    for (int i = 0; i < 3; ++i) c[i] += contrast * kOffsets[cls - 1][i];
    return c;
  }
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(cls));
  for (int i = 0; i < 3; ++i) {
    c[i] += contrast * (2.0 * static_cast<double>((h >> (16 * i)) & 0xFFFF) / 65535.0 - 1.0);
  }
  return c;
}

Sample generate_sample(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(seed);
  const int height = spec.height;
  const int width = spec.width;
  std::vector<double> canvas(static_cast<std::size_t>(3) * height * width);
  LabelMap labels(height, width, 0);
  auto pixel = [&](int c, int y, int x) -> double& {
    return canvas[(static_cast<std::size_t>(c) * height + y) * width + x];
  };

  // Background: jittered base color plus a random oblique sinusoidal texture.
  const auto bg = class_color(0, spec.palette_contrast);
  std::array<double, 3> bg_color{};
  for (int c = 0; c < 3; ++c) bg_color[c] = bg[c] + rng.uniform(-spec.color_jitter, spec.color_jitter);
  const double fx = rng.uniform(0.3, 0.9);
  const double fy = rng.uniform(0.3, 0.9);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = spec.texture_amplitude * std::sin(fx * x + fy * y + phase);
      for (int c = 0; c < 3; ++c) pixel(c, y, x) = bg_color[c] + t;
    }
  }

  const double size = std::min(height, width);
  const int count = rng.uniform_int(spec.min_shapes, spec.max_shapes);
  for (int s = 0; s < count; ++s) {
    const int cls = rng.uniform_int(1, spec.num_classes - 1);
    const ShapeKind kind = spec.shape_kinds[(cls - 1) % spec.shape_kinds.size()];
    const auto base = class_color(cls, spec.palette_contrast);
    std::array<double, 3> color{};
    for (int c = 0; c < 3; ++c) color[c] = base[c] + rng.uniform(-spec.color_jitter, spec.color_jitter);

    std::function<bool(double, double)> covers;
    switch (kind) {
      case ShapeKind::rectangle: {
        const double w = rng.uniform(size / 6.0, size / 2.0);
        const double h = rng.uniform(size / 6.0, size / 2.0);
        const double x0 = rng.uniform(-w / 4.0, width - 3.0 * w / 4.0);
        const double y0 = rng.uniform(-h / 4.0, height - 3.0 * h / 4.0);
        covers = [=](double px, double py) { return px >= x0 && px < x0 + w && py >= y0 && py < y0 + h; };
        break;
      }
      case ShapeKind::disk: {
        const double r = rng.uniform(size / 10.0, size / 4.0);
        const double cx = rng.uniform(0.0, width);
        const double cy = rng.uniform(0.0, height);
        covers = [=](double px, double py) { return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r; };
        break;
      }
      case ShapeKind::triangle: {
        const double r = rng.uniform(size / 8.0, size / 3.0);
        const double cx = rng.uniform(0.0, width);
        const double cy = rng.uniform(0.0, height);
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        std::array<Point, 3> v{};
        for (int i = 0; i < 3; ++i) {
          const double a = theta + i * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.3, 0.3);
          v[i] = {cx + r * std::cos(a), cy + r * std::sin(a)};
        }
        covers = [=](double px, double py) {
          const Point p{px, py};
          const double d0 = edge(v[0], v[1], p);
          const double d1 = edge(v[1], v[2], p);
          const double d2 = edge(v[2], v[0], p);
          return (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
        };
        break;
      }
    }

    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (!covers(x + 0.5, y + 0.5)) continue;
        labels.at(y, x) = static_cast<std::uint16_t>(cls);
        for (int c = 0; c < 3; ++c) pixel(c, y, x) = color[c];
      }
    }
  }

  Tensor image(Shape{3, height, width});
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i];
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
    image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return Sample{std::move(image), std::move(labels)};
}

Dataset generate_dataset(std::uint64_t seed, const SceneSpec& spec, int count) {
  if (count <= 0) throw ConfigError("dataset size must be positive");
  Dataset out;
  out.num_classes = spec.num_classes;
  out.samples.reserve(count);
  for (int i = 0; i < count; ++i) out.samples.push_back(generate_sample(mix_seed(seed, i), spec));
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.samples.empty()) throw ConfigError("cannot save an empty dataset");
  const auto& first = dataset.samples.front().image;
  const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
  detail::ByteWriter out;
  out.bytes(std::string_view(kDatasetMagic, 8));
  out.u32(kDatasetVersion);
  out.u32(static_cast<std::uint32_t>(dataset.samples.size()));
  out.u32(h);
  out.u32(w);
  out.u32(c);
  out.u32(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (s.image.shape() != Shape{c, h, w} || s.labels.height() != h || s.labels.width() != w) {
      throw ConfigError("sample " + std::to_string(i) + " has inconsistent dimensions");
    }
    for (float v : s.image.data()) out.f32(v);
    for (std::uint16_t l : s.labels.data()) out.u16(l);
  }
  out.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto in = detail::ByteReader::from_file(path);
  if (in.remaining() < 8) throw TruncationError(path.string() + ": truncated in header", -1);
  if (in.bytes(8) != std::string_view(kDatasetMagic, 8)) {
    throw MagicError(path.string() + ": not a TSEGDATA file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kDatasetVersion) {
    throw VersionError(path.string() + ": unsupported TSEGDATA version " + std::to_string(version));
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  const std::uint32_t c = in.u32();
  const std::uint32_t m = in.u32();
  if (h == 0 || w == 0 || c == 0 || m < 2) throw ShapeError(path.string() + ": invalid header dimensions");

  Dataset out;
  out.num_classes = static_cast<int>(m);
  out.samples.reserve(n);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::uint32_t i = 0; i < n; ++i) {
    in.set_record(i);
    std::vector<float> pixels(plane * c);
    for (auto& v : pixels) v = in.f32();
    std::vector<std::uint16_t> labels(plane);
    for (auto& l : labels) {
      l = in.u16();
      if (l >= m) throw ShapeError(path.string() + ": label out of range in record " + std::to_string(i));
    }
    out.samples.push_back(Sample{Tensor(Shape{static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)},
                                        std::move(pixels)),
                                 LabelMap(static_cast<int>(h), static_cast<int>(w), std::move(labels))});
  }
  return out;
}

std::uint64_t sample_hash(const Sample& sample) {
  const auto img = sample.image.data();
  std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(img.data()), img.size_bytes()));
  const auto lab = sample.labels.data();
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(lab.data()), lab.size_bytes()), h);
}

}  // namespace tseg
