#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "detbench/annotations.hpp"

namespace detbench {

// Row-major 8-bit raster, interleaved channels (R,G,B for three channels).
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> samples;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

struct AugmentSpec {
  double flip_probability = 0.5;
  double grayscale_probability = 0.5;
  double blur_probability = 0.5;
  double blur_sigma = 1.0;
  int blur_radius = 3;
  std::uint64_t seed = 0;
};

// Throws DomainError for out-of-range fields. Returns warnings (currently only
// a radius shorter than ceil(2*sigma)).
std::vector<std::string> check_spec(const AugmentSpec& spec);

struct AppliedOps {
  bool flipped = false;
  bool grayscaled = false;
  bool blurred = false;

  bool empty() const noexcept { return !flipped && !grayscaled && !blurred; }
  friend bool operator==(const AppliedOps&, const AppliedOps&) = default;
};

struct Augmented {
  ImageBuffer image;
  std::vector<BoundingBox> boxes;
  AppliedOps ops;
};

enum class Transform : std::uint64_t { Flip = 1, Grayscale = 2, Blur = 3 };

// Counter-based uniform draw in [0, 1) for one (seed, draw_index, transform).
double transform_draw(std::uint64_t seed, std::uint64_t draw_index, Transform t);

struct Flipped {
  ImageBuffer image;
  std::vector<BoundingBox> boxes;
};

Flipped hflip(const ImageBuffer& img, const std::vector<BoundingBox>& boxes);
ImageBuffer grayscale(const ImageBuffer& img);

// Normalized 1-D Gaussian taps for offsets -radius..radius.
std::vector<double> gaussian_kernel(double sigma, int radius);
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma, int radius);

// Reflect-101 index into [0, n): -1 -> 1, n -> n-2.
int reflect101(int i, int n);

Augmented apply(const AugmentSpec& spec, const ImageBuffer& img,
                const std::vector<BoundingBox>& boxes, std::uint64_t draw_index);

AugmentSpec parse_augment_spec_text(std::string_view text);
AugmentSpec parse_augment_spec(const std::filesystem::path& path);
std::string serialize_augment_spec(const AugmentSpec& spec);

// Raster I/O. Format is picked from the extension: .png, .ppm (P6), .pgm (P5).
ImageBuffer read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ImageBuffer& img);

}  // namespace detbench
