#include "detbench/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>
#include <png.h>

#include "detbench/counter_rng.hpp"

namespace detbench {

using nlohmann::json;

ImageBuffer::ImageBuffer(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      samples(static_cast<std::size_t>(w) * h * c, fill) {
  if (w <= 0 || h <= 0 || (c != 1 && c != 3)) {
    throw DomainError("image must have positive size and 1 or 3 channels");
  }
}

std::vector<std::string> check_spec(const AugmentSpec& spec) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError(std::string(name) + " must lie in [0, 1]");
    }
  };
  prob(spec.flip_probability, "flip_probability");
  prob(spec.grayscale_probability, "grayscale_probability");
  prob(spec.blur_probability, "blur_probability");
  if (!(spec.blur_sigma > 0.0) || !std::isfinite(spec.blur_sigma)) {
    throw DomainError("blur_sigma must be positive");
  }
  if (spec.blur_radius < 1) throw DomainError("blur_radius must be at least 1");
  std::vector<std::string> warnings;
  if (spec.blur_radius < static_cast<int>(std::ceil(2.0 * spec.blur_sigma))) {
    warnings.push_back("blur_radius " + std::to_string(spec.blur_radius) +
                       " is below ceil(2*sigma); the kernel is truncated early");
  }
  return warnings;
}

double transform_draw(std::uint64_t seed, std::uint64_t draw_index, Transform t) {
  return to_unit_interval(hash_words({seed, draw_index, static_cast<std::uint64_t>(t)}));
}

Flipped hflip(const ImageBuffer& img, const std::vector<BoundingBox>& boxes) {
  const double W = img.width;
  for (const auto& b : boxes) {
    if (b.x < 0.0 || b.y < 0.0 || b.w < 0.0 || b.h < 0.0 || b.right() > W ||
        b.bottom() > static_cast<double>(img.height)) {
      throw DomainError("box exceeds image bounds");
    }
  }
  Flipped out{img, {}};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.image.at(img.width - 1 - x, y, c) = img.at(x, y, c);
      }
    }
  }
  out.boxes.reserve(boxes.size());
  for (const auto& b : boxes) out.boxes.push_back({W - b.x - b.w, b.y, b.w, b.h});
  return out;
}

ImageBuffer grayscale(const ImageBuffer& img) {
  if (img.channels != 3) throw DomainError("grayscale needs a 3-channel image");
  ImageBuffer out = img;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t* s = &img.samples[3 * p];
    const double luma = 0.299 * s[0] + 0.587 * s[1] + 0.114 * s[2];
    const auto v = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    out.samples[3 * p] = out.samples[3 * p + 1] = out.samples[3 * p + 2] = v;
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive");
  if (radius < 1) throw DomainError("radius must be at least 1");
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma, int radius) {
  const std::vector<double> k = gaussian_kernel(sigma, radius);
  const double* tap = k.data() + radius;  // tap[i] for i in [-radius, radius]
  const int W = img.width, H = img.height, C = img.channels;

  // Mirrored taps are summed pairwise so that a horizontally mirrored input
  // yields bit-identical mirrored output.
  std::vector<double> tmp(img.samples.size());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = tap[0] * img.at(x, y, c);
        for (int i = 1; i <= radius; ++i) {
          acc += tap[i] * (static_cast<double>(img.at(reflect101(x - i, W), y, c)) +
                           static_cast<double>(img.at(reflect101(x + i, W), y, c)));
        }
        tmp[(static_cast<std::size_t>(y) * W + x) * C + c] = acc;
      }
    }
  }
  auto row = [&](int x, int y, int c) {
    return tmp[(static_cast<std::size_t>(y) * W + x) * C + c];
  };
  ImageBuffer out(W, H, C);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = tap[0] * row(x, y, c);
        for (int i = 1; i <= radius; ++i) {
          acc += tap[i] * (row(x, reflect101(y - i, H), c) + row(x, reflect101(y + i, H), c));
        }
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

Augmented apply(const AugmentSpec& spec, const ImageBuffer& img,
                const std::vector<BoundingBox>& boxes, std::uint64_t draw_index) {
  check_spec(spec);
  Augmented out{img, boxes, {}};
  if (transform_draw(spec.seed, draw_index, Transform::Flip) < spec.flip_probability) {
    auto flipped = hflip(out.image, out.boxes);
    out.image = std::move(flipped.image);
    out.boxes = std::move(flipped.boxes);
    out.ops.flipped = true;
  }
  if (transform_draw(spec.seed, draw_index, Transform::Grayscale) <
      spec.grayscale_probability) {
    out.image = grayscale(out.image);
    out.ops.grayscaled = true;
  }
  if (transform_draw(spec.seed, draw_index, Transform::Blur) < spec.blur_probability) {
    out.image = gaussian_blur(out.image, spec.blur_sigma, spec.blur_radius);
    out.ops.blurred = true;
  }
  return out;
}

AugmentSpec parse_augment_spec_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed augment spec: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) throw SchemaError("augment spec must be an object", "<root>");
  AugmentSpec spec;
  auto number = [&](const char* key, double& dst) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_number()) throw SchemaError(std::string(key) + " must be a number", key);
    dst = doc[key].get<double>();
  };
  number("flip_probability", spec.flip_probability);
  number("grayscale_probability", spec.grayscale_probability);
  number("blur_probability", spec.blur_probability);
  number("blur_sigma", spec.blur_sigma);
  if (doc.contains("blur_radius")) {
    if (!doc["blur_radius"].is_number_integer()) {
      throw SchemaError("blur_radius must be an integer", "blur_radius");
    }
    spec.blur_radius = doc["blur_radius"].get<int>();
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_integer()) throw SchemaError("seed must be an integer", "seed");
    spec.seed = doc["seed"].get<std::uint64_t>();
  }
  check_spec(spec);
  return spec;
}

AugmentSpec parse_augment_spec(const std::filesystem::path& path) {
  return parse_augment_spec_text(read_text_file(path));
}

std::string serialize_augment_spec(const AugmentSpec& spec) {
  json doc{{"flip_probability", spec.flip_probability},
           {"grayscale_probability", spec.grayscale_probability},
           {"blur_probability", spec.blur_probability},
           {"blur_sigma", spec.blur_sigma},
           {"blur_radius", spec.blur_radius},
           {"seed", spec.seed}};
  return doc.dump(1) + "\n";
}

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

// Skips whitespace and '#' comments in a PNM header, then reads an integer.
int read_pnm_int(std::istream& in) {
  int ch;
  while ((ch = in.peek()) != EOF) {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v)) throw ParseError("bad PNM header", static_cast<std::size_t>(in.tellg()));
  return v;
}

ImageBuffer read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw ParseError(path.string() + ": expected binary PGM (P5) or PPM (P6)", 0);
  }
  const int channels = magic[1] == '6' ? 3 : 1;
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) throw DomainError(path.string() + ": only 8-bit PNM is supported");
  in.get();  // single whitespace before raster
  ImageBuffer img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.samples.data()),
          static_cast<std::streamsize>(img.samples.size()));
  if (!in) throw IoError(path.string() + ": truncated raster");
  return img;
}

void write_pnm(const std::filesystem::path& path, const ImageBuffer& img, bool ppm) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (ppm) {
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.samples.data()),
              static_cast<std::streamsize>(img.samples.size()));
  } else {
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    // Three-channel gray (R=G=B) collapses to one channel.
    for (std::size_t p = 0; p < img.samples.size(); p += img.channels) {
      out.put(static_cast<char>(img.samples[p]));
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

ImageBuffer read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ImageBuffer img(static_cast<int>(image.width), static_cast<int>(image.height), color ? 3 : 1);
  if (!png_image_finish_read(&image, nullptr, img.samples.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  if (!png_image_write_to_stdio(&image, f.get(), 0, img.samples.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  throw DomainError(path.string() + ": unsupported raster format (png, ppm, pgm)");
}

void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") {
    if (img.channels != 3) {
      ImageBuffer rgb(img.width, img.height, 3);
      for (std::size_t p = 0; p < img.samples.size(); ++p) {
        rgb.samples[3 * p] = rgb.samples[3 * p + 1] = rgb.samples[3 * p + 2] = img.samples[p];
      }
      return write_pnm(path, rgb, true);
    }
    return write_pnm(path, img, true);
  }
  if (ext == ".pgm") return write_pnm(path, img, false);
  throw DomainError(path.string() + ": unsupported raster format (png, ppm, pgm)");
}

}  // namespace detbench
