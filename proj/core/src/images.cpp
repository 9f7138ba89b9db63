#include "activemark/images.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "activemark/bytes.hpp"
#include "activemark/errors.hpp"
#include "activemark/rng.hpp"

namespace activemark {

namespace {

constexpr std::string_view kRawMagic = "AMIM";

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void fill_gradient(Tensor& img, const ImageShape& s, Rng& rng) {
  // Linear ramp from 0 at a random corner to `peak` at the opposite corner.
  const auto corner = rng.below(4);
  const double mix = rng.uniform(0.2, 0.8);
  const double peak = rng.uniform(0.6, 1.0);
  const double hs = s.height > 1 ? double(s.height - 1) : 1.0;
  const double ws = s.width > 1 ? double(s.width - 1) : 1.0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double gain = c == 0 ? 1.0 : rng.uniform(0.5, 1.0);
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        double u = double(x) / ws;
        double v = double(y) / hs;
        if (corner & 1U) u = 1.0 - u;
        if (corner & 2U) v = 1.0 - v;
        img[(c * s.height + y) * s.width + x] = clamp01(gain * peak * (mix * u + (1.0 - mix) * v));
      }
    }
  }
}

void fill_checker(Tensor& img, const ImageShape& s, Rng& rng) {
  static constexpr std::size_t kCells[] = {2, 3, 4};
  const std::size_t cell = kCells[rng.below(3)];
  const std::size_t ox = rng.below(cell);
  const std::size_t oy = rng.below(cell);
  const double lo = rng.uniform(0.0, 0.3);
  const double hi = rng.uniform(0.7, 1.0);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const bool on = (((x + ox) / cell) + ((y + oy) / cell)) % 2 == 0;
        img[(c * s.height + y) * s.width + x] = clamp01((on ? hi : lo) + rng.normal(0.0, 0.03));
      }
    }
  }
}

void fill_blob(Tensor& img, const ImageShape& s, Rng& rng) {
  const double cx = rng.uniform(0.2, 0.8) * double(s.width);
  const double cy = rng.uniform(0.2, 0.8) * double(s.height);
  const double sigma = rng.uniform(0.12, 0.3) * double(std::min(s.height, s.width));
  const double amp = rng.uniform(0.7, 1.0);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const double dx = double(x) + 0.5 - cx;
        const double dy = double(y) + 0.5 - cy;
        const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        img[(c * s.height + y) * s.width + x] = clamp01(v + rng.normal(0.0, 0.02));
      }
    }
  }
}

void fill_stripes(Tensor& img, const ImageShape& s, Rng& rng) {
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(3.0, 8.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double kx = std::cos(angle) * 2.0 * std::numbers::pi / period;
  const double ky = std::sin(angle) * 2.0 * std::numbers::pi / period;
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const double v = 0.5 + 0.5 * std::sin(kx * double(x) + ky * double(y) + phase);
        img[(c * s.height + y) * s.width + x] = clamp01(v);
      }
    }
  }
}

// Per-image contrast, brightness, illumination ramp and sensor noise, so that two
// images of one family do not collapse onto the same features.
void apply_jitter(Tensor& img, const ImageShape& s, Rng& rng) {
  const double contrast = rng.uniform(0.5, 1.0);
  const double brightness = rng.uniform(-0.25, 0.25);
  const double ramp = rng.uniform(0.0, 0.4);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rx = std::cos(angle) / double(s.width);
  const double ry = std::sin(angle) / double(s.height);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        double& v = img[(c * s.height + y) * s.width + x];
        const double light = ramp * ((double(x) + 0.5) * rx + (double(y) + 0.5) * ry);
        v = clamp01(0.5 + contrast * (v - 0.5) + brightness + light + rng.normal(0.0, 0.03));
      }
    }
  }
}

}  // namespace

std::string_view to_string(ImageFamily family) noexcept {
  switch (family) {
    case ImageFamily::gradient: return "gradient";
    case ImageFamily::checker: return "checker";
    case ImageFamily::blob: return "blob";
    case ImageFamily::stripes: return "stripes";
  }
  return "gradient";
}

ImageFamily parse_image_family(std::string_view name) {
  for (auto f : kImageFamilies) {
    if (to_string(f) == name) return f;
  }
  throw FormatError("unknown image family '" + std::string(name) + "'");
}

std::size_t family_index(ImageFamily family) noexcept { return static_cast<std::size_t>(family); }

Tensor generate_image(const SyntheticImageSpec& spec) {
  const auto& s = spec.shape;
  if (s.channels == 0 || s.height == 0 || s.width == 0) throw ArgumentError("generate_image: empty image shape");
  Tensor img(s.as_shape());
  Rng rng(derive_seed(spec.seed, 0x1000 + family_index(spec.family)));
  switch (spec.family) {
    case ImageFamily::gradient: fill_gradient(img, s, rng); break;
    case ImageFamily::checker: fill_checker(img, s, rng); break;
    case ImageFamily::blob: fill_blob(img, s, rng); break;
    case ImageFamily::stripes: fill_stripes(img, s, rng); break;
  }
  // Gradients already vary by corner and peak, and keep their exact 0 corner.
  if (spec.family != ImageFamily::gradient) {
    Rng jitter(derive_seed(spec.seed, 0x2000));
    apply_jitter(img, s, jitter);
  }
  return img;
}

std::vector<Tensor> generate_images(std::span<const SyntheticImageSpec> specs) {
  std::vector<Tensor> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(generate_image(s));
  return out;
}

std::vector<SyntheticImageSpec> synthetic_specs(std::size_t count, std::uint64_t seed, ImageShape shape) {
  std::vector<SyntheticImageSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({kImageFamilies[i % kImageFamilies.size()], derive_seed(seed, i), shape});
  }
  return out;
}

std::uint64_t image_digest(const Tensor& image) {
  ByteWriter w;
  for (auto d : image.shape()) w.u64(d);
  w.f64s(image.data());
  return fnv1a(w.bytes());
}

Tensor read_raw_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  if (r.remaining() < 16 || r.raw(4) != kRawMagic) throw FormatError("'" + path.string() + "' is not a raw image");
  ImageShape s;
  s.channels = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  const std::size_t count = s.channels * s.height * s.width;
  if (count == 0) throw FormatError("raw image '" + path.string() + "' has an empty shape");
  if (r.remaining() != count * 4) {
    throw FormatError("raw image '" + path.string() + "': payload is " + std::to_string(r.remaining()) +
                      " bytes, header implies " + std::to_string(count * 4));
  }
  std::vector<double> data(count);
  for (auto& v : data) v = r.f32();
  return Tensor(s.as_shape(), std::move(data));
}

void write_raw_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("write_raw_image: expected a [C x H x W] tensor");
  ByteWriter w;
  w.raw(kRawMagic);
  for (std::size_t a = 0; a < 3; ++a) w.u32(static_cast<std::uint32_t>(image.dim(a)));
  for (double v : image.data()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.bytes());
}

}  // namespace activemark
