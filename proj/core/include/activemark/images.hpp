#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "activemark/layers.hpp"
#include "activemark/tensor.hpp"

namespace activemark {

enum class ImageFamily { gradient, checker, blob, stripes };

inline constexpr std::array<ImageFamily, 4> kImageFamilies{ImageFamily::gradient, ImageFamily::checker,
                                                           ImageFamily::blob, ImageFamily::stripes};

std::string_view to_string(ImageFamily family) noexcept;
ImageFamily parse_image_family(std::string_view name);
std::size_t family_index(ImageFamily family) noexcept;

struct SyntheticImageSpec {
  ImageFamily family = ImageFamily::gradient;
  std::uint64_t seed = 0;
  ImageShape shape{1, 16, 16};

  friend bool operator==(const SyntheticImageSpec&, const SyntheticImageSpec&) = default;
};

/// Deterministic procedural image, shape [C x H x W], values in [0, 1].
Tensor generate_image(const SyntheticImageSpec& spec);
std::vector<Tensor> generate_images(std::span<const SyntheticImageSpec> specs);

/// `count` specs cycling through the four families, seeds derived from `seed`.
std::vector<SyntheticImageSpec> synthetic_specs(std::size_t count, std::uint64_t seed, ImageShape shape);

/// FNV-1a over the little-endian bytes of the pixel values.
std::uint64_t image_digest(const Tensor& image);

/// Raw image file: "AMIM", then u32 channels, height, width (little-endian),
/// then C*H*W little-endian float32 values in planar order.
Tensor read_raw_image(const std::filesystem::path& path);
void write_raw_image(const std::filesystem::path& path, const Tensor& image);

}  // namespace activemark
