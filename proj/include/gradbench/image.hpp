#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gradbench/rng.hpp"
#include "gradbench/tensor.hpp"

namespace gradbench {

// Decodes binary P6 (and P5, replicated to three channels) with maxval 255.
// Result is [3 x H x W] with values byte / 255.
Tensor decode_pnm(std::span<const std::uint8_t> bytes);
Tensor read_image(const std::filesystem::path& path);

// [3 x H x W] (or [1 x H x W]) in [0, 1] -> P6 bytes; values are clamped and
// rounded to the nearest byte.
std::vector<std::uint8_t> encode_p6(const Tensor& image);
void write_p6(const std::filesystem::path& path, const Tensor& image);

// Half-pixel-center bilinear interpolation; src = (dst + 0.5) * scale - 0.5,
// clamped to the image. Returns an exact copy when the size is unchanged.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);

struct AugmentSpec {
    bool enabled = true;
    double hflip_probability = 0.5;
    double vflip_probability = 0.5;
};

// Independent horizontal and vertical flips. Both draws are made even when a
// flip is skipped, so the stream position does not depend on outcomes.
Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng);

}  // namespace gradbench
