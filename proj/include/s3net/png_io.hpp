#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "s3net/tensor.hpp"

namespace s3net::png {

// Decoded raster: row-major, channel-interleaved samples in native order.
// Values span [0, 255] for bit_depth 8 and [0, 65535] for bit_depth 16.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0; // 1 (grayscale) or 3 (RGB)
    int bit_depth = 8;
    std::vector<std::uint16_t> pixels;
};

// Supports non-interlaced grayscale / RGB at 8 or 16 bits; an alpha channel
// is stripped on read. Anything else raises IoError.
PngImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const PngImage& image);

// C x H x W tensor in [0, 1], C = image.channels.
Tensor to_tensor(const PngImage& image);
// Clamps to [0, 1] and quantizes; tensor must be 1 x H x W or 3 x H x W.
PngImage from_tensor(const Tensor& t, int bit_depth = 8);

void write_tensor_png(const std::filesystem::path& path, const Tensor& t, int bit_depth = 8);

} // namespace s3net::png
