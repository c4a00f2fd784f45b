#pragma once

#include <string>
#include <vector>

#include "xmac/image.hpp"

namespace xmac {

/// Reads an 8- or 16-bit PNG with 1 or 3 channels. Samples are scaled to
/// [0,1] by the max sample value (255 or 65535); grayscale files land in all
/// three color bands. Anything else (palette, alpha, interlace) is rejected.
MultibandImage read_image(const std::string& path);

/// Writes the color bands as an 8-bit RGB PNG. Writing inverts read_image
/// exactly for 8-bit-quantized data.
void write_image(const MultibandImage& img, const std::string& path);

// Single-plane helpers for NIR sidecars and index-map dumps.
std::vector<double> read_gray(const std::string& path, int& height, int& width);
void write_gray(const std::string& path, const std::vector<double>& values, int height, int width,
                int bit_depth = 8);

}  // namespace xmac
