#pragma once

#include <filesystem>

#include "gem/backbone.hpp"

namespace gem {

// Binary PGM (P5) for one channel, PPM (P6) for three; 8-bit samples.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& img);

// Rounds pixels to the 8-bit grid used on disk.
Image quantize8(Image img);

}  // namespace gem
