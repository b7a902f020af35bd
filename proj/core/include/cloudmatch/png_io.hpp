#pragma once

#include <string>

#include "cloudmatch/image.hpp"

namespace cloudmatch {

/// Reads an 8-bit PNG as grayscale (1 channel) or RGB (3 channels); palette
/// and 16-bit files are expanded/stripped to 8-bit, alpha is dropped.
Image read_png(const std::string& path);

/// Writes a 1- or 3-channel image as an 8-bit PNG; values are rounded and
/// clamped to [0,255].
void write_png(const std::string& path, const Image& img);

} // namespace cloudmatch
