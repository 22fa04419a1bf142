#ifndef PECAD_PNGIO_HPP_
#define PECAD_PNGIO_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pecad::img {

/// Encode an 8-bit RGB image (row-major, 3 bytes per pixel) as a PNG byte
/// stream. Fixed zlib level, so identical pixels give identical bytes.
std::vector<uint8_t> encode_png_rgb(const std::vector<uint8_t>& rgb, int width, int height);

void write_png_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int width,
                   int height);

}  // namespace pecad::img

#endif  // PECAD_PNGIO_HPP_
