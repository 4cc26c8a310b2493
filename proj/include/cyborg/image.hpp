#pragma once

#include <filesystem>
#include <vector>

#include "cyborg/grid.hpp"

namespace cyborg {

/// Interleaved HWC image with float samples in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
    float at(int y, int x, int ch) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
};

/// Decodes any format OpenCV reads into a 3-channel RGB image.
Image load_image(const std::filesystem::path& path);

/// Writes an RGB image as 8-bit PNG.
void save_image_png(const std::filesystem::path& path, const Image& img);

/// Reads a PNG/other mask; any nonzero sample becomes 1.
MaskGrid load_mask(const std::filesystem::path& path);

/// Quantizes [0,1] to 8 bits with round-half-up and writes a 1-channel PNG.
void save_gray_png(const std::filesystem::path& path, const FloatGrid& grid);

/// Reads a 1-channel 8-bit image back as raw bytes.
Grid<unsigned char> load_gray_bytes(const std::filesystem::path& path);

unsigned char quantize_unit(float v);

}  // namespace cyborg
