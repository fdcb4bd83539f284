#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samqa {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit single-channel image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Decodes any PNG (gray, RGB, palette, with or without alpha, 8/16 bit) to 8-bit luma.
GrayImage decode_png(std::span<const std::uint8_t> bytes);
GrayImage read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const GrayImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace samqa
