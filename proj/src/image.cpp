#include "samqa/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

namespace samqa {
namespace {

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void read_from_cursor(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes.size()) png_error(png, "truncated PNG data");
    std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
    cursor->offset += length;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

[[noreturn]] void throw_png_error(png_structp, png_const_charp message) {
    throw ImageError(std::string("png: ") + message);
}

void warn_noop(png_structp, png_const_charp) {}

}  // namespace

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw ImageError("not a PNG stream");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, throw_png_error, warn_noop);
    if (!png) throw ImageError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageError("png_create_info_struct failed");
    }

    ReadCursor cursor{bytes, 0};
    GrayImage image;
    try {
        png_set_read_fn(png, &cursor, read_from_cursor);
        png_read_info(png, info);

        const auto color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
            color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
        png_read_update_info(png, info);

        image = GrayImage(static_cast<int>(png_get_image_width(png, info)),
                          static_cast<int>(png_get_image_height(png, info)));
        if (png_get_rowbytes(png, info) != static_cast<png_size_t>(image.width))
            throw ImageError("unexpected PNG row layout");
        std::vector<png_bytep> rows(image.height);
        for (int y = 0; y < image.height; ++y)
            rows[y] = image.pixels.data() + static_cast<std::size_t>(y) * image.width;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GrayImage read_png(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_png(bytes);
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, throw_png_error, warn_noop);
    if (!png) throw ImageError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageError("png_create_info_struct failed");
    }
    std::vector<std::uint8_t> out;
    try {
        png_set_write_fn(png, &out, write_to_vector, flush_noop);
        png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y)
            png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width);
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace samqa
