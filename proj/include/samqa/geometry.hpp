#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace samqa {

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyMaskError : public GeometryError {
public:
    EmptyMaskError() : GeometryError("mask is empty") {}
};

/// Axis-aligned box in integer pixel coordinates. Both corners are inclusive,
/// so a box covering a single pixel has x_min == x_max.
struct BBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    [[nodiscard]] int width() const { return x_max - x_min + 1; }
    [[nodiscard]] int height() const { return y_max - y_min + 1; }
    [[nodiscard]] long long area() const { return static_cast<long long>(width()) * height(); }
    [[nodiscard]] bool valid() const { return x_min <= x_max && y_min <= y_max; }
    [[nodiscard]] bool contains(const BBox& other) const {
        return x_min <= other.x_min && y_min <= other.y_min && x_max >= other.x_max &&
               y_max >= other.y_max;
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Row-major binary occupancy grid the size of a frame.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height);
    BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] std::size_t size() const { return bits_.size(); }
    [[nodiscard]] bool empty() const;

    [[nodiscard]] bool at(int x, int y) const {
        return bits_[static_cast<std::size_t>(y) * width_ + x] != 0;
    }
    [[nodiscard]] bool in_bounds(int x, int y) const {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }
    void set(int x, int y, bool value = true) {
        bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0;
    }
    /// Sets every pixel inside the box (clipped to the mask).
    void fill(const BBox& box, bool value = true);

    [[nodiscard]] std::span<const std::uint8_t> bits() const { return bits_; }
    [[nodiscard]] std::span<std::uint8_t> bits() { return bits_; }

    [[nodiscard]] std::vector<Point> points() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class MaskSource { Initial, Manual, Model, Recovery };

std::string_view to_string(MaskSource source);
MaskSource mask_source_from_string(std::string_view name);

/// Manual and initial masks are trusted and skip validation.
inline bool is_trusted(MaskSource source) {
    return source == MaskSource::Initial || source == MaskSource::Manual;
}

struct InstanceMask {
    BinaryMask mask;
    int instance_id = 0;
    int frame_index = 0;
    MaskSource source = MaskSource::Model;

    friend bool operator==(const InstanceMask&, const InstanceMask&) = default;
};

double bbox_iou(const BBox& a, const BBox& b);

/// Intersection over union of set pixels. Two empty masks give 0.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

long long mask_area(const BinaryMask& m);

/// Tight box around the set pixels. Throws EmptyMaskError on an empty mask.
BBox mask_to_bbox(const BinaryMask& m);

/// Grows each side by round(margin_fraction * side length), then clips to the frame.
BBox inflate_bbox(const BBox& b, double margin_fraction, int frame_width, int frame_height);

BBox clip_bbox(const BBox& b, int frame_width, int frame_height);

// Run-length layout: alternating zero/one runs over the row-major bits,
// always starting with a (possibly zero-length) run of zeros.
using RunLengths = std::vector<std::uint32_t>;

RunLengths rle_encode(const BinaryMask& m);
BinaryMask rle_decode(std::span<const std::uint32_t> runs, int width, int height);

}  // namespace samqa
