#include "samqa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace samqa {

BinaryMask::BinaryMask(int width, int height)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0) {
    if (width < 0 || height < 0) throw GeometryError("negative mask dimensions");
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 0 || height < 0) throw GeometryError("negative mask dimensions");
    if (bits_.size() != static_cast<std::size_t>(width) * height)
        throw GeometryError("mask bit count does not match dimensions");
    for (auto& b : bits_) b = b ? 1 : 0;
}

bool BinaryMask::empty() const {
    return std::none_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

void BinaryMask::fill(const BBox& box, bool value) {
    const int x0 = std::max(box.x_min, 0), x1 = std::min(box.x_max, width_ - 1);
    const int y0 = std::max(box.y_min, 0), y1 = std::min(box.y_max, height_ - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) set(x, y, value);
}

std::vector<Point> BinaryMask::points() const {
    std::vector<Point> out;
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            if (at(x, y)) out.push_back({x, y});
    return out;
}

std::string_view to_string(MaskSource source) {
    switch (source) {
        case MaskSource::Initial: return "initial";
        case MaskSource::Manual: return "manual";
        case MaskSource::Model: return "model";
        case MaskSource::Recovery: return "recovery";
    }
    return "model";
}

MaskSource mask_source_from_string(std::string_view name) {
    if (name == "initial") return MaskSource::Initial;
    if (name == "manual") return MaskSource::Manual;
    if (name == "model") return MaskSource::Model;
    if (name == "recovery") return MaskSource::Recovery;
    throw GeometryError("unknown mask source: " + std::string(name));
}

double bbox_iou(const BBox& a, const BBox& b) {
    const long long iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min) + 1;
    const long long ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min) + 1;
    if (iw <= 0 || ih <= 0) return 0.0;
    const long long inter = iw * ih;
    const long long uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw GeometryError("mask_iou: dimension mismatch");
    long long inter = 0, uni = 0;
    const auto ab = a.bits();
    const auto bb = b.bits();
    for (std::size_t i = 0; i < ab.size(); ++i) {
        inter += ab[i] & bb[i];
        uni += ab[i] | bb[i];
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

long long mask_area(const BinaryMask& m) {
    const auto bits = m.bits();
    return std::accumulate(bits.begin(), bits.end(), 0LL);
}

BBox mask_to_bbox(const BinaryMask& m) {
    BBox box{m.width(), m.height(), -1, -1};
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(x, y)) continue;
            box.x_min = std::min(box.x_min, x);
            box.y_min = std::min(box.y_min, y);
            box.x_max = std::max(box.x_max, x);
            box.y_max = std::max(box.y_max, y);
        }
    }
    if (box.x_max < 0) throw EmptyMaskError();
    return box;
}

BBox clip_bbox(const BBox& b, int frame_width, int frame_height) {
    return {std::clamp(b.x_min, 0, frame_width - 1), std::clamp(b.y_min, 0, frame_height - 1),
            std::clamp(b.x_max, 0, frame_width - 1), std::clamp(b.y_max, 0, frame_height - 1)};
}

BBox inflate_bbox(const BBox& b, double margin_fraction, int frame_width, int frame_height) {
    const int dx = static_cast<int>(std::lround(margin_fraction * b.width()));
    const int dy = static_cast<int>(std::lround(margin_fraction * b.height()));
    return clip_bbox({b.x_min - dx, b.y_min - dy, b.x_max + dx, b.y_max + dy}, frame_width,
                     frame_height);
}

RunLengths rle_encode(const BinaryMask& m) {
    RunLengths runs;
    std::uint8_t current = 0;
    std::uint32_t count = 0;
    for (const auto bit : m.bits()) {
        if (bit != current) {
            runs.push_back(count);
            current = bit;
            count = 0;
        }
        ++count;
    }
    runs.push_back(count);
    return runs;
}

BinaryMask rle_decode(std::span<const std::uint32_t> runs, int width, int height) {
    const std::uint64_t total =
        std::accumulate(runs.begin(), runs.end(), std::uint64_t{0});
    if (width < 0 || height < 0 || total != static_cast<std::uint64_t>(width) * height)
        throw GeometryError("rle_decode: run sum " + std::to_string(total) + " != " +
                            std::to_string(static_cast<long long>(width) * height));
    std::vector<std::uint8_t> bits;
    bits.reserve(total);
    std::uint8_t value = 0;
    for (const auto run : runs) {
        bits.insert(bits.end(), run, value);
        value ^= 1;
    }
    return BinaryMask(width, height, std::move(bits));
}

}  // namespace samqa
