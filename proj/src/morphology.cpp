#include "samqa/morphology.hpp"

#include <algorithm>

namespace samqa {
namespace {

// One pass of a separable square max (dilate) or min (erode) filter.
BinaryMask square_filter(const BinaryMask& in, int kernel, bool take_max) {
    if (kernel < 1 || kernel % 2 == 0) throw GeometryError("structuring element must be odd and >= 1");
    const int r = kernel / 2;
    const int w = in.width(), h = in.height();
    const std::uint8_t hit = take_max ? 1 : 0;

    std::vector<std::uint8_t> rows(in.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t v = take_max ? 0 : 1;
            for (int k = std::max(0, x - r); k <= std::min(w - 1, x + r); ++k) {
                if (in.at(k, y) == hit) {
                    v = hit;
                    break;
                }
            }
            rows[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    BinaryMask out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint8_t v = take_max ? 0 : 1;
            for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k) {
                if (rows[static_cast<std::size_t>(k) * w + x] == hit) {
                    v = hit;
                    break;
                }
            }
            out.set(x, y, v != 0);
        }
    }
    return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int kernel, int iterations) {
    BinaryMask out = mask;
    for (int i = 0; i < iterations; ++i) out = square_filter(out, kernel, true);
    return out;
}

BinaryMask erode(const BinaryMask& mask, int kernel, int iterations) {
    BinaryMask out = mask;
    for (int i = 0; i < iterations; ++i) out = square_filter(out, kernel, false);
    return out;
}

BinaryMask morph_close(const BinaryMask& mask, int kernel) {
    return erode(dilate(mask, kernel), kernel);
}

BinaryMask morph_open(const BinaryMask& mask, int kernel) {
    return dilate(erode(mask, kernel), kernel);
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw GeometryError("mask_and: dimension mismatch");
    BinaryMask out(a.width(), a.height());
    for (std::size_t i = 0; i < out.size(); ++i) out.bits()[i] = a.bits()[i] & b.bits()[i];
    return out;
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw GeometryError("mask_or: dimension mismatch");
    BinaryMask out(a.width(), a.height());
    for (std::size_t i = 0; i < out.size(); ++i) out.bits()[i] = a.bits()[i] | b.bits()[i];
    return out;
}

Components connected_components(const BinaryMask& mask) {
    Components cc;
    cc.width = mask.width();
    cc.height = mask.height();
    cc.labels.assign(mask.size(), -1);
    std::vector<int> stack;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const int idx = y * mask.width() + x;
            if (!mask.at(x, y) || cc.labels[idx] >= 0) continue;
            const int label = cc.count();
            cc.areas.push_back(0);
            cc.first_pixel.push_back(idx);
            cc.labels[idx] = label;
            stack.push_back(idx);
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                ++cc.areas[label];
                const int px = p % mask.width(), py = p / mask.width();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx, ny = py + dy;
                        if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny)) continue;
                        const int n = ny * mask.width() + nx;
                        if (cc.labels[n] >= 0) continue;
                        cc.labels[n] = label;
                        stack.push_back(n);
                    }
                }
            }
        }
    }
    return cc;
}

}  // namespace samqa
