#pragma once

#include "samqa/geometry.hpp"

#include <vector>

namespace samqa {

/// Binary dilation with a fully occupied kernel x kernel square, repeated
/// `iterations` times. Pixels outside the frame are ignored.
BinaryMask dilate(const BinaryMask& mask, int kernel, int iterations = 1);

/// Binary erosion with the same square element. Out-of-frame pixels count as set,
/// so the frame border does not eat into objects touching it.
BinaryMask erode(const BinaryMask& mask, int kernel, int iterations = 1);

BinaryMask morph_close(const BinaryMask& mask, int kernel);
BinaryMask morph_open(const BinaryMask& mask, int kernel);

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);

struct Components {
    int width = 0;
    int height = 0;
    std::vector<int> labels;      // -1 for background, else component index
    std::vector<long long> areas; // indexed by component
    std::vector<int> first_pixel; // row-major index of the first pixel in scan order

    [[nodiscard]] int count() const { return static_cast<int>(areas.size()); }
    [[nodiscard]] int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-connected components, numbered in scan order of their first pixel.
Components connected_components(const BinaryMask& mask);

}  // namespace samqa
