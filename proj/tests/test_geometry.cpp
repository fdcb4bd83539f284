#include "doctest.h"

#include "samqa/geometry.hpp"
#include "test_support.hpp"

using namespace samqa;

TEST_CASE("bbox_iou") {
    const BBox a{3, 4, 10, 12};
    CHECK(bbox_iou(a, a) == 1.0);
    CHECK(bbox_iou(a, BBox{20, 20, 25, 25}) == 0.0);
    // corner-inclusive: each 2x2 box covers 4 px, they share pixel (1,1)
    CHECK(bbox_iou(BBox{0, 0, 1, 1}, BBox{1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0));
    CHECK(bbox_iou(BBox{0, 0, 1, 1}, BBox{2, 0, 3, 1}) == 0.0);  // touching edges do not overlap
}

TEST_CASE("mask_iou") {
    const auto blob = testing::box_mask(8, 8, {2, 2, 3, 3});
    CHECK(mask_iou(blob, blob) == 1.0);
    CHECK(mask_iou(blob, testing::box_mask(8, 8, {6, 6, 7, 7})) == 0.0);
    CHECK(mask_iou(blob, testing::box_mask(8, 8, {3, 2, 4, 3})) == doctest::Approx(1.0 / 3.0));
    CHECK(mask_iou(BinaryMask(8, 8), BinaryMask(8, 8)) == 0.0);
    CHECK_THROWS_AS(mask_iou(blob, BinaryMask(8, 9)), GeometryError);
}

TEST_CASE("mask_area") {
    CHECK(mask_area(BinaryMask(4, 4)) == 0);
    CHECK(mask_area(testing::box_mask(4, 4, {0, 0, 3, 3})) == 16);
    BinaryMask l(5, 5);
    for (int y = 0; y < 3; ++y) l.set(1, y);
    l.set(2, 2);
    l.set(3, 2);
    CHECK(mask_area(l) == 5);
}

TEST_CASE("mask_to_bbox") {
    BinaryMask m(20, 20);
    m.set(5, 7);
    CHECK(mask_to_bbox(m) == BBox{5, 7, 5, 7});
    BinaryMask two(20, 20);
    two.set(1, 2);
    two.set(4, 9);
    CHECK(mask_to_bbox(two) == BBox{1, 2, 4, 9});
    CHECK(mask_to_bbox(testing::box_mask(13, 9, {0, 0, 12, 8})) == BBox{0, 0, 12, 8});
    CHECK_THROWS_AS(mask_to_bbox(BinaryMask(4, 4)), EmptyMaskError);
}

TEST_CASE("inflate_bbox") {
    CHECK(inflate_bbox({10, 10, 19, 19}, 0.1, 100, 100) == BBox{9, 9, 20, 20});
    CHECK(inflate_bbox({10, 10, 19, 19}, 0.0, 100, 100) == BBox{10, 10, 19, 19});
    CHECK(inflate_bbox({0, 0, 9, 9}, 0.5, 12, 12) == BBox{0, 0, 11, 11});
    // height 20 -> 2 px, width 10 -> 1 px
    CHECK(inflate_bbox({10, 10, 19, 29}, 0.1, 100, 100) == BBox{9, 8, 20, 31});
}

TEST_CASE("rle layout") {
    CHECK(rle_encode(BinaryMask(4, 3)) == RunLengths{12});
    CHECK(rle_encode(testing::box_mask(4, 3, {0, 0, 3, 2})) == RunLengths{0, 12});
    BinaryMask m(4, 2);
    m.set(1, 0);
    m.set(2, 0);
    m.set(3, 1);
    CHECK(rle_encode(m) == RunLengths{1, 2, 4, 1});
    const RunLengths bad{3, 2};
    CHECK_THROWS_AS(rle_decode(bad, 4, 2), GeometryError);
}

TEST_CASE("property: rle round trip and iou symmetry") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 1 + static_cast<int>(rng() % 23), h = 1 + static_cast<int>(rng() % 17);
        const auto a = testing::random_mask(rng, w, h, 0.1 + 0.8 * (trial % 5) / 4.0);
        const auto b = testing::random_mask(rng, w, h, 0.3);
        const auto runs = rle_encode(a);
        REQUIRE(rle_decode(runs, w, h) == a);

        const double ab = mask_iou(a, b);
        CHECK(ab == mask_iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        if (!a.empty()) CHECK(mask_iou(a, a) == 1.0);
    }
}

TEST_CASE("property: mask_to_bbox is tight and inflate is monotone") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = testing::random_mask(rng, 30, 20, 0.02);
        if (m.empty()) continue;
        const auto box = mask_to_bbox(m);
        bool on_left = false, on_right = false, on_top = false, on_bottom = false;
        for (const auto& p : m.points()) {
            REQUIRE(box.contains(BBox{p.x, p.y, p.x, p.y}));
            on_left |= p.x == box.x_min;
            on_right |= p.x == box.x_max;
            on_top |= p.y == box.y_min;
            on_bottom |= p.y == box.y_max;
        }
        CHECK((on_left && on_right && on_top && on_bottom));

        const double margin = (trial % 7) * 0.05;
        const auto grown = inflate_bbox(box, margin, 30, 20);
        CHECK(grown.contains(box));
        CHECK(grown.x_max < 30);
        CHECK(grown.y_max < 20);
        CHECK(inflate_bbox(box, 0.0, 30, 20) == box);
    }
}

TEST_CASE("mask source names") {
    for (auto s : {MaskSource::Initial, MaskSource::Manual, MaskSource::Model, MaskSource::Recovery})
        CHECK(mask_source_from_string(to_string(s)) == s);
    CHECK(is_trusted(MaskSource::Manual));
    CHECK_FALSE(is_trusted(MaskSource::Recovery));
}
