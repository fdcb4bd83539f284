#include "doctest.h"

#include "samqa/density_filter.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <numbers>

using namespace samqa;

namespace {

double max_rel_error(const std::vector<double>& got, const std::vector<double>& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]) / std::abs(want[i]));
    return worst;
}

}  // namespace

TEST_CASE("kde: single point uses the bandwidth floor") {
    const std::vector<Point> one{{4, 9}};
    const auto d = kde_density(one, {});
    REQUIRE(d.size() == 1);
    CHECK(d[0] == doctest::Approx(1.0 / (2.0 * std::numbers::pi)).epsilon(1e-12));
    CHECK_THROWS_AS(kde_density(std::vector<Point>{}, {}), DensityError);
}

TEST_CASE("kde: zero spread on one axis falls back to the floor") {
    std::vector<Point> line;
    for (int x = 0; x < 10; ++x) line.push_back({x, 3});
    const auto bw = scott_bandwidth(line, {});
    CHECK(bw.x == 1.0);
    CHECK(bw.y == 1.0);
    CHECK(max_rel_error(kde_density(line, {}), testing::brute_force_kde(line)) < 1e-9);
}

TEST_CASE("kde: mirrored clusters have mirrored densities") {
    std::vector<Point> pts;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 4; ++x) {
            pts.push_back({10 + x, 10 + y});
            pts.push_back({49 - x, 10 + y});
        }
    const auto d = kde_density(pts, {});
    for (std::size_t i = 0; i < pts.size(); i += 2) CHECK(std::abs(d[i] - d[i + 1]) < 1e-9 * d[i]);
}

TEST_CASE("kde: isolated point has the strictly smallest density") {
    std::vector<Point> pts;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 10; ++x) pts.push_back({20 + x, 20 + y});
    pts.push_back({125, 22});
    const auto oracle = testing::brute_force_kde(pts);
    const auto d = kde_density(pts, {});
    CHECK(max_rel_error(d, oracle) < 1e-9);
    for (std::size_t i = 0; i + 1 < d.size(); ++i) CHECK(d.back() < d[i]);
}

TEST_CASE("kde: matches the brute-force oracle on random masks") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        const auto m = testing::random_mask(rng, 40, 30, 0.05 + 0.3 * (trial % 3));
        auto pts = m.points();
        if (pts.size() > 500) pts.resize(500);
        if (pts.empty()) continue;
        CHECK(max_rel_error(kde_density(pts, {}), testing::brute_force_kde(pts)) < 1e-9);
    }
}

TEST_CASE("kde: permutation and translation invariance") {
    std::mt19937_64 rng(5);
    auto pts = testing::random_mask(rng, 25, 25, 0.2).points();
    const auto base = kde_density(pts, {});

    std::vector<std::size_t> order(pts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Point> shuffled, shifted;
    for (auto i : order) shuffled.push_back(pts[i]);
    for (const auto& p : pts) shifted.push_back({p.x + 37, p.y + 11});

    const auto ds = kde_density(shuffled, {});
    for (std::size_t k = 0; k < order.size(); ++k) CHECK(ds[k] == doctest::Approx(base[order[k]]).epsilon(1e-12));
    const auto dt = kde_density(shifted, {});
    for (std::size_t k = 0; k < pts.size(); ++k) CHECK(dt[k] == doctest::Approx(base[k]).epsilon(1e-12));
}

TEST_CASE("percentile_linear") {
    CHECK(percentile_linear({4, 1, 3, 2}, 20) == doctest::Approx(1.6));
    CHECK(percentile_linear({5}, 20) == 5);
    CHECK(percentile_linear({1, 2, 3}, 100) == 3);
    CHECK(percentile_linear({1, 2, 3}, 0) == 1);
}

TEST_CASE("percentile cut keeps at least floor(0.8 n) minus ties") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = testing::random_mask(rng, 30, 30, 0.15).points();
        if (pts.empty()) continue;
        const auto d = kde_density(pts, {});
        const double tau = percentile_linear(d, 20);
        const auto kept = std::count_if(d.begin(), d.end(), [&](double v) { return v > tau; });
        const auto ties = std::count(d.begin(), d.end(), tau);
        const auto need = static_cast<long>(std::floor(0.8 * static_cast<double>(d.size()))) - ties;
        CHECK(kept >= need);
    }
}

TEST_CASE("dilate") {
    BinaryMask dot(15, 15);
    dot.set(7, 7);
    CHECK(dilate(dot, 3, 1) == testing::box_mask(15, 15, {6, 6, 8, 8}));
    CHECK(dilate(dot, 3, 3) == testing::box_mask(15, 15, {4, 4, 10, 10}));
    CHECK(dilate(dot, 3, 0) == dot);
    CHECK(dilate(dot, 5, 1) == testing::box_mask(15, 15, {5, 5, 9, 9}));

    BinaryMask corner(6, 6);
    corner.set(0, 0);
    CHECK(dilate(corner, 3, 3) == testing::box_mask(6, 6, {0, 0, 3, 3}));
    CHECK_THROWS_AS(dilate(dot, 4, 1), GeometryError);
}

TEST_CASE("remove_outliers: empty in, empty out") {
    CHECK(remove_outliers(BinaryMask(10, 10)).empty());
}

TEST_CASE("remove_outliers: isolated pixel is removed, blob kept") {
    auto m = testing::box_mask(160, 60, {10, 10, 19, 29});
    m.set(119, 20);
    const auto out = remove_outliers(m);
    CHECK_FALSE(out.at(119, 20));
    const auto blob = testing::box_mask(160, 60, {10, 10, 19, 29});
    CHECK(mask_area(mask_and(out, blob)) >= 0.95 * 200);
    CHECK(mask_area(mask_and(out, m)) == mask_area(out));
}

TEST_CASE("remove_outliers: a solid blob survives connected") {
    const auto m = testing::box_mask(40, 40, {5, 8, 24, 27});
    const auto out = remove_outliers(m);
    CHECK_FALSE(out.empty());
    CHECK(connected_components(out).count() == 1);
    CHECK(mask_area(mask_and(out, m)) == mask_area(out));
}

TEST_CASE("remove_outliers: tied densities keep the input") {
    BinaryMask two(10, 10);
    two.set(2, 2);
    two.set(7, 7);
    CHECK(remove_outliers(two) == two);
}

TEST_CASE("property: remove_outliers is a deterministic, translation-equivariant subset") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        BinaryMask m(80, 80), shifted(80, 80);
        auto blob = testing::random_mask(rng, 20, 20, 0.6);
        for (const auto& p : blob.points()) {
            m.set(p.x + 20, p.y + 20);
            shifted.set(p.x + 35, p.y + 27);
        }
        const auto out = remove_outliers(m);
        CHECK(out == remove_outliers(m));
        CHECK(mask_area(mask_and(out, m)) == mask_area(out));
        const auto out_shifted = remove_outliers(shifted);
        for (const auto& p : out.points()) CHECK(out_shifted.at(p.x + 15, p.y + 7));
        CHECK(mask_area(out) == mask_area(out_shifted));
    }
}

TEST_CASE("density params validation") {
    DensityParams p;
    p.percentile = 120;
    CHECK_THROWS_AS(p.validate(), DensityError);
    p = {};
    p.dilation_kernel = 2;
    CHECK_THROWS_AS(p.validate(), DensityError);
}
