#include "doctest.h"

#include "samqa/image.hpp"
#include "samqa/morphology.hpp"
#include "samqa/watershed.hpp"
#include "test_support.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace samqa;

using testing::Bump;
using testing::bumps;
using testing::steepest_ascent_label;
using testing::threshold;

namespace {

std::pair<int, int> argmax_in(const Heatmap& h, int x0, int x1, int y0, int y1) {
    std::pair<int, int> best{x0, y0};
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (h.at(x, y) > h.at(best.first, best.second)) best = {x, y};
    return best;
}

void check_partition(const LabelMap& labels, const BinaryMask& fg, int n) {
    int bad = 0;
    for (int y = 0; y < fg.height(); ++y)
        for (int x = 0; x < fg.width(); ++x) {
            const int l = labels.at(x, y);
            if (fg.at(x, y) ? (l < 0 || l >= n) : l != -1) ++bad;
        }
    CHECK(bad == 0);
}

double brute_kmeans_best(const std::vector<std::pair<int, int>>& pts) {
    // minimum two-cluster inertia over all 2^n splits with both sides nonempty
    const int n = static_cast<int>(pts.size());
    double best = 1e300;
    for (int mask = 1; mask < (1 << n) - 1; ++mask) {
        double total = 0;
        for (int side = 0; side < 2; ++side) {
            double sx = 0, sy = 0;
            int c = 0;
            for (int i = 0; i < n; ++i)
                if (((mask >> i) & 1) == side) {
                    sx += pts[i].first;
                    sy += pts[i].second;
                    ++c;
                }
            sx /= c;
            sy /= c;
            for (int i = 0; i < n; ++i)
                if (((mask >> i) & 1) == side)
                    total += (pts[i].first - sx) * (pts[i].first - sx) + (pts[i].second - sy) * (pts[i].second - sy);
        }
        best = std::min(best, total);
    }
    return best;
}

PeakParams params_for(int n, double r) {
    PeakParams p;
    p.expected_count = n;
    p.exclusion_radius = r;
    return p;
}

}  // namespace

TEST_CASE("heatmap file round trip and PNG fallback") {
    const auto dir = std::filesystem::temp_directory_path() / "samqa_heatmap_test";
    std::filesystem::create_directories(dir);
    Heatmap h(5, 3);
    for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] = static_cast<float>(i) * 0.25 - 1.5;
    save_heatmap(dir / "h.sqhm", h);
    const auto back = load_heatmap(dir / "h.sqhm");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.values == h.values);

    {
        std::ofstream f(dir / "short.sqhm", std::ios::binary);
        f.write("SQHM\x05\x00\x00\x00\x03\x00\x00\x00\x00\x00", 14);
    }
    CHECK_THROWS_AS(load_heatmap(dir / "short.sqhm"), WatershedError);
    {
        std::ofstream f(dir / "junk.bin", std::ios::binary);
        f << "not a heatmap";
    }
    CHECK_THROWS_AS(load_heatmap(dir / "junk.bin"), WatershedError);

    GrayImage img(2, 1);
    img.at(0, 0) = 0;
    img.at(1, 0) = 255;
    write_png(dir / "p.png", img);
    const auto fromPng = load_heatmap(dir / "p.png");
    CHECK(fromPng.at(0, 0) == doctest::Approx(std::log(0.5 / 255.5)));
    CHECK(fromPng.at(1, 0) == doctest::Approx(std::log(255.5 / 0.5)));
    std::filesystem::remove_all(dir);
}

TEST_CASE("extract_peaks reference cases") {
    const double r = 6;
    SUBCASE("two bumps 3r apart give both apexes") {
        const auto h = bumps(48, 32, {{12.3, 15.7, 4, 8}, {12.3 + 3 * r, 14.2, 4, 7}});
        const auto seeds = extract_peaks(h, params_for(2, r));
        REQUIRE(seeds.size() == 2u);
        const auto a = argmax_in(h, 0, 20, 0, 31), b = argmax_in(h, 21, 47, 0, 31);
        CHECK(seeds[0].x == a.first);
        CHECK(seeds[0].y == a.second);
        CHECK(seeds[1].x == b.first);
        CHECK(seeds[1].y == b.second);
    }
    SUBCASE("single bump yields one seed") {
        const auto h = bumps(32, 32, {{16, 16, 5, 8}});
        CHECK(extract_peaks(h, params_for(2, r)).size() == 1u);
    }
    SUBCASE("constant heatmap takes the first pixel") {
        const Heatmap h(10, 10, 1.0);
        const auto seeds = extract_peaks(h, params_for(1, r));
        REQUIRE(seeds.size() == 1u);
        CHECK(seeds[0] == Seed{0, 0, 1.0});
    }
    SUBCASE("nothing above the threshold") {
        const Heatmap h(10, 10, -1.0);
        CHECK(extract_peaks(h, params_for(2, r)).empty());
    }
    SUBCASE("overlap removal drops the weaker of two close peaks") {
        const auto h = bumps(48, 32, {{10, 16, 2, 8}, {20, 16, 2, 6}});
        auto p = params_for(2, 4);
        CHECK(extract_peaks(h, p).size() == 2u);
        p.overlap_removal_distance = 12;
        const auto seeds = extract_peaks(h, p);
        REQUIRE(seeds.size() == 1u);
        CHECK(seeds[0].x == 10);
    }
}

TEST_CASE("extract_peaks properties on random heatmaps") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Bump> bs;
        const int k = 1 + static_cast<int>(u(rng) * 5);
        for (int i = 0; i < k; ++i) bs.push_back({u(rng) * 40, u(rng) * 40, 1.5 + 4 * u(rng), 2 + 6 * u(rng)});
        const auto h = bumps(40, 40, bs);
        auto p = params_for(1 + static_cast<int>(u(rng) * 4), 2 + 8 * u(rng));
        if (u(rng) < 0.5) p.overlap_removal_distance = 2 + 16 * u(rng);
        const auto seeds = extract_peaks(h, p);
        CHECK(static_cast<int>(seeds.size()) <= p.expected_count);
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            CHECK(seeds[i].value == h.at(seeds[i].x, seeds[i].y));
            CHECK(seeds[i].value >= p.binarize_threshold);
            if (i > 0) CHECK(seeds[i - 1].value >= seeds[i].value);
            for (std::size_t j = 0; j < i; ++j) {
                const double d = std::hypot(seeds[i].x - seeds[j].x, seeds[i].y - seeds[j].y);
                CHECK(d >= p.overlap_distance());
                CHECK(d > p.exclusion_radius);
            }
        }
        // the strongest pixel at or above threshold is always picked first
        const auto top = argmax_in(h, 0, 39, 0, 39);
        if (h.at(top.first, top.second) >= 0) {
            REQUIRE(!seeds.empty());
            CHECK(seeds[0].value == h.at(top.first, top.second));
        }
    }
}

TEST_CASE("clean_foreground") {
    PeakParams p = params_for(1, 4);
    SUBCASE("speck removed, blob kept") {
        Heatmap h(40, 40, -3.0);
        for (int y = 8; y < 20; ++y)
            for (int x = 8; x < 20; ++x) h.at(x, y) = 3.0;
        for (int y = 30; y < 33; ++y)
            for (int x = 30; x < 33; ++x) h.at(x, y) = 3.0;  // 9 px, survives opening
        h.at(2, 35) = 3.0;                                 // single pixel, opened away
        const auto fg = clean_foreground(h, p);
        const auto comps = connected_components(fg);
        REQUIRE(comps.count() == 1);
        CHECK(comps.areas[0] == 144);
        CHECK(fg.at(8, 8));
    }
    SUBCASE("component kept when above the fraction") {
        Heatmap h(40, 40, -3.0);
        for (int y = 4; y < 14; ++y)
            for (int x = 4; x < 14; ++x) h.at(x, y) = 3.0;  // 100
        for (int y = 25; y < 30; ++y)
            for (int x = 25; x < 30; ++x) h.at(x, y) = 3.0;  // 25 >= 20
        CHECK(connected_components(clean_foreground(h, p)).count() == 2);
        p.small_region_fraction = 0.3;
        CHECK(connected_components(clean_foreground(h, p)).count() == 1);
    }
    SUBCASE("disc unchanged up to its rim") {
        const auto h = bumps(40, 40, {{20, 20, 6, 8}});
        const auto raw = threshold(h, 0.0);
        const auto fg = clean_foreground(h, p);
        int interior_changes = 0;
        const auto inner = erode(raw, 3);
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 40; ++x)
                if (inner.at(x, y) && !fg.at(x, y)) ++interior_changes;
        CHECK(interior_changes == 0);
        CHECK(mask_area(fg) >= mask_area(inner));
        CHECK(mask_area(fg) <= mask_area(dilate(raw, 3)));
    }
    SUBCASE("empty") {
        CHECK(clean_foreground(Heatmap(16, 16, -2.0), p).empty());
    }
}

TEST_CASE("recover_missed_seeds") {
    Heatmap h(30, 20, -3.0);
    for (int y = 2; y < 8; ++y)
        for (int x = 2; x < 8; ++x) h.at(x, y) = 1.0 + 0.01 * x;
    for (int y = 10; y < 18; ++y)
        for (int x = 15; x < 25; ++x) h.at(x, y) = 1.0 + 0.01 * y;
    h.at(3, 19) = 2.0;
    const auto fg = threshold(h, 0.0);
    auto p = params_for(2, 3);

    std::vector<Seed> one{{5, 5, h.at(5, 5)}};
    const auto rec = recover_missed_seeds(fg, one, h, p);
    REQUIRE(rec.size() == 2u);
    CHECK(rec[1] == Seed{15, 17, h.at(15, 17)});

    p.expected_count = 3;
    const auto three = recover_missed_seeds(fg, {}, h, p);
    REQUIRE(three.size() == 3u);
    // largest component first, then the 36-px one, then the single pixel
    CHECK(three[0].y == 17);
    CHECK(three[1] == Seed{7, 2, h.at(7, 2)});
    CHECK(three[2] == Seed{3, 19, 2.0});

    p.expected_count = 1;
    CHECK(recover_missed_seeds(fg, one, h, p) == one);
    p.expected_count = 5;
    CHECK(recover_missed_seeds(fg, three, h, p) == three);
}

TEST_CASE("watershed matches the steepest-ascent oracle") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    long long checked = 0, agree = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const Bump a{6 + 6 * u(rng), 8 + 16 * u(rng), 3 + 2 * u(rng), 6 + 3 * u(rng)};
        const Bump b{20 + 6 * u(rng), 8 + 16 * u(rng), 3 + 2 * u(rng), 6 + 3 * u(rng)};
        const auto h = bumps(32, 32, {a, b});
        const auto fg = threshold(h, 0.0);
        auto seeds = extract_peaks(h, params_for(2, 6));
        REQUIRE(seeds.size() == 2u);
        const auto labels = watershed(h, seeds, fg);
        check_partition(labels, fg, 2);
        for (std::size_t i = 0; i < seeds.size(); ++i) CHECK(labels.at(seeds[i].x, seeds[i].y) == static_cast<int>(i));
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                if (!fg.at(x, y)) continue;
                const int want = steepest_ascent_label(h, fg, seeds, x, y);
                if (want < 0) continue;
                ++checked;
                agree += labels.at(x, y) == want;
            }
    }
    CHECK(checked > 5000);
    CHECK(agree == checked);
}

TEST_CASE("watershed edge cases") {
    const auto h = bumps(24, 24, {{12, 12, 4, 8}});
    const auto fg = threshold(h, 0.0);
    const auto one = watershed(h, {{12, 12, h.at(12, 12)}}, fg);
    check_partition(one, fg, 1);
    CHECK(one.area(0) == mask_area(fg));

    CHECK_THROWS_AS(watershed(h, {{0, 0, h.at(0, 0)}}, fg), WatershedError);
    CHECK_THROWS_AS(watershed(h, {{12, 12, 0}, {12, 12, 0}}, fg), WatershedError);
    CHECK_THROWS_AS(watershed(h, {}, fg), WatershedError);
    CHECK(watershed(h, {}, BinaryMask(24, 24)).area(-1) == 24 * 24);

    // a seedless island goes to the nearest seed
    auto island = fg;
    island.set(0, 0);
    const auto labels = watershed(h, {{12, 12, 0}, {14, 12, 0}}, island);
    CHECK(labels.at(0, 0) == 0);
    check_partition(labels, island, 2);
}

TEST_CASE("symmetric bumps give equal areas") {
    for (int w : {32, 48, 64}) {
        const double mid = (w - 1) / 2.0;
        const double off = w / 4.0 + 0.5;
        SUBCASE("two bumps") {
            const auto h = bumps(w, w, {{mid - off, mid, w / 10.0, 8}, {mid + off, mid, w / 10.0, 8}});
            const auto r = heatmap_to_instances(h, params_for(2, w / 8.0));
            REQUIRE(r.instances.size() == 2u);
            const auto a0 = mask_area(r.instances[0].mask), a1 = mask_area(r.instances[1].mask);
            CHECK(std::llabs(a0 - a1) <= 1);
        }
        SUBCASE("four bumps") {
            std::vector<Bump> bs;
            for (int sx : {-1, 1})
                for (int sy : {-1, 1}) bs.push_back({mid + sx * off, mid + sy * off, w / 12.0, 8});
            const auto r = heatmap_to_instances(bumps(w, w, bs), params_for(4, w / 8.0));
            REQUIRE(r.instances.size() == 4u);
            long long lo = 1LL << 40, hi = 0;
            for (const auto& inst : r.instances) {
                lo = std::min(lo, mask_area(inst.mask));
                hi = std::max(hi, mask_area(inst.mask));
            }
            CHECK(hi - lo <= 1);
        }
    }
}

TEST_CASE("k-means against the exhaustive optimum") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> jitter(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        LabelMap labels{30, 20, std::vector<int>(600, -1)};
        std::vector<std::pair<int, int>> pts;
        auto put = [&](int x, int y, int l) {
            if (labels.labels[y * 30 + x] >= 0) return;
            labels.labels[y * 30 + x] = l;
            pts.emplace_back(x, y);
        };
        for (int i = 0; i < 6; ++i) put(2 + jitter(rng), 3 + jitter(rng) + i % 2, 0);
        for (int i = 0; i < 6; ++i) put(22 + jitter(rng), 12 + jitter(rng), trial % 2);  // sometimes mislabeled
        const auto r = refine_kmeans(labels, 2);
        CHECK(r.converged);
        CHECK(r.trace.back() == doctest::Approx(brute_kmeans_best(pts)).epsilon(1e-9));
        for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-9);
        // the two clouds end up in different clusters
        CHECK(r.labels.at(pts[0].first, pts[0].second) != r.labels.at(pts.back().first, pts.back().second));
        check_partition(r.labels, labels.foreground(), 2);
    }
}

TEST_CASE("clustering edge cases") {
    LabelMap labels{4, 4, std::vector<int>(16, -1)};
    labels.labels[5] = 0;
    labels.labels[6] = 0;
    const auto one = refine_kmeans(labels, 1);
    CHECK(one.labels.area(0) == 2);
    CHECK_THROWS_AS(refine_kmeans(labels, 3), WatershedError);
    CHECK_THROWS_AS(refine_kmeans(LabelMap{4, 4, std::vector<int>(16, -1)}, 1), WatershedError);
    CHECK_THROWS_AS(refine_gmm(labels, 3), WatershedError);
    const auto g = refine_gmm(labels, 2);
    CHECK(g.labels.area(0) == 1);
    CHECK(g.labels.area(1) == 1);
}

TEST_CASE("k-means inertia and GMM log-likelihood are monotone") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<Bump> bs;
        const int k = 2 + trial % 3;
        for (int i = 0; i < k; ++i) bs.push_back({6 + 52 * u(rng), 6 + 52 * u(rng), 3 + 5 * u(rng), 4 + 4 * u(rng)});
        const auto h = bumps(64, 64, bs);
        auto p = params_for(k, 5);
        const auto base = heatmap_to_instances(h, p);
        if (base.foreground.empty() || mask_area(base.foreground) < k) continue;

        const auto km = refine_kmeans(base.labels, k);
        for (std::size_t i = 1; i < km.trace.size(); ++i) CHECK(km.trace[i] <= km.trace[i - 1] + 1e-4);
        check_partition(km.labels, base.foreground, k);

        const auto gmm = refine_gmm(base.labels, k, 100, 1e-4);
        for (std::size_t i = 1; i < gmm.trace.size(); ++i) CHECK(gmm.trace[i] >= gmm.trace[i - 1] - 1e-4);
        check_partition(gmm.labels, base.foreground, k);
    }
}

TEST_CASE("heatmap_to_instances end to end") {
    SUBCASE("two separated bumps match their thresholded components") {
        const auto h = bumps(64, 40, {{16, 20, 4, 8}, {46, 18, 5, 8}});
        const auto r = heatmap_to_instances(h, params_for(2, 8));
        REQUIRE(r.instances.size() == 2u);
        const auto comps = connected_components(threshold(h, 0.0));
        REQUIRE(comps.count() == 2);
        for (int c = 0; c < 2; ++c) {
            BinaryMask m(64, 40);
            for (int y = 0; y < 40; ++y)
                for (int x = 0; x < 64; ++x)
                    if (comps.at(x, y) == c) m.set(x, y);
            const bool hit = r.instances[0].mask == m || r.instances[1].mask == m;
            CHECK(hit);
        }
    }
    SUBCASE("empty foreground") {
        const auto r = heatmap_to_instances(Heatmap(16, 16, -5.0), params_for(2, 4));
        CHECK(r.instances.empty());
        CHECK(r.seeds.empty());
    }
    SUBCASE("missed seed recovered from a second blob") {
        // the second blob's peak is below the first's exclusion radius cut but
        // in its own component, so recovery supplies it
        auto p = params_for(2, 30);
        const auto h = bumps(64, 40, {{12, 20, 4, 8}, {36, 20, 4, 6}});
        const auto r = heatmap_to_instances(h, p);
        REQUIRE(r.seeds.size() == 2u);
        CHECK(r.seeds[1].x == 36);
        CHECK(r.instances.size() == 2u);
    }
    SUBCASE("clustering keeps the foreground") {
        const auto h = bumps(48, 48, {{14, 14, 5, 8}, {32, 30, 5, 8}});
        for (auto c : {Clustering::KMeans, Clustering::Gmm}) {
            auto p = params_for(2, 6);
            p.clustering = c;
            const auto r = heatmap_to_instances(h, p);
            REQUIRE(r.instances.size() == 2u);
            CHECK(mask_area(r.instances[0].mask) + mask_area(r.instances[1].mask) == mask_area(r.foreground));
            CHECK(!r.trace.empty());
        }
    }
}
