#include "samqa/density_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace samqa {

void DensityParams::validate() const {
    if (!(percentile >= 0.0 && percentile <= 100.0))
        throw DensityError("percentile must lie in [0, 100]");
    if (dilation_kernel < 1 || dilation_kernel % 2 == 0)
        throw DensityError("dilation kernel must be odd and >= 1");
    if (dilation_iterations < 0) throw DensityError("dilation iterations must be >= 0");
    if (!(bandwidth_floor > 0.0)) throw DensityError("bandwidth floor must be positive");
}

Bandwidth scott_bandwidth(std::span<const Point> points, const DensityParams& params) {
    const auto n = static_cast<double>(points.size());
    if (points.size() < 2 || static_cast<int>(points.size()) < params.min_points)
        return {params.bandwidth_floor, params.bandwidth_floor};

    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0;
    for (const auto& p : points) {
        vx += (p.x - mx) * (p.x - mx);
        vy += (p.y - my) * (p.y - my);
    }
    const double sx = std::sqrt(vx / (n - 1.0));
    const double sy = std::sqrt(vy / (n - 1.0));
    if (sx == 0.0 || sy == 0.0) return {params.bandwidth_floor, params.bandwidth_floor};

    const double factor = std::pow(n, -1.0 / 6.0);
    return {factor * sx, factor * sy};
}

std::vector<double> kde_density(std::span<const Point> points, const DensityParams& params) {
    if (points.empty()) throw DensityError("kde_density: no points");
    const Bandwidth bw = scott_bandwidth(points, params);

    int x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
    for (const auto& p : points) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const int w = x1 - x0 + 1;
    const int h = y1 - y0 + 1;

    constexpr double kTruncation = 9.0;
    const int rx = std::min(w - 1, static_cast<int>(std::ceil(kTruncation * bw.x)));
    const int ry = std::min(h - 1, static_cast<int>(std::ceil(kTruncation * bw.y)));
    std::vector<double> gx(rx + 1), gy(ry + 1);
    for (int d = 0; d <= rx; ++d) gx[d] = std::exp(-0.5 * (d / bw.x) * (d / bw.x));
    for (int d = 0; d <= ry; ++d) gy[d] = std::exp(-0.5 * (d / bw.y) * (d / bw.y));

    // Point counts on the bounding-box grid (duplicates accumulate).
    std::vector<double> counts(static_cast<std::size_t>(w) * h, 0.0);
    for (const auto& p : points) counts[static_cast<std::size_t>(p.y - y0) * w + (p.x - x0)] += 1.0;

    // Horizontal pass over every row that holds at least one point.
    std::vector<double> row_sum(counts.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        const double* src = &counts[static_cast<std::size_t>(y) * w];
        double* dst = &row_sum[static_cast<std::size_t>(y) * w];
        for (int xs = 0; xs < w; ++xs) {
            if (src[xs] == 0.0) continue;
            const int lo = std::max(0, xs - rx), hi = std::min(w - 1, xs + rx);
            for (int x = lo; x <= hi; ++x) dst[x] += src[xs] * gx[std::abs(x - xs)];
        }
    }

    const double norm =
        1.0 / (static_cast<double>(points.size()) * 2.0 * std::numbers::pi * bw.x * bw.y);
    std::vector<double> density;
    density.reserve(points.size());
    for (const auto& p : points) {
        const int x = p.x - x0, y = p.y - y0;
        const int lo = std::max(0, y - ry), hi = std::min(h - 1, y + ry);
        double sum = 0.0;
        for (int ys = lo; ys <= hi; ++ys)
            sum += row_sum[static_cast<std::size_t>(ys) * w + x] * gy[std::abs(y - ys)];
        density.push_back(sum * norm);
    }
    return density;
}

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw DensityError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

BinaryMask remove_outliers(const BinaryMask& mask, const DensityParams& params) {
    params.validate();
    const auto points = mask.points();
    if (points.empty()) return BinaryMask(mask.width(), mask.height());

    const auto density = kde_density(points, params);
    const double tau = percentile_linear(density, params.percentile);

    BinaryMask kept(mask.width(), mask.height());
    bool any = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (density[i] > tau) {
            kept.set(points[i].x, points[i].y);
            any = true;
        }
    }
    // Every density tied at the threshold: nothing is distinguishable as an outlier.
    if (!any) return mask;

    return mask_and(dilate(kept, params.dilation_kernel, params.dilation_iterations), mask);
}

}  // namespace samqa
