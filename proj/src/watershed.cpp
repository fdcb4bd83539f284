#include "samqa/watershed.hpp"

#include "samqa/image.hpp"
#include "samqa/morphology.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <queue>
#include <tuple>

namespace samqa {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'S', 'Q', 'H', 'M'};
constexpr int kDx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr int kDy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};

std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

double dist2(double ax, double ay, double bx, double by) {
    return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

struct Point2 {
    double x = 0, y = 0;
};

std::vector<int> foreground_indices(const LabelMap& labels) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < labels.labels.size(); ++i)
        if (labels.labels[i] >= 0) idx.push_back(static_cast<int>(i));
    return idx;
}

int nearest(const std::vector<Point2>& centers, Point2 p, double* d2_out = nullptr) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = dist2(p.x, p.y, centers[k].x, centers[k].y);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    if (d2_out) *d2_out = best_d;
    return best;
}

}  // namespace

Heatmap load_heatmap(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw WatershedError("cannot open heatmap " + file.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() >= 4 && std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        if (bytes.size() < 12) throw WatershedError("heatmap header truncated");
        const auto w = read_u32le(bytes.data() + 4), h = read_u32le(bytes.data() + 8);
        if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15) throw WatershedError("heatmap size out of range");
        const std::size_t n = static_cast<std::size_t>(w) * h;
        if (bytes.size() != 12 + 4 * n) throw WatershedError("heatmap payload size mismatch");
        Heatmap out(static_cast<int>(w), static_cast<int>(h));
        for (std::size_t i = 0; i < n; ++i) {
            const auto bits = read_u32le(bytes.data() + 12 + 4 * i);
            const auto v = std::bit_cast<float>(bits);
            if (!std::isfinite(v)) throw WatershedError("heatmap value is not finite");
            out.values[i] = v;
        }
        return out;
    }

    GrayImage img;
    try {
        img = decode_png(bytes);
    } catch (const std::exception&) {
        throw WatershedError("heatmap is neither SQHM nor PNG: " + file.string());
    }
    Heatmap out(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double p = (img.pixels[i] + 0.5) / 256.0;
        out.values[i] = std::log(p / (1.0 - p));
    }
    return out;
}

void save_heatmap(const std::filesystem::path& file, const Heatmap& heatmap) {
    std::vector<std::uint8_t> bytes(kMagic.begin(), kMagic.end());
    put_u32le(bytes, static_cast<std::uint32_t>(heatmap.width));
    put_u32le(bytes, static_cast<std::uint32_t>(heatmap.height));
    for (double v : heatmap.values) put_u32le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw WatershedError("cannot write heatmap " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Clustering clustering_from_string(std::string_view name) {
    if (name == "none") return Clustering::None;
    if (name == "kmeans") return Clustering::KMeans;
    if (name == "gmm") return Clustering::Gmm;
    throw std::invalid_argument("unknown clustering: " + std::string(name));
}

std::string_view to_string(Clustering c) {
    switch (c) {
        case Clustering::None: return "none";
        case Clustering::KMeans: return "kmeans";
        case Clustering::Gmm: return "gmm";
    }
    return "none";
}

void PeakParams::validate() const {
    if (expected_count < 1) throw std::invalid_argument("expected_count must be >= 1");
    if (!(exclusion_radius > 0)) throw std::invalid_argument("exclusion_radius must be > 0");
    if (morphology_kernel < 1 || morphology_kernel % 2 == 0)
        throw std::invalid_argument("morphology_kernel must be odd and positive");
    if (small_region_fraction < 0 || small_region_fraction > 1)
        throw std::invalid_argument("small_region_fraction must be in [0, 1]");
    if (em_max_iters < 1) throw std::invalid_argument("em_max_iters must be >= 1");
    if (!(em_tol >= 0)) throw std::invalid_argument("em_tol must be >= 0");
}

BinaryMask LabelMap::mask(int label) const {
    BinaryMask m(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (at(x, y) == label) m.set(x, y);
    return m;
}

BinaryMask LabelMap::foreground() const {
    BinaryMask m(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (at(x, y) >= 0) m.set(x, y);
    return m;
}

long long LabelMap::area(int label) const {
    return std::count(labels.begin(), labels.end(), label);
}

std::vector<Seed> extract_peaks(const Heatmap& h, const PeakParams& params) {
    params.validate();
    if (h.values.empty()) throw WatershedError("heatmap is empty");

    std::vector<Seed> candidates;
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x) {
            const double v = h.at(x, y);
            if (v < params.binarize_threshold) continue;
            bool is_max = true;
            for (int k = 0; k < 8 && is_max; ++k) {
                const int nx = x + kDx[k], ny = y + kDy[k];
                if (nx >= 0 && ny >= 0 && nx < h.width && ny < h.height && h.at(nx, ny) > v) is_max = false;
            }
            if (is_max) candidates.push_back({x, y, v});
        }
    // stable: equal values stay in scan order
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Seed& a, const Seed& b) { return a.value > b.value; });

    const double r2 = params.exclusion_radius * params.exclusion_radius;
    std::vector<Seed> picked;
    for (const auto& c : candidates) {
        if (static_cast<int>(picked.size()) == params.expected_count) break;
        const bool suppressed = std::any_of(picked.begin(), picked.end(), [&](const Seed& p) {
            return dist2(c.x, c.y, p.x, p.y) <= r2;
        });
        if (!suppressed) picked.push_back(c);
    }

    const double d2 = params.overlap_distance() * params.overlap_distance();
    std::vector<Seed> kept;
    for (const auto& p : picked) {
        const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Seed& k) {
            return dist2(p.x, p.y, k.x, k.y) < d2;
        });
        if (!overlaps) kept.push_back(p);
    }
    return kept;
}

BinaryMask clean_foreground(const Heatmap& h, const PeakParams& params) {
    params.validate();
    BinaryMask fg(h.width, h.height);
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x)
            if (h.at(x, y) >= params.binarize_threshold) fg.set(x, y);
    fg = morph_open(morph_close(fg, params.morphology_kernel), params.morphology_kernel);

    const auto comps = connected_components(fg);
    if (comps.count() == 0) return fg;
    const long long largest = *std::max_element(comps.areas.begin(), comps.areas.end());
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x) {
            const int c = comps.at(x, y);
            if (c >= 0 && static_cast<double>(comps.areas[c]) < params.small_region_fraction * largest)
                fg.set(x, y, false);
        }
    return fg;
}

std::vector<Seed> recover_missed_seeds(const BinaryMask& foreground, std::vector<Seed> seeds, const Heatmap& h,
                                       const PeakParams& params) {
    params.validate();
    if (static_cast<int>(seeds.size()) >= params.expected_count) return seeds;
    const auto comps = connected_components(foreground);

    std::vector<bool> seeded(comps.count(), false);
    for (const auto& s : seeds)
        if (foreground.in_bounds(s.x, s.y) && comps.at(s.x, s.y) >= 0) seeded[comps.at(s.x, s.y)] = true;

    std::vector<int> order;
    for (int c = 0; c < comps.count(); ++c)
        if (!seeded[c]) order.push_back(c);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return comps.areas[a] > comps.areas[b]; });

    for (int c : order) {
        if (static_cast<int>(seeds.size()) >= params.expected_count) break;
        Seed best{-1, -1, -std::numeric_limits<double>::infinity()};
        for (int y = 0; y < h.height; ++y)
            for (int x = 0; x < h.width; ++x)
                if (comps.at(x, y) == c && h.at(x, y) > best.value) best = {x, y, h.at(x, y)};
        seeds.push_back(best);
    }
    return seeds;
}

LabelMap watershed(const Heatmap& h, const std::vector<Seed>& seeds, const BinaryMask& foreground) {
    if (foreground.width() != h.width || foreground.height() != h.height)
        throw WatershedError("foreground and heatmap sizes differ");
    LabelMap out{h.width, h.height, std::vector<int>(h.values.size(), -1)};
    if (foreground.empty()) return out;
    if (seeds.empty()) throw WatershedError("no seeds for a nonempty foreground");

    // (elevation, insertion order, pixel); smallest first
    using Entry = std::tuple<double, std::uint64_t, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    std::uint64_t order = 0;

    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const auto& s = seeds[i];
        if (!foreground.in_bounds(s.x, s.y) || !foreground.at(s.x, s.y))
            throw WatershedError("seed outside the foreground");
        const int idx = s.y * h.width + s.x;
        if (out.labels[idx] >= 0) throw WatershedError("two seeds on one pixel");
        out.labels[idx] = static_cast<int>(i);
        queue.emplace(-h.values[idx], order++, idx);
    }
    while (!queue.empty()) {
        const int idx = std::get<2>(queue.top());
        queue.pop();
        const int x = idx % h.width, y = idx / h.width;
        for (int k = 0; k < 8; ++k) {
            const int nx = x + kDx[k], ny = y + kDy[k];
            if (!foreground.in_bounds(nx, ny) || !foreground.at(nx, ny)) continue;
            const int n = ny * h.width + nx;
            if (out.labels[n] >= 0) continue;
            out.labels[n] = out.labels[idx];
            queue.emplace(-h.values[n], order++, n);
        }
    }

    // components without a seed
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x) {
            const int idx = y * h.width + x;
            if (!foreground.at(x, y) || out.labels[idx] >= 0) continue;
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                const double d = dist2(x, y, seeds[i].x, seeds[i].y);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(i);
                }
            }
            out.labels[idx] = best;
        }
    return out;
}

ClusterResult refine_kmeans(const LabelMap& labels, int n, int max_iters) {
    if (n < 1) throw WatershedError("cluster count must be >= 1");
    const auto fg = foreground_indices(labels);
    if (fg.empty()) throw WatershedError("foreground is empty");
    if (static_cast<std::size_t>(n) > fg.size()) throw WatershedError("more clusters than foreground pixels");

    std::vector<Point2> pts;
    for (int idx : fg) pts.push_back({static_cast<double>(idx % labels.width), static_cast<double>(idx / labels.width)});

    // label centroids, in label order
    std::vector<Point2> centers;
    const int max_label = *std::max_element(labels.labels.begin(), labels.labels.end());
    for (int l = 0; l <= max_label && static_cast<int>(centers.size()) < n; ++l) {
        Point2 sum;
        long long count = 0;
        for (std::size_t i = 0; i < fg.size(); ++i)
            if (labels.labels[fg[i]] == l) {
                sum.x += pts[i].x;
                sum.y += pts[i].y;
                ++count;
            }
        if (count > 0) centers.push_back({sum.x / count, sum.y / count});
    }
    while (static_cast<int>(centers.size()) < n) {
        std::size_t far = 0;
        double far_d = -1;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double d;
            nearest(centers, pts[i], &d);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        centers.push_back(pts[far]);
    }

    ClusterResult result;
    std::vector<int> assign(pts.size(), -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        double inertia = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double d;
            const int k = nearest(centers, pts[i], &d);
            inertia += d;
            if (k != assign[i]) {
                assign[i] = k;
                changed = true;
            }
        }
        result.trace.push_back(inertia);
        result.iterations = it + 1;
        if (!changed) {
            result.converged = true;
            break;
        }
        std::vector<Point2> sum(n);
        std::vector<long long> count(n, 0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sum[assign[i]].x += pts[i].x;
            sum[assign[i]].y += pts[i].y;
            ++count[assign[i]];
        }
        for (int k = 0; k < n; ++k)
            if (count[k] > 0) centers[k] = {sum[k].x / count[k], sum[k].y / count[k]};
    }

    result.labels = {labels.width, labels.height, std::vector<int>(labels.labels.size(), -1)};
    for (std::size_t i = 0; i < fg.size(); ++i) result.labels.labels[fg[i]] = assign[i];
    return result;
}

namespace {

struct Gaussian {
    double weight = 0;
    double mx = 0, my = 0;
    double sxx = 0, sxy = 0, syy = 0;
};

constexpr double kCovReg = 1e-6;

double log_density(const Gaussian& g, const Point2& p) {
    const double det = g.sxx * g.syy - g.sxy * g.sxy;
    const double dx = p.x - g.mx, dy = p.y - g.my;
    const double maha = (g.syy * dx * dx - 2 * g.sxy * dx * dy + g.sxx * dy * dy) / det;
    return std::log(g.weight) - std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * maha;
}

// Weighted moments; resp[i] is the weight of point i.
Gaussian fit(const std::vector<Point2>& pts, const std::vector<double>& resp, std::size_t stride, std::size_t k) {
    Gaussian g;
    double w = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double r = resp[i * stride + k];
        w += r;
        g.mx += r * pts[i].x;
        g.my += r * pts[i].y;
    }
    g.weight = w / static_cast<double>(pts.size());
    if (w <= 0) return g;
    g.mx /= w;
    g.my /= w;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double r = resp[i * stride + k];
        const double dx = pts[i].x - g.mx, dy = pts[i].y - g.my;
        g.sxx += r * dx * dx;
        g.sxy += r * dx * dy;
        g.syy += r * dy * dy;
    }
    g.sxx = g.sxx / w + kCovReg;
    g.sxy = g.sxy / w;
    g.syy = g.syy / w + kCovReg;
    return g;
}

}  // namespace

ClusterResult refine_gmm(const LabelMap& labels, int n, int max_iters, double tol) {
    const auto km = refine_kmeans(labels, n);
    const auto fg = foreground_indices(labels);
    std::vector<Point2> pts;
    for (int idx : fg) pts.push_back({static_cast<double>(idx % labels.width), static_cast<double>(idx / labels.width)});

    const std::size_t k_count = static_cast<std::size_t>(n);
    std::vector<double> resp(pts.size() * k_count, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) resp[i * k_count + km.labels.labels[fg[i]]] = 1.0;
    std::vector<Gaussian> comps(k_count);
    for (std::size_t k = 0; k < k_count; ++k) comps[k] = fit(pts, resp, k_count, k);

    ClusterResult result;
    std::vector<double> logp(k_count);
    for (int it = 0; it < max_iters; ++it) {
        // E-step
        double ll = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < k_count; ++k) {
                logp[k] = comps[k].weight > 0 ? log_density(comps[k], pts[i]) : -std::numeric_limits<double>::infinity();
                top = std::max(top, logp[k]);
            }
            double sum = 0;
            for (std::size_t k = 0; k < k_count; ++k) sum += std::exp(logp[k] - top);
            const double lse = top + std::log(sum);
            ll += lse;
            for (std::size_t k = 0; k < k_count; ++k) resp[i * k_count + k] = std::exp(logp[k] - lse);
        }
        ll /= static_cast<double>(pts.size());
        result.trace.push_back(ll);
        result.iterations = it + 1;
        if (it > 0 && ll - result.trace[it - 1] < tol) {
            result.converged = true;
            break;
        }
        // M-step
        for (std::size_t k = 0; k < k_count; ++k) comps[k] = fit(pts, resp, k_count, k);
    }

    result.labels = {labels.width, labels.height, std::vector<int>(labels.labels.size(), -1)};
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < k_count; ++k)
            if (resp[i * k_count + k] > resp[i * k_count + best]) best = k;
        result.labels.labels[fg[i]] = static_cast<int>(best);
    }
    return result;
}

WatershedResult heatmap_to_instances(const Heatmap& h, const PeakParams& params, int frame_index) {
    params.validate();
    WatershedResult result;
    result.foreground = clean_foreground(h, params);
    result.labels = {h.width, h.height, std::vector<int>(h.values.size(), -1)};
    if (result.foreground.empty()) return result;

    for (const auto& s : extract_peaks(h, params))
        if (result.foreground.at(s.x, s.y)) result.seeds.push_back(s);
    result.seeds = recover_missed_seeds(result.foreground, std::move(result.seeds), h, params);
    result.labels = watershed(h, result.seeds, result.foreground);

    const int n = params.expected_count;
    if (params.clustering == Clustering::KMeans) {
        auto km = refine_kmeans(result.labels, n, params.em_max_iters);
        result.labels = std::move(km.labels);
        result.trace = std::move(km.trace);
    } else if (params.clustering == Clustering::Gmm) {
        auto gmm = refine_gmm(result.labels, n, params.em_max_iters, params.em_tol);
        result.labels = std::move(gmm.labels);
        result.trace = std::move(gmm.trace);
    }

    const int max_label = *std::max_element(result.labels.labels.begin(), result.labels.labels.end());
    for (int l = 0; l <= max_label; ++l) {
        auto m = result.labels.mask(l);
        if (m.empty()) continue;
        InstanceMask inst;
        inst.mask = std::move(m);
        inst.instance_id = static_cast<int>(result.instances.size());
        inst.frame_index = frame_index;
        inst.source = MaskSource::Model;
        result.instances.push_back(std::move(inst));
    }
    return result;
}

}  // namespace samqa
