#include "samqa/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace samqa {

namespace {

BinaryMask ellipse(int w, int h, double cx, double cy, double rx, double ry) {
    BinaryMask m(w, h);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ry)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double u = (x - cx) / rx, v = (y - cy) / ry;
            if (u * u + v * v <= 1.0) m.set(x, y);
        }
    return m;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
    if (spec.frames < 1 || spec.objects < 1) throw std::invalid_argument("scene: need frames and objects");
    if (spec.separation <= 2 * std::max(spec.radius_x, spec.radius_y))
        throw std::invalid_argument("scene: separation lets animals overlap");
    const double reach = spec.separation * (spec.objects - 1) / 2.0 + spec.radius_x + 2;
    if (spec.width < 2 * reach + 8 || spec.height < 2 * reach + 8)
        throw std::invalid_argument("scene: arena too small");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    const double px = phase(rng), py = phase(rng), pa = phase(rng);
    const double period_x = 90.0 + 30.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double period_y = 60.0 + 30.0 * std::uniform_real_distribution<double>(0, 1)(rng);

    // Midpoint stays far enough from the border that every animal fits.
    const double ax = spec.width / 2.0 - reach - 2;
    const double ay = spec.height / 2.0 - reach - 2;

    Scene scene;
    scene.spec = spec;
    for (int t = 0; t < spec.frames; ++t) {
        const double mx = spec.width / 2.0 + ax * std::sin(2 * std::numbers::pi * t / period_x + px);
        const double my = spec.height / 2.0 + ay * std::sin(2 * std::numbers::pi * t / period_y + py);
        const double angle = pa + 2 * std::numbers::pi * t / spec.orbit_period;
        std::vector<BinaryMask> frame;
        for (int k = 0; k < spec.objects; ++k) {
            const double offset = (k - (spec.objects - 1) / 2.0) * spec.separation;
            frame.push_back(ellipse(spec.width, spec.height, mx + offset * std::cos(angle),
                                    my + offset * std::sin(angle), spec.radius_x, spec.radius_y));
        }
        scene.masks.push_back(std::move(frame));
    }
    return scene;
}

FrameManifest Scene::manifest() const {
    FrameManifest m;
    m.name = "synthetic";
    m.width = spec.width;
    m.height = spec.height;
    m.expected_count = spec.objects;
    for (int t = 0; t < spec.frames; ++t) m.frames.push_back(zero_padded(t) + ".png");
    return m;
}

GrayImage Scene::render(int frame) const {
    GrayImage img(spec.width, spec.height, 0);
    // Deterministic texture per frame so frames are not bit-identical.
    std::mt19937 rng(static_cast<std::uint32_t>(spec.seed * 7919 + frame));
    std::uniform_int_distribution<int> grain(0, 24);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            int v = 30 + grain(rng);
            for (const auto& m : masks[frame])
                if (m.at(x, y)) v = 190 + grain(rng);
            img.at(x, y) = static_cast<std::uint8_t>(v);
        }
    return img;
}

std::vector<BBox> Scene::boxes(int frame) const {
    std::vector<BBox> out;
    for (const auto& m : masks.at(frame)) out.push_back(mask_to_bbox(m));
    return out;
}

std::vector<MotRow> Scene::gt_rows() const {
    std::vector<MotRow> rows;
    for (int t = 0; t < spec.frames; ++t)
        for (int k = 0; k < spec.objects; ++k)
            if (!masks[t][k].empty()) rows.push_back({t + 1, k + 1, mask_to_bbox(masks[t][k]), 1.0});
    return rows;
}

std::shared_ptr<GroundTruthOracle> Scene::oracle() const {
    auto oracle = std::make_shared<GroundTruthOracle>(spec.width, spec.height);
    for (int t = 0; t < spec.frames; ++t) oracle->set_frame(t, masks[t]);
    return oracle;
}

void write_scene(const Scene& scene, const std::filesystem::path& dir) {
    const auto frames = dir / "frames";
    const auto gt_masks = dir / "gt_masks";
    std::filesystem::create_directories(frames);
    std::filesystem::create_directories(gt_masks);
    const auto manifest = scene.manifest();
    for (int t = 0; t < scene.spec.frames; ++t) {
        write_png(frames / manifest.frames[t], scene.render(t));
        write_mask_frame(mask_frame_path(gt_masks, t), scene.spec.width, scene.spec.height, scene.masks[t]);
    }
    manifest.save(frames / "manifest.json");
    write_mot(dir / "gt.txt", scene.gt_rows());
}

}  // namespace samqa
