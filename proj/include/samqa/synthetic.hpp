#pragma once

#include "samqa/backend.hpp"
#include "samqa/manifest.hpp"
#include "samqa/tracking.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace samqa {

/// Elliptical animals moving as a loosely coupled pair: the pair's midpoint
/// wanders over the arena while the two circle each other, so they spend part
/// of the time side by side and part of it one above the other.
struct SceneSpec {
    int width = 160;
    int height = 120;
    int frames = 100;
    int objects = 2;
    double radius_x = 9.0;
    double radius_y = 5.0;
    double separation = 21.0;    // distance between centers of neighbouring animals
    double orbit_period = 80.0;  // frames for one full turn around each other
    std::uint64_t seed = 1;
};

struct Scene {
    SceneSpec spec;
    std::vector<std::vector<BinaryMask>> masks;  // [frame][object]

    [[nodiscard]] FrameManifest manifest() const;
    [[nodiscard]] GrayImage render(int frame) const;
    [[nodiscard]] std::vector<BBox> boxes(int frame) const;
    /// Ground-truth boxes as MOT rows, frames and ids 1-based.
    [[nodiscard]] std::vector<MotRow> gt_rows() const;
    [[nodiscard]] std::shared_ptr<GroundTruthOracle> oracle() const;
};

Scene generate_scene(const SceneSpec& spec);

/// Writes frames/ (PNG + manifest.json), gt_masks/ (one JSON per frame) and gt.txt.
void write_scene(const Scene& scene, const std::filesystem::path& dir);

}  // namespace samqa
