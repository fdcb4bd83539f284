#pragma once

#include "samqa/backend.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace samqa {

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pre-extracted video frames: a directory of zero-padded images plus a
/// manifest.json {"name","width","height","fps","expected_count","frames":[...]}.
/// When "frames" is absent, the directory's numerically named .png files are
/// used in name order.
struct FrameManifest {
    std::string name;
    int width = 0;
    int height = 0;
    double fps = 30.0;
    int expected_count = 0;
    std::vector<std::string> frames;  // file names relative to root
    std::filesystem::path root;       // never serialized

    static FrameManifest load(const std::filesystem::path& manifest_file);
    void save(const std::filesystem::path& manifest_file) const;

    [[nodiscard]] int frame_count() const { return static_cast<int>(frames.size()); }
    [[nodiscard]] FrameRef frame(int index) const;
    /// File stem of a frame, used to name per-frame exports.
    [[nodiscard]] std::string frame_stem(int index) const;

    void validate() const;
};

nlohmann::json to_json(const FrameManifest& manifest);
FrameManifest manifest_from_json(const nlohmann::json& j);

std::string zero_padded(int value, int width = 6);

}  // namespace samqa
