#include "samqa/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace samqa {

using nlohmann::json;

std::string zero_padded(int value, int width) {
    std::ostringstream out;
    out << std::setw(width) << std::setfill('0') << value;
    return out.str();
}

json to_json(const FrameManifest& m) {
    return {{"name", m.name},     {"width", m.width},
            {"height", m.height}, {"fps", m.fps},
            {"expected_count", m.expected_count}, {"frames", m.frames}};
}

FrameManifest manifest_from_json(const json& j) {
    FrameManifest m;
    try {
        m.name = j.value("name", std::string());
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.fps = j.value("fps", 30.0);
        m.expected_count = j.at("expected_count").get<int>();
        m.frames = j.value("frames", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw ManifestError(std::string("manifest: ") + e.what());
    }
    return m;
}

void FrameManifest::validate() const {
    if (width <= 0 || height <= 0) throw ManifestError("manifest: frame size must be positive");
    if (expected_count < 1) throw ManifestError("manifest: expected_count must be >= 1");
    if (frames.empty()) throw ManifestError("manifest: no frames");
    for (const auto& f : frames)
        if (f.empty() || std::filesystem::path(f).is_absolute() || f.find("..") != std::string::npos)
            throw ManifestError("manifest: frame names must be relative: " + f);
}

FrameManifest FrameManifest::load(const std::filesystem::path& manifest_file) {
    std::ifstream in(manifest_file);
    if (!in) throw ManifestError("cannot open manifest " + manifest_file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ManifestError(std::string("manifest is not JSON: ") + e.what());
    }
    auto m = manifest_from_json(j);
    m.root = manifest_file.parent_path();
    if (m.frames.empty()) {
        for (const auto& entry : std::filesystem::directory_iterator(m.root.empty() ? "." : m.root)) {
            const auto stem = entry.path().stem().string();
            if (entry.path().extension() == ".png" && !stem.empty() &&
                std::all_of(stem.begin(), stem.end(), ::isdigit))
                m.frames.push_back(entry.path().filename().string());
        }
        std::sort(m.frames.begin(), m.frames.end());
    }
    m.validate();
    return m;
}

void FrameManifest::save(const std::filesystem::path& manifest_file) const {
    std::ofstream out(manifest_file);
    if (!out) throw ManifestError("cannot write " + manifest_file.string());
    out << to_json(*this).dump(2) << '\n';
}

FrameRef FrameManifest::frame(int index) const {
    if (index < 0 || index >= frame_count()) throw ManifestError("frame index out of range");
    FrameRef ref;
    ref.index = index;
    ref.width = width;
    ref.height = height;
    ref.path = (root / frames[index]).string();
    return ref;
}

std::string FrameManifest::frame_stem(int index) const {
    if (index < 0 || index >= frame_count()) throw ManifestError("frame index out of range");
    return std::filesystem::path(frames[index]).stem().string();
}

}  // namespace samqa
