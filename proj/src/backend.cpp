#include "samqa/backend.hpp"

#include "samqa/morphology.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace samqa {

using nlohmann::json;

std::string_view to_string(BackendErrorCode code) {
    switch (code) {
        case BackendErrorCode::Timeout: return "TIMEOUT";
        case BackendErrorCode::BadPrompt: return "BAD_PROMPT";
        case BackendErrorCode::Internal: return "INTERNAL";
        case BackendErrorCode::Malformed: return "MALFORMED";
        case BackendErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
        case BackendErrorCode::Unreachable: return "UNREACHABLE";
    }
    return "INTERNAL";
}

BackendErrorCode backend_error_code_from_string(std::string_view name) {
    if (name == "TIMEOUT") return BackendErrorCode::Timeout;
    if (name == "BAD_PROMPT") return BackendErrorCode::BadPrompt;
    if (name == "INTERNAL") return BackendErrorCode::Internal;
    if (name == "MALFORMED") return BackendErrorCode::Malformed;
    if (name == "DIMENSION_MISMATCH") return BackendErrorCode::DimensionMismatch;
    if (name == "UNREACHABLE") return BackendErrorCode::Unreachable;
    throw BackendError(BackendErrorCode::Malformed, "unknown error code " + std::string(name));
}

std::string_view to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::Bbox: return "bbox";
        case PromptKind::Points: return "points";
        case PromptKind::Grid: return "grid";
    }
    return "bbox";
}

void GridSpec::validate() const {
    if (nx < 2 || ny < 2) throw BackendError(BackendErrorCode::BadPrompt, "grid must be at least 2x2");
}

std::vector<Point> GridSpec::points(int width, int height) const {
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(nx) * ny);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            out.push_back({static_cast<int>((2LL * i + 1) * width / (2LL * nx)),
                           static_cast<int>((2LL * j + 1) * height / (2LL * ny))});
    return out;
}

GrayImage FrameRef::load() const {
    if (!inline_png.empty()) return decode_png(inline_png);
    if (path.empty()) throw BackendError(BackendErrorCode::BadPrompt, "frame has neither path nor inline image");
    try {
        return read_png(path);
    } catch (const ImageError& e) {
        throw BackendError(BackendErrorCode::BadPrompt, e.what());
    }
}

void check_prompts(std::span<const Prompt> prompts, int width, int height) {
    auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < width && y < height; };
    for (const auto& prompt : prompts) {
        if (const auto* box = std::get_if<BBox>(&prompt)) {
            if (!box->valid() || !inside(box->x_min, box->y_min) || !inside(box->x_max, box->y_max))
                throw BackendError(BackendErrorCode::BadPrompt, "box prompt outside the frame");
        } else if (const auto* pts = std::get_if<PointsPrompt>(&prompt)) {
            if (pts->points.empty() || pts->points.size() != pts->labels.size())
                throw BackendError(BackendErrorCode::BadPrompt, "point prompt needs one label per point");
            for (const auto& p : pts->points)
                if (!inside(p.x, p.y))
                    throw BackendError(BackendErrorCode::BadPrompt, "point prompt outside the frame");
        } else {
            std::get<GridSpec>(prompt).validate();
        }
    }
}

void check_response(const SegmentResponse& response, int width, int height) {
    if (response.width != width || response.height != height)
        throw BackendError(BackendErrorCode::DimensionMismatch, "response dimensions differ from the frame");
    for (const auto& m : response.masks) {
        if (m.mask.width() != width || m.mask.height() != height)
            throw BackendError(BackendErrorCode::DimensionMismatch, "mask dimensions differ from the frame");
        if (!(m.score >= 0.0 && m.score <= 1.0))
            throw BackendError(BackendErrorCode::Malformed, "score outside [0, 1]");
    }
}

// ---------------------------------------------------------------------------

void GroundTruthOracle::set_frame(int index, std::vector<BinaryMask> instances) {
    for (const auto& m : instances)
        if (m.width() != width_ || m.height() != height_)
            throw GeometryError("ground truth mask does not match the frame size");
    frames_[index] = std::move(instances);
}

const std::vector<BinaryMask>& GroundTruthOracle::frame(int index) const {
    static const std::vector<BinaryMask> none;
    const auto it = frames_.find(index);
    return it == frames_.end() ? none : it->second;
}

SegmentResponse GroundTruthOracle::segment(const FrameRef& frame, std::span<const Prompt> prompts,
                                           std::span<const int>) {
    check_prompts(prompts, width_, height_);
    const auto& gt = this->frame(frame.index);
    std::vector<std::optional<BBox>> boxes;
    for (const auto& m : gt) boxes.push_back(m.empty() ? std::nullopt : std::optional(mask_to_bbox(m)));

    SegmentResponse out{width_, height_, {}};
    for (const auto& prompt : prompts) {
        int best = -1;
        double best_iou = 0.0;
        if (const auto* box = std::get_if<BBox>(&prompt)) {
            for (std::size_t i = 0; i < gt.size(); ++i) {
                if (!boxes[i]) continue;
                const double v = bbox_iou(*box, *boxes[i]);
                if (v > best_iou) {
                    best_iou = v;
                    best = static_cast<int>(i);
                }
            }
        } else if (const auto* pts = std::get_if<PointsPrompt>(&prompt)) {
            for (std::size_t k = 0; k < pts->points.size() && best < 0; ++k) {
                if (pts->labels[k] != 1) continue;
                for (std::size_t i = 0; i < gt.size(); ++i)
                    if (gt[i].at(pts->points[k].x, pts->points[k].y)) {
                        best = static_cast<int>(i);
                        break;
                    }
            }
        }
        if (best < 0)
            out.masks.push_back({BinaryMask(width_, height_), 0.0});
        else
            out.masks.push_back({gt[best], 1.0});
    }
    return out;
}

SegmentResponse GroundTruthOracle::segment_grid(const FrameRef& frame, const GridSpec& grid) {
    grid.validate();
    SegmentResponse out{width_, height_, {}};
    for (const auto& m : this->frame(frame.index))
        if (!m.empty()) out.masks.push_back({m, 1.0});
    return out;
}

GroundTruthOracle GroundTruthOracle::from_directory(const std::filesystem::path& dir) {
    std::vector<std::pair<int, std::filesystem::path>> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        const auto stem = entry.path().stem().string();
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
        files.emplace_back(std::stoi(stem), entry.path());
    }
    if (files.empty()) throw GeometryError("no mask frames in " + dir.string());
    std::sort(files.begin(), files.end());
    int w = 0, h = 0;
    read_mask_frame(files.front().second, w, h);
    GroundTruthOracle oracle(w, h);
    for (const auto& [index, file] : files) {
        int fw = 0, fh = 0;
        auto masks = read_mask_frame(file, fw, fh);
        if (fw != w || fh != h) throw GeometryError("inconsistent frame size in " + file.string());
        oracle.set_frame(index, std::move(masks));
    }
    return oracle;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<BinaryMask> threshold_components(const GrayImage& image, std::uint8_t threshold) {
    BinaryMask fg(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) fg.set(x, y, image.at(x, y) > threshold);
    const auto cc = connected_components(fg);
    std::vector<BinaryMask> out(cc.count(), BinaryMask(image.width, image.height));
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (const int l = cc.at(x, y); l >= 0) out[l].set(x, y);
    return out;
}

GrayImage load_frame(const FrameRef& frame) {
    auto image = frame.load();
    if (frame.width && frame.height && (image.width != frame.width || image.height != frame.height))
        throw BackendError(BackendErrorCode::BadPrompt, "frame image size differs from the manifest");
    return image;
}

}  // namespace

SegmentResponse ThresholdBackend::segment(const FrameRef& frame, std::span<const Prompt> prompts,
                                          std::span<const int>) {
    const auto image = load_frame(frame);
    check_prompts(prompts, image.width, image.height);
    const auto components = threshold_components(image, threshold_);

    SegmentResponse out{image.width, image.height, {}};
    for (const auto& prompt : prompts) {
        int best = -1;
        long long best_count = 0;
        for (std::size_t c = 0; c < components.size(); ++c) {
            long long count = 0;
            if (const auto* box = std::get_if<BBox>(&prompt)) {
                for (int y = box->y_min; y <= box->y_max; ++y)
                    for (int x = box->x_min; x <= box->x_max; ++x) count += components[c].at(x, y);
            } else if (const auto* pts = std::get_if<PointsPrompt>(&prompt)) {
                for (std::size_t k = 0; k < pts->points.size(); ++k)
                    if (pts->labels[k] == 1) count += components[c].at(pts->points[k].x, pts->points[k].y);
            }
            if (count > best_count) {
                best_count = count;
                best = static_cast<int>(c);
            }
        }
        if (best < 0)
            out.masks.push_back({BinaryMask(image.width, image.height), 0.0});
        else
            out.masks.push_back({components[best], 1.0});
    }
    return out;
}

SegmentResponse ThresholdBackend::segment_grid(const FrameRef& frame, const GridSpec& grid) {
    grid.validate();
    const auto image = load_frame(frame);
    SegmentResponse out{image.width, image.height, {}};
    for (auto& m : threshold_components(image, threshold_)) out.masks.push_back({std::move(m), 1.0});
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(FaultAction action) {
    switch (action) {
        case FaultAction::DoubleArea: return "double_area";
        case FaultAction::Grow: return "grow";
        case FaultAction::Empty: return "empty";
        case FaultAction::Duplicate: return "duplicate";
        case FaultAction::Drop: return "drop";
        case FaultAction::Error: return "error";
    }
    return "error";
}

FaultAction fault_action_from_string(std::string_view name) {
    for (auto a : {FaultAction::DoubleArea, FaultAction::Grow, FaultAction::Empty, FaultAction::Duplicate,
                   FaultAction::Drop, FaultAction::Error})
        if (to_string(a) == name) return a;
    throw std::invalid_argument("unknown fault action: " + std::string(name));
}

bool FaultRule::applies(int frame_index) const {
    if (frames.empty() && every == 0) return true;
    if (std::find(frames.begin(), frames.end(), frame_index) != frames.end()) return true;
    return every > 0 && frame_index >= offset && (frame_index - offset) % every == 0;
}

Scenario Scenario::parse(const std::string& json_text) {
    Scenario scenario;
    const auto doc = json::parse(json_text);
    for (const auto& r : doc.at("rules")) {
        FaultRule rule;
        const auto call = r.value("call", std::string("segment"));
        if (call == "segment")
            rule.call = FaultRule::Call::Segment;
        else if (call == "grid")
            rule.call = FaultRule::Call::Grid;
        else
            throw std::invalid_argument("unknown scenario call: " + call);
        rule.frames = r.value("frames", std::vector<int>{});
        rule.every = r.value("every", 0);
        rule.offset = r.value("offset", 0);
        rule.action = fault_action_from_string(r.at("action").get<std::string>());
        rule.instance = r.value("instance", -1);
        rule.limit = r.value("limit", -1);
        if (r.contains("error_code"))
            rule.error_code = backend_error_code_from_string(r.at("error_code").get<std::string>());
        scenario.rules.push_back(std::move(rule));
    }
    return scenario;
}

Scenario Scenario::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open scenario " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

namespace {

BinaryMask shifted_double(const BinaryMask& m) {
    if (m.empty()) return m;
    const auto box = mask_to_bbox(m);
    const int shift = box.width() + 1;
    BinaryMask out = m;
    for (const auto& p : m.points())
        if (p.x + shift < m.width()) out.set(p.x + shift, p.y);
        else if (p.x - shift >= 0) out.set(p.x - shift, p.y);
    return out;
}

BinaryMask grow_double(const BinaryMask& m) {
    if (m.empty()) return m;
    const long long target = 2 * mask_area(m);
    BinaryMask out = m;
    while (mask_area(out) < target) {
        auto next = dilate(out, 3, 1);
        if (next == out) break;
        out = std::move(next);
    }
    return out;
}

void apply_fault(const FaultRule& rule, SegmentResponse& response) {
    switch (rule.action) {
        case FaultAction::Error:
            throw BackendError(rule.error_code, "scripted failure");
        case FaultAction::Drop:
            response.masks.clear();
            return;
        default:
            break;
    }
    for (std::size_t i = 0; i < response.masks.size(); ++i) {
        if (rule.instance >= 0 && static_cast<int>(i) != rule.instance) continue;
        auto& m = response.masks[i].mask;
        switch (rule.action) {
            case FaultAction::DoubleArea: m = shifted_double(m); break;
            case FaultAction::Grow: m = grow_double(m); break;
            case FaultAction::Empty: m = BinaryMask(m.width(), m.height()); break;
            case FaultAction::Duplicate:
                if (response.masks.size() > 1) m = response.masks[(i + 1) % response.masks.size()].mask;
                break;
            default: break;
        }
    }
}

}  // namespace

SegmentResponse ScriptedBackend::segment(const FrameRef& frame, std::span<const Prompt> prompts,
                                         std::span<const int> instance_hints) {
    ++segment_calls_;
    auto response = inner_->segment(frame, prompts, instance_hints);
    inject(FaultRule::Call::Segment, frame.index, response);
    return response;
}

SegmentResponse ScriptedBackend::segment_grid(const FrameRef& frame, const GridSpec& grid) {
    ++grid_calls_;
    auto response = inner_->segment_grid(frame, grid);
    inject(FaultRule::Call::Grid, frame.index, response);
    return response;
}

void ScriptedBackend::inject(FaultRule::Call call, int frame_index, SegmentResponse& response) {
    hits_.resize(scenario_.rules.size(), 0);
    for (std::size_t i = 0; i < scenario_.rules.size(); ++i) {
        const auto& rule = scenario_.rules[i];
        if (rule.call != call || !rule.applies(frame_index)) continue;
        if (rule.limit >= 0 && hits_[i] >= rule.limit) continue;
        ++hits_[i];
        apply_fault(rule, response);
    }
}

// ---------------------------------------------------------------------------

SegmentResponse ReplayBackend::next(TranscriptEntry::Call call, int frame) {
    if (next_ >= transcript_.size())
        throw BackendError(BackendErrorCode::Internal, "replay transcript exhausted");
    const auto& entry = transcript_[next_];
    if (entry.call != call || entry.frame != frame)
        throw BackendError(BackendErrorCode::Internal,
                           "replay transcript diverged at entry " + std::to_string(next_));
    ++next_;
    return entry.response;
}

SegmentResponse ReplayBackend::segment(const FrameRef& frame, std::span<const Prompt>, std::span<const int>) {
    return next(TranscriptEntry::Call::Segment, frame.index);
}

SegmentResponse ReplayBackend::segment_grid(const FrameRef& frame, const GridSpec&) {
    return next(TranscriptEntry::Call::Grid, frame.index);
}

// ---------------------------------------------------------------------------

std::filesystem::path mask_frame_path(const std::filesystem::path& dir, int index) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << index << ".json";
    return dir / name.str();
}

void write_mask_frame(const std::filesystem::path& file, int width, int height,
                      std::span<const BinaryMask> instances) {
    json doc{{"width", width}, {"height", height}, {"instances", json::array()}};
    for (std::size_t i = 0; i < instances.size(); ++i)
        doc["instances"].push_back({{"id", i}, {"counts", rle_encode(instances[i])}});
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << doc.dump() << '\n';
}

std::vector<BinaryMask> read_mask_frame(const std::filesystem::path& file, int& width, int& height) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    const auto doc = json::parse(in);
    width = doc.at("width").get<int>();
    height = doc.at("height").get<int>();
    std::vector<std::pair<int, BinaryMask>> masks;
    for (const auto& inst : doc.at("instances")) {
        const auto counts = inst.at("counts").get<RunLengths>();
        masks.emplace_back(inst.value("id", static_cast<int>(masks.size())), rle_decode(counts, width, height));
    }
    std::sort(masks.begin(), masks.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<BinaryMask> out;
    for (auto& [id, m] : masks) out.push_back(std::move(m));
    return out;
}

}  // namespace samqa
