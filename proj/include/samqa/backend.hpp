#pragma once

#include "samqa/geometry.hpp"
#include "samqa/image.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace samqa {

enum class BackendErrorCode {
    Timeout,            // TIMEOUT on the wire
    BadPrompt,          // BAD_PROMPT
    Internal,           // INTERNAL
    Malformed,          // client side: unparsable or inconsistent response
    DimensionMismatch,  // client side: mask size differs from the frame
    Unreachable,        // client side: transport failure
};

std::string_view to_string(BackendErrorCode code);
BackendErrorCode backend_error_code_from_string(std::string_view name);

class BackendError : public std::runtime_error {
public:
    BackendError(BackendErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    [[nodiscard]] BackendErrorCode code() const { return code_; }
    [[nodiscard]] bool retriable() const {
        return code_ == BackendErrorCode::Timeout || code_ == BackendErrorCode::Unreachable;
    }

private:
    BackendErrorCode code_;
};

/// Equidistant point lattice over the full frame, one point per cell center.
struct GridSpec {
    int nx = 32;
    int ny = 32;

    void validate() const;
    [[nodiscard]] std::vector<Point> points(int width, int height) const;
    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct PointsPrompt {
    std::vector<Point> points;
    std::vector<int> labels;  // 1 foreground, 0 background
    friend bool operator==(const PointsPrompt&, const PointsPrompt&) = default;
};

using Prompt = std::variant<BBox, PointsPrompt, GridSpec>;

enum class PromptKind { Bbox, Points, Grid };
std::string_view to_string(PromptKind kind);

/// A frame handed to a backend: by path when co-located, or inline PNG bytes.
struct FrameRef {
    int index = 0;
    std::string path;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> inline_png;

    /// Loads the image from inline bytes if present, else from path.
    [[nodiscard]] GrayImage load() const;
};

struct ScoredMask {
    BinaryMask mask;
    double score = 1.0;
    friend bool operator==(const ScoredMask&, const ScoredMask&) = default;
};

struct SegmentResponse {
    int width = 0;
    int height = 0;
    std::vector<ScoredMask> masks;
    friend bool operator==(const SegmentResponse&, const SegmentResponse&) = default;
};

struct HealthStatus {
    bool ok = true;
    std::string detail;
};

/// A promptable segmentation model. segment() returns exactly one mask per prompt,
/// in prompt order. segment_grid() returns any number of candidate masks.
class SegmentationBackend {
public:
    virtual ~SegmentationBackend() = default;

    virtual SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                                    std::span<const int> instance_hints) = 0;
    virtual SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) = 0;
    virtual HealthStatus health() { return {}; }
    [[nodiscard]] virtual std::vector<PromptKind> capabilities() const = 0;
};

/// Throws BackendError(BadPrompt) on prompts outside the frame or malformed point sets.
void check_prompts(std::span<const Prompt> prompts, int width, int height);

/// Throws BackendError(DimensionMismatch / Malformed) if the response does not fit
/// the frame or carries out-of-range scores.
void check_response(const SegmentResponse& response, int width, int height);

// ---------------------------------------------------------------------------
// Built-in stubs

/// Ground-truth masks per frame. A box prompt resolves to the instance whose mask
/// box has the highest IoU with the prompt (lowest id on ties); a grid request
/// returns every instance.
class GroundTruthOracle final : public SegmentationBackend {
public:
    GroundTruthOracle(int width, int height) : width_(width), height_(height) {}

    /// Reads <dir>/<index padded to 6>.json files (see write_mask_frame).
    static GroundTruthOracle from_directory(const std::filesystem::path& dir);

    void set_frame(int index, std::vector<BinaryMask> instances);
    [[nodiscard]] const std::vector<BinaryMask>& frame(int index) const;
    [[nodiscard]] int frame_count() const { return static_cast<int>(frames_.size()); }

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override;
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override;
    [[nodiscard]] std::vector<PromptKind> capabilities() const override {
        return {PromptKind::Bbox, PromptKind::Points, PromptKind::Grid};
    }

private:
    int width_;
    int height_;
    std::map<int, std::vector<BinaryMask>> frames_;
};

/// Intensity segmentation of the frame image: foreground is every pixel brighter
/// than the threshold, split into 8-connected components. A box prompt picks the
/// component with the most pixels inside the box; grid requests return all
/// components in scan order.
class ThresholdBackend final : public SegmentationBackend {
public:
    explicit ThresholdBackend(std::uint8_t threshold = 127) : threshold_(threshold) {}

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override;
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override;
    [[nodiscard]] std::vector<PromptKind> capabilities() const override {
        return {PromptKind::Bbox, PromptKind::Points, PromptKind::Grid};
    }

private:
    std::uint8_t threshold_;
};

enum class FaultAction {
    DoubleArea,  // replace the mask with itself plus a copy shifted right past its own width
    Grow,        // dilate until the area at least doubles
    Empty,       // empty mask
    Duplicate,   // copy of the mask returned for another prompt
    Drop,        // no masks at all
    Error,       // throw BackendError
};

std::string_view to_string(FaultAction action);
FaultAction fault_action_from_string(std::string_view name);

struct FaultRule {
    enum class Call { Segment, Grid } call = Call::Segment;
    std::vector<int> frames;  // explicit frame list
    int every = 0;            // or every n-th frame with the given offset; neither means all frames
    int offset = 0;
    FaultAction action = FaultAction::DoubleArea;
    int instance = -1;  // prompt index the fault applies to, -1 for all
    BackendErrorCode error_code = BackendErrorCode::Internal;
    int limit = -1;  // total number of times the rule fires, -1 for no limit

    [[nodiscard]] bool applies(int frame_index) const;
};

struct Scenario {
    std::vector<FaultRule> rules;

    /// {"rules":[{"call":"segment","every":10,"offset":9,"action":"double_area"}, ...]}
    /// Optional per-rule keys: "frames", "instance", "error_code", "limit".
    static Scenario load(const std::filesystem::path& file);
    static Scenario parse(const std::string& json_text);
};

/// Wraps another backend and injects the scenario's faults into its output.
class ScriptedBackend final : public SegmentationBackend {
public:
    ScriptedBackend(std::shared_ptr<SegmentationBackend> inner, Scenario scenario)
        : inner_(std::move(inner)), scenario_(std::move(scenario)) {}

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override;
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override;
    HealthStatus health() override { return inner_->health(); }
    [[nodiscard]] std::vector<PromptKind> capabilities() const override { return inner_->capabilities(); }

    [[nodiscard]] int segment_calls() const { return segment_calls_; }
    [[nodiscard]] int grid_calls() const { return grid_calls_; }

private:
    void inject(FaultRule::Call call, int frame_index, SegmentResponse& response);

    std::shared_ptr<SegmentationBackend> inner_;
    Scenario scenario_;
    std::vector<int> hits_;
    int segment_calls_ = 0;
    int grid_calls_ = 0;
};

/// A recorded backend exchange, as stored in the session journal.
struct TranscriptEntry {
    enum class Call { Segment, Grid } call = Call::Segment;
    int frame = 0;
    SegmentResponse response;
};

/// Replays a transcript verbatim, in order. A call that does not match the next
/// entry raises BackendError(Internal).
class ReplayBackend final : public SegmentationBackend {
public:
    explicit ReplayBackend(std::vector<TranscriptEntry> transcript) : transcript_(std::move(transcript)) {}

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override;
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override;
    [[nodiscard]] std::vector<PromptKind> capabilities() const override {
        return {PromptKind::Bbox, PromptKind::Points, PromptKind::Grid};
    }
    [[nodiscard]] std::size_t remaining() const { return transcript_.size() - next_; }

private:
    SegmentResponse next(TranscriptEntry::Call call, int frame);

    std::vector<TranscriptEntry> transcript_;
    std::size_t next_ = 0;
};

/// Serializes calls into a backend that is not itself thread-safe.
class SerializedBackend final : public SegmentationBackend {
public:
    explicit SerializedBackend(std::shared_ptr<SegmentationBackend> inner) : inner_(std::move(inner)) {}

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override {
        std::lock_guard lock(mutex_);
        return inner_->segment(frame, prompts, instance_hints);
    }
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override {
        std::lock_guard lock(mutex_);
        return inner_->segment_grid(frame, grid);
    }
    HealthStatus health() override {
        std::lock_guard lock(mutex_);
        return inner_->health();
    }
    [[nodiscard]] std::vector<PromptKind> capabilities() const override { return inner_->capabilities(); }

private:
    std::shared_ptr<SegmentationBackend> inner_;
    std::mutex mutex_;
};

/// Mask-directory file: {"width":W,"height":H,"instances":[{"id":0,"counts":[...]}]}.
void write_mask_frame(const std::filesystem::path& file, int width, int height,
                      std::span<const BinaryMask> instances);
std::vector<BinaryMask> read_mask_frame(const std::filesystem::path& file, int& width, int& height);
std::filesystem::path mask_frame_path(const std::filesystem::path& dir, int index);

}  // namespace samqa
