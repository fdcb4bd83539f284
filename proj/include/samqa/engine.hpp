#pragma once

#include "samqa/backend.hpp"
#include "samqa/consistency.hpp"
#include "samqa/density_filter.hpp"
#include "samqa/manifest.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samqa {

class EngineError : public std::runtime_error {
public:
    enum class Kind {
        BadRequest,   // wrong prompt count, frame, or parameters
        NotRunning,   // step while blocked on a human or before init
        Backend,      // backend failure; retriable, session state unchanged
        Journal,      // corrupt or inconsistent journal
    };
    EngineError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    [[nodiscard]] Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct EngineParams {
    ConsistencyParams consistency;
    DensityParams density;
    double margin_fraction = 0.1;
    GridSpec grid;
    bool filter_enabled = true;      // density-based outlier removal on every mask
    bool validation_enabled = true;  // spatio-temporal consistency check
    bool recovery_enabled = true;    // one grid-prompt retry before escalating
    int snapshot_interval = 50;      // frames between journal snapshots, 0 disables

    void validate() const;
};

enum class SessionStatus { AwaitingInit, Running, NeedsManual, Completed };
std::string_view to_string(SessionStatus status);

enum class StepOutcome { Advanced, RecoveryAdvanced, NeedsManual, Completed };
std::string_view to_string(StepOutcome outcome);

struct InstanceRecord {
    int instance_id = 0;
    MaskSource source = MaskSource::Model;
    RunLengths rle;
    long long area = 0;
    BBox box;     // tight mask box, used by exports
    BBox prompt;  // inflated box, the next frame's prompt

    friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct FrameRecord {
    int frame_index = 0;
    std::vector<InstanceRecord> instances;  // sorted by instance id
    Verdict verdict;
    bool recovery_attempted = false;

    [[nodiscard]] InstanceMask instance_mask(std::size_t i, int width, int height) const;
    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct ConflictEvent {
    std::string session_id;
    int frame_index = 0;
    Verdict verdict;
    bool recovery_attempted = false;
    int required_prompts = 0;

    friend bool operator==(const ConflictEvent&, const ConflictEvent&) = default;
};

struct PendingPrompts {
    std::vector<BBox> boxes;
    MaskSource source = MaskSource::Initial;
    friend bool operator==(const PendingPrompts&, const PendingPrompts&) = default;
};

struct SessionStats {
    int accepted = 0;
    int validated = 0;
    int recovery_attempts = 0;
    int recoveries = 0;
    int conflicts = 0;
    int manual_interventions = 0;
    friend bool operator==(const SessionStats&, const SessionStats&) = default;
};

struct Session {
    std::string id;
    FrameManifest manifest;
    EngineParams params;
    std::vector<FrameRecord> records;  // exactly the frames before cursor
    int cursor = 0;
    SessionStatus status = SessionStatus::AwaitingInit;
    PendingPrompts pending;
    std::optional<ConflictEvent> conflict;
    SessionStats stats;
    std::vector<InstanceMask> last_masks;     // masks of the last accepted frame
    std::map<int, long long> trusted_areas;   // latest initial/manual area per instance

    [[nodiscard]] int expected_count() const { return manifest.expected_count; }
};

/// Append-only destination for journal lines.
class JournalSink {
public:
    virtual ~JournalSink() = default;
    virtual void append(const std::string& line) = 0;
};

class MemoryJournal final : public JournalSink {
public:
    void append(const std::string& line) override { lines_.push_back(line); }
    [[nodiscard]] const std::vector<std::string>& lines() const { return lines_; }

private:
    std::vector<std::string> lines_;
};

class FileJournal final : public JournalSink {
public:
    explicit FileJournal(const std::filesystem::path& file);
    void append(const std::string& line) override;

private:
    std::ofstream out_;
};

std::vector<std::string> read_journal_lines(const std::filesystem::path& file);

/// Backend exchanges recorded in a journal, in call order.
std::vector<TranscriptEntry> transcript_from_journal(std::span<const std::string> lines);

/// Drives one session through segment -> filter -> validate -> recover -> escalate.
/// Every state change is journaled before it becomes visible; a backend failure
/// mid-step leaves both the session and the journal untouched.
class AnnotationEngine {
public:
    /// Zero prompts leave the session in AwaitingInit; otherwise exactly
    /// expected_count prompts are required.
    static AnnotationEngine start(std::string id, FrameManifest manifest, EngineParams params,
                                  std::vector<BBox> initial_prompts,
                                  std::shared_ptr<SegmentationBackend> backend,
                                  std::shared_ptr<JournalSink> journal);

    /// Rebuilds state from journal lines without calling the backend. New
    /// records go to `journal` (normally the same file, opened for append).
    /// The journal stores no paths; frames resolve against `frames_root`.
    static AnnotationEngine resume(std::span<const std::string> lines,
                                   std::shared_ptr<SegmentationBackend> backend,
                                   std::shared_ptr<JournalSink> journal,
                                   const std::filesystem::path& frames_root = {});

    StepOutcome step();
    /// Steps until the session completes or needs a human.
    StepOutcome run();

    void submit_manual_prompts(int frame_index, std::vector<BBox> prompts);

    [[nodiscard]] const Session& session() const { return session_; }

private:
    AnnotationEngine(std::shared_ptr<SegmentationBackend> backend, std::shared_ptr<JournalSink> journal)
        : backend_(std::move(backend)), journal_(std::move(journal)) {}

    void apply(const nlohmann::json& record);
    void commit(std::vector<nlohmann::json> records);

    Session session_;
    std::shared_ptr<SegmentationBackend> backend_;
    std::shared_ptr<JournalSink> journal_;
};

/// MOT CSV: frame,id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1 with 1-based
/// frame and id; boxes are the tight corner-inclusive mask boxes.
std::string export_mot(const Session& session);

/// One YOLO label file per frame, keyed by "<frame stem>.txt": "class cx cy w h",
/// normalized. Center is the mean of the inclusive corners, size the inclusive extent.
std::map<std::string, std::string> export_yolo(const Session& session);

// JSON codecs shared by the journal and the service API.
nlohmann::json to_json(const Verdict& verdict);
Verdict verdict_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EngineParams& params);
EngineParams engine_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BBox& box);
BBox bbox_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FrameRecord& record);
nlohmann::json to_json(const ConflictEvent& conflict);
nlohmann::json to_json(const SessionStats& stats);

}  // namespace samqa
