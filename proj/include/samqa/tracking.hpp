#pragma once

#include "samqa/geometry.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samqa {

class TrackingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One box in a track or detection stream. Frames and ids use the numbering of
/// the source (MOT files are 1-based); id is -1 for unassigned detections.
struct MotRow {
    int frame = 0;
    int id = -1;
    BBox box;
    double score = 1.0;

    friend bool operator==(const MotRow&, const MotRow&) = default;
};

/// Lines "frame,id,left,top,width,height,conf,..."; extra columns are ignored.
/// Fractional coordinates are rounded to the nearest pixel.
std::vector<MotRow> load_mot(const std::filesystem::path& file);
std::vector<MotRow> parse_mot(const std::string& text);
std::string format_mot(std::span<const MotRow> rows);
void write_mot(const std::filesystem::path& file, std::span<const MotRow> rows);

struct TrackerParams {
    double track_high_thresh = 0.5;
    double track_low_thresh = 0.1;
    double match_thresh = 0.9;       // cost ceiling on 1 - IoU in the first association
    double low_match_thresh = 0.5;   // cost ceiling in the second (low-score) association
    double new_track_thresh = 0.9;
    int track_buffer = 120;          // frames a lost track survives

    void validate() const;
};

enum class TrackState { Active, Lost, Removed };

struct Track {
    int id = 0;
    std::vector<MotRow> boxes;  // strictly increasing frames
    TrackState state = TrackState::Active;

    [[nodiscard]] int last_frame() const { return boxes.back().frame; }
    [[nodiscard]] const BBox& last_box() const { return boxes.back().box; }
};

/// Two-stage IoU association with a last-box motion model. Ids start at 1 and
/// are never reused.
class ByteTracker {
public:
    explicit ByteTracker(TrackerParams params = {});

    /// Detections of one frame; frames must strictly increase between calls.
    /// Returns the detections that were assigned to a track, with their ids.
    std::vector<MotRow> update(int frame, std::span<const MotRow> detections);

    [[nodiscard]] const std::vector<Track>& tracks() const { return tracks_; }

private:
    TrackerParams params_;
    std::vector<Track> tracks_;
    int next_id_ = 1;
    int last_frame_ = 0;
    bool started_ = false;
};

/// Runs the tracker over detections sorted by frame, visiting every frame from
/// the first to the last (frames without detections age the tracks).
/// Throws TrackingError if the frames are out of order.
std::vector<MotRow> byte_track(std::span<const MotRow> detections, const TrackerParams& params = {});

struct IdentityMatch {
    int gt_id = 0;
    int pred_id = 0;
    long long idtp = 0;
};

/// Per-identity share of the totals. For a gt id `missed` counts its IDFN, for a
/// predicted id its IDFP; `match` is the paired id or -1.
struct IdentityStats {
    int id = 0;
    long long boxes = 0;
    long long idtp = 0;
    long long missed = 0;
    int match = -1;
};

struct Idf1Result {
    double idf1 = 0.0;
    double idp = 0.0;
    double idr = 0.0;
    long long idtp = 0;
    long long idfp = 0;
    long long idfn = 0;
    long long gt_boxes = 0;
    long long pred_boxes = 0;
    std::vector<IdentityMatch> matches;  // sorted by gt id
    std::vector<IdentityStats> per_gt;   // sorted by id
    std::vector<IdentityStats> per_pred;

    [[nodiscard]] nlohmann::json report() const;
};

/// Global identity F1: optimal one-to-one gt/pred identity matching maximizing the
/// number of co-occurring boxes with IoU >= iou_gate. Both sides empty gives 1.
Idf1Result idf1(std::span<const MotRow> gt, std::span<const MotRow> pred, double iou_gate = 0.5);

struct SynthSpec {
    int frames = 100;
    int objects = 2;
    int width = 320;
    int height = 240;
    int box_width = 30;
    int box_height = 18;
    double speed = 2.0;        // pixels per frame
    double jitter = 0.0;       // std of per-corner box noise, pixels
    double dropout = 0.0;      // probability a detection is missing
    double tail_prob = 0.0;    // probability the box is stretched by a visible tail
    int tail_length = 0;       // extra pixels added along the motion direction
    double score = 0.95;
    std::uint64_t seed = 1;
};

struct SynthSequence {
    std::vector<MotRow> gt;          // ids 1..objects, frames 1..frames
    std::vector<MotRow> detections;  // id -1
};

/// Boxes moving on straight lines that bounce off the frame borders, in lanes
/// that keep them apart; noise is applied to the detections only.
SynthSequence synth_sequence(const SynthSpec& spec);

}  // namespace samqa
