#include "samqa/tracking.hpp"

#include "samqa/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace samqa {

namespace {

// Ties between equal-IoU detections go to the lower detection index.
constexpr double kTieBreak = 1e-12;

}  // namespace

// ---------------------------------------------------------------------------
// MOT files

std::vector<MotRow> parse_mot(const std::string& text) {
    std::vector<MotRow> rows;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> v;
        std::istringstream fields(line);
        std::string field;
        try {
            while (std::getline(fields, field, ',')) {
                std::size_t used = 0;
                v.push_back(std::stod(field, &used));
                if (field.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(field);
            }
        } catch (const std::exception&) {
            throw TrackingError("MOT line " + std::to_string(line_no) + ": not a number: '" + field + "'");
        }
        if (v.size() < 6) throw TrackingError("MOT line " + std::to_string(line_no) + ": expected at least 6 fields");
        const int w = static_cast<int>(std::lround(v[4]));
        const int h = static_cast<int>(std::lround(v[5]));
        if (w <= 0 || h <= 0) throw TrackingError("MOT line " + std::to_string(line_no) + ": non-positive box size");
        MotRow row;
        row.frame = static_cast<int>(std::lround(v[0]));
        row.id = static_cast<int>(std::lround(v[1]));
        const int left = static_cast<int>(std::lround(v[2]));
        const int top = static_cast<int>(std::lround(v[3]));
        row.box = {left, top, left + w - 1, top + h - 1};
        row.score = v.size() > 6 ? v[6] : 1.0;
        rows.push_back(row);
    }
    return rows;
}

std::vector<MotRow> load_mot(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw TrackingError("cannot open " + file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_mot(buffer.str());
}

std::string format_mot(std::span<const MotRow> rows) {
    std::ostringstream out;
    for (const auto& r : rows) {
        out << r.frame << ',' << r.id << ',' << r.box.x_min << ',' << r.box.y_min << ',' << r.box.width() << ','
            << r.box.height() << ',';
        if (r.score == std::floor(r.score))
            out << static_cast<long long>(r.score);
        else
            out << r.score;
        out << ",-1,-1,-1\n";
    }
    return out.str();
}

void write_mot(const std::filesystem::path& file, std::span<const MotRow> rows) {
    std::ofstream out(file);
    if (!out) throw TrackingError("cannot write " + file.string());
    out << format_mot(rows);
}

// ---------------------------------------------------------------------------
// tracker

void TrackerParams::validate() const {
    for (double t : {track_high_thresh, track_low_thresh, match_thresh, low_match_thresh, new_track_thresh})
        if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("tracker thresholds must lie in [0, 1]");
    if (track_low_thresh > track_high_thresh) throw std::invalid_argument("track_low_thresh exceeds track_high_thresh");
    if (track_buffer < 0) throw std::invalid_argument("track_buffer must be >= 0");
}

ByteTracker::ByteTracker(TrackerParams params) : params_(params) { params_.validate(); }

std::vector<MotRow> ByteTracker::update(int frame, std::span<const MotRow> detections) {
    if (started_ && frame <= last_frame_)
        throw TrackingError("frame " + std::to_string(frame) + " after frame " + std::to_string(last_frame_));
    started_ = true;
    last_frame_ = frame;

    // Tracks that would have expired on frames skipped by the caller.
    for (auto& t : tracks_)
        if (t.state == TrackState::Lost && frame - 1 - t.last_frame() > params_.track_buffer)
            t.state = TrackState::Removed;

    std::vector<int> high, low;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const double s = detections[i].score;
        if (s >= params_.track_high_thresh)
            high.push_back(static_cast<int>(i));
        else if (s >= params_.track_low_thresh)
            low.push_back(static_cast<int>(i));
    }

    std::vector<MotRow> assigned;
    std::vector<bool> track_matched(tracks_.size(), false);
    auto associate = [&](const std::vector<int>& tracks, const std::vector<int>& dets, double ceiling) {
        std::vector<bool> used(dets.size(), false);
        if (tracks.empty() || dets.empty()) return used;
        CostMatrix cost(tracks.size(), dets.size());
        for (std::size_t r = 0; r < tracks.size(); ++r)
            for (std::size_t c = 0; c < dets.size(); ++c)
                cost(r, c) = 1.0 - bbox_iou(tracks_[tracks[r]].last_box(), detections[dets[c]].box) +
                             kTieBreak * static_cast<double>(c);
        const auto choice = solve_assignment(cost);
        for (std::size_t r = 0; r < tracks.size(); ++r) {
            const int c = choice[r];
            if (c < 0) continue;
            if (1.0 - bbox_iou(tracks_[tracks[r]].last_box(), detections[dets[c]].box) > ceiling) continue;
            auto& track = tracks_[tracks[r]];
            MotRow row = detections[dets[c]];
            row.frame = frame;
            row.id = track.id;
            track.boxes.push_back(row);
            track.state = TrackState::Active;
            track_matched[tracks[r]] = true;
            used[c] = true;
            assigned.push_back(row);
        }
        return used;
    };

    // Stage 1: every live track against the confident detections.
    std::vector<int> pool;
    for (std::size_t i = 0; i < tracks_.size(); ++i)
        if (tracks_[i].state != TrackState::Removed) pool.push_back(static_cast<int>(i));
    const auto high_used = associate(pool, high, params_.match_thresh);

    // Stage 2: still-unmatched active tracks against the weak detections.
    std::vector<int> active;
    for (int i : pool)
        if (!track_matched[i] && tracks_[i].state == TrackState::Active) active.push_back(i);
    associate(active, low, params_.low_match_thresh);

    for (int i : pool) {
        if (track_matched[i]) continue;
        auto& t = tracks_[i];
        t.state = frame - t.last_frame() > params_.track_buffer ? TrackState::Removed : TrackState::Lost;
    }

    for (std::size_t c = 0; c < high.size(); ++c) {
        const auto& det = detections[high[c]];
        if (high_used[c] || det.score < params_.new_track_thresh) continue;
        Track t;
        t.id = next_id_++;
        MotRow row = det;
        row.frame = frame;
        row.id = t.id;
        t.boxes.push_back(row);
        tracks_.push_back(std::move(t));
        assigned.push_back(row);
    }
    std::sort(assigned.begin(), assigned.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return assigned;
}

std::vector<MotRow> byte_track(std::span<const MotRow> detections, const TrackerParams& params) {
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].frame < detections[i - 1].frame)
            throw TrackingError("detections out of frame order at frame " + std::to_string(detections[i].frame));
    ByteTracker tracker(params);
    std::vector<MotRow> out;
    if (detections.empty()) return out;
    std::size_t i = 0;
    for (int frame = detections.front().frame; frame <= detections.back().frame; ++frame) {
        const std::size_t begin = i;
        while (i < detections.size() && detections[i].frame == frame) ++i;
        const auto rows = tracker.update(frame, detections.subspan(begin, i - begin));
        out.insert(out.end(), rows.begin(), rows.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDF1

nlohmann::json Idf1Result::report() const {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& m : matches) ids.push_back({{"gt_id", m.gt_id}, {"pred_id", m.pred_id}, {"idtp", m.idtp}});
    nlohmann::json gt = nlohmann::json::array(), pr = nlohmann::json::array();
    for (const auto& s : per_gt)
        gt.push_back({{"id", s.id}, {"boxes", s.boxes}, {"idtp", s.idtp}, {"idfn", s.missed}, {"match", s.match}});
    for (const auto& s : per_pred)
        pr.push_back({{"id", s.id}, {"boxes", s.boxes}, {"idtp", s.idtp}, {"idfp", s.missed}, {"match", s.match}});
    return {{"idf1", idf1}, {"idp", idp},   {"idr", idr},           {"idtp", idtp},
            {"idfp", idfp}, {"idfn", idfn}, {"gt_boxes", gt_boxes}, {"pred_boxes", pred_boxes},
            {"matches", ids}, {"gt", gt}, {"pred", pr}};
}

Idf1Result idf1(std::span<const MotRow> gt, std::span<const MotRow> pred, double iou_gate) {
    Idf1Result out;
    out.gt_boxes = static_cast<long long>(gt.size());
    out.pred_boxes = static_cast<long long>(pred.size());

    std::vector<int> gt_ids, pred_ids;
    for (const auto& r : gt) gt_ids.push_back(r.id);
    for (const auto& r : pred) pred_ids.push_back(r.id);
    std::sort(gt_ids.begin(), gt_ids.end());
    gt_ids.erase(std::unique(gt_ids.begin(), gt_ids.end()), gt_ids.end());
    std::sort(pred_ids.begin(), pred_ids.end());
    pred_ids.erase(std::unique(pred_ids.begin(), pred_ids.end()), pred_ids.end());
    auto index_of = [](const std::vector<int>& ids, int id) {
        return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
    };

    // Co-occurrence counts, frame by frame.
    std::map<int, std::vector<const MotRow*>> gt_by_frame, pred_by_frame;
    std::set<std::pair<int, int>> seen;
    for (const auto& r : gt) {
        if (!seen.insert({r.frame, r.id}).second)
            throw TrackingError("duplicate ground-truth id " + std::to_string(r.id) + " in frame " + std::to_string(r.frame));
        gt_by_frame[r.frame].push_back(&r);
    }
    seen.clear();
    for (const auto& r : pred) {
        if (!seen.insert({r.frame, r.id}).second)
            throw TrackingError("duplicate predicted id " + std::to_string(r.id) + " in frame " + std::to_string(r.frame));
        pred_by_frame[r.frame].push_back(&r);
    }
    std::vector<long long> counts(gt_ids.size() * pred_ids.size(), 0);
    for (const auto& [frame, gts] : gt_by_frame) {
        const auto it = pred_by_frame.find(frame);
        if (it == pred_by_frame.end()) continue;
        for (const auto* g : gts)
            for (const auto* p : it->second)
                if (bbox_iou(g->box, p->box) >= iou_gate)
                    ++counts[index_of(gt_ids, g->id) * pred_ids.size() + index_of(pred_ids, p->id)];
    }

    if (!gt_ids.empty() && !pred_ids.empty()) {
        CostMatrix cost(gt_ids.size(), pred_ids.size());
        for (std::size_t i = 0; i < counts.size(); ++i) cost.values[i] = -static_cast<double>(counts[i]);
        const auto choice = solve_assignment(cost);
        for (std::size_t r = 0; r < gt_ids.size(); ++r) {
            if (choice[r] < 0) continue;
            const long long n = counts[r * pred_ids.size() + choice[r]];
            if (n == 0) continue;
            out.matches.push_back({gt_ids[r], pred_ids[choice[r]], n});
            out.idtp += n;
        }
    }
    out.idfp = out.pred_boxes - out.idtp;
    out.idfn = out.gt_boxes - out.idtp;

    for (int id : gt_ids) out.per_gt.push_back({id, 0, 0, 0, -1});
    for (int id : pred_ids) out.per_pred.push_back({id, 0, 0, 0, -1});
    for (const auto& r : gt) ++out.per_gt[index_of(gt_ids, r.id)].boxes;
    for (const auto& r : pred) ++out.per_pred[index_of(pred_ids, r.id)].boxes;
    for (const auto& m : out.matches) {
        auto& g = out.per_gt[index_of(gt_ids, m.gt_id)];
        auto& p = out.per_pred[index_of(pred_ids, m.pred_id)];
        g.idtp = p.idtp = m.idtp;
        g.match = m.pred_id;
        p.match = m.gt_id;
    }
    for (auto& g : out.per_gt) g.missed = g.boxes - g.idtp;
    for (auto& p : out.per_pred) p.missed = p.boxes - p.idtp;

    if (out.gt_boxes == 0 && out.pred_boxes == 0) {
        out.idf1 = out.idp = out.idr = 1.0;
        return out;
    }
    out.idf1 = 2.0 * out.idtp / static_cast<double>(2 * out.idtp + out.idfp + out.idfn);
    out.idp = out.pred_boxes ? static_cast<double>(out.idtp) / out.pred_boxes : 0.0;
    out.idr = out.gt_boxes ? static_cast<double>(out.idtp) / out.gt_boxes : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic sequences

SynthSequence synth_sequence(const SynthSpec& spec) {
    if (spec.frames < 1 || spec.objects < 1) throw std::invalid_argument("synth: need frames and objects");
    const int lane_height = spec.height / spec.objects;
    if (lane_height < spec.box_height + 2 || spec.width < 2 * spec.box_width)
        throw std::invalid_argument("synth: frame too small for the requested objects");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    struct Mover {
        double x, dx;
        int y;
    };
    std::vector<Mover> movers;
    const double x_range = spec.width - spec.box_width;
    for (int k = 0; k < spec.objects; ++k) {
        const int y = k * lane_height + (lane_height - spec.box_height) / 2;
        movers.push_back({uniform(rng) * x_range, (k % 2 == 0 ? 1.0 : -1.0) * spec.speed, y});
    }

    SynthSequence out;
    for (int t = 1; t <= spec.frames; ++t) {
        for (int k = 0; k < spec.objects; ++k) {
            auto& m = movers[k];
            if (t > 1) {
                m.x += m.dx;
                if (m.x < 0) {
                    m.x = -m.x;
                    m.dx = -m.dx;
                } else if (m.x > x_range) {
                    m.x = 2 * x_range - m.x;
                    m.dx = -m.dx;
                }
            }
            const int left = static_cast<int>(std::lround(m.x));
            const BBox truth{left, m.y, left + spec.box_width - 1, m.y + spec.box_height - 1};
            out.gt.push_back({t, k + 1, truth, 1.0});

            // Draw all random numbers unconditionally so each noise knob leaves
            // the other streams unchanged.
            const double drop = uniform(rng);
            const double tail = uniform(rng);
            double j[4];
            for (auto& v : j) v = noise(rng) * spec.jitter;
            if (drop < spec.dropout) continue;
            BBox det{static_cast<int>(std::lround(truth.x_min + j[0])), static_cast<int>(std::lround(truth.y_min + j[1])),
                     static_cast<int>(std::lround(truth.x_max + j[2])), static_cast<int>(std::lround(truth.y_max + j[3]))};
            if (tail < spec.tail_prob) {
                if (m.dx > 0)
                    det.x_min -= spec.tail_length;
                else
                    det.x_max += spec.tail_length;
            }
            if (det.x_max < det.x_min) std::swap(det.x_min, det.x_max);
            if (det.y_max < det.y_min) std::swap(det.y_min, det.y_max);
            det = clip_bbox(det, spec.width, spec.height);
            if (!det.valid()) continue;
            out.detections.push_back({t, -1, det, spec.score});
        }
    }
    return out;
}

}  // namespace samqa
