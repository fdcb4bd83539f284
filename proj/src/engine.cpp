#include "samqa/engine.hpp"

#include "samqa/assignment.hpp"
#include "samqa/protocol.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace samqa {

using nlohmann::json;

namespace {

constexpr const char* kJournalFormat = "samqa-journal";
constexpr int kJournalVersion = 1;

[[noreturn]] void bad_request(const std::string& message) {
    throw EngineError(EngineError::Kind::BadRequest, message);
}

[[noreturn]] void bad_journal(const std::string& message) {
    throw EngineError(EngineError::Kind::Journal, "journal: " + message);
}

json boxes_to_json(const std::vector<BBox>& boxes) {
    json out = json::array();
    for (const auto& b : boxes) out.push_back(to_json(b));
    return out;
}

std::vector<BBox> boxes_from_json(const json& j) {
    std::vector<BBox> out;
    for (const auto& b : j) out.push_back(bbox_from_json(b));
    return out;
}

void check_boxes(const std::vector<BBox>& boxes, const FrameManifest& m) {
    if (static_cast<int>(boxes.size()) != m.expected_count)
        bad_request("expected " + std::to_string(m.expected_count) + " prompts, got " +
                    std::to_string(boxes.size()));
    for (const auto& b : boxes)
        if (!b.valid() || b.x_min < 0 || b.y_min < 0 || b.x_max >= m.width || b.y_max >= m.height)
            bad_request("prompt box outside the frame");
}

std::string_view call_name(TranscriptEntry::Call call) {
    return call == TranscriptEntry::Call::Segment ? "segment" : "grid";
}

json backend_record(TranscriptEntry::Call call, int frame, const SegmentResponse& response) {
    return {{"type", "backend"}, {"call", call_name(call)}, {"frame", frame},
            {"response", protocol::to_json(response)}};
}

InstanceRecord make_instance(const BinaryMask& mask, int id, MaskSource source, const Session& s) {
    InstanceRecord r;
    r.instance_id = id;
    r.source = source;
    r.rle = rle_encode(mask);
    r.area = mask_area(mask);
    r.box = mask_to_bbox(mask);
    r.prompt = inflate_bbox(r.box, s.params.margin_fraction, s.manifest.width, s.manifest.height);
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// codecs

std::string_view to_string(SessionStatus status) {
    switch (status) {
        case SessionStatus::AwaitingInit: return "awaiting_init";
        case SessionStatus::Running: return "running";
        case SessionStatus::NeedsManual: return "needs_manual";
        case SessionStatus::Completed: return "completed";
    }
    return "?";
}

std::string_view to_string(StepOutcome outcome) {
    switch (outcome) {
        case StepOutcome::Advanced: return "advanced";
        case StepOutcome::RecoveryAdvanced: return "recovery_advanced";
        case StepOutcome::NeedsManual: return "needs_manual";
        case StepOutcome::Completed: return "completed";
    }
    return "?";
}

json to_json(const BBox& box) { return json::array({box.x_min, box.y_min, box.x_max, box.y_max}); }

BBox bbox_from_json(const json& j) {
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 4) throw std::invalid_argument("bbox needs 4 coordinates");
    return {v[0], v[1], v[2], v[3]};
}

json to_json(const Verdict& verdict) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, VerdictPass>) {
                return {{"outcome", "pass"}, {"validation_skipped", v.validation_skipped}};
            } else if constexpr (std::is_same_v<T, VerdictFailOverlap>) {
                return {{"outcome", "fail_overlap"}, {"first_id", v.first_id}, {"second_id", v.second_id},
                        {"iou", v.iou}};
            } else if constexpr (std::is_same_v<T, VerdictFailSize>) {
                return {{"outcome", "fail_size"}, {"instance_id", v.instance_id}, {"area", v.area},
                        {"lower", v.lower}, {"upper", v.upper}};
            } else {
                return {{"outcome", "fail_association"}, {"unmatched_prev", v.unmatched_prev},
                        {"unmatched_curr", v.unmatched_curr}};
            }
        },
        verdict);
}

Verdict verdict_from_json(const json& j) {
    const auto outcome = j.at("outcome").get<std::string>();
    if (outcome == "pass") return VerdictPass{j.value("validation_skipped", false)};
    if (outcome == "fail_overlap")
        return VerdictFailOverlap{j.at("first_id").get<int>(), j.at("second_id").get<int>(),
                                  j.at("iou").get<double>()};
    if (outcome == "fail_size")
        return VerdictFailSize{j.at("instance_id").get<int>(), j.at("area").get<long long>(),
                               j.at("lower").get<double>(), j.at("upper").get<double>()};
    if (outcome == "fail_association")
        return VerdictFailAssociation{j.at("unmatched_prev").get<std::vector<int>>(),
                                      j.at("unmatched_curr").get<std::vector<int>>()};
    throw std::invalid_argument("unknown verdict outcome: " + outcome);
}

json to_json(const EngineParams& p) {
    return {{"consistency",
             {{"alpha", p.consistency.alpha},
              {"beta", p.consistency.beta},
              {"min_match_iou", p.consistency.min_match_iou},
              {"size_anchor", to_string(p.consistency.size_anchor)}}},
            {"density",
             {{"percentile", p.density.percentile},
              {"dilation_kernel", p.density.dilation_kernel},
              {"dilation_iterations", p.density.dilation_iterations},
              {"min_points", p.density.min_points},
              {"bandwidth_floor", p.density.bandwidth_floor}}},
            {"margin_fraction", p.margin_fraction},
            {"grid", {{"nx", p.grid.nx}, {"ny", p.grid.ny}}},
            {"filter_enabled", p.filter_enabled},
            {"validation_enabled", p.validation_enabled},
            {"recovery_enabled", p.recovery_enabled},
            {"snapshot_interval", p.snapshot_interval}};
}

// Missing keys keep their defaults so partial parameter objects are accepted.
EngineParams engine_params_from_json(const json& j) {
    EngineParams p;
    if (auto c = j.find("consistency"); c != j.end()) {
        p.consistency.alpha = c->value("alpha", p.consistency.alpha);
        p.consistency.beta = c->value("beta", p.consistency.beta);
        p.consistency.min_match_iou = c->value("min_match_iou", p.consistency.min_match_iou);
        if (c->contains("size_anchor"))
            p.consistency.size_anchor = size_anchor_from_string(c->at("size_anchor").get<std::string>());
    }
    if (auto d = j.find("density"); d != j.end()) {
        p.density.percentile = d->value("percentile", p.density.percentile);
        p.density.dilation_kernel = d->value("dilation_kernel", p.density.dilation_kernel);
        p.density.dilation_iterations = d->value("dilation_iterations", p.density.dilation_iterations);
        p.density.min_points = d->value("min_points", p.density.min_points);
        p.density.bandwidth_floor = d->value("bandwidth_floor", p.density.bandwidth_floor);
    }
    p.margin_fraction = j.value("margin_fraction", p.margin_fraction);
    if (auto g = j.find("grid"); g != j.end()) {
        p.grid.nx = g->value("nx", p.grid.nx);
        p.grid.ny = g->value("ny", p.grid.ny);
    }
    p.filter_enabled = j.value("filter_enabled", p.filter_enabled);
    p.validation_enabled = j.value("validation_enabled", p.validation_enabled);
    p.recovery_enabled = j.value("recovery_enabled", p.recovery_enabled);
    p.snapshot_interval = j.value("snapshot_interval", p.snapshot_interval);
    return p;
}

void EngineParams::validate() const {
    consistency.validate();
    density.validate();
    grid.validate();
    if (!(margin_fraction >= 0.0 && margin_fraction <= 1.0))
        throw std::invalid_argument("margin_fraction must be in [0, 1]");
    if (snapshot_interval < 0) throw std::invalid_argument("snapshot_interval must be >= 0");
}

json to_json(const FrameRecord& r) {
    json instances = json::array();
    for (const auto& i : r.instances)
        instances.push_back({{"id", i.instance_id},
                             {"source", to_string(i.source)},
                             {"area", i.area},
                             {"box", to_json(i.box)},
                             {"prompt", to_json(i.prompt)},
                             {"counts", i.rle}});
    return {{"frame", r.frame_index},
            {"verdict", to_json(r.verdict)},
            {"recovery_attempted", r.recovery_attempted},
            {"instances", instances}};
}

static FrameRecord frame_record_from_json(const json& j) {
    FrameRecord r;
    r.frame_index = j.at("frame").get<int>();
    r.verdict = verdict_from_json(j.at("verdict"));
    r.recovery_attempted = j.at("recovery_attempted").get<bool>();
    for (const auto& i : j.at("instances")) {
        InstanceRecord rec;
        rec.instance_id = i.at("id").get<int>();
        rec.source = mask_source_from_string(i.at("source").get<std::string>());
        rec.area = i.at("area").get<long long>();
        rec.box = bbox_from_json(i.at("box"));
        rec.prompt = bbox_from_json(i.at("prompt"));
        rec.rle = i.at("counts").get<RunLengths>();
        r.instances.push_back(std::move(rec));
    }
    return r;
}

json to_json(const ConflictEvent& c) {
    return {{"session", c.session_id},
            {"frame", c.frame_index},
            {"verdict", to_json(c.verdict)},
            {"recovery_attempted", c.recovery_attempted},
            {"required_prompts", c.required_prompts}};
}

json to_json(const SessionStats& s) {
    return {{"accepted", s.accepted},
            {"validated", s.validated},
            {"recovery_attempts", s.recovery_attempts},
            {"recoveries", s.recoveries},
            {"conflicts", s.conflicts},
            {"manual_interventions", s.manual_interventions}};
}

static SessionStats stats_from_json(const json& j) {
    SessionStats s;
    s.accepted = j.at("accepted").get<int>();
    s.validated = j.at("validated").get<int>();
    s.recovery_attempts = j.at("recovery_attempts").get<int>();
    s.recoveries = j.at("recoveries").get<int>();
    s.conflicts = j.at("conflicts").get<int>();
    s.manual_interventions = j.at("manual_interventions").get<int>();
    return s;
}

InstanceMask FrameRecord::instance_mask(std::size_t i, int width, int height) const {
    const auto& rec = instances.at(i);
    return {rle_decode(rec.rle, width, height), rec.instance_id, frame_index, rec.source};
}

// ---------------------------------------------------------------------------
// journal files

FileJournal::FileJournal(const std::filesystem::path& file) : out_(file, std::ios::app) {
    if (!out_) throw EngineError(EngineError::Kind::Journal, "cannot open journal " + file.string());
}

void FileJournal::append(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw EngineError(EngineError::Kind::Journal, "journal write failed");
}

std::vector<std::string> read_journal_lines(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw EngineError(EngineError::Kind::Journal, "cannot open journal " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

std::vector<TranscriptEntry> transcript_from_journal(std::span<const std::string> lines) {
    std::vector<TranscriptEntry> out;
    for (const auto& line : lines) {
        const auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) bad_journal("unparsable line");
        if (j.value("type", "") != "backend") continue;
        TranscriptEntry e;
        e.call = j.at("call").get<std::string>() == "grid" ? TranscriptEntry::Call::Grid
                                                           : TranscriptEntry::Call::Segment;
        e.frame = j.at("frame").get<int>();
        e.response = protocol::response_from_json(j.at("response"));
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// engine

AnnotationEngine AnnotationEngine::start(std::string id, FrameManifest manifest, EngineParams params,
                                         std::vector<BBox> initial_prompts,
                                         std::shared_ptr<SegmentationBackend> backend,
                                         std::shared_ptr<JournalSink> journal) {
    if (manifest.frames.empty()) bad_request("manifest has no frames");
    try {
        manifest.validate();
        params.validate();
    } catch (const std::exception& e) {
        bad_request(e.what());
    }
    if (!initial_prompts.empty()) check_boxes(initial_prompts, manifest);

    AnnotationEngine engine(std::move(backend), std::move(journal));
    std::vector<json> records;
    records.push_back({{"type", "header"},
                       {"format", kJournalFormat},
                       {"version", kJournalVersion},
                       {"session", id},
                       {"manifest", to_json(manifest)},
                       {"params", to_json(params)}});
    if (!initial_prompts.empty())
        records.push_back({{"type", "prompts"},
                           {"frame", 0},
                           {"source", to_string(MaskSource::Initial)},
                           {"boxes", boxes_to_json(initial_prompts)}});
    engine.session_.manifest.root = manifest.root;
    engine.commit(std::move(records));
    return engine;
}

AnnotationEngine AnnotationEngine::resume(std::span<const std::string> lines,
                                          std::shared_ptr<SegmentationBackend> backend,
                                          std::shared_ptr<JournalSink> journal,
                                          const std::filesystem::path& frames_root) {
    if (lines.empty()) bad_journal("empty");
    AnnotationEngine engine(std::move(backend), std::move(journal));
    engine.session_.manifest.root = frames_root;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto j = json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) bad_journal("line " + std::to_string(i + 1) + " is not JSON");
        if (i == 0 && j.value("type", "") != "header") bad_journal("missing header");
        try {
            engine.apply(j);
        } catch (const EngineError&) {
            throw;
        } catch (const std::exception& e) {
            bad_journal("line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return engine;
}

void AnnotationEngine::commit(std::vector<json> records) {
    // Write everything first, then apply: a crash between the two leaves a
    // journal that resume() turns into exactly the state apply() would build.
    for (const auto& r : records)
        if (journal_) journal_->append(r.dump());
    for (const auto& r : records) apply(r);
}

void AnnotationEngine::apply(const json& r) {
    auto& s = session_;
    const auto type = r.at("type").get<std::string>();
    if (type == "header") {
        if (r.at("format").get<std::string>() != kJournalFormat) bad_journal("unknown format");
        if (r.at("version").get<int>() != kJournalVersion) bad_journal("unsupported version");
        const auto root = s.manifest.root;
        s = Session{};
        s.id = r.at("session").get<std::string>();
        s.manifest = manifest_from_json(r.at("manifest"));
        s.manifest.root = root;
        s.params = engine_params_from_json(r.at("params"));
        s.status = SessionStatus::AwaitingInit;
    } else if (type == "prompts") {
        const int frame = r.at("frame").get<int>();
        if (frame != s.cursor) bad_journal("prompts for frame " + std::to_string(frame) + " at cursor " +
                                           std::to_string(s.cursor));
        s.pending.boxes = boxes_from_json(r.at("boxes"));
        s.pending.source = mask_source_from_string(r.at("source").get<std::string>());
        if (s.pending.source == MaskSource::Manual) ++s.stats.manual_interventions;
        s.conflict.reset();
        s.status = SessionStatus::Running;
    } else if (type == "frame") {
        auto record = frame_record_from_json(r.at("record"));
        if (record.frame_index != s.cursor) bad_journal("frame record out of order");
        if (static_cast<int>(record.instances.size()) != s.expected_count())
            bad_journal("frame record with wrong instance count");
        ++s.stats.accepted;
        if (const auto* p = std::get_if<VerdictPass>(&record.verdict); p && !p->validation_skipped)
            ++s.stats.validated;
        if (record.recovery_attempted) ++s.stats.recovery_attempts;
        s.last_masks.clear();
        s.pending.boxes.clear();
        bool recovered = false;
        for (std::size_t i = 0; i < record.instances.size(); ++i) {
            const auto& inst = record.instances[i];
            s.last_masks.push_back(record.instance_mask(i, s.manifest.width, s.manifest.height));
            s.pending.boxes.push_back(inst.prompt);
            if (is_trusted(inst.source)) s.trusted_areas[inst.instance_id] = inst.area;
            recovered = recovered || inst.source == MaskSource::Recovery;
        }
        if (recovered) ++s.stats.recoveries;
        s.pending.source = MaskSource::Model;
        s.records.push_back(std::move(record));
        ++s.cursor;
        s.status = SessionStatus::Running;
    } else if (type == "conflict") {
        ConflictEvent c;
        c.session_id = s.id;
        c.frame_index = r.at("frame").get<int>();
        if (c.frame_index != s.cursor) bad_journal("conflict out of order");
        c.verdict = verdict_from_json(r.at("verdict"));
        c.recovery_attempted = r.at("recovery_attempted").get<bool>();
        c.required_prompts = r.at("required_prompts").get<int>();
        ++s.stats.conflicts;
        if (c.recovery_attempted) ++s.stats.recovery_attempts;
        s.conflict = std::move(c);
        s.pending.boxes.clear();
        s.status = SessionStatus::NeedsManual;
    } else if (type == "completed") {
        if (s.cursor != s.manifest.frame_count()) bad_journal("completed before the last frame");
        s.status = SessionStatus::Completed;
    } else if (type == "snapshot") {
        if (r.at("cursor").get<int>() != s.cursor || stats_from_json(r.at("stats")) != s.stats)
            bad_journal("snapshot disagrees with replayed state at cursor " + std::to_string(s.cursor));
    } else if (type == "backend") {
        // transcript only; see transcript_from_journal
    } else {
        bad_journal("unknown record type " + type);
    }
}

void AnnotationEngine::submit_manual_prompts(int frame_index, std::vector<BBox> prompts) {
    const auto& s = session_;
    if (s.status != SessionStatus::NeedsManual && s.status != SessionStatus::AwaitingInit)
        bad_request("session is " + std::string(to_string(s.status)) + ", not waiting for prompts");
    if (frame_index != s.cursor)
        bad_request("prompts are due for frame " + std::to_string(s.cursor) + ", not " +
                    std::to_string(frame_index));
    check_boxes(prompts, s.manifest);
    const auto source = s.status == SessionStatus::AwaitingInit && s.cursor == 0 ? MaskSource::Initial
                                                                                 : MaskSource::Manual;
    commit({{{"type", "prompts"},
             {"frame", frame_index},
             {"source", to_string(source)},
             {"boxes", boxes_to_json(prompts)}}});
}

StepOutcome AnnotationEngine::step() {
    const auto& s = session_;
    if (s.status != SessionStatus::Running)
        throw EngineError(EngineError::Kind::NotRunning,
                          "cannot step a session that is " + std::string(to_string(s.status)));

    const int n = s.expected_count();
    const int W = s.manifest.width;
    const int H = s.manifest.height;
    const FrameRef frame = s.manifest.frame(s.cursor);
    std::vector<json> records;

    auto call_backend = [&](auto&& fn, TranscriptEntry::Call call) {
        SegmentResponse response;
        try {
            response = fn();
            check_response(response, W, H);
        } catch (const BackendError& e) {
            throw EngineError(EngineError::Kind::Backend, e.what());
        }
        records.push_back(backend_record(call, s.cursor, response));
        return response;
    };
    auto filtered = [&](const BinaryMask& m) {
        return s.params.filter_enabled ? remove_outliers(m, s.params.density) : m;
    };

    // (1) prompted segmentation, one mask per instance in id order
    std::vector<Prompt> prompts(s.pending.boxes.begin(), s.pending.boxes.end());
    std::vector<int> hints(n);
    for (int i = 0; i < n; ++i) hints[i] = i;
    const auto response = call_backend([&] { return backend_->segment(frame, prompts, hints); },
                                       TranscriptEntry::Call::Segment);

    // (2) outlier removal; missing masks count as empty
    std::vector<InstanceMask> curr;
    for (int i = 0; i < n; ++i) {
        BinaryMask m = i < static_cast<int>(response.masks.size()) ? filtered(response.masks[i].mask)
                                                                   : BinaryMask(W, H);
        curr.push_back({std::move(m), i, s.cursor, s.pending.source});
    }

    Verdict verdict = VerdictPass{true};
    bool recovery_attempted = false;
    MaskSource source = s.pending.source;
    std::vector<InstanceMask> accepted;

    std::vector<int> empty_ids;
    for (const auto& m : curr)
        if (m.mask.empty()) empty_ids.push_back(m.instance_id);

    if (is_trusted(s.pending.source) || !s.params.validation_enabled) {
        // (3) trusted prompts, or validation switched off: accept as returned
        if (!empty_ids.empty())
            verdict = VerdictFailAssociation{{}, empty_ids};
        else
            accepted = curr;
    } else {
        PrevContext context{s.last_masks, s.trusted_areas};
        auto result = validate(context, curr, s.params.consistency);
        verdict = result.verdict;
        if (passed(verdict)) {
            for (const auto& pair : result.association.pairs) {
                auto m = curr[pair.curr_id];
                m.instance_id = pair.prev_id;
                accepted.push_back(std::move(m));
            }
        } else if (s.params.recovery_enabled) {
            // (4) the single recovery attempt: grid prompts, optimal mask-to-instance assignment
            recovery_attempted = true;
            const auto grid = call_backend([&] { return backend_->segment_grid(frame, s.params.grid); },
                                           TranscriptEntry::Call::Grid);
            const auto& prev = s.last_masks;
            CostMatrix cost(static_cast<int>(prev.size()), static_cast<int>(grid.masks.size()));
            for (std::size_t r = 0; r < prev.size(); ++r)
                for (std::size_t c = 0; c < grid.masks.size(); ++c)
                    cost(r, c) = -mask_iou(prev[r].mask, grid.masks[c].mask);
            const auto choice = solve_assignment(cost);
            std::vector<int> unclaimed;
            std::vector<InstanceMask> recovered;
            for (std::size_t r = 0; r < prev.size(); ++r) {
                if (choice[r] < 0 || cost(r, choice[r]) >= 0.0) {
                    unclaimed.push_back(prev[r].instance_id);
                    continue;
                }
                recovered.push_back({filtered(grid.masks[choice[r]].mask), prev[r].instance_id, s.cursor,
                                     MaskSource::Recovery});
            }
            if (!unclaimed.empty()) {
                verdict = VerdictFailAssociation{unclaimed, {}};
            } else {
                result = validate(context, recovered, s.params.consistency);
                verdict = result.verdict;
                if (passed(verdict)) {
                    accepted = std::move(recovered);
                    source = MaskSource::Recovery;
                }
            }
        }
    }

    StepOutcome outcome;
    if (accepted.empty()) {
        // (5) escalate to a human
        records.push_back({{"type", "conflict"},
                           {"frame", s.cursor},
                           {"verdict", to_json(verdict)},
                           {"recovery_attempted", recovery_attempted},
                           {"required_prompts", n}});
        outcome = StepOutcome::NeedsManual;
    } else {
        std::sort(accepted.begin(), accepted.end(),
                  [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
        FrameRecord record;
        record.frame_index = s.cursor;
        record.verdict = verdict;
        record.recovery_attempted = recovery_attempted;
        for (const auto& m : accepted) record.instances.push_back(make_instance(m.mask, m.instance_id, source, s));
        records.push_back({{"type", "frame"}, {"record", to_json(record)}});

        const int next = s.cursor + 1;
        if (s.params.snapshot_interval > 0 && next % s.params.snapshot_interval == 0) {
            SessionStats stats = s.stats;
            ++stats.accepted;
            if (const auto* p = std::get_if<VerdictPass>(&verdict); p && !p->validation_skipped) ++stats.validated;
            if (recovery_attempted) ++stats.recovery_attempts;
            if (source == MaskSource::Recovery) ++stats.recoveries;
            records.push_back({{"type", "snapshot"}, {"cursor", next}, {"stats", to_json(stats)}});
        }
        if (next == s.manifest.frame_count()) {
            records.push_back({{"type", "completed"}, {"frames", next}});
            outcome = StepOutcome::Completed;
        } else {
            outcome = source == MaskSource::Recovery ? StepOutcome::RecoveryAdvanced : StepOutcome::Advanced;
        }
    }
    commit(std::move(records));
    return outcome;
}

StepOutcome AnnotationEngine::run() {
    for (;;) {
        const auto outcome = step();
        if (outcome == StepOutcome::NeedsManual || outcome == StepOutcome::Completed) return outcome;
    }
}

// ---------------------------------------------------------------------------
// exports

std::string export_mot(const Session& session) {
    std::ostringstream out;
    for (const auto& r : session.records)
        for (const auto& i : r.instances)
            out << r.frame_index + 1 << ',' << i.instance_id + 1 << ',' << i.box.x_min << ',' << i.box.y_min << ','
                << i.box.width() << ',' << i.box.height() << ",1,-1,-1,-1\n";
    return out.str();
}

std::map<std::string, std::string> export_yolo(const Session& session) {
    std::map<std::string, std::string> files;
    const double W = session.manifest.width;
    const double H = session.manifest.height;
    for (const auto& r : session.records) {
        std::string text;
        char line[96];
        for (const auto& i : r.instances) {
            const double cx = (i.box.x_min + i.box.x_max) / 2.0 / W;
            const double cy = (i.box.y_min + i.box.y_max) / 2.0 / H;
            std::snprintf(line, sizeof line, "0 %.6f %.6f %.6f %.6f\n", cx, cy, i.box.width() / W,
                          i.box.height() / H);
            text += line;
        }
        files[session.manifest.frame_stem(r.frame_index) + ".txt"] = std::move(text);
    }
    return files;
}

}  // namespace samqa
