#include "samqa/service.hpp"

#include "samqa/remote_backend.hpp"

#include "httplib.h"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <regex>

namespace samqa {

using json = nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

class HttpError : public std::runtime_error {
public:
    HttpError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status(status), code(std::move(code)) {}
    int status;
    std::string code;
};

[[noreturn]] void fail(int status, const std::string& code, const std::string& message) {
    throw HttpError(status, code, message);
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), kJson);
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) fail(400, "bad_request", "request body is not a JSON object");
    return body;
}

std::vector<BBox> boxes_from(const json& j) {
    if (!j.is_array()) fail(400, "bad_request", "prompts must be an array of [x_min,y_min,x_max,y_max]");
    std::vector<BBox> out;
    try {
        for (const auto& b : j) out.push_back(bbox_from_json(b));
    } catch (const std::exception& e) {
        fail(400, "bad_request", std::string("bad prompt box: ") + e.what());
    }
    return out;
}

bool valid_id(const std::string& id) {
    static const std::regex pattern("[A-Za-z0-9_-]{1,64}");
    return std::regex_match(id, pattern);
}

int engine_status(EngineError::Kind kind) {
    switch (kind) {
        case EngineError::Kind::BadRequest: return 400;
        case EngineError::Kind::NotRunning: return 409;
        case EngineError::Kind::Backend: return 502;
        case EngineError::Kind::Journal: return 500;
    }
    return 500;
}

std::string engine_code(EngineError::Kind kind) {
    switch (kind) {
        case EngineError::Kind::BadRequest: return "bad_request";
        case EngineError::Kind::NotRunning: return "conflict";
        case EngineError::Kind::Backend: return "backend_error";
        case EngineError::Kind::Journal: return "journal_error";
    }
    return "internal";
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return {};
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// config and backends

void ApiConfig::validate() const {
    if (port < 0 || port > 65535) throw std::invalid_argument("port must be in 0..65535");
    if (!std::filesystem::is_directory(data_root))
        throw std::invalid_argument("data root is not a directory: " + data_root.string());
    if (backend_timeout_ms <= 0) throw std::invalid_argument("backend timeout must be positive");
    defaults.validate();
}

std::shared_ptr<SegmentationBackend> make_backend(const std::string& spec, const std::filesystem::path& scenario,
                                                  std::chrono::milliseconds timeout) {
    std::shared_ptr<SegmentationBackend> backend;
    if (spec == "threshold") {
        backend = std::make_shared<ThresholdBackend>();
    } else if (spec.starts_with("threshold:")) {
        const int level = std::stoi(spec.substr(10));
        if (level < 0 || level > 255) throw std::invalid_argument("threshold level must be 0..255");
        backend = std::make_shared<ThresholdBackend>(static_cast<std::uint8_t>(level));
    } else if (spec.starts_with("oracle:")) {
        backend = std::make_shared<GroundTruthOracle>(GroundTruthOracle::from_directory(spec.substr(7)));
    } else if (spec.starts_with("http://") || spec.starts_with("stdio:")) {
        backend = std::make_shared<RemoteBackend>(make_transport(spec, timeout));
    } else {
        throw std::invalid_argument("unknown backend: " + spec);
    }
    if (!scenario.empty()) backend = std::make_shared<ScriptedBackend>(backend, Scenario::load(scenario));
    return backend;
}

// ---------------------------------------------------------------------------
// event log

EventLog::EventLog(const std::filesystem::path& file, std::vector<std::string> existing)
    : file_(file), lines_(std::move(existing)) {
    for (std::size_t i = 0; i < lines_.size(); ++i) {
        const auto j = json::parse(lines_[i], nullptr, false);
        if (j.is_discarded()) continue;
        const auto type = j.value("type", "");
        if (type == "frame") frame_lines_[j.at("record").at("frame").get<int>()] = static_cast<int>(i);
        if (type == "completed") completed_ = true;
    }
}

void EventLog::append(const std::string& line) {
    file_.append(line);
    {
        std::lock_guard lock(mutex_);
        const auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded()) {
            const auto type = j.value("type", "");
            if (type == "frame") frame_lines_[j.at("record").at("frame").get<int>()] = static_cast<int>(lines_.size());
            if (type == "completed") completed_ = true;
        }
        lines_.push_back(line);
    }
    changed_.notify_all();
}

std::vector<std::pair<int, std::string>> EventLog::read_after(int after, std::chrono::milliseconds wait) {
    std::unique_lock lock(mutex_);
    const auto ready = [&] { return closed_ || static_cast<int>(lines_.size()) > after + 1; };
    if (wait.count() > 0) changed_.wait_for(lock, wait, ready);
    std::vector<std::pair<int, std::string>> out;
    for (int i = std::max(after + 1, 0); i < static_cast<int>(lines_.size()); ++i) out.emplace_back(i, lines_[i]);
    return out;
}

std::optional<std::string> EventLog::frame_line(int frame) const {
    std::lock_guard lock(mutex_);
    const auto it = frame_lines_.find(frame);
    if (it == frame_lines_.end()) return std::nullopt;
    return lines_[it->second];
}

std::vector<std::string> EventLog::lines() const {
    std::lock_guard lock(mutex_);
    return lines_;
}

void EventLog::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    changed_.notify_all();
}

bool EventLog::finished() const {
    std::lock_guard lock(mutex_);
    return closed_ || completed_;
}

std::optional<StreamEvent> event_from_record(const json& r) {
    const auto type = r.value("type", "");
    if (type == "header") {
        const auto& m = r.at("manifest");
        return StreamEvent{"created",
                           {{"session", r.at("session")},
                            {"frames", m.at("frames").size()},
                            {"expected_count", m.at("expected_count")}}};
    }
    if (type == "prompts") return StreamEvent{"prompts", {{"frame", r.at("frame")}, {"source", r.at("source")}}};
    if (type == "frame") {
        const auto& rec = r.at("record");
        json sources = json::array();
        for (const auto& i : rec.at("instances")) sources.push_back(i.at("source"));
        return StreamEvent{"frame",
                           {{"frame", rec.at("frame")},
                            {"verdict", rec.at("verdict")},
                            {"recovery_attempted", rec.at("recovery_attempted")},
                            {"sources", sources}}};
    }
    if (type == "conflict") {
        json data = r;
        data.erase("type");
        return StreamEvent{"conflict", data};
    }
    if (type == "completed") return StreamEvent{"completed", {{"frames", r.at("frames")}}};
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// service

struct Service::Slot {
    std::string id;
    std::string client_token;
    std::string manifest_ref;  // relative to the data root
    std::shared_ptr<EventLog> log;

    std::mutex command;
    std::optional<AnnotationEngine> engine;  // guarded by command

    mutable std::mutex state;
    json summary;  // guarded by state
};

Service::Service(ApiConfig config, std::shared_ptr<SegmentationBackend> backend)
    : config_(std::move(config)), backend_(std::make_shared<SerializedBackend>(std::move(backend))) {
    config_.validate();
    config_.data_root = std::filesystem::absolute(config_.data_root).lexically_normal();
    std::filesystem::create_directories(config_.data_root / "sessions");
    load_existing();
}

Service::~Service() { shutdown(); }

void Service::shutdown() {
    std::lock_guard lock(registry_mutex_);
    for (auto& [id, slot] : sessions_) slot->log->close();
}

std::filesystem::path Service::journal_path(const std::string& id) const {
    return config_.data_root / "sessions" / id / "journal.jsonl";
}

std::string Service::scrub(std::string message) const {
    // never leak where the data lives on the server
    for (const auto& prefix : {config_.data_root.string() + "/", config_.data_root.string()}) {
        for (auto pos = message.find(prefix); pos != std::string::npos; pos = message.find(prefix, pos))
            message.erase(pos, prefix.size());
    }
    return message;
}

void Service::load_existing() {
    const auto dir = config_.data_root / "sessions";
    std::vector<std::filesystem::path> entries;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& path : entries) {
        try {
            std::ifstream meta_in(path / "meta.json");
            const auto meta = json::parse(meta_in);
            auto slot = std::make_shared<Slot>();
            slot->id = meta.at("id").get<std::string>();
            slot->client_token = meta.value("client_token", "");
            slot->manifest_ref = meta.at("manifest").get<std::string>();
            const auto lines = read_journal_lines(path / "journal.jsonl");
            slot->log = std::make_shared<EventLog>(path / "journal.jsonl", lines);
            const auto frames_root = (config_.data_root / slot->manifest_ref).parent_path();
            slot->engine.emplace(AnnotationEngine::resume(lines, backend_, slot->log, frames_root));
            publish(*slot);
            if (!slot->client_token.empty()) tokens_[slot->client_token] = slot->id;
            sessions_[slot->id] = slot;
        } catch (const std::exception& e) {
            std::cerr << "skipping session " << path.filename().string() << ": " << scrub(e.what()) << "\n";
        }
    }
    next_id_ = static_cast<int>(sessions_.size()) + 1;
}

std::shared_ptr<Service::Slot> Service::find(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(404, "not_found", "no session " + id);
    return it->second;
}

void Service::publish(Slot& slot) {
    const auto& s = slot.engine->session();
    json summary{{"id", s.id},
                 {"name", s.manifest.name},
                 {"manifest", slot.manifest_ref},
                 {"status", to_string(s.status)},
                 {"cursor", s.cursor},
                 {"frame_count", s.manifest.frame_count()},
                 {"expected_count", s.expected_count()},
                 {"width", s.manifest.width},
                 {"height", s.manifest.height},
                 {"params", to_json(s.params)},
                 {"stats", to_json(s.stats)},
                 {"conflict", s.conflict ? to_json(*s.conflict) : json(nullptr)}};
    std::lock_guard lock(slot.state);
    slot.summary = std::move(summary);
}

void Service::mount(httplib::Server& server) {
    const auto guarded = [this](auto handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const HttpError& e) {
                reply(res, e.status, {{"error", {{"code", e.code}, {"message", scrub(e.what())}}}});
            } catch (const EngineError& e) {
                reply(res, engine_status(e.kind()),
                      {{"error", {{"code", engine_code(e.kind())}, {"message", scrub(e.what())}}}});
            } catch (const BackendError& e) {
                reply(res, 502, {{"error", {{"code", "backend_error"}, {"message", scrub(e.what())}}}});
            } catch (const json::exception& e) {
                reply(res, 400, {{"error", {{"code", "bad_request"}, {"message", scrub(e.what())}}}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", {{"code", "internal"}, {"message", scrub(e.what())}}}});
            }
        };
    };

    server.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
        const auto h = backend_->health();
        std::size_t count;
        {
            std::lock_guard lock(registry_mutex_);
            count = sessions_.size();
        }
        reply(res, 200, {{"ok", h.ok}, {"backend", {{"ok", h.ok}, {"detail", h.detail}}}, {"sessions", count}});
    }));

    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
        std::vector<std::shared_ptr<Slot>> slots;
        {
            std::lock_guard lock(registry_mutex_);
            for (const auto& [id, slot] : sessions_) slots.push_back(slot);
        }
        json out = json::array();
        for (const auto& slot : slots) {
            std::lock_guard lock(slot->state);
            out.push_back(slot->summary);
        }
        reply(res, 200, out);
    }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto token = body.value("client_token", "");
        std::lock_guard registry(registry_mutex_);
        if (!token.empty()) {
            if (const auto it = tokens_.find(token); it != tokens_.end()) {
                const auto& slot = sessions_.at(it->second);
                std::lock_guard lock(slot->state);
                reply(res, 200, slot->summary);
                return;
            }
        }

        if (!body.contains("manifest") || !body.at("manifest").is_string())
            fail(400, "bad_request", "manifest (path relative to the data root) is required");
        const auto ref = body.at("manifest").get<std::string>();
        const std::filesystem::path rel(ref);
        if (rel.empty() || rel.is_absolute() ||
            std::any_of(rel.begin(), rel.end(), [](const auto& part) { return part == ".."; }))
            fail(400, "bad_request", "manifest must be a relative path inside the data root");
        FrameManifest manifest;
        try {
            manifest = FrameManifest::load(config_.data_root / rel);
        } catch (const std::exception& e) {
            fail(400, "bad_request", "manifest " + ref + " is not readable: " + scrub(e.what()));
        }
        manifest.root = (config_.data_root / rel).parent_path();

        auto params_json = to_json(config_.defaults);
        if (body.contains("params")) {
            if (!body.at("params").is_object()) fail(400, "bad_request", "params must be an object");
            params_json.merge_patch(body.at("params"));
        }
        EngineParams params;
        try {
            params = engine_params_from_json(params_json);
        } catch (const std::exception& e) {
            fail(400, "bad_request", std::string("bad params: ") + e.what());
        }
        const auto prompts = boxes_from(body.value("prompts", json::array()));

        std::string id = body.value("id", "");
        if (id.empty()) {
            do {
                char buf[32];
                std::snprintf(buf, sizeof buf, "s%04d", next_id_++);
                id = buf;
            } while (sessions_.count(id) || std::filesystem::exists(journal_path(id).parent_path()));
        } else if (!valid_id(id)) {
            fail(400, "bad_request", "session id must match [A-Za-z0-9_-]{1,64}");
        } else if (sessions_.count(id) || std::filesystem::exists(journal_path(id).parent_path())) {
            fail(409, "conflict", "session " + id + " already exists");
        }

        const auto dir = journal_path(id).parent_path();
        std::filesystem::create_directories(dir);
        auto slot = std::make_shared<Slot>();
        slot->id = id;
        slot->client_token = token;
        slot->manifest_ref = rel.generic_string();
        try {
            slot->log = std::make_shared<EventLog>(journal_path(id), std::vector<std::string>{});
            slot->engine.emplace(AnnotationEngine::start(id, manifest, params, prompts, backend_, slot->log));
        } catch (...) {
            slot->log.reset();
            std::filesystem::remove_all(dir);
            throw;
        }
        {
            std::ofstream meta(dir / "meta.json");
            meta << json{{"id", id}, {"client_token", token}, {"manifest", slot->manifest_ref}}.dump() << "\n";
        }
        publish(*slot);
        if (!token.empty()) tokens_[token] = id;
        sessions_[id] = slot;
        std::lock_guard lock(slot->state);
        reply(res, 201, slot->summary);
    }));

    server.Get("/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        std::lock_guard lock(slot->state);
        reply(res, 200, slot->summary);
    }));

    server.Post("/sessions/:id/run", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        const auto body = parse_body(req);
        const auto mode = body.value("mode", "auto");
        if (mode != "step" && mode != "auto") fail(400, "bad_request", "mode must be step or auto");

        std::lock_guard command(slot->command);
        int steps = 0;
        StepOutcome outcome{};
        try {
            do {
                outcome = slot->engine->step();
                ++steps;
                publish(*slot);
            } while (mode == "auto" && outcome != StepOutcome::NeedsManual && outcome != StepOutcome::Completed);
        } catch (...) {
            publish(*slot);
            throw;
        }
        json out{{"outcome", to_string(outcome)}, {"steps", steps}};
        {
            std::lock_guard lock(slot->state);
            out["session"] = slot->summary;
        }
        reply(res, 200, out);
    }));

    server.Post("/sessions/:id/prompts", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        const auto body = parse_body(req);
        if (!body.contains("frame") || !body.at("frame").is_number_integer())
            fail(400, "bad_request", "frame is required");
        const auto boxes = boxes_from(body.value("prompts", json::array()));
        std::lock_guard command(slot->command);
        const auto status = slot->engine->session().status;
        if (status != SessionStatus::NeedsManual && status != SessionStatus::AwaitingInit)
            fail(409, "conflict", "session is " + std::string(to_string(status)) + ", not waiting for prompts");
        slot->engine->submit_manual_prompts(body.at("frame").get<int>(), boxes);
        publish(*slot);
        std::lock_guard lock(slot->state);
        reply(res, 200, slot->summary);
    }));

    server.Get("/sessions/:id/frames/:frame", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        int frame = -1;
        try {
            frame = std::stoi(req.path_params.at("frame"));
        } catch (const std::exception&) {
            fail(400, "bad_request", "frame must be an integer");
        }
        int count;
        {
            std::lock_guard lock(slot->state);
            count = slot->summary.at("frame_count").get<int>();
        }
        if (frame < 0 || frame >= count) fail(404, "not_found", "no frame " + std::to_string(frame));
        json out{{"frame", frame},
                 {"image", "/sessions/" + slot->id + "/frames/" + std::to_string(frame) + "/image"},
                 {"annotated", false},
                 {"record", nullptr}};
        if (const auto line = slot->log->frame_line(frame)) {
            out["annotated"] = true;
            out["record"] = json::parse(*line).at("record");
        }
        reply(res, 200, out);
    }));

    server.Get("/sessions/:id/frames/:frame/image",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto slot = find(req.path_params.at("id"));
                   int frame = -1;
                   try {
                       frame = std::stoi(req.path_params.at("frame"));
                   } catch (const std::exception&) {
                       fail(400, "bad_request", "frame must be an integer");
                   }
                   std::string path;
                   {
                       std::lock_guard command(slot->command);
                       const auto& m = slot->engine->session().manifest;
                       if (frame < 0 || frame >= m.frame_count())
                           fail(404, "not_found", "no frame " + std::to_string(frame));
                       path = m.frame(frame).path;
                   }
                   const auto bytes = read_bytes(path);
                   if (bytes.empty()) fail(404, "not_found", "frame image missing");
                   res.status = 200;
                   res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
               }));

    server.Get("/sessions/:id/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        const auto format = req.has_param("format") ? req.get_param_value("format") : "mot";
        std::lock_guard command(slot->command);
        if (format == "mot") {
            res.status = 200;
            res.set_content(export_mot(slot->engine->session()), "text/csv");
        } else if (format == "yolo") {
            reply(res, 200, {{"files", export_yolo(slot->engine->session())}});
        } else {
            fail(400, "bad_request", "format must be mot or yolo");
        }
    }));

    server.Get("/sessions/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto slot = find(req.path_params.at("id"));
        int cursor = -1;
        try {
            if (req.has_param("cursor")) cursor = std::stoi(req.get_param_value("cursor"));
            else if (req.has_header("Last-Event-ID")) cursor = std::stoi(req.get_header_value("Last-Event-ID"));
        } catch (const std::exception&) {
            fail(400, "bad_request", "cursor must be an integer");
        }
        const bool follow = !(req.has_param("follow") && req.get_param_value("follow") == "0");
        auto log = slot->log;
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [log, cursor, follow](std::size_t, httplib::DataSink& sink) mutable {
                const auto batch = log->read_after(cursor, follow ? std::chrono::milliseconds(500)
                                                                  : std::chrono::milliseconds(0));
                for (const auto& [seq, line] : batch) {
                    cursor = seq;
                    const auto event = event_from_record(json::parse(line));
                    if (!event) continue;
                    const auto chunk = "id: " + std::to_string(seq) + "\nevent: " + event->type +
                                       "\ndata: " + event->data.dump() + "\n\n";
                    if (!sink.write(chunk.data(), chunk.size())) return false;
                    if (event->type == "completed") {
                        sink.done();
                        return true;
                    }
                }
                if (!follow || log->finished()) {
                    sink.done();
                    return true;
                }
                if (batch.empty()) {
                    static constexpr char keepalive[] = ": keepalive\n\n";
                    if (!sink.write(keepalive, sizeof keepalive - 1)) return false;
                }
                return true;
            });
    }));
}

}  // namespace samqa
