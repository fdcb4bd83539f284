#include "samqa/remote_backend.hpp"

#include "httplib.h"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace samqa {

using protocol::json;
using protocol::Reply;

namespace {

bool is_get(std::string_view method) { return method == "health" || method == "capabilities"; }

}  // namespace

HttpTransport::HttpTransport(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

Reply HttpTransport::call(std::string_view method, const std::string& body) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const std::string path = "/v1/" + std::string(method);
    auto result = is_get(method) ? client.Get(path) : client.Post(path, body, "application/json");
    if (!result) {
        const auto err = result.error();
        const auto code = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
                              ? BackendErrorCode::Timeout
                              : BackendErrorCode::Unreachable;
        throw BackendError(code, base_url_ + path + ": " + httplib::to_string(err));
    }
    return {result->status, result->body};
}

// ---------------------------------------------------------------------------

void write_framed(std::ostream& out, const std::string& payload) {
    out << "Content-Length: " << payload.size() << "\r\n\r\n" << payload;
    out.flush();
}

bool read_framed(std::istream& in, std::string& payload) {
    std::string line;
    std::size_t length = 0;
    bool have_length = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (have_length) break;
            continue;
        }
        constexpr std::string_view key = "Content-Length:";
        if (line.rfind(key, 0) == 0) {
            length = std::stoul(line.substr(key.size()));
            have_length = true;
        }
    }
    if (!have_length) return false;
    payload.assign(length, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(length));
    return static_cast<std::size_t>(in.gcount()) == length;
}

StdioTransport::StdioTransport(std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
    if (argv.empty()) throw BackendError(BackendErrorCode::Unreachable, "empty sidecar command");
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
        throw BackendError(BackendErrorCode::Unreachable, std::strerror(errno));

    pid_ = fork();
    if (pid_ < 0) throw BackendError(BackendErrorCode::Unreachable, std::strerror(errno));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        std::vector<char*> args;
        for (auto& a : argv) args.push_back(a.data());
        args.push_back(nullptr);
        execvp(args[0], args.data());
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    signal(SIGPIPE, SIG_IGN);
}

StdioTransport::~StdioTransport() { shutdown(); }

void StdioTransport::shutdown() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        kill(pid_, SIGTERM);
        waitpid(pid_, nullptr, 0);
        pid_ = -1;
    }
}

Reply StdioTransport::call(std::string_view method, const std::string& body) {
    if (to_child_ < 0) throw BackendError(BackendErrorCode::Unreachable, "sidecar is not running");

    json envelope{{"method", method}};
    envelope["body"] = body.empty() ? json::object() : json::parse(body, nullptr, false);
    if (envelope["body"].is_discarded()) envelope["body"] = body;  // let the sidecar reject it
    std::ostringstream framed;
    write_framed(framed, envelope.dump());
    const auto message = framed.str();
    for (std::size_t sent = 0; sent < message.size();) {
        const auto n = write(to_child_, message.data() + sent, message.size() - sent);
        if (n <= 0) throw BackendError(BackendErrorCode::Unreachable, "sidecar closed its input");
        sent += static_cast<std::size_t>(n);
    }

    // Accumulate until one complete framed message is buffered.
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
        const auto header_end = pending_.find("\r\n\r\n");
        if (header_end != std::string::npos) {
            const auto pos = pending_.find("Content-Length:");
            if (pos == std::string::npos || pos > header_end)
                throw BackendError(BackendErrorCode::Malformed, "sidecar reply without Content-Length");
            const auto length = std::stoul(pending_.substr(pos + 15, header_end - pos - 15));
            if (pending_.size() >= header_end + 4 + length) {
                const auto payload = pending_.substr(header_end + 4, length);
                pending_.erase(0, header_end + 4 + length);
                const auto reply = json::parse(payload, nullptr, false);
                if (reply.is_discarded() || !reply.contains("status"))
                    throw BackendError(BackendErrorCode::Malformed, "sidecar reply is not an envelope");
                return {reply.at("status").get<int>(), reply.at("body").dump()};
            }
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw BackendError(BackendErrorCode::Timeout, "sidecar did not reply in time");
        pollfd pfd{from_child_, POLLIN, 0};
        const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
        if (ready == 0) continue;
        if (ready < 0) throw BackendError(BackendErrorCode::Unreachable, std::strerror(errno));
        char buffer[65536];
        const auto n = read(from_child_, buffer, sizeof buffer);
        if (n <= 0) throw BackendError(BackendErrorCode::Unreachable, "sidecar exited");
        pending_.append(buffer, static_cast<std::size_t>(n));
    }
}

void serve_stdio(SegmentationBackend& backend, std::istream& in, std::ostream& out) {
    std::string payload;
    while (read_framed(in, payload)) {
        Reply reply;
        const auto envelope = json::parse(payload, nullptr, false);
        if (envelope.is_discarded() || !envelope.contains("method")) {
            reply = {400, protocol::error_body(BackendErrorCode::BadPrompt, "envelope is not JSON").dump()};
        } else {
            const auto& body = envelope.value("body", json::object());
            const auto text = body.is_string() ? body.get<std::string>() : body.dump();
            reply = protocol::handle(backend, envelope.at("method").get<std::string>(), text);
        }
        json wrapped{{"status", reply.status}};
        wrapped["body"] = json::parse(reply.body, nullptr, false);
        write_framed(out, wrapped.dump());
    }
}

std::unique_ptr<Transport> make_transport(const std::string& endpoint, std::chrono::milliseconds timeout) {
    constexpr std::string_view stdio_prefix = "stdio:";
    if (endpoint.rfind(stdio_prefix, 0) == 0) {
        std::istringstream words(endpoint.substr(stdio_prefix.size()));
        std::vector<std::string> argv;
        for (std::string w; words >> w;) argv.push_back(w);
        return std::make_unique<StdioTransport>(std::move(argv), timeout);
    }
    return std::make_unique<HttpTransport>(endpoint, timeout);
}

// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(std::unique_ptr<Transport> transport, RemoteOptions options)
    : transport_(std::move(transport)), options_(options) {}

Reply RemoteBackend::call_with_retry(std::string_view method, const std::string& body) {
    std::lock_guard lock(mutex_);
    for (int attempt = 0;; ++attempt) {
        try {
            auto reply = transport_->call(method, body);
            if (reply.status != 200) protocol::throw_reply_error(reply);
            return reply;
        } catch (const BackendError& e) {
            if (!e.retriable() || attempt >= options_.retries) throw;
        }
    }
}

FrameRef RemoteBackend::prepare(const FrameRef& frame) const {
    if (!options_.inline_images || !frame.inline_png.empty() || frame.path.empty()) return frame;
    FrameRef out = frame;
    out.inline_png = read_file_bytes(frame.path);
    out.path.clear();
    return out;
}

namespace {

SegmentResponse parse_reply(const Reply& reply) {
    const auto j = json::parse(reply.body, nullptr, false);
    if (j.is_discarded()) throw BackendError(BackendErrorCode::Malformed, "reply body is not JSON");
    return protocol::response_from_json(j);
}

}  // namespace

SegmentResponse RemoteBackend::segment(const FrameRef& frame, std::span<const Prompt> prompts,
                                       std::span<const int> instance_hints) {
    const protocol::SegmentRequest request{prepare(frame), {prompts.begin(), prompts.end()},
                                           {instance_hints.begin(), instance_hints.end()}};
    auto response = parse_reply(call_with_retry("segment", protocol::to_json(request).dump()));
    check_response(response, frame.width, frame.height);
    if (response.masks.size() != prompts.size())
        throw BackendError(BackendErrorCode::Malformed, "mask count differs from prompt count");
    return response;
}

SegmentResponse RemoteBackend::segment_grid(const FrameRef& frame, const GridSpec& grid) {
    const protocol::GridRequest request{prepare(frame), grid};
    auto response = parse_reply(call_with_retry("segment_grid", protocol::to_json(request).dump()));
    check_response(response, frame.width, frame.height);
    return response;
}

HealthStatus RemoteBackend::health() {
    try {
        const auto reply = call_with_retry("health", "");
        const auto j = json::parse(reply.body);
        return {j.value("status", std::string()) == "ok", j.value("detail", std::string())};
    } catch (const std::exception& e) {
        return {false, e.what()};
    }
}

std::vector<PromptKind> RemoteBackend::capabilities() const {
    auto& self = const_cast<RemoteBackend&>(*this);
    const auto reply = self.call_with_retry("capabilities", "");
    std::vector<PromptKind> out;
    const auto body = json::parse(reply.body);
    for (const auto& k : body.at("prompts")) {
        const auto name = k.get<std::string>();
        for (auto kind : {PromptKind::Bbox, PromptKind::Points, PromptKind::Grid})
            if (to_string(kind) == name) out.push_back(kind);
    }
    return out;
}

// ---------------------------------------------------------------------------

void mount_backend(httplib::Server& server, SegmentationBackend& backend) {
    auto respond = [](httplib::Response& res, const Reply& reply) {
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    };
    server.Get("/v1/health", [&backend, respond](const httplib::Request&, httplib::Response& res) {
        respond(res, protocol::handle(backend, "health", ""));
    });
    server.Get("/v1/capabilities", [&backend, respond](const httplib::Request&, httplib::Response& res) {
        respond(res, protocol::handle(backend, "capabilities", ""));
    });
    server.Post("/v1/segment", [&backend, respond](const httplib::Request& req, httplib::Response& res) {
        respond(res, protocol::handle(backend, "segment", req.body));
    });
    server.Post("/v1/segment_grid", [&backend, respond](const httplib::Request& req, httplib::Response& res) {
        respond(res, protocol::handle(backend, "segment_grid", req.body));
    });
}

// ---------------------------------------------------------------------------

std::vector<ConformanceCheck> run_conformance(Transport& transport, const FrameRef& sample) {
    std::vector<ConformanceCheck> checks;
    auto record = [&checks](std::string name, auto&& body) {
        ConformanceCheck check{std::move(name), false, {}};
        try {
            check.detail = body();
            check.passed = check.detail.empty();
        } catch (const std::exception& e) {
            check.detail = e.what();
        }
        checks.push_back(std::move(check));
    };
    auto expect_error = [&transport](std::string_view method, const std::string& body,
                                     std::string_view code, int status) -> std::string {
        const auto reply = transport.call(method, body);
        if (reply.status != status) return "expected status " + std::to_string(status) + ", got " + std::to_string(reply.status);
        const auto j = json::parse(reply.body, nullptr, false);
        if (j.is_discarded() || !j.contains("error")) return "error body missing";
        if (j["error"].value("code", std::string()) != code) return "expected code " + std::string(code);
        return {};
    };
    const auto w = sample.width, h = sample.height;
    const auto run_sum_ok = [w, h](const json& response) -> std::string {
        for (const auto& m : response.at("masks")) {
            std::uint64_t sum = 0;
            for (const auto& c : m.at("counts")) sum += c.get<std::uint64_t>();
            if (sum != static_cast<std::uint64_t>(w) * h) return "run sum differs from W*H";
            const double s = m.value("score", -1.0);
            if (!(s >= 0.0 && s <= 1.0)) return "score outside [0, 1]";
        }
        return {};
    };

    record("health reports ok", [&]() -> std::string {
        const auto reply = transport.call("health", "");
        if (reply.status != 200) return "status " + std::to_string(reply.status);
        return json::parse(reply.body).value("status", std::string()) == "ok" ? "" : "status not ok";
    });
    record("capabilities list bbox prompts", [&]() -> std::string {
        const auto reply = transport.call("capabilities", "");
        const auto body = json::parse(reply.body);
        for (const auto& k : body.at("prompts"))
            if (k == "bbox") return {};
        return "bbox missing";
    });
    record("bbox prompts yield one valid mask each", [&]() -> std::string {
        protocol::SegmentRequest request{sample, {BBox{0, 0, w / 2, h / 2}, BBox{w / 4, h / 4, w - 1, h - 1}}, {0, 1}};
        const auto reply = transport.call("segment", protocol::to_json(request).dump());
        if (reply.status != 200) return "status " + std::to_string(reply.status) + " " + reply.body;
        const auto j = json::parse(reply.body);
        if (j.at("width") != w || j.at("height") != h) return "dimensions differ from the frame";
        if (j.at("masks").size() != 2) return "expected 2 masks";
        return run_sum_ok(j);
    });
    record("grid request yields at most nx*ny masks", [&]() -> std::string {
        protocol::GridRequest request{sample, {4, 3}};
        const auto reply = transport.call("segment_grid", protocol::to_json(request).dump());
        if (reply.status != 200) return "status " + std::to_string(reply.status);
        const auto j = json::parse(reply.body);
        if (j.at("masks").size() > 12) return "too many masks";
        return run_sum_ok(j);
    });
    record("out-of-frame box is BAD_PROMPT", [&] {
        protocol::SegmentRequest request{sample, {BBox{0, 0, w, h}}, {}};
        return expect_error("segment", protocol::to_json(request).dump(), "BAD_PROMPT", 400);
    });
    record("unknown prompt type is BAD_PROMPT", [&] {
        auto body = protocol::to_json(protocol::SegmentRequest{sample, {}, {}});
        body["prompts"] = json::array({json{{"type", "scribble"}}});
        return expect_error("segment", body.dump(), "BAD_PROMPT", 400);
    });
    record("non-JSON body is BAD_PROMPT", [&] {
        return expect_error("segment", "{not json", "BAD_PROMPT", 400);
    });
    record("degenerate grid is BAD_PROMPT", [&] {
        protocol::GridRequest request{sample, {1, 1}};
        return expect_error("segment_grid", protocol::to_json(request).dump(), "BAD_PROMPT", 400);
    });
    return checks;
}

}  // namespace samqa
