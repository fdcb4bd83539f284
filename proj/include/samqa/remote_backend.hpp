#pragma once

#include "samqa/backend.hpp"
#include "samqa/protocol.hpp"

#include <chrono>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace samqa {

/// Moves one protocol call (method + JSON body) to a backend and returns its reply.
/// Transport failures surface as BackendError(Timeout / Unreachable).
class Transport {
public:
    virtual ~Transport() = default;
    virtual protocol::Reply call(std::string_view method, const std::string& body) = 0;
};

class HttpTransport final : public Transport {
public:
    /// base_url like "http://127.0.0.1:8700"
    explicit HttpTransport(std::string base_url, std::chrono::milliseconds timeout = std::chrono::seconds(30));
    protocol::Reply call(std::string_view method, const std::string& body) override;

private:
    std::string base_url_;
    std::chrono::milliseconds timeout_;
};

/// Spawns a sidecar process and exchanges Content-Length framed envelopes over
/// its stdin/stdout. The child is terminated on destruction.
class StdioTransport final : public Transport {
public:
    explicit StdioTransport(std::vector<std::string> argv,
                            std::chrono::milliseconds timeout = std::chrono::seconds(30));
    ~StdioTransport() override;
    StdioTransport(const StdioTransport&) = delete;
    StdioTransport& operator=(const StdioTransport&) = delete;

    protocol::Reply call(std::string_view method, const std::string& body) override;

private:
    void shutdown();

    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string pending_;
    std::chrono::milliseconds timeout_;
};

/// "http://host:port" or "stdio:<command line>" (split on spaces).
std::unique_ptr<Transport> make_transport(const std::string& endpoint,
                                          std::chrono::milliseconds timeout = std::chrono::seconds(30));

struct RemoteOptions {
    bool inline_images = false;  // send PNG bytes instead of a path
    int retries = 1;             // extra attempts after a retriable failure
};

/// SegmentationBackend speaking the wire protocol through a Transport.
class RemoteBackend final : public SegmentationBackend {
public:
    RemoteBackend(std::unique_ptr<Transport> transport, RemoteOptions options = {});

    SegmentResponse segment(const FrameRef& frame, std::span<const Prompt> prompts,
                            std::span<const int> instance_hints) override;
    SegmentResponse segment_grid(const FrameRef& frame, const GridSpec& grid) override;
    HealthStatus health() override;
    [[nodiscard]] std::vector<PromptKind> capabilities() const override;

private:
    protocol::Reply call_with_retry(std::string_view method, const std::string& body);
    FrameRef prepare(const FrameRef& frame) const;

    std::unique_ptr<Transport> transport_;
    RemoteOptions options_;
    std::mutex mutex_;
};

/// Registers the protocol endpoints of `backend` on an HTTP server.
void mount_backend(httplib::Server& server, SegmentationBackend& backend);

/// Serves framed envelopes from `in` until EOF.
void serve_stdio(SegmentationBackend& backend, std::istream& in, std::ostream& out);

// Content-Length framing shared by both ends of the stdio transport.
void write_framed(std::ostream& out, const std::string& payload);
bool read_framed(std::istream& in, std::string& payload);

struct ConformanceCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Protocol conformance vectors: request parsing, RLE run sums, mask counts,
/// score ranges and error codes. Makes no claims about segmentation quality.
std::vector<ConformanceCheck> run_conformance(Transport& transport, const FrameRef& sample);

}  // namespace samqa
