#include "doctest.h"

#include "samqa/remote_backend.hpp"
#include "test_support.hpp"

#include "httplib.h"

#include <sstream>
#include <thread>

using namespace samqa;
using namespace std::chrono_literals;
using samqa::testing::box_mask;

namespace {

FrameRef frame_ref(int index, int w, int h) {
    FrameRef f;
    f.index = index;
    f.width = w;
    f.height = h;
    return f;
}

std::shared_ptr<GroundTruthOracle> small_oracle() {
    auto oracle = std::make_shared<GroundTruthOracle>(32, 24);
    oracle->set_frame(0, {box_mask(32, 24, {2, 2, 9, 9}), box_mask(32, 24, {15, 10, 28, 20})});
    return oracle;
}

// Runs an httplib server on an ephemeral port for the lifetime of the object.
class TestServer {
public:
    explicit TestServer(SegmentationBackend& backend) {
        mount_backend(server_, backend);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~TestServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

class FlakyTransport final : public Transport {
public:
    FlakyTransport(std::unique_ptr<Transport> inner, int failures, BackendErrorCode code)
        : inner_(std::move(inner)), failures_(failures), code_(code) {}
    protocol::Reply call(std::string_view method, const std::string& body) override {
        ++calls;
        if (failures_ > 0) {
            --failures_;
            throw BackendError(code_, "injected");
        }
        return inner_->call(method, body);
    }
    int calls = 0;

private:
    std::unique_ptr<Transport> inner_;
    int failures_;
    BackendErrorCode code_;
};

// In-process transport over serve_stdio's framing, without a child process.
class LoopbackStdio final : public Transport {
public:
    explicit LoopbackStdio(SegmentationBackend& backend) : backend_(backend) {}
    protocol::Reply call(std::string_view method, const std::string& body) override {
        nlohmann::json envelope{{"method", method}};
        envelope["body"] = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body, nullptr, false);
        if (envelope["body"].is_discarded()) envelope["body"] = body;
        std::stringstream in, out;
        write_framed(in, envelope.dump());
        serve_stdio(backend_, in, out);
        std::string payload;
        REQUIRE(read_framed(out, payload));
        const auto reply = nlohmann::json::parse(payload);
        return {reply["status"].get<int>(), reply["body"].dump()};
    }

private:
    SegmentationBackend& backend_;
};

}  // namespace

TEST_CASE("framing round trip") {
    std::stringstream s;
    write_framed(s, "{\"a\":1}");
    write_framed(s, "");
    write_framed(s, std::string(70000, 'x'));
    std::string p;
    REQUIRE(read_framed(s, p));
    CHECK(p == "{\"a\":1}");
    REQUIRE(read_framed(s, p));
    CHECK(p.empty());
    REQUIRE(read_framed(s, p));
    CHECK(p.size() == 70000);
    CHECK_FALSE(read_framed(s, p));
}

TEST_CASE("remote backend over HTTP matches the local backend") {
    auto oracle = small_oracle();
    TestServer server(*oracle);
    RemoteBackend remote(std::make_unique<HttpTransport>(server.url(), 2s));
    const std::vector<Prompt> prompts = {BBox{14, 9, 29, 21}, BBox{1, 1, 10, 10}};
    const std::vector<int> hints = {1, 0};
    const auto f = frame_ref(0, 32, 24);
    CHECK(remote.segment(f, prompts, hints) == oracle->segment(f, prompts, hints));
    CHECK(remote.segment_grid(f, {4, 4}) == oracle->segment_grid(f, {4, 4}));
    CHECK(remote.health().ok);
    CHECK(remote.capabilities().size() == 3);

    const std::vector<Prompt> outside = {BBox{0, 0, 32, 5}};
    try {
        remote.segment(f, outside, {});
        FAIL("expected BAD_PROMPT");
    } catch (const BackendError& e) {
        CHECK(e.code() == BackendErrorCode::BadPrompt);
    }
}

TEST_CASE("conformance vectors pass against the reference server") {
    auto oracle = small_oracle();
    TestServer server(*oracle);
    HttpTransport transport(server.url(), 2s);
    const auto checks = run_conformance(transport, frame_ref(0, 32, 24));
    CHECK(checks.size() == 8);
    for (const auto& c : checks) {
        CAPTURE(c.name);
        CAPTURE(c.detail);
        CHECK(c.passed);
    }

    LoopbackStdio stdio(*oracle);
    for (const auto& c : run_conformance(stdio, frame_ref(0, 32, 24))) {
        CAPTURE(c.name);
        CHECK(c.passed);
    }
}

TEST_CASE("conformance flags a non-conforming server") {
    httplib::Server bad;
    bad.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    bad.Post("/v1/segment", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"width":32,"height":24,"masks":[{"counts":[5],"score":2}]})", "application/json");
    });
    const int port = bad.bind_to_any_port("127.0.0.1");
    std::thread t([&] { bad.listen_after_bind(); });
    bad.wait_until_ready();
    HttpTransport transport("http://127.0.0.1:" + std::to_string(port), 2s);
    const auto checks = run_conformance(transport, frame_ref(0, 32, 24));
    bad.stop();
    t.join();
    CHECK(checks[0].passed);
    int failed = 0;
    for (const auto& c : checks) failed += c.passed ? 0 : 1;
    CHECK(failed == 7);
}

TEST_CASE("transport failures become retriable backend errors") {
    SUBCASE("nothing listening") {
        int port = 0;
        {
            auto oracle = small_oracle();
            TestServer gone(*oracle);
            port = std::stoi(gone.url().substr(gone.url().rfind(':') + 1));
        }
        HttpTransport transport("http://127.0.0.1:" + std::to_string(port), 500ms);
        try {
            transport.call("health", "");
            FAIL("expected failure");
        } catch (const BackendError& e) {
            CHECK(e.code() == BackendErrorCode::Unreachable);
            CHECK(e.retriable());
        }
    }
    SUBCASE("slow server times out") {
        httplib::Server slow;
        slow.Post("/v1/segment_grid", [](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(1500ms);
            res.set_content("{}", "application/json");
        });
        const int port = slow.bind_to_any_port("127.0.0.1");
        std::thread t([&] { slow.listen_after_bind(); });
        slow.wait_until_ready();
        HttpTransport transport("http://127.0.0.1:" + std::to_string(port), 300ms);
        BackendErrorCode code = BackendErrorCode::Internal;
        try {
            transport.call("segment_grid", "{}");
        } catch (const BackendError& e) {
            code = e.code();
        }
        slow.stop();
        t.join();
        CHECK(code == BackendErrorCode::Timeout);
    }
}

TEST_CASE("remote backend retries retriable failures only") {
    auto oracle = small_oracle();
    const auto f = frame_ref(0, 32, 24);
    {
        auto flaky = std::make_unique<FlakyTransport>(std::make_unique<LoopbackStdio>(*oracle), 1,
                                                      BackendErrorCode::Unreachable);
        auto* raw = flaky.get();
        RemoteBackend remote(std::move(flaky), {false, 1});
        CHECK(remote.segment_grid(f, {2, 2}).masks.size() == 2);
        CHECK(raw->calls == 2);
    }
    {
        auto flaky = std::make_unique<FlakyTransport>(std::make_unique<LoopbackStdio>(*oracle), 2,
                                                      BackendErrorCode::Timeout);
        RemoteBackend remote(std::move(flaky), {false, 1});
        CHECK_THROWS_AS(remote.segment_grid(f, {2, 2}), BackendError);
    }
    {
        auto flaky = std::make_unique<FlakyTransport>(std::make_unique<LoopbackStdio>(*oracle), 1,
                                                      BackendErrorCode::BadPrompt);
        auto* raw = flaky.get();
        RemoteBackend remote(std::move(flaky), {false, 3});
        CHECK_THROWS_AS(remote.segment_grid(f, {2, 2}), BackendError);
        CHECK(raw->calls == 1);
    }
}

TEST_CASE("inline images travel as PNG bytes") {
    const auto dir = std::filesystem::temp_directory_path() / "samqa_test_remote";
    std::filesystem::create_directories(dir);
    GrayImage img(32, 24, 0);
    for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) img.at(x, y) = 255;
    write_png(dir / "000000.png", img);

    ThresholdBackend threshold;
    TestServer server(threshold);
    RemoteBackend remote(std::make_unique<HttpTransport>(server.url(), 2s), {true, 0});
    FrameRef f = frame_ref(0, 32, 24);
    f.path = (dir / "000000.png").string();
    const auto r = remote.segment_grid(f, {2, 2});
    REQUIRE(r.masks.size() == 1);
    CHECK(mask_area(r.masks[0].mask) == 64);
    std::filesystem::remove_all(dir);
}

TEST_CASE("stdio transport handles dead and silent children") {
    SUBCASE("child exits") {
        StdioTransport t({"/bin/true"}, 1s);
        std::this_thread::sleep_for(50ms);
        CHECK_THROWS_AS(t.call("health", ""), BackendError);
    }
    SUBCASE("child never answers") {
        StdioTransport t({"/bin/sleep", "5"}, 200ms);
        try {
            t.call("health", "");
            FAIL("expected timeout");
        } catch (const BackendError& e) {
            CHECK(e.code() == BackendErrorCode::Timeout);
        }
    }
    SUBCASE("missing executable") {
        CHECK_THROWS_AS(StdioTransport({"/nonexistent/sidecar"}, 200ms).call("health", ""), BackendError);
    }
}
