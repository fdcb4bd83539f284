#include "samqa/protocol.hpp"

#include <openssl/evp.h>

namespace samqa::protocol {
namespace {

[[noreturn]] void malformed(const std::string& what) {
    throw BackendError(BackendErrorCode::Malformed, what);
}

[[noreturn]] void bad_prompt(const std::string& what) {
    throw BackendError(BackendErrorCode::BadPrompt, what);
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) bad_prompt("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) bad_prompt("invalid base64");
    std::size_t padding = 0;
    if (!text.empty() && text.back() == '=') ++padding;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

json to_json(const FrameRef& frame) {
    json j{{"index", frame.index}, {"width", frame.width}, {"height", frame.height}};
    if (!frame.inline_png.empty())
        j["image_base64"] = base64_encode(frame.inline_png);
    else
        j["path"] = frame.path;
    return j;
}

FrameRef frame_from_json(const json& j) {
    FrameRef frame;
    try {
        frame.index = j.at("index").get<int>();
        frame.width = j.at("width").get<int>();
        frame.height = j.at("height").get<int>();
        if (j.contains("image_base64"))
            frame.inline_png = base64_decode(j.at("image_base64").get<std::string>());
        else
            frame.path = j.value("path", std::string());
    } catch (const json::exception& e) {
        bad_prompt(std::string("frame: ") + e.what());
    }
    if (frame.width <= 0 || frame.height <= 0) bad_prompt("frame dimensions must be positive");
    return frame;
}

json to_json(const Prompt& prompt) {
    if (const auto* box = std::get_if<BBox>(&prompt))
        return {{"type", "bbox"}, {"bbox", {box->x_min, box->y_min, box->x_max, box->y_max}}};
    if (const auto* pts = std::get_if<PointsPrompt>(&prompt)) {
        json points = json::array();
        for (const auto& p : pts->points) points.push_back({p.x, p.y});
        return {{"type", "points"}, {"points", points}, {"labels", pts->labels}};
    }
    const auto& grid = std::get<GridSpec>(prompt);
    return {{"type", "grid"}, {"nx", grid.nx}, {"ny", grid.ny}};
}

Prompt prompt_from_json(const json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        if (type == "bbox") {
            const auto v = j.at("bbox").get<std::vector<int>>();
            if (v.size() != 4) bad_prompt("bbox needs 4 coordinates");
            return BBox{v[0], v[1], v[2], v[3]};
        }
        if (type == "points") {
            PointsPrompt p;
            for (const auto& xy : j.at("points")) {
                const auto v = xy.get<std::vector<int>>();
                if (v.size() != 2) bad_prompt("point needs 2 coordinates");
                p.points.push_back({v[0], v[1]});
            }
            p.labels = j.at("labels").get<std::vector<int>>();
            return p;
        }
        if (type == "grid") return GridSpec{j.at("nx").get<int>(), j.at("ny").get<int>()};
        bad_prompt("unknown prompt type " + type);
    } catch (const json::exception& e) {
        bad_prompt(std::string("prompt: ") + e.what());
    }
}

json to_json(const SegmentResponse& response) {
    json masks = json::array();
    for (const auto& m : response.masks)
        masks.push_back({{"counts", rle_encode(m.mask)}, {"score", m.score}});
    return {{"width", response.width}, {"height", response.height}, {"masks", masks}};
}

SegmentResponse response_from_json(const json& j) {
    SegmentResponse out;
    try {
        out.width = j.at("width").get<int>();
        out.height = j.at("height").get<int>();
        for (const auto& m : j.at("masks")) {
            const auto counts = m.at("counts").get<RunLengths>();
            const double score = m.value("score", 1.0);
            if (!(score >= 0.0 && score <= 1.0)) malformed("score outside [0, 1]");
            out.masks.push_back({rle_decode(counts, out.width, out.height), score});
        }
    } catch (const json::exception& e) {
        malformed(std::string("response: ") + e.what());
    } catch (const GeometryError& e) {
        malformed(e.what());
    }
    return out;
}

json to_json(const SegmentRequest& request) {
    json prompts = json::array();
    for (const auto& p : request.prompts) prompts.push_back(to_json(p));
    return {{"version", kVersion},
            {"frame", to_json(request.frame)},
            {"prompts", prompts},
            {"instance_hints", request.instance_hints}};
}

json to_json(const GridRequest& request) {
    return {{"version", kVersion},
            {"frame", to_json(request.frame)},
            {"grid", {{"nx", request.grid.nx}, {"ny", request.grid.ny}}}};
}

SegmentRequest segment_request_from_json(const json& j) {
    SegmentRequest request;
    try {
        request.frame = frame_from_json(j.at("frame"));
        for (const auto& p : j.at("prompts")) request.prompts.push_back(prompt_from_json(p));
        request.instance_hints = j.value("instance_hints", std::vector<int>{});
    } catch (const json::exception& e) {
        bad_prompt(std::string("segment request: ") + e.what());
    }
    return request;
}

GridRequest grid_request_from_json(const json& j) {
    GridRequest request;
    try {
        request.frame = frame_from_json(j.at("frame"));
        const auto& g = j.at("grid");
        request.grid = {g.at("nx").get<int>(), g.at("ny").get<int>()};
    } catch (const json::exception& e) {
        bad_prompt(std::string("grid request: ") + e.what());
    }
    return request;
}

json error_body(BackendErrorCode code, std::string_view message) {
    // Client-side codes never travel on the wire.
    if (code != BackendErrorCode::Timeout && code != BackendErrorCode::BadPrompt)
        code = BackendErrorCode::Internal;
    return {{"error", {{"code", to_string(code)}, {"message", message}}}};
}

int http_status_for(BackendErrorCode code) {
    switch (code) {
        case BackendErrorCode::BadPrompt: return 400;
        case BackendErrorCode::Timeout: return 504;
        default: return 500;
    }
}

Reply handle(SegmentationBackend& backend, std::string_view method, std::string_view body) {
    try {
        if (method == "health") {
            const auto h = backend.health();
            return {200, json{{"status", h.ok ? "ok" : "degraded"}, {"detail", h.detail}}.dump()};
        }
        if (method == "capabilities") {
            json kinds = json::array();
            for (auto k : backend.capabilities()) kinds.push_back(to_string(k));
            return {200, json{{"prompts", kinds}, {"version", kVersion}}.dump()};
        }
        if (method != "segment" && method != "segment_grid")
            bad_prompt("unknown method " + std::string(method));

        json parsed;
        try {
            parsed = json::parse(body);
        } catch (const json::exception& e) {
            bad_prompt(std::string("request is not JSON: ") + e.what());
        }
        if (parsed.value("version", kVersion) != kVersion) bad_prompt("unsupported protocol version");

        SegmentResponse response;
        if (method == "segment") {
            const auto request = segment_request_from_json(parsed);
            check_prompts(request.prompts, request.frame.width, request.frame.height);
            response = backend.segment(request.frame, request.prompts, request.instance_hints);
            if (response.masks.size() != request.prompts.size())
                throw BackendError(BackendErrorCode::Internal, "backend returned a wrong mask count");
            check_response(response, request.frame.width, request.frame.height);
        } else {
            const auto request = grid_request_from_json(parsed);
            request.grid.validate();
            response = backend.segment_grid(request.frame, request.grid);
            check_response(response, request.frame.width, request.frame.height);
        }
        return {200, to_json(response).dump()};
    } catch (const BackendError& e) {
        return {http_status_for(e.code()), error_body(e.code(), e.what()).dump()};
    } catch (const std::exception& e) {
        return {500, error_body(BackendErrorCode::Internal, e.what()).dump()};
    }
}

void throw_reply_error(const Reply& reply) {
    BackendErrorCode code = BackendErrorCode::Internal;
    std::string message = "backend replied with status " + std::to_string(reply.status);
    try {
        const auto j = json::parse(reply.body);
        const auto& err = j.at("error");
        code = backend_error_code_from_string(err.at("code").get<std::string>());
        message = err.value("message", message);
    } catch (const std::exception&) {
        code = BackendErrorCode::Malformed;
    }
    throw BackendError(code, message);
}

}  // namespace samqa::protocol
