#pragma once

// Wire format of the segmentation backend protocol.
//
//   POST /v1/segment        {"version":1,"frame":FRAME,"prompts":[PROMPT...],"instance_hints":[int...]}
//   POST /v1/segment_grid   {"version":1,"frame":FRAME,"grid":{"nx":32,"ny":32}}
//   GET  /v1/health         -> {"status":"ok"|"degraded","detail":"..."}
//   GET  /v1/capabilities   -> {"prompts":["bbox","points","grid"],"version":1}
//
//   FRAME    {"index":k,"width":W,"height":H,"path":"..."} or with "image_base64":"<png>"
//   PROMPT   {"type":"bbox","bbox":[x_min,y_min,x_max,y_max]}        corner-inclusive
//            {"type":"points","points":[[x,y],...],"labels":[1,0,...]}
//            {"type":"grid","nx":n,"ny":m}
//   RESPONSE {"width":W,"height":H,"masks":[{"counts":[...],"score":s},...]}
//   ERROR    {"error":{"code":"TIMEOUT"|"BAD_PROMPT"|"INTERNAL","message":"..."}}
//
// Mask counts use the geometry RLE layout: alternating runs over row-major pixels,
// zero-run first. HTTP status: 200 ok, 400 BAD_PROMPT, 504 TIMEOUT, 500 INTERNAL.
// The stdio transport carries the same bodies in an envelope
// {"method":"segment","body":{...}} -> {"status":200,"body":{...}}, each message
// framed by a "Content-Length: N\r\n\r\n" header.

#include "samqa/backend.hpp"

#include "json.hpp"

#include <string>
#include <string_view>

namespace samqa::protocol {

using nlohmann::json;

inline constexpr int kVersion = 1;

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

json to_json(const FrameRef& frame);
FrameRef frame_from_json(const json& j);

json to_json(const Prompt& prompt);
Prompt prompt_from_json(const json& j);

json to_json(const SegmentResponse& response);
/// Validates run sums and scores; throws BackendError(Malformed) on any violation.
SegmentResponse response_from_json(const json& j);

struct SegmentRequest {
    FrameRef frame;
    std::vector<Prompt> prompts;
    std::vector<int> instance_hints;
};

struct GridRequest {
    FrameRef frame;
    GridSpec grid;
};

json to_json(const SegmentRequest& request);
json to_json(const GridRequest& request);
SegmentRequest segment_request_from_json(const json& j);
GridRequest grid_request_from_json(const json& j);

json error_body(BackendErrorCode code, std::string_view message);
int http_status_for(BackendErrorCode code);

struct Reply {
    int status = 200;
    std::string body;
};

/// Transport-independent server side: dispatches one protocol call to a backend.
/// method is one of segment, segment_grid, health, capabilities.
Reply handle(SegmentationBackend& backend, std::string_view method, std::string_view body);

/// Turns a non-200 reply into the matching BackendError.
[[noreturn]] void throw_reply_error(const Reply& reply);

}  // namespace samqa::protocol
