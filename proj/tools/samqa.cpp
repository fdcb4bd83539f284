// samqa: headless runs, the HTTP service, the watershed baseline, evaluation and
// backend tooling.
//
// Settings come from, in increasing priority: built-in defaults, a key=value
// config file (--config), command-line flags, and SAMQA_<KEY> environment
// variables (key upper-cased, dashes as underscores).

#include "samqa/engine.hpp"
#include "samqa/remote_backend.hpp"
#include "samqa/service.hpp"
#include "samqa/synthetic.hpp"
#include "samqa/tracking.hpp"
#include "samqa/watershed.hpp"

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <pthread.h>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

using namespace samqa;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitNeedsHuman = 3;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> read_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read config " + file.string());
    std::map<std::string, std::string> out;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
            throw std::runtime_error(file.string() + ":" + std::to_string(n) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

std::string env_name(const std::string& key) {
    std::string out = "SAMQA_";
    for (char c : key) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

/// Fills options of `sub` from the config file (when not given as flags) and
/// from the environment (always wins).
void apply_layers(CLI::App& sub, const std::map<std::string, std::string>& config) {
    for (CLI::Option* opt : sub.get_options()) {
        const auto key = opt->get_single_name();
        if (key == "help" || key == "config") continue;
        std::optional<std::string> value;
        if (const char* env = std::getenv(env_name(key).c_str())) value = env;
        else if (opt->count() == 0)
            if (const auto it = config.find(key); it != config.end()) value = it->second;
        if (!value) continue;
        opt->clear();
        opt->add_result(*value);
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw std::runtime_error("bad value for " + key + ": " + e.what());
        }
    }
}

std::vector<BBox> parse_boxes(const std::string& text) {
    // "x0,y0,x1,y1;x0,y0,x1,y1"
    std::vector<BBox> out;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
        item = trim(item);
        if (item.empty()) continue;
        std::vector<int> v;
        std::stringstream parts(item);
        std::string num;
        while (std::getline(parts, num, ',')) v.push_back(std::stoi(trim(num)));
        if (v.size() != 4) throw std::runtime_error("prompt box needs 4 numbers: " + item);
        out.push_back({v[0], v[1], v[2], v[3]});
    }
    return out;
}

std::string format_boxes(const std::vector<BBox>& boxes) {
    std::string out;
    for (const auto& b : boxes) {
        if (!out.empty()) out += ';';
        out += std::to_string(b.x_min) + ',' + std::to_string(b.y_min) + ',' + std::to_string(b.x_max) + ',' +
               std::to_string(b.y_max);
    }
    return out;
}

struct EngineFlags {
    EngineParams p;
    int grid = 32;
    std::string size_anchor = "last_manual";
    bool no_filter = false;
    bool no_validation = false;
    bool no_recovery = false;

    void add(CLI::App& app) {
        app.add_option("--alpha", p.consistency.alpha, "size tolerance")->capture_default_str();
        app.add_option("--beta", p.consistency.beta, "in-frame overlap ceiling")->capture_default_str();
        app.add_option("--margin", p.margin_fraction, "prompt box inflation per side")->capture_default_str();
        app.add_option("--grid", grid, "recovery grid points per axis")->capture_default_str();
        app.add_option("--percentile", p.density.percentile, "density cut percentile")->capture_default_str();
        app.add_option("--size-anchor", size_anchor, "last_manual or previous_frame")->capture_default_str();
        app.add_option("--snapshot-interval", p.snapshot_interval)->capture_default_str();
        app.add_flag("--no-filter", no_filter, "skip density outlier removal");
        app.add_flag("--no-validation", no_validation, "accept every model mask");
        app.add_flag("--no-recovery", no_recovery, "escalate without the grid retry");
    }
    EngineParams params() const {
        auto out = p;
        out.grid = {grid, grid};
        out.consistency.size_anchor = size_anchor_from_string(size_anchor);
        out.filter_enabled = !no_filter;
        out.validation_enabled = !no_validation;
        out.recovery_enabled = !no_recovery;
        out.validate();
        return out;
    }
};

struct BackendFlags {
    std::string backend = "threshold";
    std::string scenario;
    int timeout_ms = 30000;

    void add(CLI::App& app) {
        app.add_option("--backend", backend, "threshold[:level], oracle:<dir>, http://host:port, stdio:<cmd>")
            ->capture_default_str();
        app.add_option("--scenario", scenario, "fault script wrapped around the backend");
        app.add_option("--backend-timeout-ms", timeout_ms)->capture_default_str();
    }
    std::shared_ptr<SegmentationBackend> make() const {
        return make_backend(backend, scenario, std::chrono::milliseconds(timeout_ms));
    }
};

json summary(const Session& s) {
    return {{"session", s.id},
            {"status", to_string(s.status)},
            {"cursor", s.cursor},
            {"frame_count", s.manifest.frame_count()},
            {"stats", to_json(s.stats)},
            {"conflict", s.conflict ? to_json(*s.conflict) : json(nullptr)}};
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
}

void write_yolo(const fs::path& dir, const Session& s) {
    fs::create_directories(dir);
    for (const auto& [name, text] : export_yolo(s)) write_text(dir / name, text);
}

/// Blocks SIGINT/SIGTERM in every thread and returns a waiter for them.
std::thread signal_waiter(std::function<void()> on_signal) {
    // Background jobs inherit an ignored SIGINT, which sigwait would never see.
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    return std::thread([set, on_signal] {
        int sig = 0;
        sigwait(&set, &sig);
        on_signal();
    });
}

// ---------------------------------------------------------------------------

struct ServeCmd {
    std::string host = "127.0.0.1";
    int port = 8750;
    std::string data_root = ".";
    BackendFlags backend;
    EngineFlags engine;

    void add(CLI::App& app) {
        app.add_option("--host", host)->capture_default_str();
        app.add_option("--port", port, "0 picks a free port")->capture_default_str();
        app.add_option("--data-root", data_root, "sessions and frame folders live here")->capture_default_str();
        backend.add(app);
        engine.add(app);
    }
    int run() {
        ApiConfig config;
        config.host = host;
        config.port = port;
        config.data_root = data_root;
        config.backend = backend.backend;
        config.scenario = backend.scenario;
        config.backend_timeout_ms = backend.timeout_ms;
        config.defaults = engine.params();
        config.validate();

        Service service(config, backend.make());
        httplib::Server server;
        service.mount(server);
        int bound = port;
        if (port == 0) bound = server.bind_to_any_port(host);
        else if (!server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        auto waiter = signal_waiter([&] {
            service.shutdown();
            server.stop();
        });
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
        server.listen_after_bind();
        service.shutdown();
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        return 0;
    }
};

struct RunCmd {
    std::string manifest;
    std::string journal;
    std::string session_id = "run";
    std::string prompts;
    int frame = -1;
    std::string export_mot_path;
    std::string export_yolo_dir;
    BackendFlags backend;
    EngineFlags engine;

    void add(CLI::App& app) {
        app.add_option("--manifest", manifest, "frame manifest.json")->required();
        app.add_option("--journal", journal, "session journal; resumed when it exists")->required();
        app.add_option("--session-id", session_id)->capture_default_str();
        app.add_option("--prompts", prompts, "boxes x0,y0,x1,y1;... (initial, or manual when resuming)");
        app.add_option("--frame", frame, "frame the manual prompts are for (default: the blocked frame)");
        app.add_option("--export-mot", export_mot_path);
        app.add_option("--export-yolo", export_yolo_dir);
        backend.add(app);
        engine.add(app);
    }
    int run() {
        auto m = FrameManifest::load(manifest);
        const auto frames_root = m.root;
        auto sink = std::make_shared<FileJournal>(journal);
        const auto boxes = parse_boxes(prompts);
        const bool resume = fs::exists(journal) && fs::file_size(journal) > 0;

        std::optional<AnnotationEngine> engine_;
        if (resume) {
            engine_.emplace(AnnotationEngine::resume(read_journal_lines(journal), backend.make(), sink, frames_root));
            const auto status = engine_->session().status;
            if (!boxes.empty()) {
                if (status != SessionStatus::NeedsManual && status != SessionStatus::AwaitingInit)
                    throw std::runtime_error("session is " + std::string(to_string(status)) +
                                             "; prompts are only taken when it waits for them");
                engine_->submit_manual_prompts(frame >= 0 ? frame : engine_->session().cursor, boxes);
            }
        } else {
            engine_.emplace(AnnotationEngine::start(session_id, m, engine.params(), boxes, backend.make(), sink));
        }
        if (engine_->session().status == SessionStatus::Running) engine_->run();

        const auto& s = engine_->session();
        if (!export_mot_path.empty()) write_text(export_mot_path, export_mot(s));
        if (!export_yolo_dir.empty()) write_yolo(export_yolo_dir, s);
        std::cout << summary(s).dump() << std::endl;
        return s.status == SessionStatus::Completed ? 0 : kExitNeedsHuman;
    }
};

struct WatershedCmd {
    std::vector<std::string> heatmaps;
    PeakParams p;
    std::string clustering = "none";
    std::string out;

    void add(CLI::App& app) {
        app.add_option("--heatmap", heatmaps, "SQHM or PNG heatmaps, one per frame")->required();
        app.add_option("--count", p.expected_count, "expected number of animals")->capture_default_str();
        app.add_option("--radius", p.exclusion_radius, "peak exclusion radius, pixels")->capture_default_str();
        app.add_option("--overlap-distance", p.overlap_removal_distance, "defaults to the radius");
        app.add_option("--threshold", p.binarize_threshold, "foreground logit")->capture_default_str();
        app.add_option("--kernel", p.morphology_kernel)->capture_default_str();
        app.add_option("--small-fraction", p.small_region_fraction)->capture_default_str();
        app.add_option("--clustering", clustering, "none, kmeans or gmm")->capture_default_str();
        app.add_option("--em-max-iters", p.em_max_iters)->capture_default_str();
        app.add_option("--em-tol", p.em_tol)->capture_default_str();
        app.add_option("--out", out, "write instance masks as <out>/<frame>.json");
    }
    int run() {
        p.clustering = clustering_from_string(clustering);
        p.validate();
        for (std::size_t i = 0; i < heatmaps.size(); ++i) {
            const auto h = load_heatmap(heatmaps[i]);
            const auto r = heatmap_to_instances(h, p, static_cast<int>(i));
            json seeds = json::array(), instances = json::array();
            for (const auto& s : r.seeds) seeds.push_back({s.x, s.y, s.value});
            std::vector<BinaryMask> masks;
            for (const auto& inst : r.instances) {
                const auto area = mask_area(inst.mask);
                instances.push_back({{"id", inst.instance_id},
                                     {"area", area},
                                     {"box", area > 0 ? to_json(mask_to_bbox(inst.mask)) : json(nullptr)}});
                masks.push_back(inst.mask);
            }
            if (!out.empty()) {
                fs::create_directories(out);
                write_mask_frame(mask_frame_path(out, static_cast<int>(i)), h.width, h.height, masks);
            }
            std::cout << json{{"frame", i},
                              {"heatmap", fs::path(heatmaps[i]).filename().string()},
                              {"seeds", seeds},
                              {"instances", instances},
                              {"trace", r.trace}}
                             .dump()
                      << "\n";
        }
        return 0;
    }
};

struct EvalCmd {
    std::string gt;
    std::string pred;
    bool track = false;
    double gate = 0.5;
    std::string report;
    TrackerParams tracker;

    void add(CLI::App& app) {
        app.add_option("--gt", gt, "ground-truth MOT file")->required();
        app.add_option("--pred", pred, "predicted MOT file")->required();
        app.add_flag("--track", track, "drop ids in --pred and run the tracker first");
        app.add_option("--gate", gate, "IoU needed for a true positive")->capture_default_str();
        app.add_option("--report", report, "write the JSON report here instead of stdout");
        app.add_option("--track-high-thresh", tracker.track_high_thresh)->capture_default_str();
        app.add_option("--track-low-thresh", tracker.track_low_thresh)->capture_default_str();
        app.add_option("--match-thresh", tracker.match_thresh)->capture_default_str();
        app.add_option("--low-match-thresh", tracker.low_match_thresh)->capture_default_str();
        app.add_option("--new-track-thresh", tracker.new_track_thresh)->capture_default_str();
        app.add_option("--track-buffer", tracker.track_buffer)->capture_default_str();
    }
    int run() {
        tracker.validate();
        const auto truth = load_mot(gt);
        auto predicted = load_mot(pred);
        if (track) {
            for (auto& r : predicted) r.id = -1;
            predicted = byte_track(predicted, tracker);
        }
        const auto result = idf1(truth, predicted, gate);
        char line[64];
        std::snprintf(line, sizeof line, "IDF1 %.6f", result.idf1);
        std::cout << line << "\n";
        if (report.empty()) std::cout << result.report().dump(2) << "\n";
        else write_text(report, result.report().dump(2) + "\n");
        return 0;
    }
};

struct ExportCmd {
    std::string journal;
    std::string format = "mot";
    std::string out;

    void add(CLI::App& app) {
        app.add_option("--journal", journal)->required();
        app.add_option("--format", format, "mot or yolo")->capture_default_str();
        app.add_option("--out", out, "file for mot (default stdout), directory for yolo");
    }
    int run() {
        const auto engine = AnnotationEngine::resume(read_journal_lines(journal), nullptr, nullptr);
        const auto& s = engine.session();
        if (format == "mot") {
            if (out.empty()) std::cout << export_mot(s);
            else write_text(out, export_mot(s));
        } else if (format == "yolo") {
            if (out.empty()) throw std::runtime_error("yolo export needs --out <dir>");
            write_yolo(out, s);
        } else {
            throw std::runtime_error("format must be mot or yolo");
        }
        return 0;
    }
};

struct ProtocolTestCmd {
    std::string endpoint;
    std::string frame;
    int timeout_ms = 10000;

    void add(CLI::App& app) {
        app.add_option("--endpoint", endpoint, "http://host:port or stdio:<command>")->required();
        app.add_option("--frame", frame, "sample PNG (default: a generated frame)");
        app.add_option("--timeout-ms", timeout_ms)->capture_default_str();
    }
    int run() {
        FrameRef sample;
        fs::path scratch;
        if (frame.empty()) {
            scratch = fs::temp_directory_path() / ("samqa_probe_" + std::to_string(::getpid()));
            SceneSpec spec;
            spec.frames = 1;
            const auto scene = generate_scene(spec);
            fs::create_directories(scratch);
            write_png(scratch / "probe.png", scene.render(0));
            frame = (scratch / "probe.png").string();
        }
        const auto img = read_png(frame);
        sample = {0, fs::absolute(frame).string(), img.width, img.height, {}};
        auto transport = make_transport(endpoint, std::chrono::milliseconds(timeout_ms));
        const auto checks = run_conformance(*transport, sample);
        int failed = 0;
        for (const auto& c : checks) {
            std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
            if (!c.detail.empty()) std::cout << "  " << c.detail;
            std::cout << "\n";
            failed += !c.passed;
        }
        std::cout << checks.size() - failed << "/" << checks.size() << " checks passed\n";
        if (!scratch.empty()) fs::remove_all(scratch);
        return failed == 0 ? 0 : 1;
    }
};

struct ServeBackendCmd {
    std::string backend = "threshold";
    std::string scenario;
    bool stdio = false;
    std::string host = "127.0.0.1";
    int port = 8700;

    void add(CLI::App& app) {
        app.add_option("--backend", backend, "threshold[:level] or oracle:<dir>")->capture_default_str();
        app.add_option("--scenario", scenario, "fault script wrapped around the backend");
        app.add_flag("--stdio", stdio, "framed envelopes on stdin/stdout instead of HTTP");
        app.add_option("--host", host)->capture_default_str();
        app.add_option("--port", port, "0 picks a free port")->capture_default_str();
    }
    int run() {
        if (backend.starts_with("http://") || backend.starts_with("stdio:"))
            throw std::runtime_error("serve-backend wraps a built-in backend, not a remote one");
        const auto b = make_backend(backend, scenario);
        if (stdio) {
            std::ios::sync_with_stdio(false);
            serve_stdio(*b, std::cin, std::cout);
            return 0;
        }
        httplib::Server server;
        mount_backend(server, *b);
        int bound = port;
        if (port == 0) bound = server.bind_to_any_port(host);
        else if (!server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        auto waiter = signal_waiter([&] { server.stop(); });
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
        server.listen_after_bind();
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        return 0;
    }
};

struct SynthCmd {
    std::string out;
    SceneSpec spec;

    void add(CLI::App& app) {
        app.add_option("--out", out, "scene directory")->required();
        app.add_option("--frames", spec.frames)->capture_default_str();
        app.add_option("--objects", spec.objects)->capture_default_str();
        app.add_option("--width", spec.width)->capture_default_str();
        app.add_option("--height", spec.height)->capture_default_str();
        app.add_option("--separation", spec.separation)->capture_default_str();
        app.add_option("--orbit-period", spec.orbit_period)->capture_default_str();
        app.add_option("--seed", spec.seed)->capture_default_str();
    }
    int run() {
        const auto scene = generate_scene(spec);
        write_scene(scene, out);
        std::cout << json{{"manifest", "frames/manifest.json"},
                          {"masks", "gt_masks"},
                          {"gt", "gt.txt"},
                          {"prompts", format_boxes(scene.boxes(0))}}
                         .dump()
                  << "\n";
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAM-QA annotation pipeline tools"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_file;
    app.add_option("--config", config_file, "key=value settings file");

    ServeCmd serve;
    RunCmd run;
    WatershedCmd watershed;
    EvalCmd eval;
    ExportCmd export_;
    ProtocolTestCmd protocol_test;
    ServeBackendCmd serve_backend;
    SynthCmd synth;

    std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
    const auto add = [&](auto& cmd, const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        cmd.add(*sub);
        commands.emplace_back(sub, [&cmd] { return cmd.run(); });
    };
    add(serve, "serve", "HTTP API and event stream over sessions under a data root");
    add(run, "run", "annotate a sequence headless until done or a human is needed (exit 3)");
    add(watershed, "watershed", "classical baseline: heatmap peaks, watershed, optional clustering");
    add(eval, "eval", "IDF1 of predicted tracks against ground truth");
    add(export_, "export", "MOT or YOLO labels from a session journal");
    add(protocol_test, "protocol-test", "check a segmentation backend against the wire protocol");
    add(serve_backend, "serve-backend", "serve a built-in backend over the wire protocol");
    add(synth, "synth", "write a synthetic scene: frames, masks, MOT ground truth");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        std::map<std::string, std::string> config;
        if (!config_file.empty()) {
            config = read_config(config_file);
            std::set<std::string> known;
            for (const auto& [sub, fn] : commands)
                for (const auto* opt : sub->get_options()) known.insert(opt->get_single_name());
            for (const auto& [key, value] : config)
                if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);
        }
        for (auto& [sub, fn] : commands) {
            if (!sub->parsed()) continue;
            apply_layers(*sub, config);
            return fn();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
