#include "doctest.h"

#include "samqa/engine.hpp"
#include "samqa/synthetic.hpp"
#include "samqa/tracking.hpp"
#include "samqa/watershed.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace samqa;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result sh(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + SAMQA_BIN + " " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("samqa_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string prompt_arg(const std::vector<BBox>& boxes) {
    std::string out;
    for (const auto& b : boxes) {
        if (!out.empty()) out += ';';
        out += std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," + std::to_string(b.x_max) + "," +
               std::to_string(b.y_max);
    }
    return "'" + out + "'";
}

Scene small_scene(std::uint64_t seed = 2) {
    SceneSpec spec;
    spec.frames = 24;
    spec.seed = seed;
    return generate_scene(spec);
}

}  // namespace

TEST_CASE("synth writes the scene it describes") {
    const auto dir = fresh_dir("synth");
    const auto r = sh("synth --out " + q(dir) + " --frames 12 --seed 4");
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    SceneSpec spec;
    spec.frames = 12;
    spec.seed = 4;
    const auto scene = generate_scene(spec);
    CHECK("'" + j.at("prompts").get<std::string>() + "'" == prompt_arg(scene.boxes(0)));
    CHECK(FrameManifest::load(dir / j.at("manifest").get<std::string>()).frame_count() == 12);
    CHECK(load_mot(dir / j.at("gt").get<std::string>()) == scene.gt_rows());
}

TEST_CASE("run journal and exports match an in-process engine") {
    const auto dir = fresh_dir("run");
    const auto scene = small_scene();
    write_scene(scene, dir / "scene");
    const auto r = sh("run --manifest " + q(dir / "scene/frames/manifest.json") + " --journal " + q(dir / "j.jsonl") +
                      " --session-id parity --backend oracle:" + q(dir / "scene/gt_masks") + " --prompts " +
                      prompt_arg(scene.boxes(0)) + " --export-mot " + q(dir / "out.txt") + " --export-yolo " +
                      q(dir / "yolo"));
    REQUIRE(r.code == 0);
    const auto summary = json::parse(r.out);
    CHECK(summary.at("status") == "completed");
    CHECK(summary.at("cursor") == 24);

    auto engine = AnnotationEngine::start("parity", FrameManifest::load(dir / "scene/frames/manifest.json"),
                                          EngineParams{}, scene.boxes(0), scene.oracle(),
                                          std::make_shared<FileJournal>(dir / "local.jsonl"));
    engine.run();
    CHECK(read_file(dir / "j.jsonl") == read_file(dir / "local.jsonl"));
    CHECK(read_file(dir / "out.txt") == export_mot(engine.session()));
    for (const auto& [name, text] : export_yolo(engine.session())) CHECK(read_file(dir / "yolo" / name) == text);

    // export subcommand replays the journal without a backend
    const auto mot = sh("export --journal " + q(dir / "j.jsonl"));
    CHECK(mot.code == 0);
    CHECK(mot.out == export_mot(engine.session()));
    CHECK(sh("export --journal " + q(dir / "j.jsonl") + " --format yolo").code == 1);

    // rerunning a finished journal changes nothing
    CHECK(sh("run --manifest " + q(dir / "scene/frames/manifest.json") + " --journal " + q(dir / "j.jsonl")).code == 0);
    CHECK(read_file(dir / "j.jsonl") == read_file(dir / "local.jsonl"));
}

TEST_CASE("run stops for a human and resumes with manual prompts") {
    const auto dir = fresh_dir("manual");
    const auto scene = small_scene(3);
    write_scene(scene, dir / "scene");
    {
        std::ofstream(dir / "faults.json") << R"({"rules":[{"call":"segment","frames":[5],"action":"empty","limit":1},
                                                         {"call":"grid","frames":[5],"action":"drop"}]})";
    }
    const auto base = "run --manifest " + q(dir / "scene/frames/manifest.json") + " --journal " + q(dir / "j.jsonl") +
                      " --backend oracle:" + q(dir / "scene/gt_masks") + " --scenario " + q(dir / "faults.json");

    const auto none = sh("run --manifest " + q(dir / "scene/frames/manifest.json") + " --journal " +
                         q(dir / "idle.jsonl"));
    CHECK(none.code == 3);
    CHECK(json::parse(none.out).at("status") == "awaiting_init");

    const auto first = sh(base + " --prompts " + prompt_arg(scene.boxes(0)));
    REQUIRE(first.code == 3);
    const auto blocked = json::parse(first.out);
    CHECK(blocked.at("status") == "needs_manual");
    CHECK(blocked.at("cursor") == 5);
    CHECK(blocked.at("conflict").at("frame") == 5);

    // prompts for the wrong frame are refused and the journal is untouched
    const auto before = read_file(dir / "j.jsonl");
    CHECK(sh(base + " --frame 7 --prompts " + prompt_arg(scene.boxes(7))).code == 1);
    CHECK(read_file(dir / "j.jsonl") == before);

    // fault counters live in the process, so the resumed run gets a healthy backend
    const auto second = sh("run --manifest " + q(dir / "scene/frames/manifest.json") + " --journal " +
                           q(dir / "j.jsonl") + " --backend oracle:" + q(dir / "scene/gt_masks") + " --prompts " +
                           prompt_arg(scene.boxes(5)));
    REQUIRE(second.code == 0);
    const auto done = json::parse(second.out);
    CHECK(done.at("status") == "completed");
    CHECK(done.at("stats").at("manual_interventions") == 1);
    CHECK(done.at("stats").at("conflicts") == 1);

    auto replay = AnnotationEngine::resume(read_journal_lines(dir / "j.jsonl"), nullptr, nullptr);
    CHECK(idf1(scene.gt_rows(), parse_mot(export_mot(replay.session()))).idf1 == 1.0);
}

TEST_CASE("protocol-test passes against serve-backend over stdio") {
    const auto r = sh("protocol-test --endpoint 'stdio:" + std::string(SAMQA_BIN) + " serve-backend --stdio'");
    CHECK(r.code == 0);
    int pass = 0, fail = 0;
    std::istringstream lines(r.out);
    for (std::string line; std::getline(lines, line);) {
        pass += line.starts_with("PASS ");
        fail += line.starts_with("FAIL ");
    }
    CHECK(pass >= 8);
    CHECK(fail == 0);

    // a backend that answers nothing fails the suite
    CHECK(sh("protocol-test --timeout-ms 500 --endpoint 'stdio:/bin/cat'").code != 0);
}

TEST_CASE("eval reports the same IDF1 as the library") {
    const auto dir = fresh_dir("eval");
    SynthSpec spec;
    spec.frames = 60;
    spec.objects = 3;
    spec.jitter = 1.0;
    spec.dropout = 0.05;
    spec.seed = 9;
    const auto seq = synth_sequence(spec);
    write_mot(dir / "gt.txt", seq.gt);
    write_mot(dir / "det.txt", seq.detections);

    auto dets = seq.detections;
    for (auto& d : dets) d.id = -1;
    const auto expect = idf1(seq.gt, byte_track(dets));

    const auto r = sh("eval --gt " + q(dir / "gt.txt") + " --pred " + q(dir / "det.txt") + " --track --report " +
                      q(dir / "report.json"));
    REQUIRE(r.code == 0);
    char line[64];
    std::snprintf(line, sizeof line, "IDF1 %.6f\n", expect.idf1);
    CHECK(r.out == line);
    CHECK(json::parse(read_file(dir / "report.json")) == expect.report());

    const auto self = sh("eval --gt " + q(dir / "gt.txt") + " --pred " + q(dir / "gt.txt"));
    CHECK(self.out.starts_with("IDF1 1.000000\n"));
    CHECK(json::parse(self.out.substr(self.out.find('\n') + 1)).at("idf1") == 1.0);
}

TEST_CASE("watershed output matches heatmap_to_instances") {
    const auto dir = fresh_dir("watershed");
    Heatmap h(40, 30);
    for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 40; ++x) {
            const double a = std::exp(-((x - 12) * (x - 12) + (y - 15) * (y - 15)) / 18.0);
            const double b = std::exp(-((x - 27) * (x - 27) + (y - 14) * (y - 14)) / 18.0);
            h.values[y * 40 + x] = 8 * std::max(a, b) - 4;
        }
    save_heatmap(dir / "h.sqhm", h);

    PeakParams p;
    p.exclusion_radius = 5;
    p.clustering = Clustering::KMeans;
    const auto expect = heatmap_to_instances(h, p);

    const auto r = sh("watershed --heatmap " + q(dir / "h.sqhm") + " --radius 5 --clustering kmeans --out " +
                      q(dir / "masks"));
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    REQUIRE(j.at("seeds").size() == expect.seeds.size());
    for (std::size_t i = 0; i < expect.seeds.size(); ++i) {
        CHECK(j["seeds"][i][0] == expect.seeds[i].x);
        CHECK(j["seeds"][i][1] == expect.seeds[i].y);
    }
    int w = 0, hh = 0;
    const auto masks = read_mask_frame(mask_frame_path(dir / "masks", 0), w, hh);
    REQUIRE(masks.size() == expect.instances.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        CHECK(masks[i] == expect.instances[i].mask);
        CHECK(j["instances"][i]["area"] == mask_area(masks[i]));
    }
    CHECK(j.at("trace").get<std::vector<double>>() == expect.trace);

    CHECK(sh("watershed --heatmap " + q(dir / "h.sqhm") + " --clustering spectral").code == 1);
}

TEST_CASE("settings: defaults < config file < flags < environment") {
    const auto dir = fresh_dir("layers");
    const auto prompts_for = [](std::uint64_t seed) {
        SceneSpec spec;
        spec.frames = 2;
        spec.seed = seed;
        return prompt_arg(generate_scene(spec).boxes(0));
    };
    const auto seed_used = [&](const Result& r) {
        REQUIRE(r.code == 0);
        const auto got = "'" + json::parse(r.out).at("prompts").get<std::string>() + "'";
        for (std::uint64_t s = 1; s <= 9; ++s)
            if (got == prompts_for(s)) return static_cast<int>(s);
        return 0;
    };
    {
        std::ofstream(dir / "a.conf") << "# scene settings\nseed = 5\nframes=2\n\n";
    }
    const auto out = " --out " + q(dir / "scene");
    CHECK(seed_used(sh("synth --frames 2" + out)) == 1);
    CHECK(seed_used(sh("--config " + q(dir / "a.conf") + " synth" + out)) == 5);
    CHECK(seed_used(sh("synth --config " + q(dir / "a.conf") + out)) == 5);
    CHECK(seed_used(sh("--config " + q(dir / "a.conf") + " synth --seed 6" + out)) == 6);
    CHECK(seed_used(sh("--config " + q(dir / "a.conf") + " synth --seed 6" + out, "SAMQA_SEED=7")) == 7);
    CHECK(seed_used(sh("synth --frames 2" + out, "SAMQA_SEED=8")) == 8);

    {
        std::ofstream(dir / "bad.conf") << "seeed = 5\n";
        std::ofstream(dir / "broken.conf") << "seed 5\n";
    }
    CHECK(sh("--config " + q(dir / "bad.conf") + " synth" + out).code == 1);
    CHECK(sh("--config " + q(dir / "broken.conf") + " synth" + out).code == 1);
    CHECK(sh("--config " + q(dir / "missing.conf") + " synth" + out).code == 1);
    CHECK(sh("synth" + out, "SAMQA_SEED=seven").code == 1);
    CHECK(sh("synth").code != 0);
    CHECK(sh("").code != 0);
}
