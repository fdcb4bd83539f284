#pragma once

#include "samqa/engine.hpp"

#include "json.hpp"

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace samqa {

struct ApiConfig {
    std::string host = "127.0.0.1";
    int port = 8750;  // 0 picks a free port
    std::filesystem::path data_root = ".";
    /// "threshold[:level]", "oracle:<mask dir>", "http://host:port" or "stdio:<command>"
    std::string backend = "threshold";
    std::filesystem::path scenario;  // optional fault script wrapped around the backend
    int backend_timeout_ms = 30000;
    EngineParams defaults;

    void validate() const;
};

std::shared_ptr<SegmentationBackend> make_backend(const std::string& spec, const std::filesystem::path& scenario = {},
                                                  std::chrono::milliseconds timeout = std::chrono::seconds(30));

/// Journal sink that also keeps the lines in memory and wakes event-stream
/// readers. Line i of the journal is event id i.
class EventLog final : public JournalSink {
public:
    EventLog(const std::filesystem::path& file, std::vector<std::string> existing);

    void append(const std::string& line) override;

    /// Lines with index > after, waiting up to `wait` for the first one.
    std::vector<std::pair<int, std::string>> read_after(int after, std::chrono::milliseconds wait);
    [[nodiscard]] std::optional<std::string> frame_line(int frame) const;
    [[nodiscard]] std::vector<std::string> lines() const;
    void close();
    /// Closed, or the journal already holds its completed record.
    [[nodiscard]] bool finished() const;

private:
    FileJournal file_;
    mutable std::mutex mutex_;
    std::condition_variable changed_;
    std::vector<std::string> lines_;
    std::map<int, int> frame_lines_;
    bool closed_ = false;
    bool completed_ = false;
};

/// Event pushed to subscribers for one journal record; nullopt for records that
/// are not events (backend transcript, snapshots).
struct StreamEvent {
    std::string type;  // created, prompts, frame, conflict, completed
    nlohmann::json data;
};
std::optional<StreamEvent> event_from_record(const nlohmann::json& record);

/// Sessions stored as journals under <data_root>/sessions/<id>/, exposed over HTTP.
/// Commands on one session are serialized; reads and event streams are not
/// blocked by a running command.
class Service {
public:
    Service(ApiConfig config, std::shared_ptr<SegmentationBackend> backend);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Registers every endpoint on `server`.
    void mount(httplib::Server& server);
    /// Ends all event streams; call before stopping the server.
    void shutdown();

    [[nodiscard]] const ApiConfig& config() const { return config_; }
    [[nodiscard]] std::filesystem::path journal_path(const std::string& id) const;

private:
    struct Slot;

    void load_existing();
    std::shared_ptr<Slot> find(const std::string& id) const;
    void publish(Slot& slot);
    std::string scrub(std::string message) const;

    ApiConfig config_;
    std::shared_ptr<SegmentationBackend> backend_;
    mutable std::mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::map<std::string, std::string> tokens_;  // client token -> session id
    int next_id_ = 1;
};

}  // namespace samqa
