// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/agent/agent.hpp>
#include <autolab/net/rack.hpp>
#include <autolab/scan/plan.hpp>
#include <autolab/service/events.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace autolab::service
{

inline constexpr std::uint16_t DefaultServicePort = 8750;

using BackendFactory = std::function<std::unique_ptr<llm::Backend>(const std::vector<net::ResourceDescriptor>&)>;

struct ServiceConfig
{
    std::string bind = "127.0.0.1";
    /// 0 picks a free port.
    std::uint16_t port = DefaultServicePort;
    std::filesystem::path data_dir = "autolab-data";
    BackendFactory backend;
    std::string model;
    std::string system_prompt;
    labscript::SandboxLimits limits;
    std::size_t event_capacity = 4096;
};

enum class Decision
{
    Accepted,
    NotFound,
    Conflict
};

struct SessionRequest
{
    std::string goal;
    agent::Mode mode = agent::Mode::Auto;
    int max_iters = agent::DefaultMaxIters;
    std::string predicate = "records_at_least:0";
};

/// What a session records about the rack it runs against.
auto rack_info(const net::Rack& rack) -> agent::RackInfo;

/// Hosts agent sessions and scans against one rack, plus the `/v1/` API.
///
/// Sessions and scans each run on their own thread; instrument access is
/// serialized through one bench lock so a script and a scan never contend
/// for the single-client instrument sockets.
class Service
{
  public:
    Service(net::Rack& rack, ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    auto operator=(const Service&) -> Service& = delete;

    /// Binds the HTTP listener and serves in the background. Throws net::AddressInUse.
    void start();
    void stop();
    [[nodiscard]] auto port() const -> std::uint16_t { return _port; }

    /// Throws std::invalid_argument for a bad request.
    auto create_session(const SessionRequest& request) -> std::string;
    auto session_json(const std::string& id) const -> std::optional<std::string>;
    auto session_state(const std::string& id) const -> std::optional<agent::SessionState>;
    auto approve(const std::string& id, const std::string& by) -> Decision;
    auto reject(const std::string& id, const std::string& by, const std::string& reason) -> Decision;
    auto confirm(const std::string& id) -> Decision;
    /// Sandbox runs of a session so far.
    auto executions(const std::string& id) const -> std::optional<std::size_t>;

    /// Throws scan::PlanError for a plan the stage cannot do.
    auto create_scan(const scan::ScanPlan& plan) -> std::string;
    auto frame_json(const std::string& id) const -> std::optional<std::string>;

    auto events(const std::string& id) const -> std::shared_ptr<EventStream>;
    auto rack_json() const -> std::string;

    /// Blocks until the session or scan stream is closed or the timeout passes.
    auto wait_closed(const std::string& id, std::chrono::milliseconds timeout) const -> bool;

  private:
    struct SessionRunner;
    struct ScanJob;

    void install_routes();
    void run_session(SessionRunner& runner);
    void run_scan_job(ScanJob& job);
    auto next_id(char prefix) -> std::string;
    auto find_runner(const std::string& id) const -> std::shared_ptr<SessionRunner>;
    auto find_scan(const std::string& id) const -> std::shared_ptr<ScanJob>;

    net::Rack& _rack;
    ServiceConfig _config;
    EventBus _bus;
    std::mutex _bench;
    mutable std::mutex _mutex;
    std::map<std::string, std::shared_ptr<SessionRunner>> _sessions;
    std::map<std::string, std::shared_ptr<ScanJob>> _scans;
    std::size_t _counter = 0;

    struct Http;
    std::unique_ptr<Http> _http;
    std::thread _listener;
    std::uint16_t _port = 0;
    std::atomic<bool> _stopping { false };
};

} // namespace autolab::service
