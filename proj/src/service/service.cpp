// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scan/frame.hpp>
#include <autolab/scan/scan.hpp>
#include <autolab/service/service.hpp>

#include <condition_variable>
#include <deque>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace autolab::service
{

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace
{

    auto map_kind(agent::AgentEventKind kind) -> EventKind
    {
        switch (kind)
        {
        case agent::AgentEventKind::IterationStarted: return EventKind::IterationStarted;
        case agent::AgentEventKind::CodeProposed: return EventKind::CodeProposed;
        case agent::AgentEventKind::AwaitingApproval: return EventKind::AwaitingApproval;
        case agent::AgentEventKind::Executed: return EventKind::Executed;
        case agent::AgentEventKind::Feedback: return EventKind::Feedback;
        case agent::AgentEventKind::SessionTerminal: return EventKind::SessionTerminal;
        }
        return EventKind::Feedback;
    }

    auto error_body(std::string_view message) -> std::string
    {
        return ordered_json { { "error", message } }.dump();
    }

    void reply_json(httplib::Response& res, int status, const std::string& body)
    {
        res.status = status;
        res.set_content(body, "application/json");
    }

    auto parse_body(const httplib::Request& req) -> json
    {
        if (req.body.empty())
            return json::object();
        auto body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            throw std::invalid_argument("request body must be a JSON object");
        return body;
    }

    auto plan_from_json(const json& in) -> scan::ScanPlan
    {
        const auto& source = in.contains("plan") ? in.at("plan") : in;
        if (!source.is_object())
            throw std::invalid_argument("plan must be an object");
        scan::ScanPlan plan;
        try
        {
            plan.nx = source.value("nx", plan.nx);
            plan.ny = source.value("ny", plan.ny);
            plan.pitch_x = source.value("pitch_x", plan.pitch_x);
            plan.pitch_y = source.value("pitch_y", plan.pitch_y);
            plan.origin.x = source.value("origin_x", plan.origin.x);
            plan.origin.y = source.value("origin_y", plan.origin.y);
            plan.bias = source.value("bias", plan.bias);
            plan.settle_ms = source.value("settle_ms", plan.settle_ms);
        }
        catch (const json::exception& error)
        {
            throw std::invalid_argument(fmt::format("bad plan field: {}", error.what()));
        }
        return plan;
    }

} // namespace

struct Service::Http
{
    httplib::Server server;
};

struct Service::SessionRunner
{
    struct Message
    {
        enum class Kind
        {
            Approve,
            Reject,
            Confirm
        };
        Kind kind;
        std::string by;
        std::string reason;
    };

    std::string id;
    std::shared_ptr<EventStream> stream;
    std::unique_ptr<llm::Backend> backend;
    std::unique_ptr<agent::Agent> agent;
    std::atomic<std::size_t> executions { 0 };

    mutable std::mutex mutex;
    std::condition_variable cv;
    std::string snapshot;
    agent::SessionState state = agent::SessionState::Running;
    std::deque<Message> mailbox;
    bool stop = false;
    std::thread thread;
};

struct Service::ScanJob
{
    std::string id;
    scan::ScanPlan plan;
    std::shared_ptr<EventStream> stream;
    std::atomic<bool> cancel { false };

    mutable std::mutex mutex;
    std::vector<scan::PixelEvent> pixels;
    bool finished = false;
    bool complete = false;
    std::string abort_reason;
    std::thread thread;
};

Service::Service(net::Rack& rack, ServiceConfig config):
    _rack(rack), _config(std::move(config)), _bus(_config.event_capacity), _http(std::make_unique<Http>())
{
    install_routes();
}

Service::~Service()
{
    stop();
}

void Service::start()
{
    auto& server = _http->server;
    // No SO_REUSEPORT: a second listener on the same port must fail, not share it.
    server.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    if (_config.port == 0)
    {
        int port = server.bind_to_any_port(_config.bind);
        if (port < 0)
            throw net::NetError(fmt::format("cannot bind {}", _config.bind));
        _port = static_cast<std::uint16_t>(port);
    }
    else
    {
        if (!server.bind_to_port(_config.bind, _config.port))
            throw net::AddressInUse(fmt::format("port {} is already in use", _config.port));
        _port = _config.port;
    }
    _listener = std::thread([this] { _http->server.listen_after_bind(); });
    spdlog::info("service listening on http://{}:{}/v1/", _config.bind, _port);
}

void Service::stop()
{
    if (_stopping.exchange(true))
        return;
    _http->server.stop();
    if (_listener.joinable())
        _listener.join();

    std::vector<std::shared_ptr<SessionRunner>> runners;
    std::vector<std::shared_ptr<ScanJob>> scans;
    {
        std::lock_guard lock(_mutex);
        for (auto& [id, runner]: _sessions)
            runners.push_back(runner);
        for (auto& [id, job]: _scans)
            scans.push_back(job);
    }
    for (auto& runner: runners)
    {
        {
            std::lock_guard lock(runner->mutex);
            runner->stop = true;
        }
        runner->cv.notify_all();
    }
    for (auto& job: scans)
        job->cancel = true;
    for (auto& runner: runners)
        if (runner->thread.joinable())
            runner->thread.join();
    for (auto& job: scans)
        if (job->thread.joinable())
            job->thread.join();
}

auto Service::next_id(char prefix) -> std::string
{
    std::lock_guard lock(_mutex);
    while (true)
    {
        auto id = fmt::format("{}{:04d}", prefix, ++_counter);
        if (!_sessions.count(id) && !_scans.count(id) && !fs::exists(_config.data_dir / "sessions" / id)
            && !fs::exists(_config.data_dir / "scans" / (id + ".csv")))
            return id;
    }
}

auto Service::find_runner(const std::string& id) const -> std::shared_ptr<SessionRunner>
{
    std::lock_guard lock(_mutex);
    auto it = _sessions.find(id);
    return it == _sessions.end() ? nullptr : it->second;
}

auto Service::find_scan(const std::string& id) const -> std::shared_ptr<ScanJob>
{
    std::lock_guard lock(_mutex);
    auto it = _scans.find(id);
    return it == _scans.end() ? nullptr : it->second;
}

auto rack_info(const net::Rack& rack) -> agent::RackInfo
{
    agent::RackInfo info;
    info.resources = rack.resources();
    info.device = scpi::describe(rack.config().device);
    info.noise_sigma = rack.config().noise_sigma;
    info.seed = rack.config().seed;
    info.virtual_clock = rack.clock()->is_virtual();
    return info;
}

auto Service::create_session(const SessionRequest& request) -> std::string
{
    if (_stopping)
        throw std::runtime_error("service is stopping");
    if (!_config.backend)
        throw std::runtime_error("no LLM backend configured");

    auto id = next_id('s');
    agent::SessionSpec spec;
    spec.id = id;
    spec.goal = request.goal;
    spec.mode = request.mode;
    spec.max_iters = request.max_iters;
    spec.predicate = request.predicate;
    spec.system_prompt = _config.system_prompt;
    spec.rack = rack_info(_rack);
    auto session = agent::new_session(spec);

    auto runner = std::make_shared<SessionRunner>();
    runner->id = id;
    runner->stream = _bus.create(id);
    runner->backend = _config.backend(_rack.resources());
    runner->snapshot = agent::to_json(session);

    auto base = agent::make_sandbox(_rack.resources(), _config.limits, _rack.clock());
    auto* raw = runner.get();
    agent::Sandbox sandbox = [this, base, raw](const std::string& code, const fs::path& dir) {
        std::lock_guard bench(_bench);
        ++raw->executions;
        return base(code, dir);
    };
    agent::Observer observer = [raw](const agent::AgentEvent& event, const agent::AgentSession& state) {
        {
            std::lock_guard lock(raw->mutex);
            raw->snapshot = agent::to_json(state);
            raw->state = state.state;
        }
        raw->stream->publish(map_kind(event.kind), event.payload);
    };
    runner->agent = std::make_unique<agent::Agent>(std::move(session), *runner->backend, std::move(sandbox),
                                                   _config.data_dir / "sessions" / id, std::move(observer));
    runner->agent->set_model(_config.model);

    {
        std::lock_guard lock(_mutex);
        _sessions[id] = runner;
    }
    runner->thread = std::thread([this, raw] { run_session(*raw); });
    return id;
}

void Service::run_session(SessionRunner& runner)
{
    using Kind = SessionRunner::Message::Kind;
    try
    {
        runner.agent->run();
        while (!runner.agent->terminal())
        {
            SessionRunner::Message message;
            {
                std::unique_lock lock(runner.mutex);
                runner.cv.wait(lock, [&] { return runner.stop || !runner.mailbox.empty(); });
                if (runner.stop)
                    return;
                message = std::move(runner.mailbox.front());
                runner.mailbox.pop_front();
            }
            try
            {
                if (message.kind == Kind::Approve)
                    runner.agent->approve(message.by);
                else if (message.kind == Kind::Reject)
                    runner.agent->reject(message.by, message.reason);
                else
                    runner.agent->confirm();
            }
            catch (const agent::NotAwaitingApproval&)
            {
                spdlog::warn("session {}: stale decision dropped", runner.id);
            }
            runner.agent->run();
            std::lock_guard lock(runner.mutex);
            runner.snapshot = agent::to_json(runner.agent->session());
            runner.state = runner.agent->session().state;
        }
    }
    catch (const std::exception& error)
    {
        spdlog::error("session {} crashed: {}", runner.id, error.what());
        runner.stream->publish(EventKind::SessionTerminal, { { "state", "Failed" }, { "reason", error.what() } });
    }
}

auto Service::session_json(const std::string& id) const -> std::optional<std::string>
{
    auto runner = find_runner(id);
    if (!runner)
        return std::nullopt;
    std::lock_guard lock(runner->mutex);
    return runner->snapshot;
}

auto Service::session_state(const std::string& id) const -> std::optional<agent::SessionState>
{
    auto runner = find_runner(id);
    if (!runner)
        return std::nullopt;
    std::lock_guard lock(runner->mutex);
    return runner->state;
}

auto Service::executions(const std::string& id) const -> std::optional<std::size_t>
{
    auto runner = find_runner(id);
    if (!runner)
        return std::nullopt;
    return runner->executions.load();
}

auto Service::approve(const std::string& id, const std::string& by) -> Decision
{
    auto runner = find_runner(id);
    if (!runner)
        return Decision::NotFound;
    {
        std::lock_guard lock(runner->mutex);
        if (runner->state != agent::SessionState::AwaitingApproval)
            return Decision::Conflict;
        // Leave the gate now so a second decision cannot be queued for the same iteration.
        runner->state = agent::SessionState::Running;
        runner->mailbox.push_back({ SessionRunner::Message::Kind::Approve, by, {} });
    }
    runner->cv.notify_all();
    return Decision::Accepted;
}

auto Service::reject(const std::string& id, const std::string& by, const std::string& reason) -> Decision
{
    auto runner = find_runner(id);
    if (!runner)
        return Decision::NotFound;
    {
        std::lock_guard lock(runner->mutex);
        if (runner->state != agent::SessionState::AwaitingApproval)
            return Decision::Conflict;
        runner->state = agent::SessionState::Running;
        runner->mailbox.push_back({ SessionRunner::Message::Kind::Reject, by, reason });
    }
    runner->cv.notify_all();
    return Decision::Accepted;
}

auto Service::confirm(const std::string& id) -> Decision
{
    auto runner = find_runner(id);
    if (!runner)
        return Decision::NotFound;
    {
        std::lock_guard lock(runner->mutex);
        if (runner->state == agent::SessionState::Succeeded || runner->state == agent::SessionState::Failed)
            return Decision::Conflict;
        runner->mailbox.push_back({ SessionRunner::Message::Kind::Confirm, {}, {} });
    }
    runner->cv.notify_all();
    return Decision::Accepted;
}

auto Service::create_scan(const scan::ScanPlan& plan) -> std::string
{
    if (_stopping)
        throw std::runtime_error("service is stopping");
    auto* stage = _rack.stage();
    if (!stage || !_rack.smu())
        throw std::runtime_error("scans need both an SMU and a stage");
    scan::validate(plan, stage->snapshot().limits);

    auto job = std::make_shared<ScanJob>();
    job->id = next_id('c');
    job->plan = plan;
    job->stream = _bus.create(job->id);
    {
        std::lock_guard lock(_mutex);
        _scans[job->id] = job;
    }
    auto* raw = job.get();
    job->thread = std::thread([this, raw] { run_scan_job(*raw); });
    return job->id;
}

void Service::run_scan_job(ScanJob& job)
{
    scan::Frame frame = scan::Frame::blank(job.plan);
    try
    {
        std::lock_guard bench(_bench);
        std::optional<net::Endpoint> smu_at, stage_at;
        for (const auto& resource: _rack.resources())
        {
            auto endpoint = net::parse_resource_id(resource.resource_id);
            if (resource.kind == net::InstrumentKind::ScpiSmu)
                smu_at = endpoint;
            else
                stage_at = endpoint;
        }
        if (!smu_at || !stage_at)
            throw std::runtime_error("rack has no SMU or stage listener");
        auto smu = net::LineClient::connect(smu_at->host, smu_at->port);
        auto stage = net::LineClient::connect(stage_at->host, stage_at->port);

        scan::ScanOptions options;
        options.cancel = &job.cancel;
        auto sink = [&job](const scan::PixelEvent& pixel) {
            {
                std::lock_guard lock(job.mutex);
                job.pixels.push_back(pixel);
            }
            job.stream->publish(EventKind::PixelMeasured, { { "index", pixel.index },
                                                            { "col", pixel.cell.col },
                                                            { "row", pixel.cell.row },
                                                            { "current_A", pixel.current } });
        };
        frame = scan::run_scan(job.plan, smu, stage, *_rack.clock(), sink, options);
    }
    catch (const std::exception& error)
    {
        frame.abort_reason = error.what();
    }

    std::string csv_path;
    try
    {
        auto dir = _config.data_dir / "scans";
        fs::create_directories(dir);
        csv_path = (dir / (job.id + ".csv")).string();
        std::ofstream(csv_path) << scan::export_csv(frame);
        if (frame.complete)
            std::ofstream(dir / (job.id + ".pgm")) << scan::export_pgm(frame);
    }
    catch (const std::exception& error)
    {
        spdlog::warn("scan {}: cannot write results: {}", job.id, error.what());
    }

    {
        std::lock_guard lock(job.mutex);
        job.finished = true;
        job.complete = frame.complete;
        job.abort_reason = frame.abort_reason;
    }
    job.stream->publish(EventKind::ScanFinished, { { "complete", frame.complete },
                                                   { "acquired", frame.acquired },
                                                   { "abort_reason", frame.abort_reason },
                                                   { "csv", csv_path } });
}

auto Service::frame_json(const std::string& id) const -> std::optional<std::string>
{
    auto job = find_scan(id);
    if (!job)
        return std::nullopt;
    std::lock_guard lock(job->mutex);
    ordered_json out;
    out["id"] = id;
    out["nx"] = job->plan.nx;
    out["ny"] = job->plan.ny;
    out["acquired"] = job->pixels.size();
    out["finished"] = job->finished;
    out["complete"] = job->complete;
    out["abort_reason"] = job->abort_reason;
    out["pixels"] = ordered_json::array();
    for (const auto& pixel: job->pixels)
        out["pixels"].push_back({ { "index", pixel.index },
                                  { "col", pixel.cell.col },
                                  { "row", pixel.cell.row },
                                  { "x_um", pixel.pose.x },
                                  { "y_um", pixel.pose.y },
                                  { "current_A", pixel.current } });
    return out.dump();
}

auto Service::events(const std::string& id) const -> std::shared_ptr<EventStream>
{
    return _bus.find(id);
}

auto Service::wait_closed(const std::string& id, std::chrono::milliseconds timeout) const -> bool
{
    auto stream = events(id);
    if (!stream)
        return false;
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (!stream->closed())
    {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0)
            return false;
        stream->wait_after(stream->last_seq(), std::min(left, std::chrono::milliseconds(100)));
    }
    return true;
}

auto Service::rack_json() const -> std::string
{
    ordered_json out;
    out["resources"] = ordered_json::array();
    for (const auto& resource: _rack.resources())
        out["resources"].push_back(
            { { "resource_id", resource.resource_id }, { "kind", net::kind_name(resource.kind) }, { "label", resource.label } });
    out["device"] = scpi::describe(_rack.config().device);
    out["clock"] = _rack.clock()->is_virtual() ? "virtual" : "wall";
    return out.dump();
}

void Service::install_routes()
{
    auto& server = _http->server;
    const std::string id_pattern = "([A-Za-z0-9_-]+)";

    auto guarded = [](auto handler) {
        return [handler](const httplib::Request& req, httplib::Response& res) {
            try
            {
                handler(req, res);
            }
            catch (const std::invalid_argument& error)
            {
                reply_json(res, 400, error_body(error.what()));
            }
            catch (const std::exception& error)
            {
                reply_json(res, 500, error_body(error.what()));
            }
        };
    };

    auto decision_reply = [](httplib::Response& res, Decision decision) {
        switch (decision)
        {
        case Decision::Accepted: res.status = 204; break;
        case Decision::NotFound: reply_json(res, 404, error_body("unknown session")); break;
        case Decision::Conflict: reply_json(res, 409, error_body("not awaiting approval")); break;
        }
    };

    server.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    auto body = parse_body(req);
                    SessionRequest request;
                    try
                    {
                        request.goal = body.at("goal").get<std::string>();
                        auto mode = agent::parse_mode(body.value("mode", std::string("AUTO")));
                        if (!mode)
                            throw std::invalid_argument("mode must be AUTO or STEP");
                        request.mode = *mode;
                        request.max_iters = body.value("max_iters", agent::DefaultMaxIters);
                        request.predicate = body.value("predicate", request.predicate);
                    }
                    catch (const json::exception& error)
                    {
                        throw std::invalid_argument(fmt::format("bad session request: {}", error.what()));
                    }
                    auto id = create_session(request);
                    reply_json(res, 201, ordered_json { { "id", id } }.dump());
                }));

    server.Get("/v1/sessions/" + id_pattern, guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto body = session_json(req.matches[1]);
                   if (!body)
                       return reply_json(res, 404, error_body("unknown session"));
                   reply_json(res, 200, *body);
               }));

    server.Post("/v1/sessions/" + id_pattern + "/approve",
                guarded([this, decision_reply](const httplib::Request& req, httplib::Response& res) {
                    auto body = parse_body(req);
                    decision_reply(res, approve(req.matches[1], body.value("by", std::string("operator"))));
                }));

    server.Post("/v1/sessions/" + id_pattern + "/reject",
                guarded([this, decision_reply](const httplib::Request& req, httplib::Response& res) {
                    auto body = parse_body(req);
                    auto reason = body.value("reason", std::string());
                    if (!find_runner(req.matches[1]))
                        return decision_reply(res, Decision::NotFound);
                    if (reason.empty())
                        throw std::invalid_argument("reject needs a reason");
                    decision_reply(res, reject(req.matches[1], body.value("by", std::string("operator")), reason));
                }));

    server.Post("/v1/sessions/" + id_pattern + "/confirm",
                guarded([this, decision_reply](const httplib::Request& req, httplib::Response& res) {
                    decision_reply(res, confirm(req.matches[1]));
                }));

    server.Post("/v1/scans", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    auto id = create_scan(plan_from_json(parse_body(req)));
                    reply_json(res, 201, ordered_json { { "id", id } }.dump());
                }));

    server.Get("/v1/scans/" + id_pattern + "/frame", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto body = frame_json(req.matches[1]);
                   if (!body)
                       return reply_json(res, 404, error_body("unknown scan"));
                   reply_json(res, 200, *body);
               }));

    server.Get("/v1/rack", guarded([this](const httplib::Request&, httplib::Response& res) {
                   reply_json(res, 200, rack_json());
               }));

    server.Get("/v1/events/" + id_pattern, guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto stream = events(req.matches[1]);
                   if (!stream)
                       return reply_json(res, 404, error_body("unknown stream"));
                   std::uint64_t after = 0;
                   if (req.has_param("after"))
                   {
                       auto value = parse_double(req.get_param_value("after"));
                       if (!value || *value < 0)
                           throw std::invalid_argument("after must be a sequence number");
                       after = static_cast<std::uint64_t>(*value);
                   }
                   auto cursor = std::make_shared<std::uint64_t>(after);
                   res.set_chunked_content_provider(
                       "application/x-ndjson", [this, stream, cursor](std::size_t, httplib::DataSink& sink) {
                           if (_stopping)
                           {
                               sink.done();
                               return true;
                           }
                           auto batch = stream->wait_after(*cursor, std::chrono::milliseconds(200));
                           for (const auto& event: batch.events)
                           {
                               auto line = event.to_line() + "\n";
                               if (!sink.write(line.data(), line.size()))
                                   return false;
                               *cursor = event.seq;
                           }
                           if (batch.closed)
                               sink.done();
                           return true;
                       });
               }));
}

} // namespace autolab::service
