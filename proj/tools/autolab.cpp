// SPDX-License-Identifier: Apache-2.0
#include <autolab/agent/agent.hpp>
#include <autolab/common/numfmt.hpp>
#include <autolab/net/rack.hpp>
#include <autolab/scan/frame.hpp>
#include <autolab/scan/scan.hpp>
#include <autolab/service/service.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

using namespace autolab;
namespace fs = std::filesystem;

namespace
{

    constexpr int ExitOk = 0;
    constexpr int ExitRuntime = 1;
    constexpr int ExitUsage = 2;

    class UsageError: public std::runtime_error
    {
      public:
        using std::runtime_error::runtime_error;
    };

    std::atomic<bool> g_interrupted { false };

    void on_signal(int)
    {
        g_interrupted = true;
    }

    void wait_for_signal()
    {
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_interrupted)
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }

    struct RackOptions
    {
        std::string bind = "127.0.0.1";
        std::uint16_t smu_port = net::DefaultSmuPort;
        std::uint16_t stage_port = net::DefaultStagePort;
        std::string scene;
        std::string device;
        double noise = 0.0;
        std::uint64_t seed = 0;
        bool virtual_clock = false;
    };

    void add_rack_options(CLI::App* cmd, RackOptions& options, bool with_clock)
    {
        cmd->add_option("--bind", options.bind, "Listen address")->capture_default_str();
        cmd->add_option("--smu-port", options.smu_port, "SMU port")->capture_default_str();
        cmd->add_option("--stage-port", options.stage_port, "Stage port")->capture_default_str();
        cmd->add_option("--scene", options.scene, "PGM file, or logo[:WxH], checker[:WxH], uniform:<r>");
        cmd->add_option("--device", options.device, "open | ohmic:<ohm> | photo:<r_dark>,<k>[,<irradiance>]");
        cmd->add_option("--noise", options.noise, "Gaussian current noise sigma in amperes")->check(CLI::NonNegativeNumber);
        cmd->add_option("--seed", options.seed, "Noise seed")->capture_default_str();
        if (with_clock)
            cmd->add_flag("--virtual-clock", options.virtual_clock, "Run the rack on a virtual clock");
    }

    auto parse_size(std::string_view text, std::size_t fallback_w, std::size_t fallback_h)
        -> std::pair<std::size_t, std::size_t>
    {
        if (text.empty())
            return { fallback_w, fallback_h };
        auto x = text.find('x');
        if (x == std::string_view::npos)
            throw UsageError(fmt::format("bad scene size '{}', expected WxH", text));
        auto w = parse_double(text.substr(0, x));
        auto h = parse_double(text.substr(x + 1));
        if (!w || !h || *w < 1 || *h < 1)
            throw UsageError(fmt::format("bad scene size '{}', expected WxH", text));
        return { static_cast<std::size_t>(*w), static_cast<std::size_t>(*h) };
    }

    auto make_rack_config(const RackOptions& options) -> net::RackConfig
    {
        net::RackConfig config;
        config.bind = options.bind;
        config.smu_port = options.smu_port;
        config.stage_port = options.stage_port;
        config.noise_sigma = options.noise;
        config.seed = options.seed;
        if (!options.device.empty())
        {
            try
            {
                config.device = scpi::parse_device(options.device);
            }
            catch (const std::invalid_argument& error)
            {
                throw UsageError(error.what());
            }
        }
        if (!options.scene.empty())
        {
            auto colon = options.scene.find(':');
            auto name = options.scene.substr(0, colon);
            auto arg = colon == std::string::npos ? std::string() : options.scene.substr(colon + 1);
            if (name == "logo")
            {
                auto [w, h] = parse_size(arg, 32, 32);
                config.scene = scan::Scene::synthetic_logo(w, h);
            }
            else if (name == "checker")
            {
                auto [w, h] = parse_size(arg, 8, 8);
                config.scene = scan::Scene::checkerboard(w, h);
            }
            else if (name == "uniform")
            {
                auto value = parse_double(arg);
                if (!value)
                    throw UsageError("uniform scene needs a reflectance, e.g. uniform:0.5");
                config.scene = scan::Scene::uniform(32, 32, *value);
            }
            else
            {
                config.scene_path = options.scene;
            }
        }
        config.clock = options.virtual_clock ? ClockPtr(std::make_shared<VirtualClock>()) : ClockPtr(std::make_shared<WallClock>());
        return config;
    }

    /// In-process rack on free ports and a virtual clock, unless the caller connects to a live one.
    auto local_rack(RackOptions options) -> std::unique_ptr<net::Rack>
    {
        options.smu_port = 0;
        options.stage_port = 0;
        options.virtual_clock = true;
        return net::Rack::up(make_rack_config(options));
    }

    auto remote_resources(const std::string& host, std::uint16_t smu_port, std::uint16_t stage_port)
        -> std::vector<net::ResourceDescriptor>
    {
        return { { net::format_resource_id(host, smu_port), net::InstrumentKind::ScpiSmu, "source-measure unit" },
                 { net::format_resource_id(host, stage_port), net::InstrumentKind::XypStage, "XY stage" } };
    }

    auto endpoint_of(const std::vector<net::ResourceDescriptor>& resources, net::InstrumentKind kind) -> net::Endpoint
    {
        for (const auto& resource: resources)
            if (resource.kind == kind)
                if (auto endpoint = net::parse_resource_id(resource.resource_id))
                    return *endpoint;
        throw std::runtime_error(fmt::format("no {} resource on the rack", net::kind_name(kind)));
    }

    auto stub_variables(const std::vector<net::ResourceDescriptor>& resources) -> std::map<std::string, std::string>
    {
        std::map<std::string, std::string> vars;
        for (const auto& resource: resources)
        {
            auto key = resource.kind == net::InstrumentKind::ScpiSmu ? "SMU" : "STAGE";
            if (!vars.count(key))
                vars[key] = resource.resource_id;
        }
        return vars;
    }

    struct LlmOptions
    {
        std::string kind = "stub";
        std::string stub_script;
        std::string model;
        std::string system_prompt;
    };

    void add_llm_options(CLI::App* cmd, LlmOptions& options)
    {
        cmd->add_option("--llm", options.kind, "LLM backend")
            ->check(CLI::IsMember({ "stub", "http" }))
            ->capture_default_str();
        cmd->add_option("--stub-script", options.stub_script, "Scripted replies for --llm stub");
        cmd->add_option("--model", options.model, "Model name for --llm http (default: AUTOLAB_LLM_MODEL)");
        cmd->add_option("--system-prompt", options.system_prompt, "File holding the system prompt")->check(CLI::ExistingFile);
    }

    auto backend_factory(const LlmOptions& options) -> service::BackendFactory
    {
        if (options.kind == "stub")
        {
            if (options.stub_script.empty())
                throw UsageError("--llm stub needs --stub-script");
            if (!fs::exists(options.stub_script))
                throw UsageError(fmt::format("stub script {} does not exist", options.stub_script));
            auto script = options.stub_script;
            return [script](const std::vector<net::ResourceDescriptor>& resources) -> std::unique_ptr<llm::Backend> {
                return llm::ScriptedStub::from_file(script, stub_variables(resources));
            };
        }
        auto config = llm::HttpConfig::from_env();
        if (!options.model.empty())
            config.model = options.model;
        if (config.url.empty())
            throw UsageError(fmt::format("--llm http needs {} in the environment", llm::UrlEnv));
        return [config](const std::vector<net::ResourceDescriptor>&) -> std::unique_ptr<llm::Backend> {
            return std::make_unique<llm::HttpBackend>(config);
        };
    }

    auto system_prompt(const LlmOptions& options) -> std::string
    {
        return options.system_prompt.empty() ? std::string() : agent::load_system_prompt(options.system_prompt);
    }

    void write_file(const fs::path& path, const std::string& content)
    {
        if (path.has_parent_path())
            fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error(fmt::format("cannot write {}", path.string()));
        out << content;
    }

    // rack up ---------------------------------------------------------------

    auto cmd_rack_up(const RackOptions& options) -> int
    {
        auto rack = net::Rack::up(make_rack_config(options));
        fmt::print("{}", net::describe_resources(rack->resources()));
        std::fflush(stdout);
        wait_for_signal();
        rack->stop();
        return ExitOk;
    }

    // scan run --------------------------------------------------------------

    struct ScanOptions
    {
        scan::ScanPlan plan;
        std::string out = "frame.csv";
        std::string pgm;
        bool connect = false;
        std::string host = "127.0.0.1";
        RackOptions rack;
    };

    auto cmd_scan_run(ScanOptions& options) -> int
    {
        try
        {
            scan::validate(options.plan);
        }
        catch (const scan::PlanError& error)
        {
            throw UsageError(error.what());
        }

        std::unique_ptr<net::Rack> rack;
        std::vector<net::ResourceDescriptor> resources;
        ClockPtr clock;
        if (options.connect)
        {
            resources = remote_resources(options.host, options.rack.smu_port, options.rack.stage_port);
            clock = std::make_shared<WallClock>();
        }
        else
        {
            rack = local_rack(options.rack);
            resources = rack->resources();
            clock = rack->clock();
        }

        auto smu_at = endpoint_of(resources, net::InstrumentKind::ScpiSmu);
        auto stage_at = endpoint_of(resources, net::InstrumentKind::XypStage);
        auto smu = net::LineClient::connect(smu_at.host, smu_at.port);
        auto stage = net::LineClient::connect(stage_at.host, stage_at.port);

        const auto total = options.plan.pixel_count();
        auto sink = [total](const scan::PixelEvent& pixel) {
            spdlog::debug("pixel {}/{} col={} row={} I={}", pixel.index + 1, total, pixel.cell.col, pixel.cell.row,
                          format_sci6(pixel.current));
        };
        scan::Frame frame;
        try
        {
            frame = scan::run_scan(options.plan, smu, stage, *clock, sink);
        }
        catch (const scan::PlanError& error)
        {
            throw UsageError(error.what());
        }

        write_file(options.out, scan::export_csv(frame));
        if (!options.pgm.empty() && frame.complete)
            write_file(options.pgm, scan::export_pgm(frame));
        if (!frame.complete)
        {
            spdlog::error("scan aborted after {} of {} pixels: {}", frame.acquired, total, frame.abort_reason);
            return ExitRuntime;
        }
        spdlog::info("{} pixels written to {}", frame.acquired, options.out);
        return ExitOk;
    }

    // agent run -------------------------------------------------------------

    struct AgentOptions
    {
        std::string goal;
        std::string mode = "auto";
        int max_iters = agent::DefaultMaxIters;
        std::string predicate = "records_at_least:0";
        std::string session_dir = ".";
        std::string session_id = "session";
        bool connect = false;
        std::string host = "127.0.0.1";
        RackOptions rack;
        LlmOptions llm;
    };

    auto ask_operator(const agent::Iteration& iteration) -> std::pair<bool, std::string>
    {
        fmt::print(stderr, "\n--- iteration {} proposes ---\n{}\n--- approve? [y = run, anything else = reject reason] ",
                   iteration.index, iteration.proposed_code);
        std::string answer;
        if (!std::getline(std::cin, answer))
            return { false, "no operator input" };
        auto trimmed = std::string(trim(answer));
        if (trimmed == "y" || trimmed == "Y" || trimmed == "yes")
            return { true, {} };
        return { false, trimmed.empty() ? std::string("rejected") : trimmed };
    }

    auto cmd_agent_run(AgentOptions& options) -> int
    {
        auto mode = agent::parse_mode(options.mode);
        if (!mode)
            throw UsageError("--mode must be auto or step");
        auto factory = backend_factory(options.llm);

        std::unique_ptr<net::Rack> rack;
        agent::RackInfo info;
        ClockPtr clock;
        if (options.connect)
        {
            info.resources = remote_resources(options.host, options.rack.smu_port, options.rack.stage_port);
            clock = std::make_shared<WallClock>();
        }
        else
        {
            rack = local_rack(options.rack);
            info = service::rack_info(*rack);
            clock = rack->clock();
        }

        agent::SessionSpec spec;
        spec.id = options.session_id;
        spec.goal = options.goal;
        spec.mode = *mode;
        spec.max_iters = options.max_iters;
        spec.predicate = options.predicate;
        spec.system_prompt = system_prompt(options.llm);
        spec.rack = info;
        agent::AgentSession session;
        try
        {
            session = agent::new_session(spec);
        }
        catch (const std::invalid_argument& error)
        {
            throw UsageError(error.what());
        }

        auto backend = factory(info.resources);
        auto observer = [](const agent::AgentEvent& event, const agent::AgentSession&) {
            using Kind = agent::AgentEventKind;
            switch (event.kind)
            {
            case Kind::IterationStarted: spdlog::info("iteration {}", event.payload.at("index").get<int>()); break;
            case Kind::Executed:
                spdlog::info("executed: {} ({} records)", event.payload.at("exit_detail").get<std::string>(),
                             event.payload.at("records").get<std::size_t>());
                break;
            case Kind::Feedback: spdlog::debug("feedback:\n{}", event.payload.at("content").get<std::string>()); break;
            default: break;
            }
        };
        agent::Agent loop(std::move(session), *backend, agent::make_sandbox(info.resources, {}, clock),
                          options.session_dir, observer);
        loop.set_model(options.llm.model);

        while (true)
        {
            loop.run();
            if (loop.session().state != agent::SessionState::AwaitingApproval)
                break;
            auto [approved, reason] = ask_operator(loop.session().iterations.back());
            if (approved)
                loop.approve("cli");
            else
                loop.reject("cli", reason);
        }

        const auto& final = loop.session();
        if (final.state == agent::SessionState::Succeeded)
        {
            fmt::print("Succeeded after {} iteration(s); artifacts in {}\n", final.iterations.size(),
                       fs::absolute(options.session_dir).lexically_normal().string());
            return ExitOk;
        }
        fmt::print(stderr, "Failed after {} iteration(s): {}\n", final.iterations.size(), final.failure_reason);
        return ExitRuntime;
    }

    // serve -----------------------------------------------------------------

    struct ServeOptions
    {
        std::string bind = "127.0.0.1";
        std::uint16_t port = service::DefaultServicePort;
        std::string data_dir = "autolab-data";
        RackOptions rack;
        LlmOptions llm;
    };

    auto cmd_serve(ServeOptions& options) -> int
    {
        service::ServiceConfig config;
        config.bind = options.bind;
        config.port = options.port;
        config.data_dir = options.data_dir;
        config.model = options.llm.model;
        config.system_prompt = system_prompt(options.llm);
        config.backend = backend_factory(options.llm);

        auto rack = net::Rack::up(make_rack_config(options.rack));
        service::Service service(*rack, config);
        service.start();
        fmt::print("serving http://{}:{}/v1/\n{}", options.bind, service.port(), net::describe_resources(rack->resources()));
        std::fflush(stdout);
        wait_for_signal();
        service.stop();
        rack->stop();
        return ExitOk;
    }

    // replay ----------------------------------------------------------------

    auto cmd_replay(const std::string& file, std::string out_dir) -> int
    {
        auto recorded = agent::load_session(file);
        if (out_dir.empty())
            out_dir = (fs::path(file).parent_path() / "replay").string();

        net::RackConfig config;
        config.device = scpi::parse_device(recorded.rack.device);
        config.noise_sigma = recorded.rack.noise_sigma;
        config.seed = recorded.rack.seed;
        config.clock = recorded.rack.virtual_clock ? ClockPtr(std::make_shared<VirtualClock>())
                                                   : ClockPtr(std::make_shared<WallClock>());
        config.enable_smu = config.enable_stage = false;
        for (const auto& resource: recorded.rack.resources)
        {
            auto endpoint = net::parse_resource_id(resource.resource_id);
            if (!endpoint)
                throw std::runtime_error(fmt::format("bad recorded resource {}", resource.resource_id));
            config.bind = endpoint->host;
            if (resource.kind == net::InstrumentKind::ScpiSmu)
            {
                config.enable_smu = true;
                config.smu_port = endpoint->port;
            }
            else
            {
                config.enable_stage = true;
                config.stage_port = endpoint->port;
            }
        }
        auto rack = net::Rack::up(config);
        auto outcome = agent::replay(recorded, agent::make_sandbox(rack->resources(), {}, rack->clock()), out_dir);
        if (!outcome.identical)
        {
            fmt::print(stderr, "replay diverged: {}\n", outcome.difference);
            return ExitRuntime;
        }
        fmt::print("replay identical: {} iteration(s), state {}\n", outcome.replayed.iterations.size(),
                   agent::state_name(outcome.replayed.state));
        return ExitOk;
    }

} // namespace

int main(int argc, char** argv)
{
    CLI::App app { "autolab: virtual instrument rack, raster scans and a supervised scripting agent" };
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    auto* rack_cmd = app.add_subcommand("rack", "Virtual instrument rack");
    rack_cmd->require_subcommand(1);
    auto* rack_up = rack_cmd->add_subcommand("up", "Start the SMU and stage listeners and wait for Ctrl-C");
    RackOptions rack_options;
    add_rack_options(rack_up, rack_options, true);

    auto* scan_cmd = app.add_subcommand("scan", "Raster scans");
    scan_cmd->require_subcommand(1);
    auto* scan_run = scan_cmd->add_subcommand("run", "Acquire one frame");
    ScanOptions scan_options;
    scan_run->add_option("--nx", scan_options.plan.nx, "Columns")->capture_default_str();
    scan_run->add_option("--ny", scan_options.plan.ny, "Rows")->capture_default_str();
    scan_run->add_option("--pitch-x", scan_options.plan.pitch_x, "Column pitch in um")->capture_default_str();
    scan_run->add_option("--pitch-y", scan_options.plan.pitch_y, "Row pitch in um")->capture_default_str();
    scan_run->add_option("--origin-x", scan_options.plan.origin.x, "Origin x in um")->capture_default_str();
    scan_run->add_option("--origin-y", scan_options.plan.origin.y, "Origin y in um")->capture_default_str();
    scan_run->add_option("--bias", scan_options.plan.bias, "Bias voltage")->capture_default_str();
    scan_run->add_option("--settle", scan_options.plan.settle_ms, "Settle time in ms")->capture_default_str();
    scan_run->add_option("--out", scan_options.out, "CSV output")->capture_default_str();
    scan_run->add_option("--pgm", scan_options.pgm, "Also write a PGM image");
    scan_run->add_flag("--connect", scan_options.connect, "Use a running rack instead of an in-process one");
    scan_run->add_option("--host", scan_options.host, "Rack host for --connect")->capture_default_str();
    add_rack_options(scan_run, scan_options.rack, false);

    auto* agent_cmd = app.add_subcommand("agent", "Scripting agent");
    agent_cmd->require_subcommand(1);
    auto* agent_run = agent_cmd->add_subcommand("run", "Run one agent session to completion");
    AgentOptions agent_options;
    agent_run->add_option("--goal", agent_options.goal, "Task for the agent")->required();
    agent_run->add_option("--mode", agent_options.mode, "auto | step")->capture_default_str();
    agent_run->add_option("--max-iters", agent_options.max_iters, "Iteration cap")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    agent_run->add_option("--predicate", agent_options.predicate, "Success check, e.g. file_rows:iv.csv:21")
        ->capture_default_str();
    agent_run->add_option("--session-dir", agent_options.session_dir, "Artifacts and sandbox directory")
        ->capture_default_str();
    agent_run->add_option("--session-id", agent_options.session_id, "Session id")->capture_default_str();
    agent_run->add_flag("--connect", agent_options.connect, "Use a running rack instead of an in-process one");
    agent_run->add_option("--host", agent_options.host, "Rack host for --connect")->capture_default_str();
    add_rack_options(agent_run, agent_options.rack, false);
    add_llm_options(agent_run, agent_options.llm);

    auto* serve_cmd = app.add_subcommand("serve", "HTTP API and event stream over a rack");
    ServeOptions serve_options;
    serve_cmd->add_option("--port", serve_options.port, "HTTP port")->capture_default_str();
    serve_cmd->add_option("--http-bind", serve_options.bind, "HTTP listen address")->capture_default_str();
    serve_cmd->add_option("--data-dir", serve_options.data_dir, "Sessions and frames")->capture_default_str();
    add_rack_options(serve_cmd, serve_options.rack, true);
    add_llm_options(serve_cmd, serve_options.llm);

    auto* replay_cmd = app.add_subcommand("replay", "Re-run a recorded session and compare transcripts");
    std::string replay_file;
    std::string replay_out;
    replay_cmd->add_option("session", replay_file, "session.json")->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--out", replay_out, "Directory for the replayed artifacts");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return ExitUsage;
    }

    spdlog::set_default_logger(spdlog::stderr_color_mt("autolab"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try
    {
        if (rack_up->parsed())
            return cmd_rack_up(rack_options);
        if (scan_run->parsed())
            return cmd_scan_run(scan_options);
        if (agent_run->parsed())
            return cmd_agent_run(agent_options);
        if (serve_cmd->parsed())
            return cmd_serve(serve_options);
        if (replay_cmd->parsed())
            return cmd_replay(replay_file, replay_out);
    }
    catch (const UsageError& error)
    {
        fmt::print(stderr, "error: {}\n", error.what());
        return ExitUsage;
    }
    catch (const std::exception& error)
    {
        fmt::print(stderr, "error: {}\n", error.what());
        return ExitRuntime;
    }
    return ExitUsage;
}
