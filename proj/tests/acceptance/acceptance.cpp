// SPDX-License-Identifier: Apache-2.0
// Release checks: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <autolab/agent/agent.hpp>
#include <autolab/common/numfmt.hpp>
#include <autolab/labscript/interpreter.hpp>
#include <autolab/net/line_socket.hpp>
#include <autolab/net/resource.hpp>
#include <autolab/scan/plan.hpp>
#include <autolab/scan/scan.hpp>
#include <autolab/scpi/smu.hpp>
#include <autolab/stage/stage.hpp>

#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <random>
#include <set>

#include "fixtures.hpp"

using namespace autolab;
namespace fs = std::filesystem;
using Steady = std::chrono::steady_clock;

namespace
{

    /// Thrown by `require` with the reason a check failed.
    struct Unmet
    {
        std::string why;
    };

    void require(bool condition, const std::string& why)
    {
        if (!condition)
            throw Unmet { why };
    }

    auto seconds_since(Steady::time_point start) -> double
    {
        return std::chrono::duration<double>(Steady::now() - start).count();
    }

    const fs::path StubFile = fs::path(AUTOLAB_DATA_DIR) / "stubs" / "iv_demo.json";

    auto snake_scale() -> std::string
    {
        scan::ScanPlan plan;
        plan.nx = 200;
        plan.ny = 120;
        auto start = Steady::now();
        auto pixels = scan::plan_snake(plan);
        double elapsed = seconds_since(start);
        require(pixels.size() == 24000, fmt::format("{} poses", pixels.size()));
        std::vector<char> seen(24000, 0);
        for (std::size_t i = 0; i < pixels.size(); ++i)
        {
            const auto& cell = pixels[i].cell;
            require(cell.col >= 0 && cell.col < 200 && cell.row >= 0 && cell.row < 120, "cell out of grid");
            auto& mark = seen[static_cast<std::size_t>(cell.row * 200 + cell.col)];
            require(mark == 0, fmt::format("cell {},{} visited twice", cell.col, cell.row));
            mark = 1;
            if (i == 0)
                continue;
            double dx = std::abs(pixels[i].pose.x - pixels[i - 1].pose.x);
            double dy = std::abs(pixels[i].pose.y - pixels[i - 1].pose.y);
            require((dx == plan.pitch_x && dy == 0) || (dx == 0 && dy == plan.pitch_y),
                    fmt::format("step {} moves ({}, {})", i, dx, dy));
        }
        require(elapsed < 1.0, fmt::format("took {:.3f} s", elapsed));
        return fmt::format("24000 poses, bijective, unit steps, {:.4f} s", elapsed);
    }

    auto imaging_oracle() -> std::string
    {
        net::RackConfig config;
        config.scene = scan::Scene::synthetic_logo(32, 32);
        config.noise_sigma = 0.0;
        auto rack = fixture::local_rack(config);
        auto smu_ep = net::parse_resource_id(rack->resources()[0].resource_id);
        auto stage_ep = net::parse_resource_id(rack->resources()[1].resource_id);
        auto smu = net::LineClient::connect(smu_ep->host, smu_ep->port);
        auto stage = net::LineClient::connect(stage_ep->host, stage_ep->port);
        scan::ScanPlan plan;
        plan.nx = 32;
        plan.ny = 32;
        auto frame = scan::run_scan(plan, smu, stage, *rack->clock());
        require(frame.complete, "scan aborted: " + frame.abort_reason);
        const auto& scene = *rack->scene();
        std::set<double> levels;
        for (int row = 0; row < 32; ++row)
            for (int col = 0; col < 32; ++col)
            {
                double expected = fixture::photo_current(plan.bias, 10000.0, 9.0, scene.at(col, row), 0.1);
                require(frame.at(col, row) == expected,
                        fmt::format("pixel {},{}: {} != {}", col, row, frame.at(col, row), expected));
                levels.insert(expected);
            }
        require(levels.size() >= 2, "scene has no contrast");
        return fmt::format("1024 pixels bit-identical, {} distinct levels", levels.size());
    }

    auto ohmic_iv() -> std::string
    {
        scpi::SmuInstrument smu(scpi::device::Ohmic { 1000.0 });
        smu.handle_line(":OUTP ON");
        double worst = 0.0;
        int points = 0;
        for (int k = -10; k <= 10; ++k, ++points)
        {
            double v = k / 10.0;
            smu.handle_line(":SOUR:VOLT " + format_value(v));
            auto reading = parse_double(smu.handle_line(":READ?")[0]);
            require(reading.has_value(), "unreadable :READ? reply");
            worst = std::max(worst, std::abs(*reading - v / 1000.0));
        }
        require(points == 21, "point count");
        require(worst <= 1e-12, fmt::format("max |error| {:.3e} A", worst));

        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> volts(-scpi::MaxSourceVoltage, scpi::MaxSourceVoltage);
        std::uniform_real_distribution<double> log_r(0.0, 7.0);
        std::uniform_real_distribution<double> limit(1e-9, 1.0);
        for (int trial = 0; trial < 10000; ++trial)
        {
            auto state = scpi::reset_state();
            state.output_on = true;
            state.source_level = volts(rng);
            state.current_limit = limit(rng);
            double r = std::pow(10.0, log_r(rng));
            double i = scpi::measure_current(state, scpi::device::Ohmic { r });
            require(std::abs(i) <= state.current_limit,
                    fmt::format("V={} R={} ilim={} gave {}", state.source_level, r, state.current_limit, i));
        }
        return fmt::format("21 points, max |error| {:.1e} A; 10000 compliance cases", worst);
    }

    auto agent_stub() -> std::string
    {
        auto rack = fixture::local_rack();
        fixture::TempDir dir;
        auto stub = llm::ScriptedStub::from_file(StubFile, { { "SMU", rack->resources()[0].resource_id } });
        agent::SessionSpec spec;
        spec.id = "acceptance";
        spec.goal = "Measure the I-V characteristics of a photoresistor";
        spec.predicate = "file_rows:iv.csv:21";
        spec.system_prompt = agent::default_system_prompt();
        spec.rack.resources = rack->resources();
        auto start = Steady::now();
        agent::Agent loop(agent::new_session(spec), *stub, agent::make_sandbox(rack->resources(), {}, rack->clock()),
                          dir.path());
        loop.run();
        double elapsed = seconds_since(start);
        const auto& session = loop.session();
        require(session.state == agent::SessionState::Succeeded,
                fmt::format("state {} ({})", agent::state_name(session.state), session.failure_reason));
        require(session.iterations.size() == 2, fmt::format("{} iterations", session.iterations.size()));
        require(session.transcript.size() >= 4
                    && session.transcript[3].content.find("-113,\"Undefined header\"") != std::string::npos,
                "iteration 1 feedback lacks the undefined header error");
        auto rows = fixture::lines_of(fixture::read_file(dir / "iv.csv"));
        require(rows.size() == 22, fmt::format("iv.csv has {} data rows", rows.empty() ? 0 : rows.size() - 1));
        require(fs::exists(dir / "autolab_code_iter1.labs") && fs::exists(dir / "autolab_code_iter2.labs"),
                "missing iteration artifacts");
        require(elapsed < 5.0, fmt::format("took {:.3f} s", elapsed));
        return fmt::format("Succeeded in 2 iterations, 21 rows, {:.3f} s", elapsed);
    }

    auto step_gating() -> std::string
    {
        auto rack = fixture::local_rack();
        fixture::TempDir dir;
        const auto smu_id = rack->resources()[0].resource_id;
        llm::ScriptedStub stub_backend({
            "```labscript\nOPEN smu \"" + smu_id + "\" SCPI\nWRITE smu \":OUTP ON\"\n```\n",
            "DONE\n```labscript\nOPEN smu \"" + smu_id
                + "\" SCPI\nWRITE smu \":OUTP ON\"\nSWEEP v FROM -1 TO 1 STEP 0.1\n  WRITE smu \":SOUR:VOLT {v}\"\n"
                  "  QUERY smu \":READ?\" -> i\n  RECORD v, i\nEND\nSAVE \"iv.csv\"\n```\n",
        });
        auto* stub = &stub_backend;
        std::size_t sandbox_runs = 0;
        auto inner = agent::make_sandbox(rack->resources(), {}, rack->clock());
        agent::Sandbox counted = [&](const std::string& code, const fs::path& workdir) {
            ++sandbox_runs;
            return inner(code, workdir);
        };
        agent::SessionSpec spec;
        spec.id = "gate";
        spec.goal = "Measure the I-V characteristics of a photoresistor";
        spec.mode = agent::Mode::Step;
        spec.predicate = "file_rows:iv.csv:21";
        spec.system_prompt = agent::default_system_prompt();
        spec.rack.resources = rack->resources();
        agent::Agent loop(agent::new_session(spec), *stub, counted, dir.path());
        loop.run();
        loop.run();
        require(loop.session().state == agent::SessionState::AwaitingApproval, "not parked at the gate");
        require(sandbox_runs == 0, "code ran before approval");

        const std::string reason = "wrong port, use the SMU at {SMU} \"quoted\"";
        loop.reject("operator", reason);
        require(sandbox_runs == 0, "rejected code ran");
        require(loop.session().transcript.back().content.find(reason) != std::string::npos,
                "feedback lacks the operator's reason");

        bool conflict = false;
        try
        {
            loop.approve("operator");
        }
        catch (const agent::NotAwaitingApproval&)
        {
            conflict = true;
        }
        require(conflict, "approve outside the gate was accepted");
        require(sandbox_runs == 0, "approve outside the gate ran code");

        loop.run();
        require(loop.session().state == agent::SessionState::AwaitingApproval, "second proposal not gated");
        loop.approve("operator");
        require(sandbox_runs == 1, fmt::format("{} runs after one approval", sandbox_runs));
        return "0 runs before approval, reason fed back verbatim, conflict on stray approve";
    }

    auto sandbox_containment() -> std::string
    {
        auto rack = fixture::local_rack();
        fixture::TempDir root;
        auto workdir = root / "session";
        fs::create_directories(workdir);
        fs::create_directory_symlink(root.path(), workdir / "up");
        auto stray = [&]() -> std::string {
            for (const auto& name: fixture::tree_listing(root.path()))
                if (name != "session" && name.rfind("session/", 0) != 0)
                    return name;
            return "";
        };
        auto run = [&](const std::string& source) {
            return labscript::run_source(source, rack->resources(), {}, workdir, *rack->clock());
        };

        std::mt19937 rng(99);
        const std::vector<std::string> parts { "..", "..", "up", ".", "x", "/", "" };
        std::uniform_int_distribution<std::size_t> pick(0, parts.size() - 1);
        int paths = 0;
        for (int trial = 0; trial < 200; ++trial)
        {
            std::string path = trial % 5 == 0 ? "/tmp/" : "";
            for (int i = 0; i < 3; ++i)
                path += parts[pick(rng)] + "/";
            path += "p" + std::to_string(trial) + ".csv";
            auto result = run("RECORD 1\nSAVE \"" + path + "\"\n");
            if (labscript::resolve_in_sandbox(workdir, path).empty())
            {
                ++paths;
                require(result.exit.kind == labscript::ExitKind::ScriptError
                            && result.exit.message == "path escapes sandbox",
                        path + " -> " + labscript::describe(result.exit));
            }
            require(stray().empty(), stray() + " written outside the session directory by " + path);
        }
        require(paths > 0, "no escaping paths generated");

        auto port = net::parse_resource_id(rack->resources()[0].resource_id)->port;
        int hosts = 0;
        for (const char* host: { "10.0.0.1", "192.168.0.7", "0.0.0.0", "127.0.0.2", "example.com", "169.254.169.254" })
        {
            auto result = run(fmt::format("OPEN x \"TCPIP::{}::{}::SOCKET\" SCPI\n", host, port));
            require(result.exit.kind == labscript::ExitKind::ScriptError && result.exit.message == "host not allowed",
                    std::string(host) + " -> " + labscript::describe(result.exit));
            ++hosts;
        }

        std::uniform_int_distribution<int> size(320, 2000);
        for (int trial = 0; trial < 20; ++trial)
        {
            int a = size(rng);
            int b = size(rng);
            auto result = run(fmt::format("SWEEP i FROM 1 TO {} STEP 1\n  SWEEP j FROM 1 TO {} STEP 1\n    SET k = i * j\n  "
                                          "END\nEND\n",
                                          a, b));
            require(result.exit.kind == labscript::ExitKind::LimitExceeded && result.exit.message == "instructions",
                    fmt::format("{}x{} sweep -> {}", a, b, labscript::describe(result.exit)));
            require(result.instructions_executed <= 100000, "ran past the instruction budget");
        }
        require(stray().empty(), stray() + " written outside the session directory");
        return fmt::format("{} escaping paths, {} hosts, 20 runaway loops contained", paths, hosts);
    }

    auto protocol_conformance() -> std::string
    {
        // Full tree, {long, short} per segment.
        const std::vector<std::vector<std::pair<std::string, std::string>>> tree {
            { { "*IDN", "*IDN" } },
            { { "SOURCE", "SOUR" }, { "FUNCTION", "FUNC" } },
            { { "SOURCE", "SOUR" }, { "VOLTAGE", "VOLT" } },
            { { "SOURCE", "SOUR" }, { "VOLTAGE", "VOLT" }, { "ILIMIT", "ILIM" } },
            { { "SENSE", "SENS" }, { "FUNCTION", "FUNC" } },
            { { "OUTPUT", "OUTP" } },
            { { "READ", "READ" } },
            { { "MEASURE", "MEAS" }, { "CURRENT", "CURR" } },
            { { "SYSTEM", "SYST" }, { "ERROR", "ERR" } },
        };
        std::mt19937 rng(1);
        std::bernoulli_distribution coin(0.5);
        int forms = 0;
        for (const auto& header: tree)
        {
            std::string canonical;
            for (const auto& segment: header)
                canonical += (segment.first[0] == '*' ? "" : ":") + segment.second;
            auto expected_query = scpi::parse_scpi(canonical + "?");
            for (int trial = 0; trial < 100; ++trial, ++forms)
            {
                std::string text;
                for (const auto& [long_form, short_form]: header)
                {
                    auto word = coin(rng) ? long_form : short_form;
                    for (auto& c: word)
                        if (coin(rng))
                            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                    text += (word[0] == '*' ? "" : ":") + word;
                }
                require(scpi::parse_scpi(text + "?") == expected_query, "form " + text + " differs");
                scpi::SmuInstrument a(scpi::device::Ohmic {});
                scpi::SmuInstrument b(scpi::device::Ohmic {});
                require(a.handle_line(canonical + "?") == b.handle_line(text + "?"), "reply differs for " + text);
                require(a.state() == b.state(), "state differs for " + text);
            }
        }

        std::uniform_int_distribution<int> count(0, 40);
        const std::vector<std::pair<std::string, int>> faults { { ":FOO", -113 }, { ":SOUR:VOLT 1e6", -222 },
                                                                { ":OUTP 3", -224 }, { "*RST 1", -108 } };
        std::uniform_int_distribution<std::size_t> fault(0, faults.size() - 1);
        for (int trial = 0; trial < 200; ++trial)
        {
            scpi::SmuInstrument smu(scpi::device::Ohmic {});
            std::vector<int> pushed;
            for (int i = count(rng); i > 0; --i)
            {
                const auto& [line, code] = faults[fault(rng)];
                smu.handle_line(line);
                pushed.push_back(code);
            }
            for (int code: pushed)
            {
                auto reply = smu.handle_line(":SYST:ERR?")[0];
                require(reply.rfind(std::to_string(code) + ",", 0) == 0,
                        fmt::format("expected {} got {}", code, reply));
            }
            require(smu.handle_line(":SYST:ERR?")[0] == "0,\"No error\"", "queue not empty after draining");
        }

        std::mt19937_64 motion(5);
        std::uniform_real_distribution<double> coord(0.0, stage::DefaultTravelUm);
        std::uniform_real_distribution<double> dt(0.0, 4.0);
        for (int trial = 0; trial < 1000; ++trial)
        {
            stage::MotionState state;
            state.current = { coord(motion), coord(motion) };
            stage::StagePose from = state.current;
            stage::StagePose to { coord(motion), coord(motion) };
            state = stage::handle_command(state, fmt::format("MOVE {} {}", format_decimal(to.x), format_decimal(to.y))).state;
            to = state.target;
            double a = dt(motion);
            double b = dt(motion);
            auto joint = stage::advance_clock(state, a + b);
            auto split = stage::advance_clock(stage::advance_clock(state, a), b);
            require(joint.status == split.status && std::abs(joint.current.x - split.current.x) < 1e-6
                        && std::abs(joint.current.y - split.current.y) < 1e-6,
                    "clock advance is not additive");
            while (state.status == stage::MotionStatus::Moving)
            {
                state = stage::advance_clock(state, dt(motion) / 8);
                require(stage::distance(from, state.current) <= stage::distance(from, to) + 1e-9, "overshoot");
            }
            require(state.current == to, "stopped short of the target");
        }
        return fmt::format("{} header forms, 200 error-queue runs, 1000 moves", forms);
    }

} // namespace

auto main() -> int
{
    const std::vector<std::pair<std::string, std::function<std::string()>>> checks {
        { "snake-plan-200x120", snake_scale },         { "imaging-oracle-32x32", imaging_oracle },
        { "ohmic-iv-and-compliance", ohmic_iv },       { "agent-stub-two-iterations", agent_stub },
        { "step-gating", step_gating },                { "sandbox-containment", sandbox_containment },
        { "protocol-conformance", protocol_conformance },
    };
    int failed = 0;
    for (const auto& [name, check]: checks)
    {
        try
        {
            fmt::print("PASS {}: {}\n", name, check());
        }
        catch (const Unmet& unmet)
        {
            ++failed;
            fmt::print("FAIL {}: {}\n", name, unmet.why);
        }
        catch (const std::exception& error)
        {
            ++failed;
            fmt::print("FAIL {}: exception: {}\n", name, error.what());
        }
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
