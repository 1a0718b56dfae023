// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/labscript/interpreter.hpp>
#include <autolab/net/line_socket.hpp>
#include <autolab/scpi/command.hpp>
#include <autolab/scpi/smu.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <system_error>

#include <fmt/format.h>

namespace autolab::labscript
{

namespace fs = std::filesystem;

namespace
{

    struct ScriptFailure
    {
        int line;
        std::string message;
        std::string detail;
    };

    struct LimitHit
    {
        int line;
        std::string which;
    };

    using Value = std::variant<double, std::string>;

    struct Connection
    {
        net::LineClient client;
        net::InstrumentKind kind;
    };

    auto equals_ignore_case(std::string_view a, std::string_view b) -> bool
    {
        return to_upper(a) == to_upper(b);
    }

    class Interpreter
    {
      public:
        Interpreter(const std::vector<net::ResourceDescriptor>& registry, const SandboxLimits& limits,
                    fs::path workdir, Clock& clock):
            _registry(registry), _limits(limits), _workdir(std::move(workdir)), _clock(clock), _start(clock.now())
        {
        }

        auto run(const Program& program) -> ExecutionResult
        {
            try
            {
                exec_block(program.statements);
            }
            catch (const ScriptFailure& failure)
            {
                _result.exit = { ExitKind::ScriptError, failure.line, failure.message };
                auto text = failure.detail.empty() ? failure.message : failure.message + ": " + failure.detail;
                append_stderr(fmt::format("line {}: error: {}", failure.line, text));
            }
            catch (const LimitHit& hit)
            {
                _result.exit = { ExitKind::LimitExceeded, hit.line, hit.which };
                append_stderr(fmt::format("line {}: limit exceeded: {}", hit.line, hit.which));
            }
            _connections.clear();
            return std::move(_result);
        }

      private:
        void exec_block(const Block& block)
        {
            for (const auto& statement: block)
                exec(statement);
        }

        void tick(int line)
        {
            if (_result.instructions_executed >= _limits.max_instructions)
                throw LimitHit { line, std::string(InstructionLimit) };
            ++_result.instructions_executed;
            check_time(line);
        }

        void check_time(int line)
        {
            if (to_seconds(_clock.now() - _start) * 1000.0 > _limits.max_virtual_ms)
                throw LimitHit { line, std::string(VirtualTimeLimit) };
        }

        void exec(const Statement& statement)
        {
            tick(statement.line);
            std::visit([&](const auto& node) { exec_node(statement.line, node); }, statement.node);
        }

        void exec_node(int line, const OpenStmt& open)
        {
            auto endpoint = net::parse_resource_id(open.resource_id);
            if (!endpoint)
                throw ScriptFailure { line, "bad resource id", open.resource_id };
            bool allowed = false;
            for (const auto& host: _limits.allowed_hosts)
                allowed = allowed || equals_ignore_case(host, endpoint->host);
            if (!allowed)
                throw ScriptFailure { line, "host not allowed", endpoint->host };

            const net::ResourceDescriptor* match = nullptr;
            for (const auto& resource: _registry)
            {
                auto listed = net::parse_resource_id(resource.resource_id);
                if (listed && listed->port == endpoint->port && equals_ignore_case(listed->host, endpoint->host))
                    match = &resource;
            }
            if (!match)
                throw ScriptFailure { line, "unknown resource", open.resource_id };
            if (open.protocol && *open.protocol != match->kind)
                throw ScriptFailure { line, "protocol mismatch",
                                      fmt::format("{} is a {}", open.resource_id, net::kind_name(match->kind)) };

            _connections.erase(open.alias);
            try
            {
                auto client = net::LineClient::connect(endpoint->host, endpoint->port, io_timeout());
                _connections.emplace(open.alias, Connection { std::move(client), match->kind });
            }
            catch (const net::NetError& error)
            {
                throw ScriptFailure { line, "cannot open resource", error.what() };
            }
        }

        void exec_node(int line, const WriteStmt& write)
        {
            auto& connection = connection_for(line, write.alias);
            auto text = render(write.text, line);
            if (connection.kind == net::InstrumentKind::ScpiSmu)
            {
                auto replies = scpi::expected_response_lines(text);
                io(line, [&] {
                    connection.client.send_line(text);
                    for (std::size_t i = 0; i < replies; ++i)
                        connection.client.read_line(io_timeout());
                });
                drain_scpi_errors(line, connection);
            }
            else
            {
                auto reply = io(line, [&] { return connection.client.query(text, io_timeout()); });
                report_stage_reply(line, reply);
            }
        }

        void exec_node(int line, const QueryStmt& query)
        {
            auto& connection = connection_for(line, query.alias);
            auto text = render(query.text, line);
            std::string reply;
            if (connection.kind == net::InstrumentKind::ScpiSmu)
            {
                auto replies = scpi::expected_response_lines(text);
                if (replies == 0)
                    append_stderr(fmt::format("line {}: warning: QUERY sent no query command", line));
                io(line, [&] {
                    connection.client.send_line(text);
                    for (std::size_t i = 0; i < replies; ++i)
                    {
                        if (i > 0)
                            reply += ';';
                        reply += connection.client.read_line(io_timeout());
                    }
                });
                drain_scpi_errors(line, connection);
            }
            else
            {
                reply = io(line, [&] { return connection.client.query(text, io_timeout()); });
                report_stage_reply(line, reply);
            }
            if (auto number = parse_double(reply))
                _vars[query.bind] = *number;
            else
                _vars[query.bind] = reply;
        }

        void exec_node(int line, const MoveStmt& move)
        {
            auto& connection = connection_for(line, move.alias);
            if (connection.kind != net::InstrumentKind::XypStage)
                throw ScriptFailure { line, "MOVE requires a stage", move.alias };
            double x = eval(*move.x, line);
            double y = eval(*move.y, line);
            auto command = fmt::format("MOVE {} {}", format_decimal(x), format_decimal(y));
            auto reply = io(line, [&] { return connection.client.query(command, io_timeout()); });
            report_stage_reply(line, reply);
        }

        void exec_node(int line, const WaitIdleStmt& wait)
        {
            auto& connection = connection_for(line, wait.alias);
            if (connection.kind != net::InstrumentKind::XypStage)
                throw ScriptFailure { line, "WAIT_IDLE requires a stage", wait.alias };
            const auto start = _clock.now();
            while (true)
            {
                auto status = io(line, [&] { return connection.client.query("STATUS?", io_timeout()); });
                if (status == "IDLE")
                    return;
                if (status != "MOVING")
                {
                    report_stage_reply(line, status);
                    return;
                }
                if (to_seconds(_clock.now() - start) * 1000.0 >= wait.timeout_ms)
                    throw ScriptFailure { line, "WAIT_IDLE timed out", fmt::format("after {} ms", wait.timeout_ms) };
                _clock.sleep_for(from_millis(_limits.poll_ms));
                check_time(line);
            }
        }

        void exec_node(int line, const SetStmt& set) { _vars[set.var] = eval(*set.value, line); }

        void exec_node(int line, const SweepStmt& sweep)
        {
            (void) line;
            const double count = sweep_count(sweep.from, sweep.to, sweep.step);
            for (double i = 0.0; i < count; i += 1.0)
            {
                _vars[sweep.var] = sweep.from + i * sweep.step;
                exec_block(sweep.body);
            }
        }

        void exec_node(int line, const RecordStmt& record)
        {
            std::vector<double> row;
            row.reserve(record.values.size());
            for (const auto& value: record.values)
                row.push_back(eval(*value, line));
            if (_result.record_labels.empty())
                _result.record_labels = record.labels;
            _result.records.push_back(std::move(row));
        }

        void exec_node(int line, const SaveStmt& save)
        {
            auto target = resolve_in_sandbox(_workdir, save.path);
            if (target.empty())
                throw ScriptFailure { line, "path escapes sandbox", save.path };
            if (target.extension() != ".csv")
                throw ScriptFailure { line, "SAVE target must be a .csv file", save.path };

            std::error_code ec;
            fs::create_directories(target.parent_path(), ec);
            std::ofstream out(target, std::ios::trunc);
            if (!out)
                throw ScriptFailure { line, "cannot write file", save.path };
            std::string header;
            for (const auto& label: _result.record_labels.empty() ? std::vector<std::string> { "value" } : _result.record_labels)
                header += (header.empty() ? "" : ",") + label;
            out << header << '\n';
            for (const auto& row: _result.records)
            {
                for (std::size_t i = 0; i < row.size(); ++i)
                    out << (i ? "," : "") << format_sci6(row[i]);
                out << '\n';
            }

            auto relative = fs::relative(target, fs::weakly_canonical(_workdir)).generic_string();
            if (std::find(_result.saved_files.begin(), _result.saved_files.end(), relative) == _result.saved_files.end())
                _result.saved_files.push_back(relative);
        }

        void exec_node(int line, const PrintStmt& print) { append_stdout(render(print.text, line)); }

        auto connection_for(int line, const std::string& alias) -> Connection&
        {
            auto it = _connections.find(alias);
            if (it == _connections.end())
                throw ScriptFailure { line, "alias is not open", alias };
            return it->second;
        }

        template <typename Fn>
        auto io(int line, Fn&& fn) -> decltype(fn())
        {
            try
            {
                return fn();
            }
            catch (const net::InstrumentBusy& error)
            {
                throw ScriptFailure { line, "instrument busy", error.what() };
            }
            catch (const net::NetError& error)
            {
                throw ScriptFailure { line, "instrument I/O failed", error.what() };
            }
        }

        void drain_scpi_errors(int line, Connection& connection)
        {
            for (std::size_t i = 0; i <= scpi::ErrorQueueCapacity; ++i)
            {
                auto reply = io(line, [&] { return connection.client.query(":SYST:ERR?", io_timeout()); });
                if (reply.rfind("0,", 0) == 0)
                    return;
                append_stderr(fmt::format("line {}: SCPI error {}", line, reply));
            }
        }

        void report_stage_reply(int line, const std::string& reply)
        {
            if (reply.rfind("ERR", 0) == 0)
                append_stderr(fmt::format("line {}: stage error {}", line, reply));
        }

        auto eval(const Expr& expr, int line) -> double
        {
            switch (expr.kind)
            {
            case Expr::Kind::Number: return expr.number;
            case Expr::Kind::Variable:
            {
                auto it = _vars.find(expr.name);
                if (it == _vars.end())
                    throw ScriptFailure { line, "undefined variable", expr.name };
                if (const auto* number = std::get_if<double>(&it->second))
                    return *number;
                throw ScriptFailure { line, "variable is not numeric",
                                      fmt::format("{} = \"{}\"", expr.name, std::get<std::string>(it->second)) };
            }
            case Expr::Kind::Negate: return -eval(*expr.lhs, line);
            case Expr::Kind::Binary:
            {
                double a = eval(*expr.lhs, line);
                double b = eval(*expr.rhs, line);
                double r = 0.0;
                switch (expr.op)
                {
                case '+': r = a + b; break;
                case '-': r = a - b; break;
                case '*': r = a * b; break;
                default:
                    if (b == 0.0)
                        throw ScriptFailure { line, "division by zero", {} };
                    r = a / b;
                }
                if (!std::isfinite(r))
                    throw ScriptFailure { line, "arithmetic overflow", {} };
                return r;
            }
            }
            return 0.0;
        }

        auto render(const Template& text, int line) -> std::string
        {
            std::string out;
            for (const auto& part: text.parts)
            {
                if (const auto* literal = std::get_if<std::string>(&part))
                {
                    out += *literal;
                    continue;
                }
                const auto& name = std::get<Template::Placeholder>(part).name;
                auto it = _vars.find(name);
                if (it == _vars.end())
                    throw ScriptFailure { line, "undefined variable", name };
                if (const auto* number = std::get_if<double>(&it->second))
                    out += format_value(*number);
                else
                    out += std::get<std::string>(it->second);
            }
            return out;
        }

        void append_capped(std::string& sink, bool& truncated, const std::string& text)
        {
            if (truncated)
                return;
            if (sink.size() + text.size() + 1 > _limits.max_output_bytes)
            {
                sink += "[output truncated]\n";
                truncated = true;
                return;
            }
            sink += text;
            sink += '\n';
        }

        void append_stdout(const std::string& text) { append_capped(_result.stdout_text, _stdout_truncated, text); }
        void append_stderr(const std::string& text) { append_capped(_result.stderr_text, _stderr_truncated, text); }

        auto io_timeout() const -> std::chrono::milliseconds
        {
            return std::chrono::milliseconds(static_cast<long>(_limits.io_timeout_ms));
        }

        const std::vector<net::ResourceDescriptor>& _registry;
        const SandboxLimits& _limits;
        fs::path _workdir;
        Clock& _clock;
        Nanos _start;
        std::map<std::string, Connection> _connections;
        std::map<std::string, Value> _vars;
        ExecutionResult _result;
        bool _stdout_truncated = false;
        bool _stderr_truncated = false;
    };

} // namespace

auto describe(const ExitStatus& status) -> std::string
{
    switch (status.kind)
    {
    case ExitKind::Ok: return "OK";
    case ExitKind::ScriptError: return fmt::format("ScriptError(line {}: {})", status.line, status.message);
    case ExitKind::LimitExceeded: return fmt::format("LimitExceeded({})", status.message);
    }
    return "?";
}

auto resolve_in_sandbox(const fs::path& workdir, std::string_view relative) -> fs::path
{
    if (relative.empty() || relative.find('\0') != std::string_view::npos)
        return {};
    fs::path requested(relative);
    if (requested.is_absolute() || requested.has_root_name() || requested.has_root_directory())
        return {};
    auto normal = requested.lexically_normal();
    if (normal.empty() || *normal.begin() == ".." || normal.filename().empty() || normal == ".")
        return {};

    std::error_code ec;
    auto root = fs::weakly_canonical(workdir, ec);
    if (ec)
        return {};
    auto target = fs::weakly_canonical(root / normal, ec);
    if (ec)
        return {};
    // Symlinks inside the workdir may still point elsewhere; compare resolved paths.
    auto rel = target.lexically_relative(root);
    if (rel.empty() || *rel.begin() == ".." || rel == ".")
        return {};
    if (fs::is_symlink(root / normal, ec))
        return {};
    return target;
}

auto execute(const Program& program, const std::vector<net::ResourceDescriptor>& registry, const SandboxLimits& limits,
             const fs::path& workdir, Clock& clock) -> ExecutionResult
{
    Interpreter interpreter(registry, limits, workdir, clock);
    return interpreter.run(program);
}

auto run_source(std::string_view source, const std::vector<net::ResourceDescriptor>& registry,
                const SandboxLimits& limits, const fs::path& workdir, Clock& clock) -> ExecutionResult
{
    Program program;
    try
    {
        program = parse_program(source);
    }
    catch (const ParseError& error)
    {
        ExecutionResult result;
        result.exit = { ExitKind::ScriptError, error.line(), error.message() };
        result.stderr_text = fmt::format("line {}: parse error: {}\n", error.line(), error.message());
        return result;
    }
    return execute(program, registry, limits, workdir, clock);
}

} // namespace autolab::labscript
