// SPDX-License-Identifier: Apache-2.0
#include <autolab/agent/session.hpp>
#include <autolab/common/numfmt.hpp>
#include <autolab/net/rack.hpp>

#include <cctype>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace autolab::agent
{

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace
{

    auto read_file(const fs::path& path) -> std::string
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw std::runtime_error(fmt::format("cannot read {}", path.string()));
        std::stringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    }

    auto is_word_char(char c) -> bool
    {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    }

    auto contains_token(std::string_view line, std::string_view token) -> bool
    {
        for (auto pos = line.find(token); pos != std::string_view::npos; pos = line.find(token, pos + 1))
        {
            bool left = pos == 0 || !is_word_char(line[pos - 1]);
            auto end = pos + token.size();
            bool right = end >= line.size() || !is_word_char(line[end]);
            if (left && right)
                return true;
        }
        return false;
    }

    auto parse_count(std::string_view text, std::string_view term) -> std::size_t
    {
        auto value = parse_double(text);
        if (!value || *value < 0 || *value != static_cast<double>(static_cast<std::size_t>(*value)))
            throw std::invalid_argument(fmt::format("predicate '{}' needs a non-negative integer", term));
        return static_cast<std::size_t>(*value);
    }

    auto exec_to_json(const labscript::ExecutionResult& exec) -> ordered_json
    {
        ordered_json out;
        out["exit"] = { { "kind", exec.exit.kind == labscript::ExitKind::Ok            ? "OK"
                                  : exec.exit.kind == labscript::ExitKind::ScriptError ? "ScriptError"
                                                                                       : "LimitExceeded" },
                        { "line", exec.exit.line },
                        { "message", exec.exit.message } };
        out["stdout"] = exec.stdout_text;
        out["stderr"] = exec.stderr_text;
        out["record_labels"] = exec.record_labels;
        out["records"] = exec.records;
        out["instructions_executed"] = exec.instructions_executed;
        out["saved_files"] = exec.saved_files;
        return out;
    }

    auto exec_from_json(const nlohmann::json& in) -> labscript::ExecutionResult
    {
        labscript::ExecutionResult exec;
        auto kind = in.at("exit").at("kind").get<std::string>();
        exec.exit.kind = kind == "OK"            ? labscript::ExitKind::Ok
                       : kind == "ScriptError" ? labscript::ExitKind::ScriptError
                                               : labscript::ExitKind::LimitExceeded;
        exec.exit.line = in.at("exit").at("line").get<int>();
        exec.exit.message = in.at("exit").at("message").get<std::string>();
        exec.stdout_text = in.at("stdout").get<std::string>();
        exec.stderr_text = in.at("stderr").get<std::string>();
        exec.record_labels = in.at("record_labels").get<std::vector<std::string>>();
        exec.records = in.at("records").get<std::vector<std::vector<double>>>();
        exec.instructions_executed = in.at("instructions_executed").get<std::size_t>();
        exec.saved_files = in.at("saved_files").get<std::vector<std::string>>();
        return exec;
    }

} // namespace

auto mode_name(Mode mode) -> std::string_view
{
    return mode == Mode::Step ? "STEP" : "AUTO";
}

auto parse_mode(std::string_view name) -> std::optional<Mode>
{
    auto upper = to_upper(name);
    if (upper == "AUTO")
        return Mode::Auto;
    if (upper == "STEP")
        return Mode::Step;
    return std::nullopt;
}

auto state_name(SessionState state) -> std::string_view
{
    switch (state)
    {
    case SessionState::Running: return "Running";
    case SessionState::AwaitingApproval: return "AwaitingApproval";
    case SessionState::Succeeded: return "Succeeded";
    case SessionState::Failed: return "Failed";
    }
    return "Running";
}

auto approval_name(Approval::Kind kind) -> std::string_view
{
    switch (kind)
    {
    case Approval::Kind::NotRequired: return "NotRequired";
    case Approval::Kind::Pending: return "Pending";
    case Approval::Kind::Approved: return "Approved";
    case Approval::Kind::Rejected: return "Rejected";
    }
    return "NotRequired";
}

auto default_system_prompt() -> std::string
{
    return "You are an expert lab automation agent. You control instruments only by writing LabScript inside one "
           "fenced code block per reply. Never assume success; rely on the execution feedback you receive.";
}

auto load_system_prompt(const fs::path& path) -> std::string
{
    return std::string(trim(read_file(path)));
}

auto initial_user_message(const std::string& goal, const std::vector<net::ResourceDescriptor>& resources) -> std::string
{
    return fmt::format("Goal: {}\n\n"
                       "Instruments on the bench:\n{}\n"
                       "LabScript reference:\n{}\n\n"
                       "Rules:\n"
                       "- Reply with exactly one fenced code block labeled labscript; further blocks are ignored.\n"
                       "- OPEN only the resources listed above. SAVE writes .csv files into the session directory.\n"
                       "- Each script runs in a fresh sandbox; you get back the exit status, stdout, stderr and the "
                       "record count.\n"
                       "- When the goal is met, reply DONE together with the final code block.",
                       goal, net::describe_resources(resources), labscript::grammar_summary());
}

auto goal_reminder(const std::string& goal) -> std::string
{
    return fmt::format("Goal: {}. Continue building and refining the script until complete. Reply DONE plus a final "
                       "code block when finished.",
                       goal);
}

auto new_session(const SessionSpec& spec) -> AgentSession
{
    if (spec.id.empty())
        throw std::invalid_argument("session id is empty");
    if (trim(spec.goal).empty())
        throw std::invalid_argument("goal is empty");
    if (spec.max_iters < 1)
        throw std::invalid_argument("max_iters must be positive");
    parse_predicate(spec.predicate);

    AgentSession session;
    session.id = spec.id;
    session.goal = spec.goal;
    session.mode = spec.mode;
    session.max_iters = spec.max_iters;
    session.predicate = spec.predicate;
    session.rack = spec.rack;
    auto system = spec.system_prompt.empty() ? default_system_prompt() : spec.system_prompt;
    session.transcript.push_back({ Role::System, system });
    session.transcript.push_back({ Role::User, initial_user_message(spec.goal, spec.rack.resources) });
    return session;
}

auto compose_messages(const AgentSession& session) -> std::vector<AgentMessage>
{
    auto messages = session.transcript;
    if (!session.iterations.empty())
        messages.push_back({ Role::User, goal_reminder(session.goal) });
    return messages;
}

auto extract_code_block(std::string_view text) -> Extraction
{
    Extraction result;
    bool found = false;
    bool in_fence = false;
    bool capturing = false;
    std::string code;
    std::size_t code_lines = 0;

    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        auto raw = text.substr(pos, end - pos);
        if (!raw.empty() && raw.back() == '\r')
            raw.remove_suffix(1);
        auto line = trim(raw);

        if (line.substr(0, 3) == "```")
        {
            if (!in_fence)
            {
                in_fence = true;
                auto label = to_upper(trim(line.substr(3)));
                if (label == "LABSCRIPT")
                {
                    if (found)
                        ++result.extra_blocks;
                    else
                        capturing = true;
                }
            }
            else if (trim(line.substr(3)).empty())
            {
                in_fence = false;
                if (capturing)
                {
                    capturing = false;
                    found = true;
                    result.code = code;
                }
            }
        }
        else if (capturing)
        {
            if (code_lines++ > 0)
                code += '\n';
            code += std::string(raw);
        }
        else if (!in_fence && contains_token(line, "DONE"))
        {
            result.done = true;
        }
        pos = end + 1;
    }

    // An unterminated labscript fence still counts up to the end of the reply.
    if (capturing)
    {
        found = true;
        result.code = code;
    }
    if (!found)
        throw ExtractError("no code block");
    return result;
}

auto parse_predicate(std::string_view text) -> Predicate
{
    Predicate predicate;
    std::string source(text);
    std::size_t pos = 0;
    while (true)
    {
        auto sep = source.find(" AND ", pos);
        auto term = std::string(trim(std::string_view(source).substr(pos, sep == std::string::npos ? sep : sep - pos)));
        if (term.empty())
            throw std::invalid_argument("empty predicate term");

        auto first = term.find(':');
        auto name = to_upper(term.substr(0, first));
        if (name == "MANUAL" && first == std::string::npos)
        {
            predicate.terms.emplace_back(Predicate::AlwaysManual {});
        }
        else if (name == "RECORDS_AT_LEAST" && first != std::string::npos)
        {
            predicate.terms.emplace_back(Predicate::RecordsAtLeast { parse_count(term.substr(first + 1), term) });
        }
        else if (name == "FILE_ROWS" && first != std::string::npos)
        {
            auto last = term.rfind(':');
            if (last == first)
                throw std::invalid_argument(fmt::format("predicate '{}' needs file_rows:<path>:<n>", term));
            auto path = term.substr(first + 1, last - first - 1);
            if (path.empty())
                throw std::invalid_argument(fmt::format("predicate '{}' has an empty path", term));
            predicate.terms.emplace_back(Predicate::FileRows { path, parse_count(term.substr(last + 1), term) });
        }
        else
        {
            throw std::invalid_argument(fmt::format("unknown predicate '{}'", term));
        }

        if (sep == std::string::npos)
            break;
        pos = sep + 5;
    }
    return predicate;
}

auto evaluate_success(const Predicate& predicate, const labscript::ExecutionResult& exec, const fs::path& workdir,
                      bool operator_confirmed) -> bool
{
    for (const auto& term: predicate.terms)
    {
        bool ok = std::visit(
            [&](const auto& t) -> bool {
                using T = std::decay_t<decltype(t)>;
                if constexpr (std::is_same_v<T, Predicate::FileRows>)
                {
                    auto file = labscript::resolve_in_sandbox(workdir, t.path);
                    std::ifstream in(file);
                    if (file.empty() || !in)
                        return false;
                    std::string line;
                    std::getline(in, line);
                    std::size_t rows = 0;
                    while (std::getline(in, line))
                        if (!trim(line).empty())
                            ++rows;
                    return rows >= t.min_rows;
                }
                else if constexpr (std::is_same_v<T, Predicate::RecordsAtLeast>)
                    return exec.records.size() >= t.count;
                else
                    return operator_confirmed;
            },
            term);
        if (!ok)
            return false;
    }
    return true;
}

auto artifact_name(int index) -> std::string
{
    return fmt::format("autolab_code_iter{}.labs", index);
}

auto execution_feedback(const Iteration& iteration) -> std::string
{
    std::string out = fmt::format("Iteration {} executed.\n", iteration.index);
    if (!iteration.exec)
        return out;
    const auto& exec = *iteration.exec;
    out += fmt::format("exit: {}\n", labscript::describe(exec.exit));
    out += fmt::format("records: {}\n", exec.records.size());
    if (!exec.saved_files.empty())
    {
        std::string files;
        for (const auto& file: exec.saved_files)
            files += (files.empty() ? "" : ", ") + file;
        out += fmt::format("saved files: {}\n", files);
    }
    out += "stdout:\n" + exec.stdout_text;
    if (!exec.stdout_text.empty() && exec.stdout_text.back() != '\n')
        out += '\n';
    out += "stderr:\n" + exec.stderr_text;
    if (!exec.stderr_text.empty() && exec.stderr_text.back() != '\n')
        out += '\n';
    if (iteration.ignored_blocks > 0)
        out += fmt::format("warning: {} extra code block(s) were ignored; send one block per reply.\n",
                           iteration.ignored_blocks);
    return out;
}

auto to_json(const AgentSession& session) -> std::string
{
    ordered_json out;
    out["format_version"] = SessionFormatVersion;
    out["id"] = session.id;
    out["goal"] = session.goal;
    out["mode"] = mode_name(session.mode);
    out["max_iters"] = session.max_iters;
    out["predicate"] = session.predicate;
    out["state"] = state_name(session.state);
    out["failure_reason"] = session.failure_reason;
    out["operator_confirmed"] = session.operator_confirmed;

    ordered_json rack;
    rack["resources"] = ordered_json::array();
    for (const auto& resource: session.rack.resources)
        rack["resources"].push_back({ { "resource_id", resource.resource_id },
                                      { "kind", net::kind_name(resource.kind) },
                                      { "label", resource.label } });
    rack["device"] = session.rack.device;
    rack["noise_sigma"] = session.rack.noise_sigma;
    rack["seed"] = session.rack.seed;
    rack["virtual_clock"] = session.rack.virtual_clock;
    out["rack"] = rack;

    out["transcript"] = ordered_json::array();
    for (const auto& message: session.transcript)
        out["transcript"].push_back({ { "role", llm::role_name(message.role) }, { "content", message.content } });

    out["iterations"] = ordered_json::array();
    for (const auto& iteration: session.iterations)
    {
        ordered_json it;
        it["index"] = iteration.index;
        it["proposed_code"] = iteration.proposed_code;
        it["done_flag"] = iteration.done_flag;
        it["ignored_blocks"] = iteration.ignored_blocks;
        it["approval"] = { { "kind", approval_name(iteration.approval.kind) },
                           { "by", iteration.approval.by },
                           { "reason", iteration.approval.reason },
                           { "at", iteration.approval.at } };
        it["exec"] = iteration.exec ? exec_to_json(*iteration.exec) : ordered_json(nullptr);
        it["artifact_path"] = iteration.artifact_path;
        out["iterations"].push_back(std::move(it));
    }
    return out.dump(2);
}

auto session_from_json(std::string_view text) -> AgentSession
{
    try
    {
        auto in = nlohmann::json::parse(text);
        if (in.at("format_version").get<int>() != SessionFormatVersion)
            throw std::runtime_error("unsupported session format version");

        AgentSession session;
        session.id = in.at("id").get<std::string>();
        session.goal = in.at("goal").get<std::string>();
        auto mode = parse_mode(in.at("mode").get<std::string>());
        if (!mode)
            throw std::runtime_error("bad mode");
        session.mode = *mode;
        session.max_iters = in.at("max_iters").get<int>();
        session.predicate = in.at("predicate").get<std::string>();
        auto state = in.at("state").get<std::string>();
        session.state = state == "Succeeded"          ? SessionState::Succeeded
                      : state == "Failed"             ? SessionState::Failed
                      : state == "AwaitingApproval" ? SessionState::AwaitingApproval
                                                      : SessionState::Running;
        session.failure_reason = in.at("failure_reason").get<std::string>();
        session.operator_confirmed = in.at("operator_confirmed").get<bool>();

        const auto& rack = in.at("rack");
        for (const auto& resource: rack.at("resources"))
        {
            auto kind = net::parse_kind(resource.at("kind").get<std::string>());
            if (!kind)
                throw std::runtime_error("bad resource kind");
            session.rack.resources.push_back(
                { resource.at("resource_id").get<std::string>(), *kind, resource.at("label").get<std::string>() });
        }
        session.rack.device = rack.at("device").get<std::string>();
        session.rack.noise_sigma = rack.at("noise_sigma").get<double>();
        session.rack.seed = rack.at("seed").get<std::uint64_t>();
        session.rack.virtual_clock = rack.at("virtual_clock").get<bool>();

        for (const auto& message: in.at("transcript"))
        {
            auto role = llm::parse_role(message.at("role").get<std::string>());
            if (!role)
                throw std::runtime_error("bad message role");
            session.transcript.push_back({ *role, message.at("content").get<std::string>() });
        }

        for (const auto& it: in.at("iterations"))
        {
            Iteration iteration;
            iteration.index = it.at("index").get<int>();
            iteration.proposed_code = it.at("proposed_code").get<std::string>();
            iteration.done_flag = it.at("done_flag").get<bool>();
            iteration.ignored_blocks = it.at("ignored_blocks").get<std::size_t>();
            const auto& approval = it.at("approval");
            auto kind = approval.at("kind").get<std::string>();
            iteration.approval.kind = kind == "Approved" ? Approval::Kind::Approved
                                    : kind == "Rejected" ? Approval::Kind::Rejected
                                    : kind == "Pending"  ? Approval::Kind::Pending
                                                         : Approval::Kind::NotRequired;
            iteration.approval.by = approval.at("by").get<std::string>();
            iteration.approval.reason = approval.at("reason").get<std::string>();
            iteration.approval.at = approval.at("at").get<std::string>();
            if (!it.at("exec").is_null())
                iteration.exec = exec_from_json(it.at("exec"));
            iteration.artifact_path = it.at("artifact_path").get<std::string>();
            session.iterations.push_back(std::move(iteration));
        }
        return session;
    }
    catch (const nlohmann::json::exception& error)
    {
        throw std::runtime_error(fmt::format("malformed session file: {}", error.what()));
    }
}

auto save_session(const AgentSession& session, const fs::path& dir) -> void
{
    fs::create_directories(dir);
    auto target = dir / "session.json";
    auto temp = dir / "session.json.tmp";
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error(fmt::format("cannot write {}", temp.string()));
        out << to_json(session) << '\n';
    }
    fs::rename(temp, target);
}

auto load_session(const fs::path& file) -> AgentSession
{
    return session_from_json(read_file(file));
}

} // namespace autolab::agent
