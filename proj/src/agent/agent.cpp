// SPDX-License-Identifier: Apache-2.0
#include <autolab/agent/agent.hpp>

#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace autolab::agent
{

namespace fs = std::filesystem;

namespace
{

    auto exit_kind_name(labscript::ExitKind kind) -> std::string_view
    {
        switch (kind)
        {
        case labscript::ExitKind::Ok: return "OK";
        case labscript::ExitKind::ScriptError: return "ScriptError";
        case labscript::ExitKind::LimitExceeded: return "LimitExceeded";
        }
        return "OK";
    }

} // namespace

auto make_sandbox(std::vector<net::ResourceDescriptor> registry, labscript::SandboxLimits limits, ClockPtr clock)
    -> Sandbox
{
    return [registry = std::move(registry), limits = std::move(limits), clock = std::move(clock)](
               const std::string& code, const fs::path& workdir) {
        return labscript::run_source(code, registry, limits, workdir, *clock);
    };
}

auto event_kind_name(AgentEventKind kind) -> std::string_view
{
    switch (kind)
    {
    case AgentEventKind::IterationStarted: return "IterationStarted";
    case AgentEventKind::CodeProposed: return "CodeProposed";
    case AgentEventKind::AwaitingApproval: return "AwaitingApproval";
    case AgentEventKind::Executed: return "Executed";
    case AgentEventKind::Feedback: return "Feedback";
    case AgentEventKind::SessionTerminal: return "SessionTerminal";
    }
    return "?";
}

Agent::Agent(AgentSession session, llm::Backend& backend, Sandbox sandbox, fs::path session_dir, Observer observer):
    _session(std::move(session)),
    _backend(backend),
    _sandbox(std::move(sandbox)),
    _dir(std::move(session_dir)),
    _observer(std::move(observer)),
    _predicate(parse_predicate(_session.predicate))
{
    fs::create_directories(_dir);
    persist();
}

auto Agent::terminal() const -> bool
{
    return _session.state == SessionState::Succeeded || _session.state == SessionState::Failed;
}

auto Agent::step() -> bool
{
    if (_session.state != SessionState::Running)
        return false;
    if (static_cast<int>(_session.iterations.size()) >= _session.max_iters)
    {
        fail("max iterations");
        return true;
    }

    const int index = static_cast<int>(_session.iterations.size()) + 1;
    emit(AgentEventKind::IterationStarted, { { "index", index } });

    llm::ChatRequest request { _model, compose_messages(_session), 0.0 };
    std::string reply;
    bool answered = false;
    for (int attempt = 0; attempt < 2 && !answered; ++attempt)
    {
        try
        {
            reply = _backend.complete(request);
            answered = true;
        }
        catch (const std::exception& error)
        {
            spdlog::warn("session {}: LLM call {} failed: {}", _session.id, attempt + 1, error.what());
        }
    }
    if (!answered)
    {
        fail("llm unavailable");
        return true;
    }
    _session.transcript.push_back({ Role::Assistant, reply });

    Iteration iteration;
    iteration.index = index;
    iteration.artifact_path = artifact_name(index);
    try
    {
        auto extraction = extract_code_block(reply);
        iteration.proposed_code = extraction.code;
        iteration.done_flag = extraction.done;
        iteration.ignored_blocks = extraction.extra_blocks;
    }
    catch (const ExtractError& error)
    {
        _session.iterations.push_back(iteration);
        write_artifact(iteration);
        finish_iteration(fmt::format("Iteration {}: nothing was executed ({}). Reply with one fenced code block "
                                     "labeled labscript.",
                                     index, error.what()));
        return true;
    }

    _session.iterations.push_back(iteration);
    write_artifact(iteration);
    emit(AgentEventKind::CodeProposed,
         { { "index", index }, { "code", iteration.proposed_code }, { "done", iteration.done_flag } });

    if (_session.mode == Mode::Step)
    {
        _session.iterations.back().approval.kind = Approval::Kind::Pending;
        _session.state = SessionState::AwaitingApproval;
        emit(AgentEventKind::AwaitingApproval, { { "index", index } });
        return true;
    }
    execute_current();
    return true;
}

void Agent::run()
{
    while (step())
    {
    }
}

void Agent::approve(const std::string& by)
{
    if (_session.state != SessionState::AwaitingApproval)
        throw NotAwaitingApproval();
    auto& approval = _session.iterations.back().approval;
    approval = { Approval::Kind::Approved, by, {}, utc_timestamp() };
    _session.state = SessionState::Running;
    execute_current();
}

void Agent::reject(const std::string& by, const std::string& reason)
{
    if (_session.state != SessionState::AwaitingApproval)
        throw NotAwaitingApproval();
    auto& iteration = _session.iterations.back();
    iteration.approval = { Approval::Kind::Rejected, by, reason, utc_timestamp() };
    _session.state = SessionState::Running;
    finish_iteration(fmt::format("Iteration {} was not executed. Operator rejected: {}", iteration.index, reason));
}

void Agent::confirm()
{
    _session.operator_confirmed = true;
    if (_session.state == SessionState::Running || _session.state == SessionState::AwaitingApproval)
    {
        check_success();
        persist();
    }
}

void Agent::execute_current()
{
    auto& iteration = _session.iterations.back();
    ++_executions;
    iteration.exec = _sandbox(iteration.proposed_code, _dir);
    const auto& exec = *iteration.exec;
    emit(AgentEventKind::Executed, { { "index", iteration.index },
                                     { "exit", exit_kind_name(exec.exit.kind) },
                                     { "exit_detail", labscript::describe(exec.exit) },
                                     { "records", exec.records.size() },
                                     { "stdout", exec.stdout_text },
                                     { "stderr", exec.stderr_text },
                                     { "saved_files", exec.saved_files } });
    finish_iteration(execution_feedback(iteration));
}

void Agent::finish_iteration(const std::string& feedback)
{
    _session.transcript.push_back({ Role::User, feedback });
    emit(AgentEventKind::Feedback, { { "index", _session.iterations.back().index }, { "content", feedback } });
    check_success();
    if (_session.state == SessionState::Running && static_cast<int>(_session.iterations.size()) >= _session.max_iters)
        fail("max iterations");
    persist();
}

void Agent::check_success()
{
    if (_session.iterations.empty())
        return;
    const auto& last = _session.iterations.back();
    if (!last.done_flag || !last.exec || last.exec->exit.kind != labscript::ExitKind::Ok)
        return;
    if (!evaluate_success(_predicate, *last.exec, _dir, _session.operator_confirmed))
        return;
    _session.state = SessionState::Succeeded;
    _session.failure_reason.clear();
    emit(AgentEventKind::SessionTerminal,
         { { "state", state_name(_session.state) }, { "iterations", _session.iterations.size() } });
}

void Agent::fail(const std::string& reason)
{
    _session.state = SessionState::Failed;
    _session.failure_reason = reason;
    persist();
    emit(AgentEventKind::SessionTerminal, { { "state", state_name(_session.state) },
                                            { "reason", reason },
                                            { "iterations", _session.iterations.size() } });
}

void Agent::emit(AgentEventKind kind, nlohmann::json payload)
{
    persist();
    if (_observer)
        _observer(AgentEvent { kind, std::move(payload) }, _session);
}

void Agent::persist()
{
    save_session(_session, _dir);
}

void Agent::write_artifact(const Iteration& iteration)
{
    std::ofstream out(_dir / iteration.artifact_path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write {}", (_dir / iteration.artifact_path).string()));
    out << iteration.proposed_code;
    if (!iteration.proposed_code.empty())
        out << '\n';
}

auto replay(const AgentSession& recorded, Sandbox sandbox, const fs::path& dir) -> ReplayOutcome
{
    std::vector<std::string> replies;
    for (const auto& message: recorded.transcript)
        if (message.role == Role::Assistant)
            replies.push_back(message.content);
    llm::ScriptedStub stub(std::move(replies));

    SessionSpec spec;
    spec.id = recorded.id;
    spec.goal = recorded.goal;
    spec.mode = recorded.mode;
    spec.max_iters = recorded.max_iters;
    spec.predicate = recorded.predicate;
    spec.system_prompt = recorded.transcript.empty() ? std::string() : recorded.transcript.front().content;
    spec.rack = recorded.rack;

    Agent agent(new_session(spec), stub, std::move(sandbox), dir);
    if (recorded.operator_confirmed)
        agent.confirm();
    while (!agent.terminal())
    {
        agent.run();
        if (agent.session().state != SessionState::AwaitingApproval)
            break;
        auto index = agent.session().iterations.size();
        if (index > recorded.iterations.size())
            break;
        const auto& decision = recorded.iterations[index - 1].approval;
        if (decision.kind == Approval::Kind::Approved)
            agent.approve(decision.by);
        else if (decision.kind == Approval::Kind::Rejected)
            agent.reject(decision.by, decision.reason);
        else
            break;
    }

    ReplayOutcome outcome;
    outcome.replayed = agent.session();
    const auto& again = outcome.replayed;
    if (again.transcript != recorded.transcript)
    {
        std::size_t i = 0;
        while (i < again.transcript.size() && i < recorded.transcript.size() && again.transcript[i] == recorded.transcript[i])
            ++i;
        outcome.difference = fmt::format("transcript differs at message {}", i + 1);
    }
    else if (again.iterations.size() != recorded.iterations.size())
        outcome.difference = "iteration count differs";
    else if (again.state != recorded.state)
        outcome.difference = fmt::format("final state differs: {} vs {}", state_name(again.state), state_name(recorded.state));
    else
    {
        for (std::size_t i = 0; i < again.iterations.size() && outcome.difference.empty(); ++i)
            if (again.iterations[i].proposed_code != recorded.iterations[i].proposed_code
                || again.iterations[i].exec != recorded.iterations[i].exec)
                outcome.difference = fmt::format("iteration {} differs", i + 1);
    }
    outcome.identical = outcome.difference.empty();
    return outcome;
}

} // namespace autolab::agent
