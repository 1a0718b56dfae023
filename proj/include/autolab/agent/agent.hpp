// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/agent/session.hpp>
#include <autolab/common/clock.hpp>

#include <functional>
#include <stdexcept>

#include <json.hpp>

namespace autolab::agent
{

/// Runs one script in `workdir` and reports what happened.
using Sandbox = std::function<labscript::ExecutionResult(const std::string& code, const std::filesystem::path& workdir)>;

/// Sandbox over `registry`, parsing and executing with `limits` on `clock`.
auto make_sandbox(std::vector<net::ResourceDescriptor> registry, labscript::SandboxLimits limits, ClockPtr clock)
    -> Sandbox;

enum class AgentEventKind
{
    IterationStarted,
    CodeProposed,
    AwaitingApproval,
    Executed,
    Feedback,
    SessionTerminal
};

auto event_kind_name(AgentEventKind kind) -> std::string_view;

struct AgentEvent
{
    AgentEventKind kind;
    nlohmann::json payload;
};

/// Called after each transition, on the thread driving the agent.
using Observer = std::function<void(const AgentEvent&, const AgentSession&)>;

class NotAwaitingApproval: public std::logic_error
{
  public:
    NotAwaitingApproval(): std::logic_error("not awaiting approval") {}
};

/// The loop of one session: prompt, extract, gate, execute, feed back.
///
/// Not thread-safe; the owner serializes calls. Every transition rewrites
/// `session.json` and the iteration artifact in the session directory.
class Agent
{
  public:
    Agent(AgentSession session, llm::Backend& backend, Sandbox sandbox, std::filesystem::path session_dir,
          Observer observer = {});

    /// One loop turn. Returns false when the session is not Running.
    auto step() -> bool;
    /// Steps until the session is terminal or awaiting approval.
    void run();

    /// Throw NotAwaitingApproval unless the session is parked at the gate.
    void approve(const std::string& by);
    void reject(const std::string& by, const std::string& reason);

    /// Operator success mark for `manual` predicates; re-checks the last iteration.
    void confirm();

    [[nodiscard]] auto session() const -> const AgentSession& { return _session; }
    [[nodiscard]] auto executions() const -> std::size_t { return _executions; }
    [[nodiscard]] auto terminal() const -> bool;
    [[nodiscard]] auto directory() const -> const std::filesystem::path& { return _dir; }

    /// Model name passed through to the backend.
    void set_model(std::string model) { _model = std::move(model); }

  private:
    void execute_current();
    void finish_iteration(const std::string& feedback);
    void check_success();
    void fail(const std::string& reason);
    void emit(AgentEventKind kind, nlohmann::json payload);
    void persist();
    void write_artifact(const Iteration& iteration);

    AgentSession _session;
    llm::Backend& _backend;
    Sandbox _sandbox;
    std::filesystem::path _dir;
    Observer _observer;
    Predicate _predicate;
    std::string _model;
    std::size_t _executions = 0;
};

struct ReplayOutcome
{
    AgentSession replayed;
    bool identical = false;
    std::string difference;
};

/// Re-runs a recorded session: a stub answers with the recorded assistant
/// turns and recorded operator decisions are re-applied. Artifacts land in `dir`.
auto replay(const AgentSession& recorded, Sandbox sandbox, const std::filesystem::path& dir) -> ReplayOutcome;

} // namespace autolab::agent
