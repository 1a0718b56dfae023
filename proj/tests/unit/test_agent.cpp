// SPDX-License-Identifier: Apache-2.0
#include <autolab/agent/agent.hpp>
#include <autolab/agent/session.hpp>

#include <gtest/gtest.h>

#include <chrono>

#include "fixtures.hpp"

using namespace autolab;
using namespace autolab::agent;
namespace fs = std::filesystem;

namespace
{

    const fs::path StubFile = fs::path(AUTOLAB_DATA_DIR) / "stubs" / "iv_demo.json";

    struct Harness
    {
        std::unique_ptr<net::Rack> rack = fixture::local_rack();
        fixture::TempDir dir;
        std::unique_ptr<llm::ScriptedStub> stub;
        std::vector<AgentEventKind> events;

        auto variables() const -> std::map<std::string, std::string>
        {
            return { { "SMU", rack->resources()[0].resource_id }, { "STAGE", rack->resources()[1].resource_id } };
        }

        auto make(Mode mode, const std::string& predicate, int max_iters = DefaultMaxIters) -> Agent
        {
            SessionSpec spec;
            spec.id = "t";
            spec.goal = "Measure the I-V characteristics of a photoresistor";
            spec.mode = mode;
            spec.max_iters = max_iters;
            spec.predicate = predicate;
            spec.system_prompt = default_system_prompt();
            spec.rack.resources = rack->resources();
            return Agent(new_session(spec), *stub, make_sandbox(rack->resources(), {}, rack->clock()), dir.path(),
                         [this](const AgentEvent& event, const AgentSession&) { events.push_back(event.kind); });
        }
    };

    auto fenced(const std::string& code) -> std::string
    {
        return "Here you go.\n```labscript\n" + code + "```\n";
    }

} // namespace

TEST(Extract, FirstLabscriptFenceWins)
{
    auto e = extract_code_block("text\n```labscript\nPRINT \"a\"\n```\nmore\n```LabScript\nPRINT \"b\"\n```\n");
    EXPECT_EQ(e.code, "PRINT \"a\"");
    EXPECT_EQ(e.extra_blocks, 1u);
    EXPECT_FALSE(e.done);
}

TEST(Extract, DoneOnlyCountsOutsideFences)
{
    EXPECT_TRUE(extract_code_block("DONE\n```labscript\nPRINT \"x\"\n```").done);
    EXPECT_TRUE(extract_code_block("All DONE.\n```labscript\nPRINT \"x\"\n```").done);
    EXPECT_FALSE(extract_code_block("```labscript\nPRINT \"DONE\"\n```").done);
    EXPECT_FALSE(extract_code_block("UNDONE\n```labscript\nPRINT \"x\"\n```").done);
}

TEST(Extract, MissingOrOtherFencesThrow)
{
    EXPECT_THROW(extract_code_block("no code here"), ExtractError);
    EXPECT_THROW(extract_code_block("```python\nprint(1)\n```"), ExtractError);
    EXPECT_EQ(extract_code_block("```labscript\nPRINT \"x\"\n").code, "PRINT \"x\"");
}

TEST(Predicates, ParseAndEvaluate)
{
    fixture::TempDir dir;
    fixture::write_file(dir / "iv.csv", "v,i\n1,2\n3,4\n\n");
    labscript::ExecutionResult exec;
    exec.records = { { 1, 2 }, { 3, 4 } };
    EXPECT_TRUE(evaluate_success(parse_predicate("file_rows:iv.csv:2"), exec, dir.path()));
    EXPECT_FALSE(evaluate_success(parse_predicate("file_rows:iv.csv:3"), exec, dir.path()));
    EXPECT_FALSE(evaluate_success(parse_predicate("file_rows:../iv.csv:0"), exec, dir.path()));
    EXPECT_TRUE(evaluate_success(parse_predicate("records_at_least:2 AND FILE_ROWS:iv.csv:1"), exec, dir.path()));
    EXPECT_FALSE(evaluate_success(parse_predicate("manual"), exec, dir.path()));
    EXPECT_TRUE(evaluate_success(parse_predicate("manual"), exec, dir.path(), true));
    EXPECT_THROW(parse_predicate("vibes:good"), std::invalid_argument);
    EXPECT_THROW(parse_predicate("records_at_least:-1"), std::invalid_argument);
}

TEST(Compose, ReminderAppearsOnlyAfterAnIteration)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(std::vector<std::string> { fenced("PRINT \"hi\"\n") });
    auto agent = h.make(Mode::Auto, "records_at_least:1", 3);
    auto fresh = compose_messages(agent.session());
    ASSERT_EQ(fresh.size(), 2u);
    EXPECT_EQ(fresh[0].role, Role::System);
    EXPECT_EQ(fresh[1].role, Role::User);
    EXPECT_NE(fresh[1].content.find(h.rack->resources()[0].resource_id), std::string::npos);
    agent.step();
    auto later = compose_messages(agent.session());
    ASSERT_EQ(later.size(), 5u);
    EXPECT_EQ(later[2].role, Role::Assistant);
    EXPECT_EQ(later[4].content, goal_reminder(agent.session().goal));
    // The stored transcript alternates after the initial pair.
    const auto& stored = agent.session().transcript;
    for (std::size_t i = 2; i < stored.size(); ++i)
        EXPECT_EQ(stored[i].role, i % 2 == 0 ? Role::Assistant : Role::User);
}

TEST(AgentLoop, StubRunSucceedsInTwoIterations)
{
    Harness h;
    h.stub = llm::ScriptedStub::from_file(StubFile, h.variables());
    auto agent = h.make(Mode::Auto, "file_rows:iv.csv:21");
    auto start = std::chrono::steady_clock::now();
    agent.run();
    auto elapsed = std::chrono::steady_clock::now() - start;
    const auto& session = agent.session();
    ASSERT_EQ(session.state, SessionState::Succeeded) << session.failure_reason;
    ASSERT_EQ(session.iterations.size(), 2u);
    EXPECT_NE(session.transcript[3].content.find("-113,\"Undefined header\""), std::string::npos);
    EXPECT_EQ(fixture::lines_of(fixture::read_file(h.dir / "iv.csv")).size(), 22u);
    EXPECT_TRUE(fs::exists(h.dir / "autolab_code_iter1.labs"));
    EXPECT_TRUE(fs::exists(h.dir / "autolab_code_iter2.labs"));
    EXPECT_EQ(fixture::read_file(h.dir / "autolab_code_iter2.labs"), session.iterations[1].proposed_code + "\n");
    EXPECT_LT(elapsed, std::chrono::seconds(5));
    EXPECT_EQ(h.events.back(), AgentEventKind::SessionTerminal);
}

TEST(AgentLoop, FeedbackCarriesStderrVerbatim)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(
        std::vector<std::string> { fenced("OPEN smu \"" + h.rack->resources()[0].resource_id
                                          + "\" SCPI\nWRITE smu \":BOGUS 1\"\nPRINT \"x\"\n") });
    auto agent = h.make(Mode::Auto, "records_at_least:1", 1);
    agent.run();
    const auto& iteration = agent.session().iterations[0];
    ASSERT_TRUE(iteration.exec);
    EXPECT_FALSE(iteration.exec->stderr_text.empty());
    EXPECT_NE(agent.session().transcript.back().content.find(iteration.exec->stderr_text), std::string::npos);
    EXPECT_EQ(agent.session().state, SessionState::Failed);
    EXPECT_EQ(agent.session().failure_reason, "max iterations");
}

TEST(AgentLoop, RepliesWithoutCodeExhaustIterations)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(std::vector<std::string>(8, "I would rather talk about it."));
    auto agent = h.make(Mode::Auto, "records_at_least:0");
    agent.run();
    EXPECT_EQ(agent.session().state, SessionState::Failed);
    EXPECT_EQ(agent.session().failure_reason, "max iterations");
    EXPECT_EQ(agent.session().iterations.size(), 8u);
    EXPECT_EQ(agent.executions(), 0u);
    EXPECT_TRUE(fs::exists(h.dir / "autolab_code_iter8.labs"));
}

TEST(AgentLoop, DoneWithoutPredicateKeepsGoing)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(
        std::vector<std::string> { "DONE\n" + fenced("PRINT \"x\"\n"), "DONE\n" + fenced("RECORD 1\n") });
    auto agent = h.make(Mode::Auto, "records_at_least:1");
    agent.run();
    EXPECT_EQ(agent.session().state, SessionState::Succeeded);
    EXPECT_EQ(agent.session().iterations.size(), 2u);
}

TEST(AgentLoop, LlmFailureEndsTheSession)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(std::vector<std::string> {});
    auto agent = h.make(Mode::Auto, "records_at_least:0");
    agent.run();
    EXPECT_EQ(agent.session().state, SessionState::Failed);
    EXPECT_EQ(agent.session().failure_reason, "llm unavailable");
    EXPECT_EQ(h.stub->calls(), 2u);
}

TEST(StepMode, NothingRunsBeforeApproval)
{
    Harness h;
    h.stub = llm::ScriptedStub::from_file(StubFile, h.variables());
    auto agent = h.make(Mode::Step, "file_rows:iv.csv:21");
    agent.run();
    EXPECT_EQ(agent.session().state, SessionState::AwaitingApproval);
    EXPECT_EQ(agent.executions(), 0u);
    EXPECT_EQ(agent.session().iterations[0].approval.kind, Approval::Kind::Pending);
    agent.run();
    EXPECT_EQ(agent.executions(), 0u);
}

TEST(StepMode, RejectFeedsTheReasonBack)
{
    Harness h;
    h.stub = llm::ScriptedStub::from_file(StubFile, h.variables());
    auto agent = h.make(Mode::Step, "file_rows:iv.csv:21");
    agent.run();
    agent.reject("op", "wrong port");
    EXPECT_EQ(agent.executions(), 0u);
    EXPECT_EQ(agent.session().transcript.back().content,
              "Iteration 1 was not executed. Operator rejected: wrong port");
    EXPECT_EQ(agent.session().iterations[0].approval.kind, Approval::Kind::Rejected);
    EXPECT_THROW(agent.reject("op", "again"), NotAwaitingApproval);
    EXPECT_THROW(agent.approve("op"), NotAwaitingApproval);
}

TEST(StepMode, ApproveExecutesOnce)
{
    Harness h;
    h.stub = llm::ScriptedStub::from_file(StubFile, h.variables());
    auto agent = h.make(Mode::Step, "file_rows:iv.csv:21");
    agent.run();
    agent.approve("op");
    EXPECT_EQ(agent.executions(), 1u);
    agent.run();
    agent.approve("op");
    EXPECT_EQ(agent.executions(), 2u);
    EXPECT_EQ(agent.session().state, SessionState::Succeeded);
}

TEST(ManualPredicate, WaitsForOperatorConfirmation)
{
    Harness h;
    h.stub = std::make_unique<llm::ScriptedStub>(std::vector<std::string>(3, "DONE\n" + fenced("RECORD 1\n")));
    auto agent = h.make(Mode::Auto, "manual", 3);
    agent.step();
    EXPECT_EQ(agent.session().state, SessionState::Running);
    agent.confirm();
    EXPECT_EQ(agent.session().state, SessionState::Succeeded);
}

TEST(SessionFile, RoundTripsAndReplays)
{
    Harness h;
    h.stub = llm::ScriptedStub::from_file(StubFile, h.variables());
    auto agent = h.make(Mode::Auto, "file_rows:iv.csv:21");
    agent.run();
    auto loaded = load_session(h.dir / "session.json");
    EXPECT_EQ(loaded, agent.session());
    EXPECT_EQ(session_from_json(to_json(loaded)), loaded);

    fixture::TempDir replay_dir;
    auto outcome = replay(loaded, make_sandbox(h.rack->resources(), {}, h.rack->clock()), replay_dir.path());
    EXPECT_TRUE(outcome.identical) << outcome.difference;
    EXPECT_EQ(outcome.replayed.state, SessionState::Succeeded);
    EXPECT_EQ(fixture::read_file(replay_dir / "iv.csv"), fixture::read_file(h.dir / "iv.csv"));
    EXPECT_THROW(session_from_json("{}"), std::runtime_error);
}

TEST(SessionFile, NewSessionValidates)
{
    SessionSpec spec;
    spec.goal = "";
    EXPECT_THROW(new_session(spec), std::invalid_argument);
    spec.goal = "g";
    spec.max_iters = 0;
    EXPECT_THROW(new_session(spec), std::invalid_argument);
    spec.max_iters = 2;
    spec.predicate = "nope";
    EXPECT_THROW(new_session(spec), std::invalid_argument);
}
