// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/labscript/interpreter.hpp>
#include <autolab/llm/client.hpp>
#include <autolab/net/resource.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace autolab::agent
{

using AgentMessage = llm::ChatMessage;
using llm::Role;

inline constexpr int SessionFormatVersion = 1;
inline constexpr int DefaultMaxIters = 8;

enum class Mode
{
    Auto,
    Step
};

enum class SessionState
{
    Running,
    AwaitingApproval,
    Succeeded,
    Failed
};

auto mode_name(Mode mode) -> std::string_view;
auto parse_mode(std::string_view name) -> std::optional<Mode>;
auto state_name(SessionState state) -> std::string_view;

struct Approval
{
    enum class Kind
    {
        NotRequired,
        Pending,
        Approved,
        Rejected
    };

    Kind kind = Kind::NotRequired;
    std::string by;
    std::string reason;
    std::string at;

    auto operator==(const Approval&) const -> bool = default;
};

auto approval_name(Approval::Kind kind) -> std::string_view;

struct Iteration
{
    int index = 0;
    std::string proposed_code;
    bool done_flag = false;
    /// Additional labscript blocks in the reply that were not run.
    std::size_t ignored_blocks = 0;
    Approval approval;
    std::optional<labscript::ExecutionResult> exec;
    std::string artifact_path;

    auto operator==(const Iteration&) const -> bool = default;
};

/// Replays need the rack the session ran against.
struct RackInfo
{
    std::vector<net::ResourceDescriptor> resources;
    std::string device;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    bool virtual_clock = false;

    auto operator==(const RackInfo&) const -> bool = default;
};

struct AgentSession
{
    std::string id;
    std::string goal;
    Mode mode = Mode::Auto;
    int max_iters = DefaultMaxIters;
    std::string predicate = "records_at_least:0";
    /// Stored turns: system, initial user, then (assistant, feedback) pairs.
    std::vector<AgentMessage> transcript;
    std::vector<Iteration> iterations;
    SessionState state = SessionState::Running;
    std::string failure_reason;
    bool operator_confirmed = false;
    RackInfo rack;

    auto operator==(const AgentSession&) const -> bool = default;
};

struct SessionSpec
{
    std::string id;
    std::string goal;
    Mode mode = Mode::Auto;
    int max_iters = DefaultMaxIters;
    std::string predicate = "records_at_least:0";
    std::string system_prompt;
    RackInfo rack;
};

/// Validates and builds a fresh session whose transcript holds the system
/// prompt and the initial instruction. Throws std::invalid_argument.
auto new_session(const SessionSpec& spec) -> AgentSession;

auto initial_user_message(const std::string& goal, const std::vector<net::ResourceDescriptor>& resources) -> std::string;
auto goal_reminder(const std::string& goal) -> std::string;

/// The transcript, plus the goal reminder once at least one iteration has run.
auto compose_messages(const AgentSession& session) -> std::vector<AgentMessage>;

/// Fallback when no prompt file is configured.
auto default_system_prompt() -> std::string;
auto load_system_prompt(const std::filesystem::path& path) -> std::string;

class ExtractError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct Extraction
{
    std::string code;
    bool done = false;
    std::size_t extra_blocks = 0;
};

/// First ```labscript fence of a reply. DONE counts only outside fences.
auto extract_code_block(std::string_view assistant_text) -> Extraction;

/// Conjunction of built-in checks, written `file_rows:<path>:<n>`,
/// `records_at_least:<n>` or `manual`, joined with ` AND `.
struct Predicate
{
    struct FileRows
    {
        std::string path;
        std::size_t min_rows = 0;
    };
    struct RecordsAtLeast
    {
        std::size_t count = 0;
    };
    struct AlwaysManual
    {
    };
    using Term = std::variant<FileRows, RecordsAtLeast, AlwaysManual>;

    std::vector<Term> terms;
};

/// Throws std::invalid_argument on unknown terms.
auto parse_predicate(std::string_view text) -> Predicate;

auto evaluate_success(const Predicate& predicate, const labscript::ExecutionResult& exec,
                      const std::filesystem::path& workdir, bool operator_confirmed = false) -> bool;

auto artifact_name(int index) -> std::string;

/// Feedback user message for an executed iteration. Carries stderr verbatim.
auto execution_feedback(const Iteration& iteration) -> std::string;

/// JSON form of the full session; session_from_json throws std::runtime_error.
auto to_json(const AgentSession& session) -> std::string;
auto session_from_json(std::string_view text) -> AgentSession;

auto save_session(const AgentSession& session, const std::filesystem::path& dir) -> void;
auto load_session(const std::filesystem::path& file) -> AgentSession;

} // namespace autolab::agent
