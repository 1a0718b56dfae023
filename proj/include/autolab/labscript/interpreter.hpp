// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/common/clock.hpp>
#include <autolab/labscript/program.hpp>
#include <autolab/net/resource.hpp>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace autolab::labscript
{

struct SandboxLimits
{
    std::size_t max_instructions = 100000;
    double max_virtual_ms = 60000.0;
    std::vector<std::string> allowed_hosts { "127.0.0.1", "localhost" };
    /// Real-time bound on a single instrument reply.
    double io_timeout_ms = 5000.0;
    /// Clock interval between `STATUS?` polls in WAIT_IDLE.
    double poll_ms = 10.0;
    std::size_t max_output_bytes = 256 * 1024;
};

enum class ExitKind
{
    Ok,
    ScriptError,
    LimitExceeded
};

struct ExitStatus
{
    ExitKind kind = ExitKind::Ok;
    int line = 0;
    std::string message; // ScriptError text, or the limit name for LimitExceeded

    auto operator==(const ExitStatus&) const -> bool = default;
};

auto describe(const ExitStatus& status) -> std::string;

struct ExecutionResult
{
    ExitStatus exit;
    std::string stdout_text;
    /// Interpreter failures and instrument error replies, one `line N: ...` per entry.
    std::string stderr_text;
    std::vector<std::vector<double>> records;
    std::vector<std::string> record_labels;
    std::size_t instructions_executed = 0;
    std::vector<std::string> saved_files;

    auto operator==(const ExecutionResult&) const -> bool = default;
};

inline constexpr std::string_view InstructionLimit = "instructions";
inline constexpr std::string_view VirtualTimeLimit = "virtual_time";

/// Runs a parsed program against the instruments in `registry`.
///
/// Connections are private to this call and closed before it returns. Files
/// are only ever written below `workdir`.
auto execute(const Program& program, const std::vector<net::ResourceDescriptor>& registry, const SandboxLimits& limits,
             const std::filesystem::path& workdir, Clock& clock) -> ExecutionResult;

/// Parse + execute; a parse failure becomes a ScriptError result.
auto run_source(std::string_view source, const std::vector<net::ResourceDescriptor>& registry,
                const SandboxLimits& limits, const std::filesystem::path& workdir, Clock& clock) -> ExecutionResult;

/// Resolves a script-supplied path inside `workdir`, or returns an empty path
/// if it would land outside (absolute, `..` escapes, symlinks out).
auto resolve_in_sandbox(const std::filesystem::path& workdir, std::string_view relative) -> std::filesystem::path;

} // namespace autolab::labscript
