// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/common/clock.hpp>

#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace autolab::stage
{

inline constexpr double DefaultTravelUm = 75000.0;
inline constexpr double DefaultVelocityUmPerS = 5000.0;

/// Stage coordinates in micrometers.
struct StagePose
{
    double x = 0.0;
    double y = 0.0;

    auto operator==(const StagePose&) const -> bool = default;
};

struct TravelLimits
{
    double x_max = DefaultTravelUm;
    double y_max = DefaultTravelUm;

    auto operator==(const TravelLimits&) const -> bool = default;
};

enum class MotionStatus
{
    Idle,
    Moving
};

auto distance(StagePose a, StagePose b) -> double;
auto within_limits(StagePose pose, TravelLimits limits) -> bool;

/// Straight-line, constant-velocity motion toward `target`.
///
/// `segment_start` and `traveled` describe the move in progress; the current
/// pose is always derived from them so repeated clock advances never drift
/// off the segment.
struct MotionState
{
    StagePose current;
    StagePose target;
    double velocity = DefaultVelocityUmPerS;
    MotionStatus status = MotionStatus::Idle;
    TravelLimits limits;
    StagePose segment_start;
    double traveled = 0.0;

    [[nodiscard]] auto remaining() const -> double { return distance(current, target); }
    auto operator==(const MotionState&) const -> bool = default;
};

auto advance_clock(MotionState state, double dt_seconds) -> MotionState;

struct CommandResult
{
    MotionState state;
    std::string response;
};

/// One line of the stage protocol: `MOVE <x> <y>`, `POS?`, `STATUS?`, `HOME`, `LIMITS?`.
auto handle_command(MotionState state, std::string_view line) -> CommandResult;

/// Clocked front end used by the network listener. Every command line
/// receives exactly one response line.
class StageInstrument
{
  public:
    StageInstrument(MotionState initial, ClockPtr clock);

    auto handle_line(std::string_view line) -> std::vector<std::string>;

    /// Pose at the present clock time.
    auto pose() -> StagePose;
    auto snapshot() -> MotionState;
    void reset();

  private:
    void catch_up();

    std::mutex _mutex;
    MotionState _initial;
    MotionState _state;
    ClockPtr _clock;
    Nanos _last_update;
};

} // namespace autolab::stage
