// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/stage/stage.hpp>

#include <cmath>
#include <sstream>

#include <fmt/format.h>

namespace autolab::stage
{

namespace
{

    auto tokenize(std::string_view line) -> std::vector<std::string>
    {
        std::vector<std::string> tokens;
        std::istringstream in { std::string(line) };
        for (std::string token; in >> token;)
            tokens.push_back(std::move(token));
        return tokens;
    }

    auto start_move(MotionState state, StagePose target) -> MotionState
    {
        state.segment_start = state.current;
        state.target = target;
        state.traveled = 0.0;
        state.status = MotionStatus::Moving;
        return state;
    }

    auto move_to(MotionState state, StagePose target) -> CommandResult
    {
        if (!within_limits(target, state.limits))
            return { state, "ERR 2 RANGE" };
        return { start_move(state, target), "OK" };
    }

} // namespace

auto distance(StagePose a, StagePose b) -> double
{
    return std::hypot(b.x - a.x, b.y - a.y);
}

auto within_limits(StagePose pose, TravelLimits limits) -> bool
{
    return pose.x >= 0.0 && pose.x <= limits.x_max && pose.y >= 0.0 && pose.y <= limits.y_max;
}

auto advance_clock(MotionState state, double dt_seconds) -> MotionState
{
    if (state.status == MotionStatus::Idle || !(dt_seconds >= 0.0))
        return state;

    const double length = distance(state.segment_start, state.target);
    state.traveled += state.velocity * dt_seconds;
    if (state.traveled >= length)
    {
        state.current = state.target;
        state.segment_start = state.target;
        state.traveled = 0.0;
        state.status = MotionStatus::Idle;
        return state;
    }
    const double fraction = state.traveled / length;
    state.current = { state.segment_start.x + (state.target.x - state.segment_start.x) * fraction,
                      state.segment_start.y + (state.target.y - state.segment_start.y) * fraction };
    return state;
}

auto handle_command(MotionState state, std::string_view line) -> CommandResult
{
    auto tokens = tokenize(line);
    if (tokens.empty())
        return { state, "ERR 1 SYNTAX" };
    const auto verb = to_upper(tokens.front());

    if (verb == "MOVE" && tokens.size() == 3)
    {
        auto x = parse_double(tokens[1]);
        auto y = parse_double(tokens[2]);
        if (!x || !y)
            return { state, "ERR 1 SYNTAX" };
        return move_to(state, { *x, *y });
    }
    if (tokens.size() != 1)
        return { state, "ERR 1 SYNTAX" };
    if (verb == "HOME")
        return move_to(state, { 0.0, 0.0 });
    if (verb == "POS?")
        return { state, fmt::format("{} {}", format_decimal(state.current.x), format_decimal(state.current.y)) };
    if (verb == "STATUS?")
        return { state, state.status == MotionStatus::Idle ? "IDLE" : "MOVING" };
    if (verb == "LIMITS?")
        return { state, fmt::format("0 0 {} {}", format_decimal(state.limits.x_max), format_decimal(state.limits.y_max)) };
    return { state, "ERR 1 SYNTAX" };
}

StageInstrument::StageInstrument(MotionState initial, ClockPtr clock):
    _initial(initial), _state(initial), _clock(std::move(clock)), _last_update(_clock->now())
{
}

void StageInstrument::catch_up()
{
    auto now = _clock->now();
    _state = advance_clock(_state, to_seconds(now - _last_update));
    _last_update = now;
}

auto StageInstrument::handle_line(std::string_view line) -> std::vector<std::string>
{
    std::lock_guard lock(_mutex);
    catch_up();
    auto result = handle_command(_state, line);
    _state = result.state;
    return { std::move(result.response) };
}

auto StageInstrument::pose() -> StagePose
{
    std::lock_guard lock(_mutex);
    catch_up();
    return _state.current;
}

auto StageInstrument::snapshot() -> MotionState
{
    std::lock_guard lock(_mutex);
    catch_up();
    return _state;
}

void StageInstrument::reset()
{
    std::lock_guard lock(_mutex);
    _state = _initial;
    _last_update = _clock->now();
}

} // namespace autolab::stage
