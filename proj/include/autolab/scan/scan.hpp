// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/common/clock.hpp>
#include <autolab/net/line_socket.hpp>
#include <autolab/scan/frame.hpp>

#include <atomic>
#include <cstddef>
#include <functional>

namespace autolab::scan
{

struct PixelEvent
{
    std::size_t index = 0; // position in acquisition order
    GridCell cell;
    stage::StagePose pose;
    double current = 0.0;
};

using PixelSink = std::function<void(const PixelEvent&)>;

struct ScanOptions
{
    /// Interval between `STATUS?` polls while the stage moves.
    double poll_ms = 5.0;
    /// Clock time allowed for one move before the scan aborts.
    double move_timeout_ms = 60000.0;
    const std::atomic<bool>* cancel = nullptr;
};

/// Acquires a frame over live instrument sessions.
///
/// The bias is applied once before the first pixel and the output is switched
/// off after the last one (also on abort). Per pixel: MOVE, poll until IDLE,
/// settle, `:READ?`. Any instrument error aborts and returns the partial frame
/// with `complete == false`. Plan violations throw PlanError before any motion.
auto run_scan(const ScanPlan& plan, net::LineClient& smu, net::LineClient& stage, Clock& clock,
              const PixelSink& sink = {}, const ScanOptions& options = {}) -> Frame;

/// Parses a `LIMITS?` reply (`0 0 <x_max> <y_max>`).
auto parse_limits(std::string_view reply) -> std::optional<stage::TravelLimits>;

} // namespace autolab::scan
