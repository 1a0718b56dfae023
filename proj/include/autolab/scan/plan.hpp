// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/stage/stage.hpp>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace autolab::scan
{

inline constexpr double DefaultPitchUm = 100.0;
inline constexpr double DefaultSettleMs = 10.0;
inline constexpr double DefaultBiasV = 1.0;

struct ScanPlan
{
    stage::StagePose origin;
    int nx = 1;
    int ny = 1;
    double pitch_x = DefaultPitchUm;
    double pitch_y = DefaultPitchUm;
    double settle_ms = DefaultSettleMs;
    double bias = DefaultBiasV;

    [[nodiscard]] auto pixel_count() const -> std::size_t
    {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    }
    auto operator==(const ScanPlan&) const -> bool = default;
};

class PlanError: public std::invalid_argument
{
  public:
    PlanError(std::string axis, const std::string& message);

    [[nodiscard]] auto axis() const -> const std::string& { return _axis; }

  private:
    std::string _axis;
};

struct GridCell
{
    int col = 0;
    int row = 0;

    auto operator==(const GridCell&) const -> bool = default;
};

struct PlannedPixel
{
    GridCell cell;
    stage::StagePose pose;
};

/// Throws PlanError naming the offending axis ("x", "y", "nx", "settle", ...).
void validate(const ScanPlan& plan, stage::TravelLimits limits = {});

/// Grid cell visited at acquisition step `index`: rows bottom-to-top, even
/// rows left-to-right, odd rows right-to-left.
auto snake_cell(std::size_t index, int nx) -> GridCell;

auto pose_of(const ScanPlan& plan, GridCell cell) -> stage::StagePose;

/// Full serpentine visiting order with stage poses.
auto plan_snake(const ScanPlan& plan, stage::TravelLimits limits = {}) -> std::vector<PlannedPixel>;

} // namespace autolab::scan
