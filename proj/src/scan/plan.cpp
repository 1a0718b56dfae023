// SPDX-License-Identifier: Apache-2.0
#include <autolab/scan/kernels.hpp>
#include <autolab/scan/plan.hpp>

#include <cmath>

#include <fmt/format.h>

namespace autolab::scan
{

PlanError::PlanError(std::string axis, const std::string& message):
    std::invalid_argument(fmt::format("scan plan ({}): {}", axis, message)), _axis(std::move(axis))
{
}

void validate(const ScanPlan& plan, stage::TravelLimits limits)
{
    if (plan.nx <= 0)
        throw PlanError("nx", "must be a positive integer");
    if (plan.ny <= 0)
        throw PlanError("ny", "must be a positive integer");
    if (!(plan.pitch_x > 0.0) || !std::isfinite(plan.pitch_x))
        throw PlanError("x", "pitch must be > 0");
    if (!(plan.pitch_y > 0.0) || !std::isfinite(plan.pitch_y))
        throw PlanError("y", "pitch must be > 0");
    if (!(plan.settle_ms >= 0.0) || !std::isfinite(plan.settle_ms))
        throw PlanError("settle", "must be >= 0 ms");
    if (!std::isfinite(plan.bias))
        throw PlanError("bias", "must be finite");

    double x_end = plan.origin.x + (plan.nx - 1) * plan.pitch_x;
    double y_end = plan.origin.y + (plan.ny - 1) * plan.pitch_y;
    if (plan.origin.x < 0.0 || x_end > limits.x_max)
        throw PlanError("x", fmt::format("footprint {}..{} um exceeds travel 0..{} um", plan.origin.x, x_end, limits.x_max));
    if (plan.origin.y < 0.0 || y_end > limits.y_max)
        throw PlanError("y", fmt::format("footprint {}..{} um exceeds travel 0..{} um", plan.origin.y, y_end, limits.y_max));
}

auto snake_cell(std::size_t index, int nx) -> GridCell
{
    auto width = static_cast<std::size_t>(nx);
    auto row = static_cast<int>(index / width);
    auto offset = static_cast<int>(index % width);
    return { row % 2 == 0 ? offset : nx - 1 - offset, row };
}

auto pose_of(const ScanPlan& plan, GridCell cell) -> stage::StagePose
{
    return { plan.origin.x + cell.col * plan.pitch_x, plan.origin.y + cell.row * plan.pitch_y };
}

auto plan_snake(const ScanPlan& plan, stage::TravelLimits limits) -> std::vector<PlannedPixel>
{
    validate(plan, limits);
    return kernels::snake_order(plan);
}

} // namespace autolab::scan
