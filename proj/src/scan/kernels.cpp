// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scan/kernels.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace autolab::scan::kernels
{

namespace
{

    auto with_irradiance(scpi::DeviceModel device, double irradiance) -> scpi::DeviceModel
    {
        if (auto* photo = std::get_if<scpi::device::Photoconductor>(&device))
            photo->irradiance = irradiance;
        return device;
    }

    // Exactly what a `:READ?` round trip yields: measure, print, parse back.
    auto wire_current(const ScanPlan& plan, const Scene& scene, const scpi::DeviceModel& device,
                      double current_limit, GridCell cell) -> double
    {
        scpi::SmuState state;
        state.source_level = plan.bias;
        state.current_limit = current_limit;
        state.output_on = true;
        auto probe = with_irradiance(device, scene.reflectance_at(pose_of(plan, cell)));
        auto text = format_sci6(scpi::measure_current(state, probe));
        return std::strtod(text.c_str(), nullptr);
    }

    auto to_level(double value, double lo, double span) -> std::uint16_t
    {
        return static_cast<std::uint16_t>(std::nearbyint((value - lo) / span * 65535.0));
    }

} // namespace

auto snake_order(const ScanPlan& plan) -> std::vector<PlannedPixel>
{
    const auto count = static_cast<std::ptrdiff_t>(plan.pixel_count());
    std::vector<PlannedPixel> order(plan.pixel_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
        auto cell = snake_cell(static_cast<std::size_t>(i), plan.nx);
        order[static_cast<std::size_t>(i)] = { cell, pose_of(plan, cell) };
    }
    return order;
}

auto snake_order_serial(const ScanPlan& plan) -> std::vector<PlannedPixel>
{
    std::vector<PlannedPixel> order;
    order.reserve(plan.pixel_count());
    for (int row = 0; row < plan.ny; ++row)
    {
        bool forward = row % 2 == 0;
        for (int step = 0; step < plan.nx; ++step)
        {
            GridCell cell { forward ? step : plan.nx - 1 - step, row };
            order.push_back({ cell, pose_of(plan, cell) });
        }
    }
    return order;
}

auto predict_frame(const ScanPlan& plan, const Scene& scene, const scpi::DeviceModel& device, double current_limit)
    -> std::vector<double>
{
    const auto count = static_cast<std::ptrdiff_t>(plan.pixel_count());
    std::vector<double> frame(plan.pixel_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
        GridCell cell { static_cast<int>(i % plan.nx), static_cast<int>(i / plan.nx) };
        frame[static_cast<std::size_t>(i)] = wire_current(plan, scene, device, current_limit, cell);
    }
    return frame;
}

auto predict_frame_serial(const ScanPlan& plan, const Scene& scene, const scpi::DeviceModel& device,
                          double current_limit) -> std::vector<double>
{
    std::vector<double> frame;
    frame.reserve(plan.pixel_count());
    for (int row = 0; row < plan.ny; ++row)
        for (int col = 0; col < plan.nx; ++col)
            frame.push_back(wire_current(plan, scene, device, current_limit, { col, row }));
    return frame;
}

auto normalize_u16(std::span<const double> values) -> std::vector<std::uint16_t>
{
    std::vector<std::uint16_t> levels(values.size(), 0);
    if (values.empty())
        return levels;
    const auto count = static_cast<std::ptrdiff_t>(values.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
#pragma omp parallel for reduction(min : lo) reduction(max : hi) schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
        lo = std::min(lo, values[static_cast<std::size_t>(i)]);
        hi = std::max(hi, values[static_cast<std::size_t>(i)]);
    }
    if (!(hi > lo))
        return levels;
    const double span = hi - lo;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
        levels[static_cast<std::size_t>(i)] = to_level(values[static_cast<std::size_t>(i)], lo, span);
    return levels;
}

auto normalize_u16_serial(std::span<const double> values) -> std::vector<std::uint16_t>
{
    std::vector<std::uint16_t> levels(values.size(), 0);
    if (values.empty())
        return levels;
    auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (!(hi > lo))
        return levels;
    for (std::size_t i = 0; i < values.size(); ++i)
        levels[i] = to_level(values[i], lo, hi - lo);
    return levels;
}

auto parallel_width() -> int
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace autolab::scan::kernels
