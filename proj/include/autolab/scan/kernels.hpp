// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel imaging kernels. Each parallel kernel has a plain serial
// twin with the same contract; tests hold them bit-identical and the bench
// target compares their throughput.

#include <autolab/scan/plan.hpp>
#include <autolab/scan/scene.hpp>
#include <autolab/scpi/smu.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace autolab::scan::kernels
{

/// Serpentine order for a plan (no limit checks).
auto snake_order(const ScanPlan& plan) -> std::vector<PlannedPixel>;
auto snake_order_serial(const ScanPlan& plan) -> std::vector<PlannedPixel>;

/// Noise-free frame a scan over `scene` would acquire, row-major, quantized
/// to the 6-significant-digit wire format.
auto predict_frame(const ScanPlan& plan, const Scene& scene, const scpi::DeviceModel& device,
                   double current_limit = scpi::ResetCurrentLimit) -> std::vector<double>;
auto predict_frame_serial(const ScanPlan& plan, const Scene& scene, const scpi::DeviceModel& device,
                          double current_limit = scpi::ResetCurrentLimit) -> std::vector<double>;

/// Min-max normalization onto 0..65535, round-half-even; a constant input maps to all zeros.
auto normalize_u16(std::span<const double> values) -> std::vector<std::uint16_t>;
auto normalize_u16_serial(std::span<const double> values) -> std::vector<std::uint16_t>;

/// Number of threads the parallel kernels use (1 without OpenMP).
auto parallel_width() -> int;

} // namespace autolab::scan::kernels
