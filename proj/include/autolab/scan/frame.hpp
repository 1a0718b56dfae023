// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/scan/plan.hpp>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace autolab::scan
{

/// Acquired current image, stored row-major: `data[row * nx + col]`.
///
/// A partial frame (scan aborted) keeps zeros in cells not yet measured; the
/// first `acquired` pixels of the serpentine order are the measured ones.
struct Frame
{
    ScanPlan plan;
    std::vector<double> data;
    std::size_t acquired = 0;
    bool complete = false;
    std::string abort_reason;
    std::string timestamp;
    std::string rack_identity;

    [[nodiscard]] auto nx() const -> int { return plan.nx; }
    [[nodiscard]] auto ny() const -> int { return plan.ny; }
    [[nodiscard]] auto at(int col, int row) const -> double
    {
        return data[static_cast<std::size_t>(row) * static_cast<std::size_t>(plan.nx) + static_cast<std::size_t>(col)];
    }

    /// Empty frame of the plan's size.
    static auto blank(const ScanPlan& plan) -> Frame;
};

/// `col,row,x_um,y_um,current_A`, one line per acquired pixel in acquisition order.
auto export_csv(const Frame& frame) -> std::string;

/// Plain-text graymap (P2), maxval 65535, min-max normalized. The first raster
/// line is the top of the image, i.e. frame row ny-1.
auto export_pgm(const Frame& frame) -> std::string;

} // namespace autolab::scan
