// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scan/frame.hpp>
#include <autolab/scan/kernels.hpp>


#include <fmt/format.h>

namespace autolab::scan
{

auto Frame::blank(const ScanPlan& plan) -> Frame
{
    Frame frame;
    frame.plan = plan;
    frame.data.assign(plan.pixel_count(), 0.0);
    return frame;
}

auto export_csv(const Frame& frame) -> std::string
{
    std::string out = "col,row,x_um,y_um,current_A\n";
    for (std::size_t i = 0; i < frame.acquired; ++i)
    {
        auto cell = snake_cell(i, frame.plan.nx);
        auto pose = pose_of(frame.plan, cell);
        out += fmt::format("{},{},{},{},{}\n", cell.col, cell.row, format_decimal(pose.x), format_decimal(pose.y),
                           format_sci6(frame.at(cell.col, cell.row)));
    }
    return out;
}

auto export_pgm(const Frame& frame) -> std::string
{
    auto levels = kernels::normalize_u16(frame.data);
    std::string out = fmt::format("P2\n{} {}\n65535\n", frame.nx(), frame.ny());
    for (int row = frame.ny() - 1; row >= 0; --row)
    {
        for (int col = 0; col < frame.nx(); ++col)
        {
            if (col > 0)
                out += ' ';
            out += std::to_string(levels[static_cast<std::size_t>(row) * static_cast<std::size_t>(frame.nx())
                                         + static_cast<std::size_t>(col)]);
        }
        out += '\n';
    }
    return out;
}

} // namespace autolab::scan
