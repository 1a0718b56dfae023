// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scan/scan.hpp>

#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace autolab::scan
{

namespace
{

    class ScanAbort: public std::runtime_error
    {
      public:
        using std::runtime_error::runtime_error;
    };

    void expect_no_error(net::LineClient& smu, std::string_view context)
    {
        auto reply = smu.query(":SYST:ERR?");
        if (reply.rfind("0,", 0) != 0)
            throw ScanAbort(fmt::format("SMU error during {}: {}", context, reply));
    }

    void wait_idle(net::LineClient& stage, Clock& clock, const ScanOptions& options)
    {
        const auto start = clock.now();
        const auto timeout = from_millis(options.move_timeout_ms);
        while (true)
        {
            auto status = stage.query("STATUS?");
            if (status == "IDLE")
                return;
            if (status != "MOVING")
                throw ScanAbort(fmt::format("stage error: {}", status));
            if (clock.now() - start > timeout)
                throw ScanAbort("stage move timed out");
            clock.sleep_for(from_millis(options.poll_ms));
        }
    }

} // namespace

auto parse_limits(std::string_view reply) -> std::optional<stage::TravelLimits>
{
    std::istringstream in { std::string(reply) };
    std::string tokens[4];
    for (auto& token: tokens)
        if (!(in >> token))
            return std::nullopt;
    auto x_max = parse_double(tokens[2]);
    auto y_max = parse_double(tokens[3]);
    if (!x_max || !y_max || tokens[0] != "0" || tokens[1] != "0")
        return std::nullopt;
    return stage::TravelLimits { *x_max, *y_max };
}

auto run_scan(const ScanPlan& plan, net::LineClient& smu, net::LineClient& stage, Clock& clock, const PixelSink& sink,
              const ScanOptions& options) -> Frame
{
    auto frame = Frame::blank(plan);
    frame.timestamp = utc_timestamp();

    std::vector<PlannedPixel> order;
    try
    {
        auto limits = parse_limits(stage.query("LIMITS?"));
        if (!limits)
            throw ScanAbort("stage did not report travel limits");
        order = plan_snake(plan, *limits);
        frame.rack_identity = smu.query("*IDN?");
    }
    catch (const ScanAbort& error)
    {
        frame.abort_reason = error.what();
        return frame;
    }
    catch (const net::NetError& error)
    {
        frame.abort_reason = error.what();
        return frame;
    }

    bool output_applied = false;
    try
    {
        smu.send_line("*CLS");
        smu.send_line(":SOUR:FUNC VOLT");
        smu.send_line(":SENS:FUNC \"CURR\"");
        smu.send_line(fmt::format(":SOUR:VOLT {}", format_value(plan.bias)));
        smu.send_line(":OUTP ON");
        output_applied = true;
        expect_no_error(smu, "setup");

        for (std::size_t i = 0; i < order.size(); ++i)
        {
            if (options.cancel && options.cancel->load())
                throw ScanAbort("cancelled");
            const auto& pixel = order[i];
            auto reply = stage.query(fmt::format("MOVE {} {}", format_decimal(pixel.pose.x), format_decimal(pixel.pose.y)));
            if (reply != "OK")
                throw ScanAbort(fmt::format("stage error: {}", reply));
            wait_idle(stage, clock, options);
            clock.sleep_for(from_millis(plan.settle_ms));

            auto reading = smu.query(":READ?");
            auto current = parse_double(reading);
            if (!current)
            {
                auto error = smu.query(":SYST:ERR?");
                throw ScanAbort(fmt::format("SMU read failed: {}", error));
            }
            frame.data[static_cast<std::size_t>(pixel.cell.row) * static_cast<std::size_t>(plan.nx)
                       + static_cast<std::size_t>(pixel.cell.col)] = *current;
            frame.acquired = i + 1;
            if (sink)
                sink(PixelEvent { i, pixel.cell, pixel.pose, *current });
        }
        smu.send_line(":OUTP OFF");
        output_applied = false;
        frame.complete = true;
    }
    catch (const std::exception& error)
    {
        frame.abort_reason = error.what();
        spdlog::warn("scan aborted after {} pixel(s): {}", frame.acquired, frame.abort_reason);
        if (output_applied)
        {
            try
            {
                smu.send_line(":OUTP OFF");
            }
            catch (const net::NetError&)
            {
            }
        }
    }
    return frame;
}

} // namespace autolab::scan
