// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>

namespace autolab
{

using Nanos = std::chrono::nanoseconds;

/// Time source shared by instruments and the clients driving them.
///
/// The wall clock is used for live benches. The virtual clock only moves when
/// somebody sleeps on it, which makes every timed interaction deterministic.
class Clock
{
  public:
    virtual ~Clock() = default;

    [[nodiscard]] virtual auto now() const -> Nanos = 0;
    virtual void sleep_for(Nanos dt) = 0;
    [[nodiscard]] virtual auto is_virtual() const -> bool = 0;
};

class WallClock final: public Clock
{
  public:
    WallClock();

    [[nodiscard]] auto now() const -> Nanos override;
    void sleep_for(Nanos dt) override;
    [[nodiscard]] auto is_virtual() const -> bool override { return false; }

  private:
    std::chrono::steady_clock::time_point _start;
};

class VirtualClock final: public Clock
{
  public:
    [[nodiscard]] auto now() const -> Nanos override { return Nanos { _now.load() }; }
    void sleep_for(Nanos dt) override;
    [[nodiscard]] auto is_virtual() const -> bool override { return true; }

    void reset() { _now.store(0); }

  private:
    std::atomic<Nanos::rep> _now { 0 };
};

using ClockPtr = std::shared_ptr<Clock>;

inline auto to_seconds(Nanos dt) -> double
{
    return std::chrono::duration<double>(dt).count();
}

inline auto from_seconds(double s) -> Nanos
{
    return std::chrono::duration_cast<Nanos>(std::chrono::duration<double>(s));
}

inline auto from_millis(double ms) -> Nanos
{
    return from_seconds(ms / 1000.0);
}

/// Current wall time as ISO-8601 UTC.
auto utc_timestamp() -> std::string;

} // namespace autolab
