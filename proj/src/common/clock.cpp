// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/clock.hpp>

#include <ctime>
#include <thread>

namespace autolab
{

WallClock::WallClock(): _start(std::chrono::steady_clock::now())
{
}

auto WallClock::now() const -> Nanos
{
    return std::chrono::duration_cast<Nanos>(std::chrono::steady_clock::now() - _start);
}

void WallClock::sleep_for(Nanos dt)
{
    if (dt.count() > 0)
        std::this_thread::sleep_for(dt);
}

void VirtualClock::sleep_for(Nanos dt)
{
    if (dt.count() > 0)
        _now.fetch_add(dt.count());
}

auto utc_timestamp() -> std::string
{
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm {};
    ::gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace autolab
