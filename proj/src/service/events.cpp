// SPDX-License-Identifier: Apache-2.0
#include <autolab/service/events.hpp>

#include <algorithm>

namespace autolab::service
{

namespace
{

    constexpr EventKind AllKinds[] = {
        EventKind::IterationStarted, EventKind::CodeProposed, EventKind::AwaitingApproval, EventKind::Executed,
        EventKind::Feedback,         EventKind::PixelMeasured, EventKind::ScanFinished,   EventKind::SessionTerminal,
    };

} // namespace

auto event_kind_name(EventKind kind) -> std::string_view
{
    switch (kind)
    {
    case EventKind::IterationStarted: return "IterationStarted";
    case EventKind::CodeProposed: return "CodeProposed";
    case EventKind::AwaitingApproval: return "AwaitingApproval";
    case EventKind::Executed: return "Executed";
    case EventKind::Feedback: return "Feedback";
    case EventKind::PixelMeasured: return "PixelMeasured";
    case EventKind::ScanFinished: return "ScanFinished";
    case EventKind::SessionTerminal: return "SessionTerminal";
    }
    return "?";
}

auto parse_event_kind(std::string_view name) -> std::optional<EventKind>
{
    for (auto kind: AllKinds)
        if (event_kind_name(kind) == name)
            return kind;
    return std::nullopt;
}

auto is_terminal(EventKind kind) -> bool
{
    return kind == EventKind::ScanFinished || kind == EventKind::SessionTerminal;
}

auto Event::to_line() const -> std::string
{
    nlohmann::ordered_json out;
    out["seq"] = seq;
    out["id"] = stream;
    out["kind"] = event_kind_name(kind);
    out["payload"] = payload;
    return out.dump();
}

EventStream::EventStream(std::string id, std::size_t capacity): _id(std::move(id)), _capacity(std::max<std::size_t>(capacity, 1))
{
}

auto EventStream::publish(EventKind kind, nlohmann::json payload) -> std::uint64_t
{
    std::uint64_t seq;
    {
        std::lock_guard lock(_mutex);
        seq = _next_seq++;
        _events.push_back(Event { seq, _id, kind, std::move(payload) });
        if (_events.size() > _capacity)
        {
            auto victim = std::find_if(_events.begin(), _events.end(),
                                       [](const Event& e) { return e.kind == EventKind::PixelMeasured; });
            if (victim != _events.end())
            {
                _events.erase(victim);
                ++_dropped;
            }
        }
        if (is_terminal(kind))
            _closed = true;
    }
    _cv.notify_all();
    return seq;
}

auto EventStream::wait_after(std::uint64_t after, std::chrono::milliseconds timeout) const -> Batch
{
    std::unique_lock lock(_mutex);
    auto pending = [&] { return _closed || (!_events.empty() && _events.back().seq > after); };
    _cv.wait_for(lock, timeout, pending);
    Batch batch;
    for (const auto& event: _events)
        if (event.seq > after)
            batch.events.push_back(event);
    batch.closed = _closed;
    return batch;
}

auto EventStream::last_seq() const -> std::uint64_t
{
    std::lock_guard lock(_mutex);
    return _next_seq - 1;
}

auto EventStream::closed() const -> bool
{
    std::lock_guard lock(_mutex);
    return _closed;
}

auto EventStream::dropped() const -> std::size_t
{
    std::lock_guard lock(_mutex);
    return _dropped;
}

auto EventBus::create(const std::string& id) -> std::shared_ptr<EventStream>
{
    std::lock_guard lock(_mutex);
    auto stream = std::make_shared<EventStream>(id, _capacity);
    _streams[id] = stream;
    return stream;
}

auto EventBus::find(const std::string& id) const -> std::shared_ptr<EventStream>
{
    std::lock_guard lock(_mutex);
    auto it = _streams.find(id);
    return it == _streams.end() ? nullptr : it->second;
}

} // namespace autolab::service
