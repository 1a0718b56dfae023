// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace autolab::service
{

enum class EventKind
{
    IterationStarted,
    CodeProposed,
    AwaitingApproval,
    Executed,
    Feedback,
    PixelMeasured,
    ScanFinished,
    SessionTerminal
};

auto event_kind_name(EventKind kind) -> std::string_view;
auto parse_event_kind(std::string_view name) -> std::optional<EventKind>;
auto is_terminal(EventKind kind) -> bool;

struct Event
{
    std::uint64_t seq = 0;
    std::string stream;
    EventKind kind = EventKind::PixelMeasured;
    nlohmann::json payload;

    /// One NDJSON line without the trailing newline.
    [[nodiscard]] auto to_line() const -> std::string;
};

/// Ordered event log of one session or scan.
///
/// Sequence numbers start at 1 and increase by one per publish. When more than
/// `capacity` events are retained, the oldest PixelMeasured events are dropped
/// first; other kinds are never dropped. A terminal event closes the stream.
class EventStream
{
  public:
    EventStream(std::string id, std::size_t capacity);

    auto publish(EventKind kind, nlohmann::json payload) -> std::uint64_t;

    struct Batch
    {
        std::vector<Event> events;
        bool closed = false;
    };

    /// Retained events with seq > `after`; waits up to `timeout` if there are none.
    auto wait_after(std::uint64_t after, std::chrono::milliseconds timeout) const -> Batch;

    [[nodiscard]] auto id() const -> const std::string& { return _id; }
    [[nodiscard]] auto last_seq() const -> std::uint64_t;
    [[nodiscard]] auto closed() const -> bool;
    [[nodiscard]] auto dropped() const -> std::size_t;

  private:
    std::string _id;
    std::size_t _capacity;
    mutable std::mutex _mutex;
    mutable std::condition_variable _cv;
    std::deque<Event> _events;
    std::uint64_t _next_seq = 1;
    std::size_t _dropped = 0;
    bool _closed = false;
};

class EventBus
{
  public:
    explicit EventBus(std::size_t capacity = 4096): _capacity(capacity) {}

    auto create(const std::string& id) -> std::shared_ptr<EventStream>;
    auto find(const std::string& id) const -> std::shared_ptr<EventStream>;

  private:
    std::size_t _capacity;
    mutable std::mutex _mutex;
    std::map<std::string, std::shared_ptr<EventStream>> _streams;
};

} // namespace autolab::service
