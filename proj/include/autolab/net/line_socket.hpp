// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace autolab::net
{

inline constexpr std::string_view BusyNotice = "ERR 3 BUSY";
inline constexpr std::size_t MaxLineLength = 64 * 1024;

class NetError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class AddressInUse: public NetError
{
  public:
    using NetError::NetError;
};

class InstrumentBusy: public NetError
{
  public:
    using NetError::NetError;
};

/// Owning wrapper for a socket descriptor.
class Socket
{
  public:
    Socket() = default;
    explicit Socket(int fd): _fd(fd) {}
    Socket(Socket&& other) noexcept: _fd(std::exchange(other._fd, -1)) {}
    auto operator=(Socket&& other) noexcept -> Socket&;
    Socket(const Socket&) = delete;
    auto operator=(const Socket&) -> Socket& = delete;
    ~Socket();

    [[nodiscard]] auto fd() const -> int { return _fd; }
    [[nodiscard]] auto valid() const -> bool { return _fd >= 0; }
    void close();

  private:
    int _fd = -1;
};

/// TCP listener serving `\n`-framed sessions, one client at a time.
///
/// While a session is active, further connections receive `ERR 3 BUSY` and
/// are closed. A connection torn mid-line drops the partial line; the
/// handler's instrument keeps its state for the next client.
class LineServer
{
  public:
    /// Maps one received line to the response lines to send back.
    using Handler = std::function<std::vector<std::string>(std::string_view)>;

    /// Binds and starts listening. Throws AddressInUse or NetError.
    LineServer(std::string name, const std::string& bind_host, std::uint16_t port, Handler handler);
    ~LineServer();
    LineServer(const LineServer&) = delete;
    auto operator=(const LineServer&) -> LineServer& = delete;

    void stop();

    [[nodiscard]] auto port() const -> std::uint16_t { return _port; }
    [[nodiscard]] auto host() const -> const std::string& { return _host; }
    [[nodiscard]] auto sessions_served() const -> std::size_t { return _sessions_served.load(); }

  private:
    void accept_loop();
    void session_loop(Socket connection);

    std::string _name;
    std::string _host;
    std::uint16_t _port = 0;
    Handler _handler;
    Socket _listener;
    std::atomic<bool> _stopping { false };
    std::atomic<bool> _session_active { false };
    std::atomic<std::size_t> _sessions_served { 0 };
    std::thread _acceptor;
    std::thread _session;
};

/// Blocking line-oriented client.
class LineClient
{
  public:
    using Millis = std::chrono::milliseconds;

    static auto connect(const std::string& host, std::uint16_t port, Millis timeout = Millis { 2000 }) -> LineClient;

    LineClient(LineClient&&) noexcept = default;
    auto operator=(LineClient&&) noexcept -> LineClient& = default;

    void send_line(std::string_view line);
    /// Throws NetError on timeout or EOF, InstrumentBusy if the server refused the session.
    auto read_line(Millis timeout = Millis { 5000 }) -> std::string;
    auto query(std::string_view line, Millis timeout = Millis { 5000 }) -> std::string;
    void close() { _socket.close(); }
    [[nodiscard]] auto is_open() const -> bool { return _socket.valid(); }

  private:
    explicit LineClient(Socket socket): _socket(std::move(socket)) {}

    Socket _socket;
    std::string _buffer;
    bool _first_line = true;
};

} // namespace autolab::net
