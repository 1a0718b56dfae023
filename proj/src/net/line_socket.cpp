// SPDX-License-Identifier: Apache-2.0
#include <autolab/net/line_socket.hpp>

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace autolab::net
{

namespace
{

    constexpr int PollSliceMs = 50;

    void set_nodelay(int fd)
    {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }

    auto send_all(int fd, std::string_view data) -> bool
    {
        while (!data.empty())
        {
            auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
            if (n < 0)
            {
                if (errno == EINTR)
                    continue;
                return false;
            }
            data.remove_prefix(static_cast<std::size_t>(n));
        }
        return true;
    }

    auto resolve(const std::string& host, std::uint16_t port, bool passive) -> addrinfo*
    {
        addrinfo hints {};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        hints.ai_flags = passive ? AI_PASSIVE : 0;
        addrinfo* result = nullptr;
        auto service = std::to_string(port);
        int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &result);
        if (rc != 0)
            throw NetError(fmt::format("cannot resolve '{}': {}", host, ::gai_strerror(rc)));
        return result;
    }

} // namespace

auto Socket::operator=(Socket&& other) noexcept -> Socket&
{
    if (this != &other)
    {
        close();
        _fd = std::exchange(other._fd, -1);
    }
    return *this;
}

Socket::~Socket()
{
    close();
}

void Socket::close()
{
    if (_fd >= 0)
    {
        ::close(_fd);
        _fd = -1;
    }
}

LineServer::LineServer(std::string name, const std::string& bind_host, std::uint16_t port, Handler handler):
    _name(std::move(name)), _host(bind_host), _handler(std::move(handler))
{
    auto* info = resolve(bind_host, port, true);
    _listener = Socket(::socket(info->ai_family, info->ai_socktype | SOCK_CLOEXEC, info->ai_protocol));
    if (!_listener.valid())
    {
        ::freeaddrinfo(info);
        throw NetError(fmt::format("{}: socket() failed: {}", _name, std::strerror(errno)));
    }
    int one = 1;
    ::setsockopt(_listener.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    int rc = ::bind(_listener.fd(), info->ai_addr, info->ai_addrlen);
    int bind_errno = errno;
    ::freeaddrinfo(info);
    if (rc != 0)
    {
        if (bind_errno == EADDRINUSE)
            throw AddressInUse(fmt::format("{}: port {} is already in use", _name, port));
        throw NetError(fmt::format("{}: cannot bind {}:{}: {}", _name, bind_host, port, std::strerror(bind_errno)));
    }
    if (::listen(_listener.fd(), 8) != 0)
        throw NetError(fmt::format("{}: listen on port {} failed: {}", _name, port, std::strerror(errno)));

    sockaddr_in bound {};
    socklen_t len = sizeof(bound);
    ::getsockname(_listener.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    _port = ntohs(bound.sin_port);

    _acceptor = std::thread(&LineServer::accept_loop, this);
    spdlog::debug("{} listening on {}:{}", _name, _host, _port);
}

LineServer::~LineServer()
{
    stop();
}

void LineServer::stop()
{
    _stopping = true;
    if (_acceptor.joinable())
        _acceptor.join();
    if (_session.joinable())
        _session.join();
    _listener.close();
}

void LineServer::accept_loop()
{
    while (!_stopping)
    {
        pollfd pfd { _listener.fd(), POLLIN, 0 };
        if (::poll(&pfd, 1, PollSliceMs) <= 0)
            continue;
        int fd = ::accept4(_listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0)
            continue;
        Socket connection(fd);
        set_nodelay(fd);

        // A client that just hung up may not have been reaped yet; give it a moment.
        for (int i = 0; i < 250 && _session_active && !_stopping; ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        if (_session_active)
        {
            spdlog::info("{}: refusing second client while busy", _name);
            send_all(fd, fmt::format("{}\n", BusyNotice));
            continue;
        }
        if (_session.joinable())
            _session.join();
        _session_active = true;
        _session = std::thread(&LineServer::session_loop, this, std::move(connection));
    }
}

void LineServer::session_loop(Socket connection)
{
    ++_sessions_served;
    std::string buffer;
    char chunk[4096];
    bool open = true;
    while (open && !_stopping)
    {
        pollfd pfd { connection.fd(), POLLIN, 0 };
        int ready = ::poll(&pfd, 1, PollSliceMs);
        if (ready == 0)
            continue;
        if (ready < 0 && errno == EINTR)
            continue;

        auto n = ready > 0 ? ::recv(connection.fd(), chunk, sizeof(chunk), 0) : -1;
        if (n <= 0)
        {
            if (n < 0 && errno == EINTR)
                continue;
            if (!buffer.empty())
                spdlog::warn("{}: connection closed mid-command, discarding {} byte(s)", _name, buffer.size());
            break;
        }
        buffer.append(chunk, static_cast<std::size_t>(n));

        std::size_t newline;
        while ((newline = buffer.find('\n')) != std::string::npos)
        {
            std::string line = buffer.substr(0, newline);
            buffer.erase(0, newline + 1);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();

            std::vector<std::string> responses;
            try
            {
                responses = _handler(line);
            }
            catch (const std::exception& error)
            {
                spdlog::error("{}: handler failed on '{}': {}", _name, line, error.what());
            }
            std::string out;
            for (const auto& response: responses)
                out += response + '\n';
            if (!out.empty() && !send_all(connection.fd(), out))
            {
                open = false;
                break;
            }
        }
        if (buffer.size() > MaxLineLength)
        {
            spdlog::warn("{}: line exceeds {} bytes, closing session", _name, MaxLineLength);
            break;
        }
    }
    connection.close();
    _session_active = false;
}

auto LineClient::connect(const std::string& host, std::uint16_t port, Millis timeout) -> LineClient
{
    auto* info = resolve(host, port, false);
    Socket socket(::socket(info->ai_family, info->ai_socktype | SOCK_CLOEXEC, info->ai_protocol));
    if (!socket.valid())
    {
        ::freeaddrinfo(info);
        throw NetError(fmt::format("socket() failed: {}", std::strerror(errno)));
    }
    int flags = ::fcntl(socket.fd(), F_GETFL, 0);
    ::fcntl(socket.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(socket.fd(), info->ai_addr, info->ai_addrlen);
    ::freeaddrinfo(info);
    if (rc != 0 && errno != EINPROGRESS)
        throw NetError(fmt::format("cannot connect to {}:{}: {}", host, port, std::strerror(errno)));
    if (rc != 0)
    {
        pollfd pfd { socket.fd(), POLLOUT, 0 };
        if (::poll(&pfd, 1, static_cast<int>(timeout.count())) <= 0)
            throw NetError(fmt::format("timed out connecting to {}:{}", host, port));
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(socket.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0)
            throw NetError(fmt::format("cannot connect to {}:{}: {}", host, port, std::strerror(err)));
    }
    ::fcntl(socket.fd(), F_SETFL, flags);
    set_nodelay(socket.fd());
    return LineClient(std::move(socket));
}

void LineClient::send_line(std::string_view line)
{
    if (!_socket.valid())
        throw NetError("connection is closed");
    std::string framed(line);
    framed += '\n';
    if (!send_all(_socket.fd(), framed))
        throw NetError(fmt::format("send failed: {}", std::strerror(errno)));
}

auto LineClient::read_line(Millis timeout) -> std::string
{
    if (!_socket.valid())
        throw NetError("connection is closed");
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true)
    {
        if (auto newline = _buffer.find('\n'); newline != std::string::npos)
        {
            std::string line = _buffer.substr(0, newline);
            _buffer.erase(0, newline + 1);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (std::exchange(_first_line, false) && line == BusyNotice)
            {
                _socket.close();
                throw InstrumentBusy("instrument is busy with another client");
            }
            return line;
        }
        auto remaining = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
            throw NetError("timed out waiting for response");
        pollfd pfd { _socket.fd(), POLLIN, 0 };
        int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (ready < 0 && errno == EINTR)
            continue;
        if (ready <= 0)
            continue;
        char chunk[4096];
        auto n = ::recv(_socket.fd(), chunk, sizeof(chunk), 0);
        if (n < 0 && errno == EINTR)
            continue;
        if (n <= 0)
        {
            _socket.close();
            throw NetError("connection closed by instrument");
        }
        _buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

auto LineClient::query(std::string_view line, Millis timeout) -> std::string
{
    send_line(line);
    return read_line(timeout);
}

} // namespace autolab::net
