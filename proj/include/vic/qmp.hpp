#pragma once

// Line-delimited JSON command protocol modelled on QMP. QmpProtocol is the
// transport-free core; QmpServer puts it on a local stream socket and
// QmpClient is the matching host-side client.

#include "vic/input.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

namespace vic {

class QmpProtocol {
public:
    explicit QmpProtocol(InputChannel& channel) : channel_(channel) {}

    static std::string greeting();
    /// Handles one command line and returns the response line, without the
    /// trailing newline. Never throws; malformed input yields an error object.
    std::string handle(std::string_view line);

private:
    InputChannel& channel_;
};

/// Endpoint syntax: "unix:/path", a bare path, "tcp:PORT" or
/// "tcp:HOST:PORT" (loopback only). TCP port 0 picks a free port.
class QmpServer {
public:
    QmpServer(InputChannel& channel, const std::string& endpoint);
    ~QmpServer();

    QmpServer(const QmpServer&) = delete;
    QmpServer& operator=(const QmpServer&) = delete;

    /// Accepts connections on a background thread until stop().
    void start();
    void stop();
    /// Accepts one connection and serves it to EOF on the calling thread.
    void serve_one();

    /// Resolved endpoint (the bound port for tcp:0).
    [[nodiscard]] const std::string& endpoint() const noexcept { return endpoint_; }

private:
    void serve_fd(int fd);

    QmpProtocol protocol_;
    std::string endpoint_;
    std::string unix_path_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::atomic<int> client_fd_{-1};
    std::thread thread_;
};

std::unique_ptr<QmpServer> qmp_serve(InputChannel& channel, const std::string& endpoint);

class QmpClient {
public:
    explicit QmpClient(const std::string& endpoint);
    ~QmpClient();

    QmpClient(const QmpClient&) = delete;
    QmpClient& operator=(const QmpClient&) = delete;

    /// Blocks for one line; throws IoFailure on EOF.
    std::string read_line();
    void send_line(std::string_view line);
    std::string command(std::string_view line)
    {
        send_line(line);
        return read_line();
    }

private:
    int fd_ = -1;
    std::string buffer_;
};

} // namespace vic
