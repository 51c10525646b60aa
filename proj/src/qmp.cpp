#include "vic/qmp.hpp"

#include "vic/error.hpp"

#include <json.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <vector>

namespace vic {

namespace {

using json = nlohmann::ordered_json;

std::string error_line(const std::string& cls, const std::string& desc)
{
    json j;
    j["error"]["class"] = cls;
    j["error"]["desc"] = desc;
    return j.dump();
}

std::string ok_line()
{
    return R"({"return":{}})";
}

InputEvent parse_event(const json& ev)
{
    const std::string type = ev.at("type").get<std::string>();
    const json& data = ev.at("data");
    if (type == "btn") {
        const auto b = button_from_name(data.at("button").get<std::string>());
        if (!b) {
            throw std::invalid_argument("unknown button");
        }
        return InputEvent::mouse_button(*b, data.at("down").get<bool>(), InputOrigin::Synthetic);
    }
    if (type == "key") {
        const json& key = data.at("key");
        std::optional<std::uint16_t> code;
        if (key.at("type").get<std::string>() == "qcode") {
            code = qcode_to_code(key.at("data").get<std::string>());
        } else if (key.at("type").get<std::string>() == "number") {
            code = key.at("data").get<std::uint16_t>();
        }
        if (!code) {
            throw std::invalid_argument("unknown key");
        }
        return InputEvent::key(*code, data.at("down").get<bool>(), InputOrigin::Synthetic);
    }
    if (type == "rel") {
        const std::string axis = data.at("axis").get<std::string>();
        const auto value = data.at("value").get<std::int16_t>();
        if (axis == "x") {
            return InputEvent::mouse_move(value, 0, InputOrigin::Synthetic);
        }
        if (axis == "y") {
            return InputEvent::mouse_move(0, value, InputOrigin::Synthetic);
        }
        throw std::invalid_argument("unknown axis");
    }
    throw std::invalid_argument("unknown event type " + type);
}

bool write_all(int fd, std::string_view s)
{
    while (!s.empty()) {
        const ssize_t n = ::send(fd, s.data(), s.size(), MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) {
                continue;
            }
            return false;
        }
        s.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

struct ParsedEndpoint {
    bool is_tcp = false;
    std::string path;
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint)
{
    ParsedEndpoint ep;
    if (endpoint.rfind("tcp:", 0) == 0) {
        ep.is_tcp = true;
        std::string rest = endpoint.substr(4);
        const auto colon = rest.rfind(':');
        if (colon != std::string::npos) {
            ep.host = rest.substr(0, colon);
            rest = rest.substr(colon + 1);
        }
        try {
            const unsigned long p = std::stoul(rest);
            if (p > 65535) {
                throw std::out_of_range("port");
            }
            ep.port = static_cast<std::uint16_t>(p);
        } catch (const std::exception&) {
            fail(ErrorCode::EndpointUnavailable, "bad tcp endpoint " + endpoint);
        }
        return ep;
    }
    ep.path = endpoint.rfind("unix:", 0) == 0 ? endpoint.substr(5) : endpoint;
    if (ep.path.empty() || ep.path.size() >= sizeof(sockaddr_un::sun_path)) {
        fail(ErrorCode::EndpointUnavailable, "bad unix endpoint " + endpoint);
    }
    return ep;
}

} // namespace

std::string QmpProtocol::greeting()
{
    return R"({"QMP":{"version":{"sandbox":1}}})";
}

std::string QmpProtocol::handle(std::string_view line)
{
    json cmd;
    try {
        cmd = json::parse(line);
    } catch (const json::exception&) {
        return error_line("GenericError", "JSON parse error");
    }
    if (!cmd.is_object() || !cmd.contains("execute") || !cmd["execute"].is_string()) {
        return error_line("GenericError", "expected an object with an 'execute' member");
    }
    const std::string name = cmd["execute"].get<std::string>();
    if (name == "qmp_capabilities") {
        return ok_line();
    }
    if (name != "input-send-event") {
        return error_line("CommandNotFound", "The command " + name + " has not been found");
    }
    std::vector<InputEvent> events;
    try {
        for (const json& ev : cmd.at("arguments").at("events")) {
            events.push_back(parse_event(ev));
        }
    } catch (const std::exception& e) {
        return error_line("GenericError", std::string("invalid arguments: ") + e.what());
    }
    try {
        for (const InputEvent& ev : events) {
            channel_.inject(ev);
        }
    } catch (const SimError& e) {
        return error_line("GenericError", e.what());
    }
    return ok_line();
}

QmpServer::QmpServer(InputChannel& channel, const std::string& endpoint) : protocol_(channel), endpoint_(endpoint)
{
    const ParsedEndpoint ep = parse_endpoint(endpoint);
    if (ep.is_tcp) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) {
            fail(ErrorCode::EndpointUnavailable, std::strerror(errno));
        }
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(ep.port);
        if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1 ||
            ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            const std::string why = std::strerror(errno);
            ::close(listen_fd_);
            fail(ErrorCode::EndpointUnavailable, endpoint + ": " + why);
        }
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        endpoint_ = "tcp:" + ep.host + ":" + std::to_string(ntohs(addr.sin_port));
    } else {
        listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (listen_fd_ < 0) {
            fail(ErrorCode::EndpointUnavailable, std::strerror(errno));
        }
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        std::memcpy(addr.sun_path, ep.path.c_str(), ep.path.size());
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            const std::string why = std::strerror(errno);
            ::close(listen_fd_);
            fail(ErrorCode::EndpointUnavailable, endpoint + ": " + why);
        }
        unix_path_ = ep.path;
        endpoint_ = "unix:" + ep.path;
    }
    if (::listen(listen_fd_, 4) != 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        fail(ErrorCode::EndpointUnavailable, endpoint + ": " + why);
    }
}

QmpServer::~QmpServer()
{
    stop();
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
    }
    if (!unix_path_.empty()) {
        ::unlink(unix_path_.c_str());
    }
}

void QmpServer::serve_fd(int fd)
{
    if (!write_all(fd, QmpProtocol::greeting() + "\n")) {
        return;
    }
    std::string buffer;
    char chunk[4096];
    for (;;) {
        const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            return;
        }
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                continue;
            }
            if (!write_all(fd, protocol_.handle(line) + "\n")) {
                return;
            }
        }
    }
}

void QmpServer::serve_one()
{
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
        fail(ErrorCode::IoFailure, std::string("accept: ") + std::strerror(errno));
    }
    serve_fd(fd);
    ::close(fd);
}

void QmpServer::start()
{
    if (running_.exchange(true)) {
        return;
    }
    thread_ = std::thread([this] {
        while (running_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (errno == EINTR) {
                    continue;
                }
                return;
            }
            client_fd_ = fd;
            if (running_) {
                serve_fd(fd);
            }
            client_fd_ = -1;
            ::close(fd);
        }
    });
}

void QmpServer::stop()
{
    if (!running_.exchange(false)) {
        return;
    }
    // Unblocks accept() in the serving thread.
    ::shutdown(listen_fd_, SHUT_RDWR);
    const int client = client_fd_.load();
    if (client >= 0) {
        ::shutdown(client, SHUT_RDWR);
    }
    if (thread_.joinable()) {
        thread_.join();
    }
}

std::unique_ptr<QmpServer> qmp_serve(InputChannel& channel, const std::string& endpoint)
{
    auto server = std::make_unique<QmpServer>(channel, endpoint);
    server->start();
    return server;
}

QmpClient::QmpClient(const std::string& endpoint)
{
    const ParsedEndpoint ep = parse_endpoint(endpoint);
    int rc = -1;
    if (ep.is_tcp) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(ep.port);
        ::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr);
        rc = ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    } else {
        fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        std::memcpy(addr.sun_path, ep.path.c_str(), ep.path.size());
        rc = ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    }
    if (rc != 0) {
        const std::string why = std::strerror(errno);
        if (fd_ >= 0) {
            ::close(fd_);
        }
        fail(ErrorCode::EndpointUnavailable, endpoint + ": " + why);
    }
}

QmpClient::~QmpClient()
{
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

std::string QmpClient::read_line()
{
    char chunk[4096];
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            fail(ErrorCode::IoFailure, "connection closed");
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

void QmpClient::send_line(std::string_view line)
{
    std::string out(line);
    out.push_back('\n');
    if (!write_all(fd_, out)) {
        fail(ErrorCode::IoFailure, "send failed");
    }
}

} // namespace vic
