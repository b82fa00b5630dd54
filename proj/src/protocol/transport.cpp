#include "prooflab/protocol/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <sstream>

extern char** environ;

namespace prooflab::protocol {

namespace {

std::string errno_text() { return std::strerror(errno); }

void ignore_sigpipe() {
    static const bool once = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

class FdStream : public ByteStream {
public:
    FdStream(int read_fd, int write_fd, bool is_socket) : read_fd_(read_fd), write_fd_(write_fd), socket_(is_socket) {}

    std::size_t read_some(std::span<char> buffer) override {
        for (;;) {
            const ssize_t n = ::read(read_fd_, buffer.data(), buffer.size());
            if (n >= 0) return static_cast<std::size_t>(n);
            if (errno == EINTR) continue;
            if (closed_) return 0;
            throw Error(ErrorCode::connection_lost, "read failed: " + errno_text());
        }
    }

    void write_all(std::string_view bytes) override {
        while (!bytes.empty()) {
            const ssize_t n = socket_ ? ::send(write_fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL)
                                      : ::write(write_fd_, bytes.data(), bytes.size());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::connection_lost, "write failed: " + errno_text());
            }
            bytes.remove_prefix(static_cast<std::size_t>(n));
        }
    }

    void shutdown() override {
        closed_ = true;
        if (socket_) ::shutdown(read_fd_, SHUT_RDWR);
    }

protected:
    int read_fd_;
    int write_fd_;
    bool socket_;
    std::atomic<bool> closed_{false};
};

class SocketStream : public FdStream {
public:
    explicit SocketStream(FileDescriptor fd) : FdStream(fd.get(), fd.get(), true), fd_(std::move(fd)) {}

private:
    FileDescriptor fd_;
};

class ChildProcessStream : public FdStream {
public:
    ChildProcessStream(pid_t pid, FileDescriptor from_child, FileDescriptor to_child)
        : FdStream(from_child.get(), to_child.get(), false),
          pid_(pid),
          from_child_(std::move(from_child)),
          to_child_(std::move(to_child)) {}

    ~ChildProcessStream() override {
        to_child_.reset();
        ::kill(pid_, SIGTERM);
        int status = 0;
        ::waitpid(pid_, &status, 0);
    }

    void shutdown() override {
        FdStream::shutdown();
        // Closing the child's stdin lets it exit; the read side then sees EOF.
        ::kill(pid_, SIGTERM);
    }

private:
    pid_t pid_;
    FileDescriptor from_child_;
    FileDescriptor to_child_;
};

}  // namespace

void FileDescriptor::reset() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

std::unique_ptr<ByteStream> connect_tcp(const std::string& host, std::uint16_t port) {
    ignore_sigpipe();
    if (host.empty()) throw Error(ErrorCode::invalid_argument, "empty prover host");
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
        throw Error(ErrorCode::connection_refused, "cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no addresses";
    for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
        FileDescriptor fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (!fd.valid()) {
            last_error = errno_text();
            continue;
        }
        if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
            ::freeaddrinfo(result);
            const int one = 1;
            ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return std::make_unique<SocketStream>(std::move(fd));
        }
        last_error = errno_text();
    }
    ::freeaddrinfo(result);
    throw Error(ErrorCode::connection_refused, "cannot connect to " + host + ":" + service + ": " + last_error);
}

std::unique_ptr<ByteStream> spawn_pipe(const std::string& command_line) {
    ignore_sigpipe();
    std::vector<std::string> args;
    std::istringstream in(command_line);
    for (std::string word; in >> word;) args.push_back(word);
    if (args.empty()) throw Error(ErrorCode::invalid_argument, "empty prover command line");

    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorCode::io_error, "pipe: " + errno_text());
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw Error(ErrorCode::io_error, "pipe: " + errno_text());
    }
    FileDescriptor child_in(to_child[0]), parent_out(to_child[1]);
    FileDescriptor parent_in(from_child[0]), child_out(from_child[1]);

    posix_spawn_file_actions_t actions;
    ::posix_spawn_file_actions_init(&actions);
    ::posix_spawn_file_actions_adddup2(&actions, child_in.get(), STDIN_FILENO);
    ::posix_spawn_file_actions_adddup2(&actions, child_out.get(), STDOUT_FILENO);

    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    pid_t pid = 0;
    const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    ::posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
        throw Error(ErrorCode::connection_refused, "cannot start '" + args[0] + "': " + std::strerror(rc));
    }
    return std::make_unique<ChildProcessStream>(pid, std::move(parent_in), std::move(parent_out));
}

std::unique_ptr<ByteStream> wrap_socket(FileDescriptor fd) {
    ignore_sigpipe();
    return std::make_unique<SocketStream>(std::move(fd));
}

std::unique_ptr<ByteStream> wrap_fd_pair(int read_fd, int write_fd) {
    ignore_sigpipe();
    return std::make_unique<FdStream>(read_fd, write_fd, false);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    ignore_sigpipe();
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* result = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &result);
        rc != 0) {
        throw Error(ErrorCode::bind_failure, "cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no addresses";
    for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
        FileDescriptor fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (!fd.valid()) continue;
        const int one = 1;
        ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(fd.get(), 64) != 0) {
            last_error = errno_text();
            continue;
        }
        sockaddr_storage bound{};
        socklen_t len = sizeof bound;
        ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                            : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
        fd_ = std::move(fd);
        break;
    }
    ::freeaddrinfo(result);
    if (!fd_.valid()) throw Error(ErrorCode::bind_failure, "cannot bind " + host + ":" + service + ": " + last_error);
}

FileDescriptor TcpListener::accept() {
    for (;;) {
        if (closed_) return {};
        const int fd = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
            const int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return FileDescriptor(fd);
        }
        if (!closed_ && (errno == EINTR || errno == ECONNABORTED)) continue;
        return {};
    }
}

void TcpListener::close() {
    if (!closed_.exchange(true)) ::shutdown(fd_.get(), SHUT_RDWR);
}

}  // namespace prooflab::protocol
