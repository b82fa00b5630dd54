#pragma once

#include "prooflab/common.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prooflab::protocol {

/// Owning POSIX file descriptor.
class FileDescriptor {
public:
    FileDescriptor() = default;
    explicit FileDescriptor(int fd) : fd_(fd) {}
    ~FileDescriptor() { reset(); }
    FileDescriptor(FileDescriptor&& other) noexcept : fd_(other.release()) {}
    FileDescriptor& operator=(FileDescriptor&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = other.release();
        }
        return *this;
    }
    FileDescriptor(const FileDescriptor&) = delete;
    FileDescriptor& operator=(const FileDescriptor&) = delete;

    int get() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        const int fd = fd_;
        fd_ = -1;
        return fd;
    }
    void reset();

private:
    int fd_ = -1;
};

/// A bidirectional byte stream. read_some and write_all may be called
/// concurrently from one reader and one writer thread.
class ByteStream {
public:
    virtual ~ByteStream() = default;

    /// Returns 0 at end of stream. Throws Error(connection_lost) on failure.
    virtual std::size_t read_some(std::span<char> buffer) = 0;
    virtual void write_all(std::string_view bytes) = 0;
    /// Unblocks a pending read_some and releases the transport.
    virtual void shutdown() = 0;
};

/// Throws Error(connection_refused) when nothing listens at host:port.
std::unique_ptr<ByteStream> connect_tcp(const std::string& host, std::uint16_t port);

/// Spawns `command_line` (split on whitespace, looked up on PATH) with its
/// stdin/stdout connected to the returned stream. The child is terminated
/// when the stream is destroyed.
std::unique_ptr<ByteStream> spawn_pipe(const std::string& command_line);

/// Wraps an already-connected socket.
std::unique_ptr<ByteStream> wrap_socket(FileDescriptor fd);

/// Wraps a read and a write descriptor (e.g. stdin/stdout).
std::unique_ptr<ByteStream> wrap_fd_pair(int read_fd, int write_fd);

class TcpListener {
public:
    /// Binds host:port (port 0 picks a free port). Throws Error(bind_failure).
    TcpListener(const std::string& host, std::uint16_t port);

    std::uint16_t port() const { return port_; }
    /// Blocks for the next connection; returns an invalid descriptor after close().
    FileDescriptor accept();
    void close();

private:
    FileDescriptor fd_;
    std::uint16_t port_ = 0;
    std::atomic<bool> closed_{false};
};

}  // namespace prooflab::protocol
