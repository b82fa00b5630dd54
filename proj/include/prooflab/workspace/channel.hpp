#pragma once

#include "prooflab/common.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <vector>

namespace prooflab::workspace {

struct ChannelMessage {
    std::uint64_t seq = 0;
    json body;
};

/// Per-user ordered message logs backing the realtime channel. Each user's
/// messages carry consecutive sequence numbers starting at 1; subscribers
/// resume from the last number they saw, so a dropped connection loses
/// nothing that is still retained.
class ChannelHub {
public:
    explicit ChannelHub(std::size_t retain_per_user = 2000) : retain_(retain_per_user) {}

    std::uint64_t publish(const UserId& user, json body);

    /// Messages with seq > after; blocks up to `wait` for the first one.
    std::vector<ChannelMessage> since(const UserId& user, std::uint64_t after,
                                      std::chrono::milliseconds wait = std::chrono::milliseconds(0));

    std::uint64_t last_seq(const UserId& user) const;
    std::size_t subscribers() const;

    /// Wakes every waiter; later waits return immediately.
    void close();

private:
    struct Log {
        std::uint64_t next = 1;
        std::deque<ChannelMessage> messages;
    };

    std::size_t retain_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<UserId, Log> logs_;
    std::size_t waiting_ = 0;
    bool closed_ = false;
};

}  // namespace prooflab::workspace
