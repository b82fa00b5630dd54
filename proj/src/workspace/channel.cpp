#include "prooflab/workspace/channel.hpp"

namespace prooflab::workspace {

std::uint64_t ChannelHub::publish(const UserId& user, json body) {
    std::uint64_t seq = 0;
    {
        std::lock_guard lock(mutex_);
        auto& log = logs_[user];
        seq = log.next++;
        log.messages.push_back({seq, std::move(body)});
        while (log.messages.size() > retain_) log.messages.pop_front();
    }
    cv_.notify_all();
    return seq;
}

std::vector<ChannelMessage> ChannelHub::since(const UserId& user, std::uint64_t after, std::chrono::milliseconds wait) {
    std::unique_lock lock(mutex_);
    auto available = [&] {
        const auto it = logs_.find(user);
        return closed_ || (it != logs_.end() && it->second.next > after + 1);
    };
    if (!available() && wait.count() > 0) {
        ++waiting_;
        cv_.wait_for(lock, wait, available);
        --waiting_;
    }
    std::vector<ChannelMessage> out;
    if (const auto it = logs_.find(user); it != logs_.end()) {
        for (const auto& m : it->second.messages) {
            if (m.seq > after) out.push_back(m);
        }
    }
    return out;
}

std::uint64_t ChannelHub::last_seq(const UserId& user) const {
    std::lock_guard lock(mutex_);
    const auto it = logs_.find(user);
    return it == logs_.end() ? 0 : it->second.next - 1;
}

std::size_t ChannelHub::subscribers() const {
    std::lock_guard lock(mutex_);
    return waiting_;
}

void ChannelHub::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    cv_.notify_all();
}

}  // namespace prooflab::workspace
