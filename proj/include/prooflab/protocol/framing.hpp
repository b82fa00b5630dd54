#pragma once

#include "prooflab/common.hpp"

#include <deque>
#include <optional>
#include <string>
#include <string_view>

namespace prooflab::protocol {

// Wire framing shared by the prover client and the mock prover.
//
// Client -> server: `command SP payload LF`, payload is single-line JSON.
// Server -> client: either a short message `TAG SP payload LF`, or a long
// message: a line holding only the decimal byte count N, then exactly N bytes
// holding `TAG SP payload` (no trailing LF). The tag alone (no SP payload)
// denotes a null payload.

enum class ReplyTag { ok, error, note, finished, failed };

std::string_view to_string(ReplyTag tag);
std::optional<ReplyTag> parse_tag(std::string_view text);

struct Reply {
    ReplyTag tag;
    json payload;

    bool operator==(const Reply&) const = default;
};

struct Command {
    std::string name;
    json payload;

    bool operator==(const Command&) const = default;
};

/// `command SP payload-json LF`.
std::string frame_encode(std::string_view command, const json& payload);

/// Encodes a server reply; messages longer than `long_threshold` bytes (or
/// containing a line feed) use the byte-count form.
std::string encode_reply(ReplyTag tag, const json& payload, std::size_t long_threshold = 1024);

/// Splits a raw message body into its leading word and JSON payload.
/// Throws Error(framing_error) on an unknown tag or unparseable payload.
Reply parse_reply(std::string_view message);
Command parse_command(std::string_view message);

/// Incremental deframer: feed arbitrary read chunks, pull complete message
/// bodies (without framing) in order.
class FrameDecoder {
public:
    void feed(std::string_view bytes);

    /// Next complete message body, if any. Throws Error(framing_error) when
    /// a count line is malformed.
    std::optional<std::string> next();

    /// Call at end of stream; throws Error(framing_error) if a partial
    /// message is pending.
    void finish() const;

    bool idle() const { return buffer_.size() == consumed_ && !pending_count_; }

private:
    void compact();

    std::string buffer_;
    std::size_t consumed_ = 0;
    std::optional<std::size_t> pending_count_;
};

/// Decodes a complete byte stream into replies (test and tooling helper).
std::deque<Reply> decode_all_replies(std::string_view stream);

}  // namespace prooflab::protocol
