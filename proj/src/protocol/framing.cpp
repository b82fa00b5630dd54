#include "prooflab/protocol/framing.hpp"

#include <algorithm>
#include <cctype>

namespace prooflab::protocol {

namespace {

constexpr std::size_t kMaxMessageBytes = std::size_t{256} << 20;

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::pair<std::string_view, std::string_view> split_word(std::string_view message) {
    const auto sp = message.find(' ');
    if (sp == std::string_view::npos) return {message, {}};
    return {message.substr(0, sp), message.substr(sp + 1)};
}

json parse_payload(std::string_view text) {
    if (text.empty()) return nullptr;
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::framing_error, std::string("malformed message payload: ") + e.what());
    }
}

}  // namespace

std::string_view to_string(ReplyTag tag) {
    switch (tag) {
    case ReplyTag::ok: return "OK";
    case ReplyTag::error: return "ERROR";
    case ReplyTag::note: return "NOTE";
    case ReplyTag::finished: return "FINISHED";
    case ReplyTag::failed: return "FAILED";
    }
    return "ERROR";
}

std::optional<ReplyTag> parse_tag(std::string_view text) {
    if (text == "OK") return ReplyTag::ok;
    if (text == "ERROR") return ReplyTag::error;
    if (text == "NOTE") return ReplyTag::note;
    if (text == "FINISHED") return ReplyTag::finished;
    if (text == "FAILED") return ReplyTag::failed;
    return std::nullopt;
}

std::string frame_encode(std::string_view command, const json& payload) {
    std::string out(command);
    out.push_back(' ');
    out += payload.dump();
    out.push_back('\n');
    return out;
}

std::string encode_reply(ReplyTag tag, const json& payload, std::size_t long_threshold) {
    std::string body(to_string(tag));
    if (!payload.is_null()) {
        body.push_back(' ');
        body += payload.dump();
    }
    if (body.size() > long_threshold || body.find('\n') != std::string::npos) {
        return std::to_string(body.size()) + "\n" + body;
    }
    body.push_back('\n');
    return body;
}

Reply parse_reply(std::string_view message) {
    const auto [word, rest] = split_word(message);
    const auto tag = parse_tag(word);
    if (!tag) {
        throw Error(ErrorCode::framing_error, "unknown reply tag '" + std::string(word.substr(0, 32)) + "'");
    }
    return Reply{*tag, parse_payload(rest)};
}

Command parse_command(std::string_view message) {
    const auto [word, rest] = split_word(message);
    if (word.empty()) throw Error(ErrorCode::framing_error, "empty command");
    return Command{std::string(word), parse_payload(rest)};
}

void FrameDecoder::feed(std::string_view bytes) {
    compact();
    buffer_.append(bytes);
}

std::optional<std::string> FrameDecoder::next() {
    const std::string_view avail = std::string_view(buffer_).substr(consumed_);
    if (pending_count_) {
        if (avail.size() < *pending_count_) return std::nullopt;
        std::string body(avail.substr(0, *pending_count_));
        consumed_ += *pending_count_;
        pending_count_.reset();
        return body;
    }
    const auto lf = avail.find('\n');
    if (lf == std::string_view::npos) return std::nullopt;
    std::string_view line = avail.substr(0, lf);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    consumed_ += lf + 1;
    if (all_digits(line)) {
        if (line.size() > 12) throw Error(ErrorCode::framing_error, "message length prefix too large");
        const std::size_t count = std::stoull(std::string(line));
        if (count > kMaxMessageBytes) throw Error(ErrorCode::framing_error, "message length prefix too large");
        pending_count_ = count;
        return next();
    }
    return std::string(line);
}

void FrameDecoder::finish() const {
    if (pending_count_) {
        throw Error(ErrorCode::framing_error,
                    "stream ended inside a " + std::to_string(*pending_count_) + "-byte message (" +
                        std::to_string(buffer_.size() - consumed_) + " bytes received)");
    }
    if (buffer_.size() != consumed_) {
        throw Error(ErrorCode::framing_error, "stream ended inside an unterminated line");
    }
}

void FrameDecoder::compact() {
    if (consumed_ > 0 && (consumed_ >= 65536 || consumed_ == buffer_.size())) {
        buffer_.erase(0, consumed_);
        consumed_ = 0;
    }
}

std::deque<Reply> decode_all_replies(std::string_view stream) {
    FrameDecoder decoder;
    decoder.feed(stream);
    std::deque<Reply> out;
    while (auto msg = decoder.next()) out.push_back(parse_reply(*msg));
    decoder.finish();
    return out;
}

}  // namespace prooflab::protocol
