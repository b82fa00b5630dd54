#include "prooflab/mock/mock_prover.hpp"

#include "prooflab/isar/tokenizer.hpp"
#include "prooflab/protocol/framing.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <regex>
#include <sstream>

namespace prooflab::mock {

using protocol::ProverMessage;
using protocol::ReplyTag;

namespace {

constexpr std::string_view kDirectivePrefix = "(*MOCK:";

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    for (;;) {
        const auto lf = text.find('\n', start);
        if (lf == std::string_view::npos) {
            lines.push_back(text.substr(start));
            return lines;
        }
        lines.push_back(text.substr(start, lf - start));
        start = lf + 1;
    }
}

SourceRange whole_line(const std::vector<std::string_view>& lines, int line) {
    int end_line = line;
    int end_column = 0;
    isar::advance_position(lines[static_cast<std::size_t>(line - 1)], end_line, end_column);
    return SourceRange{line, 0, line, end_column};
}

std::string unescape(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) ++i;
        out.push_back(s[i]);
    }
    return out;
}

/// Parses one directive comment; nullopt if malformed.
std::optional<MockDirective> parse_directive(const std::string& comment, std::size_t line_count) {
    static const std::regex re(R"re(^\(\*MOCK:([a-z]+)[ \t]+([^ \t"*]+)(?:[ \t]+"((?:[^"\\]|\\.)*)")?[ \t]*\*\)$)re");
    std::smatch m;
    if (!std::regex_match(comment, m, re)) return std::nullopt;
    MockDirective d;
    const std::string kind = m[1].str();
    const std::string arg = m[2].str();
    d.text = unescape(m[3].str());
    if (kind == "delay") {
        d.kind = DirectiveKind::delay;
        try {
            std::size_t used = 0;
            const double seconds = std::stod(arg, &used);
            if (used != arg.size() || seconds < 0 || seconds > 3600) return std::nullopt;
            d.delay = std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0 + 0.5));
        } catch (const std::exception&) {
            return std::nullopt;
        }
        return d;
    }
    if (kind != "error" && kind != "warning") return std::nullopt;
    d.kind = kind == "error" ? DirectiveKind::error : DirectiveKind::warning;
    if (arg.empty() || !std::all_of(arg.begin(), arg.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        arg.size() > 9) {
        return std::nullopt;
    }
    d.line = std::stoi(arg);
    if (d.line < 1 || static_cast<std::size_t>(d.line) > line_count || d.text.empty()) return std::nullopt;
    return d;
}

struct Positioned {
    SourceRange at;
    int order;
    ProverMessage message;
};

}  // namespace

Evaluation evaluate(std::string_view text, const std::string& theory_name) {
    Evaluation result;
    const auto lines = split_lines(text);
    std::vector<Positioned> found;
    int order = 0;
    for (const auto& tok : isar::tokenize(text)) {
        if (tok.cls == isar::TokenClass::comment && std::string_view(tok.text).starts_with(kDirectivePrefix)) {
            const auto directive = parse_directive(tok.text, lines.size());
            if (!directive) {
                found.push_back({tok.range, order++,
                                 ProverMessage{Severity::info, "ignored malformed mock directive: " + tok.text,
                                               theory_name, tok.range}});
                continue;
            }
            if (directive->kind == DirectiveKind::delay) {
                result.delay += directive->delay;
                continue;
            }
            const SourceRange at = whole_line(lines, directive->line);
            const Severity kind = directive->kind == DirectiveKind::error ? Severity::error : Severity::warning;
            found.push_back({at, order++, ProverMessage{kind, directive->text, theory_name, at}});
        } else if (tok.is(isar::TokenClass::command_keyword, "sorry")) {
            found.push_back({tok.range, order++, ProverMessage{Severity::error, "unfinished proof", theory_name, tok.range}});
        }
    }
    std::stable_sort(found.begin(), found.end(), [](const Positioned& a, const Positioned& b) {
        return a.at.line != b.at.line ? a.at.line < b.at.line : a.order < b.order;
    });
    for (auto& p : found) result.messages.push_back(std::move(p.message));
    return result;
}

// ============================================================================
// Server
// ============================================================================

class MockProver::Connection {
public:
    Connection(MockProver& owner, std::unique_ptr<protocol::ByteStream> stream)
        : owner_(owner), stream_(std::move(stream)) {}

    ~Connection() {
        for (auto& t : tasks_) {
            if (t.joinable()) t.join();
        }
    }

    void run() {
        std::array<char, 65536> buffer{};
        std::string pending;
        protocol::FrameDecoder decoder;
        bool authenticated = false;
        try {
            for (;;) {
                const std::size_t n = stream_->read_some(buffer);
                if (n == 0) return;
                if (!authenticated) {
                    pending.append(buffer.data(), n);
                    const auto lf = pending.find('\n');
                    if (lf == std::string::npos) continue;
                    std::string password = pending.substr(0, lf);
                    if (!password.empty() && password.back() == '\r') password.pop_back();
                    if (password != owner_.config_.password) {
                        {
                            std::lock_guard lock(owner_.mutex_);
                            ++owner_.stats_.auth_failures;
                        }
                        send(ReplyTag::error, "authentication failed");
                        return;
                    }
                    authenticated = true;
                    send(ReplyTag::ok, {{"server", "prooflab-mock-prover"}, {"version", "1"}});
                    decoder.feed(std::string_view(pending).substr(lf + 1));
                    pending.clear();
                } else {
                    decoder.feed(std::string_view(buffer.data(), n));
                }
                while (auto message = decoder.next()) {
                    if (message->empty()) continue;
                    handle(protocol::parse_command(*message));
                }
            }
        } catch (const Error& e) {
            if (e.code() == ErrorCode::framing_error) {
                try {
                    send(ReplyTag::error, {{"kind", "framing_error"}, {"message", e.what()}});
                } catch (const Error&) {
                }
            }
        }
    }

private:
    void send(ReplyTag tag, const json& payload) {
        const std::string bytes = protocol::encode_reply(tag, payload, owner_.config_.long_reply_threshold);
        std::lock_guard lock(write_mutex_);
        stream_->write_all(bytes);
    }

    void send_quietly(ReplyTag tag, const json& payload) {
        try {
            send(tag, payload);
        } catch (const Error&) {
            // Client went away; the verdict has nowhere to go.
        }
    }

    static std::string new_id() {
        const std::string h = random_hex(16);
        return h.substr(0, 8) + "-" + h.substr(8, 4) + "-" + h.substr(12, 4) + "-" + h.substr(16, 4) + "-" + h.substr(20);
    }

    void handle(const protocol::Command& cmd) {
        const json& p = cmd.payload;
        if (cmd.name == "session_start") {
            session_start(p);
        } else if (cmd.name == "use_theories") {
            use_theories(p);
        } else if (cmd.name == "purge_theories") {
            purge_theories(p);
        } else if (cmd.name == "session_stop") {
            session_stop(p);
        } else if (cmd.name == "echo") {
            send(ReplyTag::ok, p);
        } else {
            send(ReplyTag::error, {{"kind", "unknown_command"}, {"message", "unknown command '" + cmd.name + "'"}});
        }
    }

    std::optional<std::string> live_session(const json& p) {
        if (!p.is_object() || !p.contains("session_id") || !p["session_id"].is_string()) return std::nullopt;
        const std::string id = p["session_id"].get<std::string>();
        std::lock_guard lock(owner_.mutex_);
        const auto it = owner_.stats_.sessions.find(id);
        if (it == owner_.stats_.sessions.end() || it->second.stopped) return std::nullopt;
        return id;
    }

    void reject_unknown_session(const json& p) {
        const std::string id = p.is_object() ? p.value("session_id", std::string()) : std::string();
        send(ReplyTag::error, {{"kind", "unknown_session"}, {"message", "unknown session '" + id + "'"}});
    }

    void session_start(const json& p) {
        static const std::set<std::string> kKnownImages = {"Pure", "HOL", "HOL-Library", "HOL-Analysis", "Main"};
        const std::string task = new_id();
        const std::string parent = p.is_object() ? p.value("session", std::string("HOL")) : std::string("HOL");
        double delay = 15.0;
        if (p.is_object()) {
            for (const auto& opt : p.value("options", json::array())) {
                const std::string s = opt.is_string() ? opt.get<std::string>() : std::string();
                constexpr std::string_view key = "headless_consolidate_delay=";
                if (s.starts_with(key)) {
                    try {
                        delay = std::stod(s.substr(key.size()));
                    } catch (const std::exception&) {
                    }
                }
            }
        }
        send(ReplyTag::ok, {{"task", task}});
        if (!kKnownImages.contains(parent)) {
            send(ReplyTag::failed, {{"task", task}, {"ok", false},
                                    {"message", "session build failure: unknown parent session '" + parent + "'"}});
            return;
        }
        const std::string id = new_id();
        {
            std::lock_guard lock(owner_.mutex_);
            owner_.stats_.sessions[id] = SessionRecord{parent, delay, {}, 0, false};
        }
        send(ReplyTag::finished, {{"task", task}, {"ok", true}, {"session_id", id}, {"session", parent}});
    }

    void session_stop(const json& p) {
        const auto id = live_session(p);
        if (!id) return reject_unknown_session(p);
        const std::string task = new_id();
        send(ReplyTag::ok, {{"task", task}});
        {
            std::lock_guard lock(owner_.mutex_);
            owner_.stats_.sessions[*id].stopped = true;
        }
        send(ReplyTag::finished, {{"task", task}, {"ok", true}, {"return_code", 0}});
    }

    void purge_theories(const json& p) {
        if (!live_session(p)) return reject_unknown_session(p);
        send(ReplyTag::ok, {{"purged", p.value("theories", json::array())}, {"retained", json::array()}});
    }

    void use_theories(const json& p) {
        const auto id = live_session(p);
        if (!id) return reject_unknown_session(p);
        std::vector<std::string> theories;
        for (const auto& t : p.value("theories", json::array())) {
            if (t.is_string()) theories.push_back(t.get<std::string>());
        }
        const std::filesystem::path master_dir = p.value("master_dir", std::string("."));
        double consolidate = 0;
        {
            std::lock_guard lock(owner_.mutex_);
            ++owner_.stats_.use_theories_calls;
            owner_.stats_.theories_checked += theories.size();
            auto& session = owner_.stats_.sessions[*id];
            session.master_dirs.insert(master_dir.string());
            session.theories_checked += theories.size();
            consolidate = session.consolidate_delay;
        }
        const std::string task = new_id();
        send(ReplyTag::ok, {{"task", task}});
        const auto acked = std::chrono::steady_clock::now();

        auto extra = owner_.config_.default_latency;
        if (owner_.config_.honor_consolidate_delay) {
            extra += std::chrono::milliseconds(static_cast<long long>(consolidate * 1000));
        }
        tasks_.emplace_back([this, task, theories, master_dir, acked, extra] {
            run_task(task, theories, master_dir, acked, extra);
        });
    }

    void run_task(const std::string& task, const std::vector<std::string>& theories,
                  const std::filesystem::path& master_dir, std::chrono::steady_clock::time_point acked,
                  std::chrono::milliseconds latency) {
        json nodes = json::array();
        bool ok = true;
        for (const auto& theory : theories) {
            std::filesystem::path file = master_dir / theory;
            if (file.extension() != ".thy") file += ".thy";
            const std::string name = file.stem().string();
            send_quietly(ReplyTag::note, {{"task", task}, {"kind", "progress"}, {"message", "theory " + name}});
            std::ifstream in(file, std::ios::binary);
            if (!in) {
                send_quietly(ReplyTag::failed, {{"task", task}, {"ok", false},
                                                {"message", "cannot read theory file " + file.string()}});
                return;
            }
            std::ostringstream content;
            content << in.rdbuf();
            Evaluation ev = evaluate(content.str(), name);
            latency += ev.delay;
            json messages = json::array();
            bool node_ok = true;
            for (const auto& m : ev.messages) {
                messages.push_back(m);
                node_ok = node_ok && m.kind != Severity::error;
            }
            ok = ok && node_ok;
            nodes.push_back({{"node_name", file.string()},
                             {"theory_name", name},
                             {"status", {{"ok", node_ok}, {"consolidated", true}}},
                             {"messages", std::move(messages)}});
        }
        std::this_thread::sleep_until(acked + latency);
        send_quietly(ReplyTag::finished, {{"task", task}, {"ok", ok}, {"errors", json::array()}, {"nodes", std::move(nodes)}});
    }

    MockProver& owner_;
    std::unique_ptr<protocol::ByteStream> stream_;
    std::mutex write_mutex_;
    std::vector<std::thread> tasks_;
};

MockProver::MockProver(MockConfig config) : config_(std::move(config)) {}

MockProver::~MockProver() { stop(); }

void MockProver::start() {
    listener_ = std::make_unique<protocol::TcpListener>(config_.host, config_.port);
    running_ = true;
    accept_thread_ = std::thread([this] {
        while (running_) {
            protocol::FileDescriptor fd = listener_->accept();
            if (!fd.valid()) break;
            auto stream = protocol::wrap_socket(std::move(fd));
            std::lock_guard lock(mutex_);
            if (!running_) break;
            connection_threads_.emplace_back([this, s = std::move(stream)]() mutable { serve(std::move(s)); });
        }
    });
}

void MockProver::stop() {
    if (!running_.exchange(false)) return;
    if (listener_) listener_->close();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(mutex_);
        for (auto* s : live_streams_) s->shutdown();
        threads.swap(connection_threads_);
    }
    for (auto& t : threads) {
        if (t.joinable()) t.join();
    }
}

std::uint16_t MockProver::port() const { return listener_ ? listener_->port() : 0; }

void MockProver::serve(std::unique_ptr<protocol::ByteStream> stream) {
    protocol::ByteStream* raw = stream.get();
    {
        std::lock_guard lock(mutex_);
        ++stats_.connections;
        live_streams_.push_back(raw);
    }
    {
        Connection conn(*this, std::move(stream));
        conn.run();
        std::lock_guard lock(mutex_);
        std::erase(live_streams_, raw);
    }
}

MockStats MockProver::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

void MockProver::reset_counters() {
    std::lock_guard lock(mutex_);
    stats_.use_theories_calls = 0;
    stats_.theories_checked = 0;
    for (auto& [id, s] : stats_.sessions) s.theories_checked = 0;
}

}  // namespace prooflab::mock
