#include "prooflab/common.hpp"

#include <sodium.h>

#include <array>
#include <cstdio>
#include <ctime>

namespace prooflab {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::connection_refused: return "connection-refused";
    case ErrorCode::auth_failed: return "auth-failed";
    case ErrorCode::protocol_violation: return "protocol-violation";
    case ErrorCode::framing_error: return "framing-error";
    case ErrorCode::prover_error: return "prover-error";
    case ErrorCode::unknown_session: return "unknown-session";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::connection_lost: return "connection-lost";
    case ErrorCode::bind_failure: return "bind-failure";
    case ErrorCode::invalid_pattern: return "invalid-pattern";
    case ErrorCode::bad_credentials: return "bad-credentials";
    case ErrorCode::quota_exceeded: return "quota-exceeded";
    case ErrorCode::name_invalid: return "name-invalid";
    case ErrorCode::permission_denied: return "permission-denied";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::storage_full: return "storage-full";
    case ErrorCode::storage_error: return "storage-error";
    case ErrorCode::prover_unavailable: return "prover-unavailable";
    }
    return "unknown";
}

std::string_view to_string(Role r) {
    switch (r) {
    case Role::student: return "student";
    case Role::instructor: return "instructor";
    case Role::guest: return "guest";
    }
    return "guest";
}

Role parse_role(std::string_view text) {
    if (text == "student") return Role::student;
    if (text == "instructor") return Role::instructor;
    if (text == "guest") return Role::guest;
    throw Error(ErrorCode::invalid_argument, "unknown role: " + std::string(text));
}

Timestamp now_ms() {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(Clock::now());
}

std::int64_t to_epoch_ms(Timestamp t) { return t.time_since_epoch().count(); }

Timestamp from_epoch_ms(std::int64_t ms) { return Timestamp(std::chrono::milliseconds(ms)); }

std::string format_timestamp(Timestamp t) {
    const std::int64_t ms = to_epoch_ms(t);
    std::int64_t secs = ms / 1000;
    std::int64_t frac = ms % 1000;
    if (frac < 0) {
        frac += 1000;
        secs -= 1;
    }
    const std::time_t tt = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(frac));
    return buf.data();
}

Timestamp parse_timestamp(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, ms = 0;
    int consumed = 0;
    const std::string s_text(text);
    if (std::sscanf(s_text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ%n", &y, &mo, &d, &h, &mi, &s, &ms,
                    &consumed) != 7 ||
        consumed != static_cast<int>(s_text.size())) {
        throw Error(ErrorCode::invalid_argument, "malformed timestamp: " + s_text);
    }
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = s;
    const std::time_t secs = timegm(&tm);
    return from_epoch_ms(static_cast<std::int64_t>(secs) * 1000 + ms);
}

bool SourceRange::contains(const SourceRange& other) const {
    auto before_or_eq = [](int l1, int c1, int l2, int c2) {
        return l1 < l2 || (l1 == l2 && c1 <= c2);
    };
    return before_or_eq(line, column, other.line, other.column) &&
           before_or_eq(other.end_line, other.end_column, end_line, end_column);
}

std::string_view to_string(Severity s) {
    switch (s) {
    case Severity::error: return "error";
    case Severity::warning: return "warning";
    case Severity::info: return "info";
    }
    return "info";
}

std::string_view to_string(DiagnosticSource s) {
    switch (s) {
    case DiagnosticSource::linter: return "linter";
    case DiagnosticSource::structure: return "structure";
    case DiagnosticSource::prover: return "prover";
    }
    return "prover";
}

Severity parse_severity(std::string_view text) {
    if (text == "error") return Severity::error;
    if (text == "warning") return Severity::warning;
    if (text == "info") return Severity::info;
    throw Error(ErrorCode::invalid_argument, "unknown severity: " + std::string(text));
}

DiagnosticSource parse_diagnostic_source(std::string_view text) {
    if (text == "linter") return DiagnosticSource::linter;
    if (text == "structure") return DiagnosticSource::structure;
    if (text == "prover") return DiagnosticSource::prover;
    throw Error(ErrorCode::invalid_argument, "unknown diagnostic source: " + std::string(text));
}

void to_json(json& j, const SourceRange& r) {
    j = json{{"line", r.line}, {"column", r.column}, {"end_line", r.end_line}, {"end_column", r.end_column}};
}

void from_json(const json& j, SourceRange& r) {
    r.line = j.at("line").get<int>();
    r.column = j.at("column").get<int>();
    r.end_line = j.at("end_line").get<int>();
    r.end_column = j.at("end_column").get<int>();
}

void to_json(json& j, const Diagnostic& d) {
    j = json{{"source", to_string(d.source)},
             {"severity", to_string(d.severity)},
             {"rule_id", d.rule_id ? json(*d.rule_id) : json(nullptr)},
             {"message", d.message},
             {"range", d.range}};
}

void from_json(const json& j, Diagnostic& d) {
    d.source = parse_diagnostic_source(j.at("source").get<std::string>());
    d.severity = parse_severity(j.at("severity").get<std::string>());
    if (auto it = j.find("rule_id"); it != j.end() && !it->is_null()) {
        d.rule_id = it->get<std::string>();
    } else {
        d.rule_id.reset();
    }
    d.message = j.at("message").get<std::string>();
    d.range = j.at("range").get<SourceRange>();
}

namespace {

void ensure_sodium() {
    static const bool ok = sodium_init() >= 0;
    if (!ok) throw std::runtime_error("libsodium initialization failed");
}

std::string to_hex(const unsigned char* data, std::size_t len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xF]);
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    ensure_sodium();
    std::array<unsigned char, crypto_hash_sha256_BYTES> digest{};
    crypto_hash_sha256(digest.data(), reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
    return to_hex(digest.data(), digest.size());
}

std::string random_hex(std::size_t bytes) {
    ensure_sodium();
    std::string raw(bytes, '\0');
    randombytes_buf(raw.data(), raw.size());
    return to_hex(reinterpret_cast<const unsigned char*>(raw.data()), raw.size());
}

}  // namespace prooflab
