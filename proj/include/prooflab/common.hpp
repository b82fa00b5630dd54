#pragma once

#include <json.hpp>

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prooflab {

using json = nlohmann::json;

// ============================================================================
// Errors
// ============================================================================

enum class ErrorCode {
    connection_refused,
    auth_failed,
    protocol_violation,
    framing_error,
    prover_error,
    unknown_session,
    io_error,
    timeout,
    connection_lost,
    bind_failure,
    invalid_pattern,
    bad_credentials,
    quota_exceeded,
    name_invalid,
    permission_denied,
    not_found,
    invalid_argument,
    storage_full,
    storage_error,
    prover_unavailable,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// ============================================================================
// Strongly typed identifiers
// ============================================================================

template <typename Tag>
class StrongId {
public:
    StrongId() = default;
    explicit StrongId(std::string value) : value_(std::move(value)) {}

    const std::string& str() const noexcept { return value_; }
    bool empty() const noexcept { return value_.empty(); }

    auto operator<=>(const StrongId&) const = default;

private:
    std::string value_;
};

template <typename Tag>
void to_json(json& j, const StrongId<Tag>& id) { j = id.str(); }

template <typename Tag>
void from_json(const json& j, StrongId<Tag>& id) { id = StrongId<Tag>(j.get<std::string>()); }

using UserId = StrongId<struct UserIdTag>;

enum class Role { student, instructor, guest };
std::string_view to_string(Role r);
Role parse_role(std::string_view text);

using ActivityId = StrongId<struct ActivityIdTag>;
using CheckId = StrongId<struct CheckIdTag>;

// ============================================================================
// Time
// ============================================================================

using Clock = std::chrono::system_clock;
using Timestamp = std::chrono::time_point<Clock, std::chrono::milliseconds>;

Timestamp now_ms();
std::int64_t to_epoch_ms(Timestamp t);
Timestamp from_epoch_ms(std::int64_t ms);

/// ISO-8601 UTC with millisecond precision, e.g. 2024-03-01T09:15:02.123Z.
std::string format_timestamp(Timestamp t);
/// Inverse of format_timestamp. Throws Error(invalid_argument) on malformed input.
Timestamp parse_timestamp(std::string_view text);

// ============================================================================
// Source positions and diagnostics
// ============================================================================

/// Lines are 1-based, columns 0-based and counted in Unicode code points.
/// The end position is exclusive.
struct SourceRange {
    int line = 1;
    int column = 0;
    int end_line = 1;
    int end_column = 0;

    bool contains(const SourceRange& other) const;
    auto operator<=>(const SourceRange&) const = default;
};

enum class Severity { error, warning, info };
enum class DiagnosticSource { linter, structure, prover };

std::string_view to_string(Severity s);
std::string_view to_string(DiagnosticSource s);
Severity parse_severity(std::string_view text);
DiagnosticSource parse_diagnostic_source(std::string_view text);

struct Diagnostic {
    DiagnosticSource source = DiagnosticSource::prover;
    Severity severity = Severity::error;
    std::optional<std::string> rule_id;
    std::string message;
    SourceRange range;

    bool operator==(const Diagnostic&) const = default;
};

void to_json(json& j, const SourceRange& r);
void from_json(const json& j, SourceRange& r);
void to_json(json& j, const Diagnostic& d);
void from_json(const json& j, Diagnostic& d);

// ============================================================================
// Misc
// ============================================================================

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Random lowercase hex string with the given number of random bytes.
std::string random_hex(std::size_t bytes);

}  // namespace prooflab

template <typename Tag>
struct std::hash<prooflab::StrongId<Tag>> {
    std::size_t operator()(const prooflab::StrongId<Tag>& id) const noexcept {
        return std::hash<std::string>{}(id.str());
    }
};
