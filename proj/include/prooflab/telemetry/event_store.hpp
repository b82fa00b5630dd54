#pragma once

#include "prooflab/common.hpp"
#include "prooflab/sqlite.hpp"

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prooflab::telemetry {

enum class EventKind {
    check_submitted,
    result_received,
    lint_shown,
    structure_rejected,
    /// Reserved for editor-level capture; never emitted by the server.
    keystroke,
};

std::string_view to_string(EventKind k);
EventKind parse_event_kind(std::string_view text);

struct Durations {
    std::chrono::milliseconds server_handling{0};
    std::chrono::milliseconds prover{0};

    bool operator==(const Durations&) const = default;
};

struct CheckEvent {
    std::int64_t event_id = 0;
    UserId user;
    ActivityId activity;
    EventKind kind = EventKind::check_submitted;
    /// Left at the epoch, the store stamps the event on append.
    Timestamp timestamp{};
    std::string theory_snapshot;
    std::vector<Diagnostic> diagnostics;
    std::optional<Durations> durations;

    bool operator==(const CheckEvent&) const = default;
};

void to_json(json& j, const CheckEvent& e);
void from_json(const json& j, CheckEvent& e);

/// Throws Error(invalid_argument) when an event violates the record invariants.
void validate(const CheckEvent& e);

struct EventFilter {
    std::optional<UserId> user;
    std::optional<ActivityId> activity;
    std::optional<EventKind> kind;
    /// Half-open [from, to).
    std::optional<Timestamp> from;
    std::optional<Timestamp> to;

    bool matches(const CheckEvent& e) const;
};

inline constexpr std::string_view kExportSchema = "prooflab-telemetry";
inline constexpr int kExportSchemaVersion = 1;

/// Line-delimited export: a schema header line, then one event per line.
void write_export(std::ostream& out, std::span<const CheckEvent> events);
/// Parses an export stream. Throws Error(invalid_argument) on a bad header
/// or record.
std::vector<CheckEvent> read_export(std::istream& in);

/// Sort key used by every query: ascending (timestamp, event_id).
void sort_events(std::vector<CheckEvent>& events);

/// Append-only, durable event log. Appends are serialized through a single
/// writer connection; queries use a separate connection and observe a
/// committed prefix of the log.
class EventStore {
public:
    explicit EventStore(const std::filesystem::path& file);
    ~EventStore();

    /// Durable before return. Assigns a strictly increasing id and, for an
    /// unset timestamp, stamps the event so that each user's events stay
    /// timestamp-nondecreasing. Throws Error(invalid_argument) on an invariant
    /// violation, Error(storage_full).
    std::int64_t record_event(CheckEvent e);

    std::vector<CheckEvent> query(const EventFilter& filter = {}) const;
    std::size_t count(const EventFilter& filter = {}) const;

    /// Requires the instructor role; throws Error(permission_denied) otherwise.
    void export_events(std::ostream& out, const EventFilter& filter, Role requester) const;

    /// Imports an export stream, preserving event ids (which must exceed every
    /// id already stored). Returns the number of events imported.
    std::size_t import_events(std::istream& in);

private:
    void insert(const CheckEvent& e, std::optional<std::int64_t> id);

    std::filesystem::path file_;
    mutable std::mutex write_mutex_;
    std::unique_ptr<sql::Database> writer_;
    std::map<UserId, Timestamp> last_timestamp_;

    mutable std::mutex read_mutex_;
    std::unique_ptr<sql::Database> reader_;
};

}  // namespace prooflab::telemetry
