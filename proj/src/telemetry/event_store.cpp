#include "prooflab/telemetry/event_store.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

namespace prooflab::telemetry {

std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::check_submitted: return "check-submitted";
    case EventKind::result_received: return "result-received";
    case EventKind::lint_shown: return "lint-shown";
    case EventKind::structure_rejected: return "structure-rejected";
    case EventKind::keystroke: return "keystroke";
    }
    return "check-submitted";
}

EventKind parse_event_kind(std::string_view text) {
    if (text == "check-submitted") return EventKind::check_submitted;
    if (text == "result-received") return EventKind::result_received;
    if (text == "lint-shown") return EventKind::lint_shown;
    if (text == "structure-rejected") return EventKind::structure_rejected;
    if (text == "keystroke") return EventKind::keystroke;
    throw Error(ErrorCode::invalid_argument, "unknown event kind: " + std::string(text));
}

void to_json(json& j, const CheckEvent& e) {
    j = json{{"event_id", e.event_id},
             {"user", e.user},
             {"activity", e.activity},
             {"kind", to_string(e.kind)},
             {"timestamp", format_timestamp(e.timestamp)},
             {"theory_snapshot", e.theory_snapshot},
             {"diagnostics", e.diagnostics}};
    if (e.durations) {
        j["durations"] = {{"server_handling_ms", e.durations->server_handling.count()},
                          {"prover_ms", e.durations->prover.count()}};
    } else {
        j["durations"] = nullptr;
    }
}

void from_json(const json& j, CheckEvent& e) {
    e.event_id = j.at("event_id").get<std::int64_t>();
    e.user = j.at("user").get<UserId>();
    e.activity = j.at("activity").get<ActivityId>();
    e.kind = parse_event_kind(j.at("kind").get<std::string>());
    e.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
    e.theory_snapshot = j.at("theory_snapshot").get<std::string>();
    e.diagnostics = j.at("diagnostics").get<std::vector<Diagnostic>>();
    if (auto it = j.find("durations"); it != j.end() && !it->is_null()) {
        e.durations = Durations{std::chrono::milliseconds(it->at("server_handling_ms").get<std::int64_t>()),
                                std::chrono::milliseconds(it->at("prover_ms").get<std::int64_t>())};
    } else {
        e.durations.reset();
    }
}

void validate(const CheckEvent& e) {
    if (e.user.empty()) throw Error(ErrorCode::invalid_argument, "event without user");
    if (e.activity.empty()) throw Error(ErrorCode::invalid_argument, "event without activity");
    if (e.kind == EventKind::check_submitted) {
        if (e.theory_snapshot.empty()) {
            throw Error(ErrorCode::invalid_argument, "check-submitted event requires a theory snapshot");
        }
        if (!e.diagnostics.empty()) {
            throw Error(ErrorCode::invalid_argument, "check-submitted event carries no diagnostics");
        }
    }
    if (e.durations && (e.durations->server_handling.count() < 0 || e.durations->prover.count() < 0)) {
        throw Error(ErrorCode::invalid_argument, "negative duration");
    }
}

bool EventFilter::matches(const CheckEvent& e) const {
    if (user && e.user != *user) return false;
    if (activity && e.activity != *activity) return false;
    if (kind && e.kind != *kind) return false;
    if (from && e.timestamp < *from) return false;
    if (to && e.timestamp >= *to) return false;
    return true;
}

void write_export(std::ostream& out, std::span<const CheckEvent> events) {
    out << json{{"schema", kExportSchema}, {"version", kExportSchemaVersion}}.dump() << '\n';
    for (const auto& e : events) out << json(e).dump() << '\n';
}

std::vector<CheckEvent> read_export(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::invalid_argument, "empty telemetry export");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::invalid_argument, "telemetry export header is not a schema record");
    }
    if (!header.is_object() || header.value("schema", std::string()) != kExportSchema) {
        throw Error(ErrorCode::invalid_argument, "telemetry export header is not a schema record");
    }
    if (header.value("version", 0) != kExportSchemaVersion) {
        throw Error(ErrorCode::invalid_argument,
                    "unsupported telemetry export version " + header.value("version", json()).dump());
    }
    std::vector<CheckEvent> events;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            events.push_back(json::parse(line).get<CheckEvent>());
        } catch (const std::exception& e) {
            throw Error(ErrorCode::invalid_argument,
                        "bad telemetry record on line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return events;
}

void sort_events(std::vector<CheckEvent>& events) {
    std::stable_sort(events.begin(), events.end(), [](const CheckEvent& a, const CheckEvent& b) {
        return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.event_id < b.event_id;
    });
}

namespace {

constexpr std::string_view kSchema = R"sql(
CREATE TABLE IF NOT EXISTS events (
    id INTEGER PRIMARY KEY,
    user_id TEXT NOT NULL,
    activity TEXT NOT NULL,
    kind TEXT NOT NULL,
    ts_ms INTEGER NOT NULL,
    snapshot TEXT NOT NULL,
    diagnostics TEXT NOT NULL,
    server_ms INTEGER,
    prover_ms INTEGER
);
CREATE INDEX IF NOT EXISTS events_user_ts ON events(user_id, ts_ms);
CREATE TRIGGER IF NOT EXISTS events_no_update BEFORE UPDATE ON events
BEGIN SELECT RAISE(ABORT, 'telemetry events are immutable'); END;
CREATE TRIGGER IF NOT EXISTS events_no_delete BEFORE DELETE ON events
BEGIN SELECT RAISE(ABORT, 'telemetry events are append-only'); END;
)sql";

CheckEvent row_to_event(const sql::Statement& st) {
    CheckEvent e;
    e.event_id = st.column_int(0);
    e.user = UserId(st.column_text(1));
    e.activity = ActivityId(st.column_text(2));
    e.kind = parse_event_kind(st.column_text(3));
    e.timestamp = from_epoch_ms(st.column_int(4));
    e.theory_snapshot = st.column_text(5);
    e.diagnostics = json::parse(st.column_text(6)).get<std::vector<Diagnostic>>();
    if (!st.column_null(7)) {
        e.durations = Durations{std::chrono::milliseconds(st.column_int(7)), std::chrono::milliseconds(st.column_int(8))};
    }
    return e;
}

}  // namespace

EventStore::EventStore(const std::filesystem::path& file) : file_(file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    writer_ = std::make_unique<sql::Database>(file);
    writer_->exec(kSchema);
    auto st = writer_->prepare("SELECT user_id, MAX(ts_ms) FROM events GROUP BY user_id");
    while (st.step()) last_timestamp_[UserId(st.column_text(0))] = from_epoch_ms(st.column_int(1));
    reader_ = std::make_unique<sql::Database>(file, true);
}

EventStore::~EventStore() = default;

void EventStore::insert(const CheckEvent& e, std::optional<std::int64_t> id) {
    auto st = writer_->prepare(
        "INSERT INTO events (id, user_id, activity, kind, ts_ms, snapshot, diagnostics, server_ms, prover_ms) "
        "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    st.bind(1, id)
        .bind(2, e.user.str())
        .bind(3, e.activity.str())
        .bind(4, to_string(e.kind))
        .bind(5, to_epoch_ms(e.timestamp))
        .bind(6, e.theory_snapshot)
        .bind(7, json(e.diagnostics).dump());
    if (e.durations) {
        st.bind(8, std::int64_t{e.durations->server_handling.count()}).bind(9, std::int64_t{e.durations->prover.count()});
    } else {
        st.bind(8, std::nullopt).bind(9, std::nullopt);
    }
    st.run();
}

std::int64_t EventStore::record_event(CheckEvent e) {
    validate(e);
    std::lock_guard lock(write_mutex_);
    const auto last = last_timestamp_.find(e.user);
    if (e.timestamp == Timestamp{}) {
        e.timestamp = now_ms();
        if (last != last_timestamp_.end() && e.timestamp < last->second) e.timestamp = last->second;
    } else if (last != last_timestamp_.end() && e.timestamp < last->second) {
        throw Error(ErrorCode::invalid_argument, "event timestamp precedes the user's previous event");
    }
    insert(e, std::nullopt);
    const std::int64_t id = writer_->last_insert_rowid();
    last_timestamp_[e.user] = e.timestamp;
    return id;
}

std::vector<CheckEvent> EventStore::query(const EventFilter& filter) const {
    std::string sql =
        "SELECT id, user_id, activity, kind, ts_ms, snapshot, diagnostics, server_ms, prover_ms FROM events WHERE 1=1";
    if (filter.user) sql += " AND user_id = ?1";
    if (filter.activity) sql += " AND activity = ?2";
    if (filter.kind) sql += " AND kind = ?3";
    if (filter.from) sql += " AND ts_ms >= ?4";
    if (filter.to) sql += " AND ts_ms < ?5";
    sql += " ORDER BY ts_ms, id";

    std::lock_guard lock(read_mutex_);
    auto st = reader_->prepare(sql);
    if (filter.user) st.bind(1, filter.user->str());
    if (filter.activity) st.bind(2, filter.activity->str());
    if (filter.kind) st.bind(3, to_string(*filter.kind));
    if (filter.from) st.bind(4, to_epoch_ms(*filter.from));
    if (filter.to) st.bind(5, to_epoch_ms(*filter.to));
    std::vector<CheckEvent> out;
    while (st.step()) out.push_back(row_to_event(st));
    return out;
}

std::size_t EventStore::count(const EventFilter& filter) const { return query(filter).size(); }

void EventStore::export_events(std::ostream& out, const EventFilter& filter, Role requester) const {
    if (requester != Role::instructor) {
        throw Error(ErrorCode::permission_denied, "telemetry export requires the instructor role");
    }
    const auto events = query(filter);
    write_export(out, events);
}

std::size_t EventStore::import_events(std::istream& in) {
    auto events = read_export(in);
    for (const auto& e : events) validate(e);
    std::lock_guard lock(write_mutex_);
    std::int64_t max_id = 0;
    {
        auto st = writer_->prepare("SELECT COALESCE(MAX(id), 0) FROM events");
        if (st.step()) max_id = st.column_int(0);
    }
    std::vector<const CheckEvent*> by_id;
    for (const auto& e : events) by_id.push_back(&e);
    std::sort(by_id.begin(), by_id.end(), [](auto* a, auto* b) { return a->event_id < b->event_id; });
    sql::Transaction tx(*writer_);
    for (const CheckEvent* e : by_id) {
        if (e->event_id <= max_id) {
            throw Error(ErrorCode::invalid_argument,
                        "imported event id " + std::to_string(e->event_id) + " collides with the existing log");
        }
        insert(*e, e->event_id);
        max_id = e->event_id;
    }
    tx.commit();
    for (const auto& e : events) {
        auto& last = last_timestamp_[e.user];
        last = std::max(last, e.timestamp);
    }
    return events.size();
}

}  // namespace prooflab::telemetry
