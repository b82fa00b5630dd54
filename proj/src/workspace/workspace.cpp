#include "prooflab/workspace/workspace.hpp"

#include "prooflab/isar/structure.hpp"
#include "prooflab/workspace/archive.hpp"

#include <sodium.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

namespace prooflab::workspace {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL UNIQUE,
    role TEXT NOT NULL,
    credential TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tokens (
    token TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    created_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS documents (
    owner TEXT NOT NULL,
    activity TEXT NOT NULL,
    name TEXT NOT NULL,
    head_version INTEGER NOT NULL,
    created_ms INTEGER NOT NULL,
    modified_ms INTEGER NOT NULL,
    deleted INTEGER NOT NULL DEFAULT 0,
    last_checked_hash TEXT,
    last_diagnostics TEXT,
    PRIMARY KEY (owner, activity, name)
);
CREATE TABLE IF NOT EXISTS versions (
    owner TEXT NOT NULL,
    activity TEXT NOT NULL,
    name TEXT NOT NULL,
    version INTEGER NOT NULL,
    content_hash TEXT NOT NULL,
    size INTEGER NOT NULL,
    saved_ms INTEGER NOT NULL,
    PRIMARY KEY (owner, activity, name, version)
);
)sql";

std::string hash_password(const std::string& password) {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
    std::array<char, crypto_pwhash_STRBYTES> out{};
    if (crypto_pwhash_str(out.data(), password.data(), password.size(), crypto_pwhash_OPSLIMIT_INTERACTIVE,
                          crypto_pwhash_MEMLIMIT_INTERACTIVE) != 0) {
        throw std::runtime_error("password hashing ran out of memory");
    }
    return out.data();
}

bool verify_password(const std::string& hash, const std::string& password) {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
    return !hash.empty() && crypto_pwhash_str_verify(hash.c_str(), password.data(), password.size()) == 0;
}

User user_from_row(const sql::Statement& st) {
    return User{UserId(st.column_text(0)), st.column_text(1), parse_role(st.column_text(2)), st.column_text(3)};
}

void fsync_path(const fs::path& p, int flags) {
    const int fd = ::open(p.c_str(), flags);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

/// Write-then-rename so readers never observe a partial blob.
void write_durably(const fs::path& target, std::string_view bytes) {
    const fs::path tmp = target.string() + ".tmp-" + random_hex(4);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error(ErrorCode::storage_full, "cannot write " + target.string());
        }
    }
    fsync_path(tmp, O_RDONLY);
    fs::rename(tmp, target);
    fsync_path(target.parent_path(), O_RDONLY | O_DIRECTORY);
}

}  // namespace

void to_json(json& j, const User& u) {
    j = json{{"id", u.id}, {"name", u.name}, {"role", to_string(u.role)}};
}

void to_json(json& j, const TheoryDocument& d) {
    j = json{{"owner", d.owner},
             {"activity", d.activity},
             {"name", d.name},
             {"content", d.content},
             {"content_hash", d.content_hash},
             {"created", format_timestamp(d.created)},
             {"modified", format_timestamp(d.modified)},
             {"last_checked_hash", d.last_checked_hash ? json(*d.last_checked_hash) : json(nullptr)},
             {"version", d.version}};
}

void to_json(json& j, const DocumentVersion& v) {
    j = json{{"version", v.version}, {"content_hash", v.content_hash}, {"size", v.size}, {"saved", format_timestamp(v.saved)}};
}

CheckPlan plan_check(std::span<const TheoryDocument> requested) {
    CheckPlan plan;
    for (const auto& d : requested) {
        if (d.last_checked_hash && *d.last_checked_hash == d.content_hash) {
            plan.skipped.push_back(d);
        } else {
            plan.to_check.push_back(d);
        }
    }
    return plan;
}

bool valid_theory_name(std::string_view name) {
    static const std::regex re("[A-Za-z][A-Za-z0-9_']*");
    return !name.empty() && name.size() <= 64 && std::regex_match(name.begin(), name.end(), re);
}

bool valid_identifier(std::string_view name) {
    static const std::regex re("[A-Za-z0-9_-][A-Za-z0-9_.-]*");
    return !name.empty() && name.size() <= 64 && std::regex_match(name.begin(), name.end(), re);
}

Workspace::Workspace(fs::path data_dir, WorkspaceLimits limits) : data_dir_(std::move(data_dir)), limits_(limits) {
    fs::create_directories(data_dir_ / "blobs");
    fs::create_directories(data_dir_ / "work");
    db_ = std::make_unique<sql::Database>(data_dir_ / "workspace.db");
    db_->exec(kSchema);
}

Workspace::~Workspace() = default;

User Workspace::upsert_user(const std::string& name, const std::string& password, Role role) {
    if (!valid_identifier(name) || name.starts_with("guest-")) {
        throw Error(ErrorCode::name_invalid, "invalid user name: " + name);
    }
    if (role == Role::guest) throw Error(ErrorCode::invalid_argument, "guests cannot be registered");
    User u{UserId(name), name, role, hash_password(password)};
    std::lock_guard lock(mutex_);
    db_->prepare("INSERT INTO users (id, name, role, credential) VALUES (?1, ?2, ?3, ?4) "
                 "ON CONFLICT(id) DO UPDATE SET role = excluded.role, credential = excluded.credential")
        .bind(1, u.id.str())
        .bind(2, u.name)
        .bind(3, to_string(u.role))
        .bind(4, u.credential_hash)
        .run();
    return u;
}

std::optional<User> Workspace::find_user(const UserId& id) const {
    std::lock_guard lock(mutex_);
    for (const auto& [token, guest] : guest_tokens_) {
        if (guest.id == id) return guest;
    }
    auto st = db_->prepare("SELECT id, name, role, credential FROM users WHERE id = ?1");
    st.bind(1, id.str());
    if (st.step()) return user_from_row(st);
    return std::nullopt;
}

std::vector<User> Workspace::users() const {
    std::lock_guard lock(mutex_);
    std::vector<User> out;
    auto st = db_->prepare("SELECT id, name, role, credential FROM users ORDER BY id");
    while (st.step()) out.push_back(user_from_row(st));
    return out;
}

TokenGrant Workspace::login(const std::string& name, const std::string& password) {
    std::optional<User> user;
    {
        std::lock_guard lock(mutex_);
        auto st = db_->prepare("SELECT id, name, role, credential FROM users WHERE name = ?1");
        st.bind(1, name);
        if (st.step()) user = user_from_row(st);
    }
    // Verification is slow by design; keep it outside the lock.
    if (!user || !verify_password(user->credential_hash, password)) {
        throw Error(ErrorCode::bad_credentials, "unknown user or wrong password");
    }
    TokenGrant grant{random_hex(24), *user};
    std::lock_guard lock(mutex_);
    db_->prepare("INSERT INTO tokens (token, user_id, created_ms) VALUES (?1, ?2, ?3)")
        .bind(1, grant.token)
        .bind(2, user->id.str())
        .bind(3, to_epoch_ms(now_ms()))
        .run();
    return grant;
}

TokenGrant Workspace::guest_login() {
    const std::string suffix = random_hex(6);
    User guest{UserId("guest-" + suffix), "guest-" + suffix, Role::guest, {}};
    TokenGrant grant{random_hex(24), guest};
    std::lock_guard lock(mutex_);
    guest_tokens_.emplace(grant.token, guest);
    return grant;
}

std::optional<User> Workspace::authenticate(const std::string& token) const {
    if (token.empty()) return std::nullopt;
    std::lock_guard lock(mutex_);
    if (auto it = guest_tokens_.find(token); it != guest_tokens_.end()) return it->second;
    auto st = db_->prepare(
        "SELECT u.id, u.name, u.role, u.credential FROM tokens t JOIN users u ON u.id = t.user_id WHERE t.token = ?1");
    st.bind(1, token);
    if (st.step()) return user_from_row(st);
    return std::nullopt;
}

void Workspace::logout(const std::string& token) {
    std::lock_guard lock(mutex_);
    guest_tokens_.erase(token);
    db_->prepare("DELETE FROM tokens WHERE token = ?1").bind(1, token).run();
}

std::string Workspace::store_blob(std::string_view content) {
    const std::string hash = sha256_hex(content);
    const fs::path dir = data_dir_ / "blobs" / hash.substr(0, 2);
    const fs::path file = dir / hash;
    std::error_code ec;
    if (fs::exists(file, ec)) return hash;
    fs::create_directories(dir);
    write_durably(file, content);
    return hash;
}

std::string Workspace::read_blob(const std::string& hash) const {
    const fs::path file = data_dir_ / "blobs" / hash.substr(0, 2) / hash;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::storage_error, "missing blob " + hash);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

TheoryDocument Workspace::save_theory(const UserId& owner, const ActivityId& activity, const std::string& name,
                                      const std::string& content) {
    if (!valid_theory_name(name)) throw Error(ErrorCode::name_invalid, "invalid theory name: " + name);
    if (!valid_identifier(activity.str())) {
        throw Error(ErrorCode::name_invalid, "invalid activity id: " + activity.str());
    }
    if (const std::string header = isar::theory_header_name(content); !header.empty() && header != name) {
        throw Error(ErrorCode::name_invalid, "theory header names '" + header + "' but the document is '" + name + "'");
    }
    if (content.size() > limits_.max_document_bytes) {
        throw Error(ErrorCode::quota_exceeded, "document exceeds " + std::to_string(limits_.max_document_bytes) + " bytes");
    }

    std::lock_guard lock(mutex_);
    const auto existing = load_locked(owner, activity, name);
    if (existing && existing->content == content) return *existing;
    {
        auto st = db_->prepare("SELECT COUNT(*) FROM documents WHERE owner = ?1 AND deleted = 0");
        st.bind(1, owner.str());
        st.step();
        if (!existing && static_cast<std::size_t>(st.column_int(0)) >= limits_.max_documents_per_user) {
            throw Error(ErrorCode::quota_exceeded, "document limit reached");
        }
    }
    {
        auto st = db_->prepare("SELECT COALESCE(SUM(size), 0) FROM versions WHERE owner = ?1");
        st.bind(1, owner.str());
        st.step();
        if (static_cast<std::size_t>(st.column_int(0)) + content.size() > limits_.max_user_bytes) {
            throw Error(ErrorCode::quota_exceeded, "storage quota exhausted");
        }
    }

    const std::string hash = store_blob(content);
    const Timestamp now = now_ms();
    std::int64_t version = 1;
    {
        auto st = db_->prepare(
            "SELECT COALESCE(MAX(version), 0) FROM versions WHERE owner = ?1 AND activity = ?2 AND name = ?3");
        st.bind(1, owner.str()).bind(2, activity.str()).bind(3, name);
        st.step();
        version = st.column_int(0) + 1;
    }
    sql::Transaction tx(*db_);
    db_->prepare("INSERT INTO versions (owner, activity, name, version, content_hash, size, saved_ms) "
                 "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)")
        .bind(1, owner.str())
        .bind(2, activity.str())
        .bind(3, name)
        .bind(4, version)
        .bind(5, hash)
        .bind(6, static_cast<std::int64_t>(content.size()))
        .bind(7, to_epoch_ms(now))
        .run();
    db_->prepare("INSERT INTO documents (owner, activity, name, head_version, created_ms, modified_ms) "
                 "VALUES (?1, ?2, ?3, ?4, ?5, ?5) "
                 "ON CONFLICT(owner, activity, name) DO UPDATE SET head_version = excluded.head_version, "
                 "modified_ms = excluded.modified_ms, "
                 "created_ms = CASE WHEN documents.deleted = 1 THEN excluded.created_ms ELSE documents.created_ms END, "
                 "deleted = 0")
        .bind(1, owner.str())
        .bind(2, activity.str())
        .bind(3, name)
        .bind(4, version)
        .bind(5, to_epoch_ms(now))
        .run();
    tx.commit();
    return *load_locked(owner, activity, name);
}

std::optional<TheoryDocument> Workspace::load_locked(const UserId& owner, const ActivityId& activity,
                                                     const std::string& name) const {
    auto st = db_->prepare(
        "SELECT d.head_version, d.created_ms, d.modified_ms, d.last_checked_hash, v.content_hash "
        "FROM documents d JOIN versions v ON v.owner = d.owner AND v.activity = d.activity AND v.name = d.name "
        "AND v.version = d.head_version "
        "WHERE d.owner = ?1 AND d.activity = ?2 AND d.name = ?3 AND d.deleted = 0");
    st.bind(1, owner.str()).bind(2, activity.str()).bind(3, name);
    if (!st.step()) return std::nullopt;
    TheoryDocument d;
    d.owner = owner;
    d.activity = activity;
    d.name = name;
    d.version = st.column_int(0);
    d.created = from_epoch_ms(st.column_int(1));
    d.modified = from_epoch_ms(st.column_int(2));
    d.last_checked_hash = st.column_opt_text(3);
    d.content_hash = st.column_text(4);
    d.content = read_blob(d.content_hash);
    return d;
}

std::optional<TheoryDocument> Workspace::load_theory(const UserId& owner, const ActivityId& activity,
                                                     const std::string& name) const {
    std::lock_guard lock(mutex_);
    return load_locked(owner, activity, name);
}

std::vector<TheoryDocument> Workspace::list_theories(const UserId& owner,
                                                     const std::optional<ActivityId>& activity) const {
    std::lock_guard lock(mutex_);
    std::vector<std::pair<std::string, std::string>> keys;
    {
        auto st = db_->prepare(activity ? "SELECT activity, name FROM documents WHERE owner = ?1 AND deleted = 0 "
                                          "AND activity = ?2 ORDER BY activity, name"
                                        : "SELECT activity, name FROM documents WHERE owner = ?1 AND deleted = 0 "
                                          "ORDER BY activity, name");
        st.bind(1, owner.str());
        if (activity) st.bind(2, activity->str());
        while (st.step()) keys.emplace_back(st.column_text(0), st.column_text(1));
    }
    std::vector<TheoryDocument> out;
    for (const auto& [act, name] : keys) {
        if (auto d = load_locked(owner, ActivityId(act), name)) out.push_back(std::move(*d));
    }
    return out;
}

std::vector<DocumentVersion> Workspace::history(const UserId& owner, const ActivityId& activity,
                                                const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto st = db_->prepare("SELECT version, content_hash, size, saved_ms FROM versions "
                           "WHERE owner = ?1 AND activity = ?2 AND name = ?3 ORDER BY version");
    st.bind(1, owner.str()).bind(2, activity.str()).bind(3, name);
    std::vector<DocumentVersion> out;
    while (st.step()) {
        out.push_back({st.column_int(0), st.column_text(1), static_cast<std::size_t>(st.column_int(2)),
                       from_epoch_ms(st.column_int(3))});
    }
    return out;
}

std::string Workspace::version_content(const UserId& owner, const ActivityId& activity, const std::string& name,
                                       std::int64_t version) const {
    std::lock_guard lock(mutex_);
    auto st = db_->prepare("SELECT content_hash FROM versions WHERE owner = ?1 AND activity = ?2 AND name = ?3 "
                           "AND version = ?4");
    st.bind(1, owner.str()).bind(2, activity.str()).bind(3, name).bind(4, version);
    if (!st.step()) throw Error(ErrorCode::not_found, "no version " + std::to_string(version) + " of " + name);
    return read_blob(st.column_text(0));
}

bool Workspace::delete_theory(const UserId& owner, const ActivityId& activity, const std::string& name) {
    std::lock_guard lock(mutex_);
    db_->prepare("UPDATE documents SET deleted = 1, last_checked_hash = NULL, last_diagnostics = NULL "
                 "WHERE owner = ?1 AND activity = ?2 AND name = ?3 AND deleted = 0")
        .bind(1, owner.str())
        .bind(2, activity.str())
        .bind(3, name)
        .run();
    return db_->changes() > 0;
}

void Workspace::mark_checked(const UserId& owner, const ActivityId& activity, const std::string& name,
                             const std::string& content_hash, const std::vector<Diagnostic>& diagnostics) {
    std::lock_guard lock(mutex_);
    db_->prepare("UPDATE documents SET last_checked_hash = ?4, last_diagnostics = ?5 "
                 "WHERE owner = ?1 AND activity = ?2 AND name = ?3")
        .bind(1, owner.str())
        .bind(2, activity.str())
        .bind(3, name)
        .bind(4, content_hash)
        .bind(5, json(diagnostics).dump())
        .run();
}

std::vector<Diagnostic> Workspace::last_diagnostics(const UserId& owner, const ActivityId& activity,
                                                    const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto st = db_->prepare("SELECT last_diagnostics FROM documents WHERE owner = ?1 AND activity = ?2 AND name = ?3");
    st.bind(1, owner.str()).bind(2, activity.str()).bind(3, name);
    if (!st.step() || st.column_null(0)) return {};
    return json::parse(st.column_text(0)).get<std::vector<Diagnostic>>();
}

CheckPlan Workspace::plan_check(const UserId& user, std::span<const TheoryDocument> requested) const {
    for (const auto& d : requested) {
        if (d.owner != user) throw Error(ErrorCode::permission_denied, "document " + d.name + " belongs to another user");
    }
    return workspace::plan_check(requested);
}

fs::path Workspace::master_dir(const UserId& user, const ActivityId& activity) const {
    if (!valid_identifier(user.str()) || !valid_identifier(activity.str())) {
        throw Error(ErrorCode::name_invalid, "unsafe workspace path component");
    }
    fs::path dir = data_dir_ / "work" / user.str() / activity.str();
    fs::create_directories(dir);
    return fs::absolute(dir);
}

void Workspace::materialize(const UserId& user, const ActivityId& activity, std::span<const TheoryDocument> docs) const {
    const fs::path dir = master_dir(user, activity);
    for (const auto& d : docs) {
        const fs::path file = dir / (d.name + ".thy");
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        out << d.content;
        if (!out) throw Error(ErrorCode::io_error, "cannot write " + file.string());
    }
}

std::string Workspace::export_archive(const UserId& owner, const ActivityId& activity) const {
    std::vector<ArchiveEntry> entries;
    for (const auto& d : list_theories(owner, activity)) entries.push_back({d.name + ".thy", d.content});
    return write_tar(entries);
}

std::vector<std::string> Workspace::import_archive(const UserId& owner, const ActivityId& activity,
                                                   std::string_view tar) {
    const auto entries = read_tar(tar);
    // Validate everything before saving anything.
    std::vector<std::pair<std::string, const std::string*>> docs;
    for (const auto& e : entries) {
        const fs::path p(e.name);
        if (p.extension() != ".thy") continue;
        const std::string name = p.stem().string();
        if (!valid_theory_name(name)) throw Error(ErrorCode::name_invalid, "invalid theory name in archive: " + e.name);
        docs.emplace_back(name, &e.content);
    }
    std::vector<std::string> names;
    for (const auto& [name, content] : docs) {
        save_theory(owner, activity, name, *content);
        names.push_back(name);
    }
    return names;
}

}  // namespace prooflab::workspace
