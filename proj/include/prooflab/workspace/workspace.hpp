#pragma once

#include "prooflab/common.hpp"
#include "prooflab/sqlite.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prooflab::workspace {

struct User {
    UserId id;
    std::string name;
    Role role = Role::student;
    /// Empty for guests.
    std::string credential_hash;
};

void to_json(json& j, const User& u);  // never includes the credential hash

struct TheoryDocument {
    UserId owner;
    ActivityId activity;
    std::string name;
    std::string content;
    std::string content_hash;
    Timestamp created{};
    Timestamp modified{};
    std::optional<std::string> last_checked_hash;
    std::int64_t version = 0;
};

void to_json(json& j, const TheoryDocument& d);

struct DocumentVersion {
    std::int64_t version;
    std::string content_hash;
    std::size_t size;
    Timestamp saved;
};

void to_json(json& j, const DocumentVersion& v);

struct CheckPlan {
    std::vector<TheoryDocument> to_check;
    std::vector<TheoryDocument> skipped;
};

/// Partitions by content_hash against last_checked_hash; never-checked
/// documents are always checked. Order within each list follows the input.
CheckPlan plan_check(std::span<const TheoryDocument> requested);

/// Theory names: a letter followed by letters, digits, `_` or `'`, at most 64 bytes.
bool valid_theory_name(std::string_view name);
/// Activity ids and user names: [A-Za-z0-9_.-], 1 to 64 bytes, not starting with a dot.
bool valid_identifier(std::string_view name);

struct WorkspaceLimits {
    std::size_t max_document_bytes = 1 << 20;
    std::size_t max_documents_per_user = 500;
    /// Sum over every stored version of a user's documents.
    std::size_t max_user_bytes = 64u << 20;
};

struct TokenGrant {
    std::string token;
    User user;
};

/// Users, credentials, session tokens and theory documents. Canonical content
/// lives in an embedded store (workspace.db) plus content-addressed blobs;
/// files for the prover are materialized on demand under work/<user>/<activity>.
///
/// Layout under data_dir:
///   workspace.db            users, tokens, documents, version chain, checks
///   blobs/ab/abcdef...      document contents keyed by SHA-256
///   work/<user>/<activity>/ prover master directory (regenerable)
class Workspace {
public:
    explicit Workspace(std::filesystem::path data_dir, WorkspaceLimits limits = {});
    ~Workspace();

    const std::filesystem::path& data_dir() const { return data_dir_; }
    const WorkspaceLimits& limits() const { return limits_; }

    // -- users ----------------------------------------------------------------
    /// Creates or updates a registered user; the id is the name.
    User upsert_user(const std::string& name, const std::string& password, Role role);
    std::optional<User> find_user(const UserId& id) const;
    std::vector<User> users() const;

    /// Throws Error(bad_credentials).
    TokenGrant login(const std::string& name, const std::string& password);
    /// A fresh ephemeral user per call; its token is held in memory only.
    TokenGrant guest_login();
    std::optional<User> authenticate(const std::string& token) const;
    void logout(const std::string& token);

    // -- documents ------------------------------------------------------------
    /// Durable before return. Throws Error(name_invalid), Error(quota_exceeded).
    TheoryDocument save_theory(const UserId& owner, const ActivityId& activity, const std::string& name,
                               const std::string& content);
    std::optional<TheoryDocument> load_theory(const UserId& owner, const ActivityId& activity,
                                              const std::string& name) const;
    std::vector<TheoryDocument> list_theories(const UserId& owner,
                                              const std::optional<ActivityId>& activity = std::nullopt) const;
    std::vector<DocumentVersion> history(const UserId& owner, const ActivityId& activity,
                                         const std::string& name) const;
    std::string version_content(const UserId& owner, const ActivityId& activity, const std::string& name,
                                std::int64_t version) const;
    /// Hides the document; its version chain is kept. Returns false if absent.
    bool delete_theory(const UserId& owner, const ActivityId& activity, const std::string& name);

    /// Records that `content_hash` of the document was checked and what the
    /// prover said about it.
    void mark_checked(const UserId& owner, const ActivityId& activity, const std::string& name,
                      const std::string& content_hash, const std::vector<Diagnostic>& diagnostics);
    /// Diagnostics of the last completed check of the document.
    std::vector<Diagnostic> last_diagnostics(const UserId& owner, const ActivityId& activity,
                                             const std::string& name) const;

    /// Throws Error(permission_denied) if a document is not owned by `user`.
    CheckPlan plan_check(const UserId& user, std::span<const TheoryDocument> requested) const;

    /// Per-user, per-activity prover master directory (created on demand).
    std::filesystem::path master_dir(const UserId& user, const ActivityId& activity) const;
    /// Writes each document as <name>.thy into the master directory.
    void materialize(const UserId& user, const ActivityId& activity, std::span<const TheoryDocument> docs) const;

    // -- archives -------------------------------------------------------------
    /// Tar archive of the user's documents in one activity (<name>.thy entries).
    std::string export_archive(const UserId& owner, const ActivityId& activity) const;
    /// Saves every .thy entry of a tar archive; returns the imported names.
    std::vector<std::string> import_archive(const UserId& owner, const ActivityId& activity, std::string_view tar);

private:
    std::string store_blob(std::string_view content);
    std::string read_blob(const std::string& hash) const;
    std::optional<TheoryDocument> load_locked(const UserId& owner, const ActivityId& activity,
                                              const std::string& name) const;

    std::filesystem::path data_dir_;
    WorkspaceLimits limits_;
    mutable std::mutex mutex_;
    std::unique_ptr<sql::Database> db_;
    std::map<std::string, User> guest_tokens_;
};

}  // namespace prooflab::workspace
