#pragma once

#include "prooflab/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

struct sqlite3;
struct sqlite3_stmt;

namespace prooflab::sql {

class Statement;

/// Owning SQLite connection. Not thread-safe; callers serialize access.
class Database {
public:
    /// Opens (creating if needed) in WAL mode with synchronous=FULL so a
    /// committed transaction survives process death.
    explicit Database(const std::filesystem::path& file, bool read_only = false);
    ~Database();
    Database(const Database&) = delete;
    Database& operator=(const Database&) = delete;

    void exec(std::string_view sql);
    Statement prepare(std::string_view sql);
    std::int64_t last_insert_rowid() const;
    int changes() const;

    sqlite3* handle() const { return db_; }

private:
    sqlite3* db_ = nullptr;
};

class Statement {
public:
    Statement(Database& db, std::string_view sql);
    ~Statement();
    Statement(Statement&& other) noexcept;
    Statement& operator=(Statement&&) = delete;
    Statement(const Statement&) = delete;

    Statement& bind(int index, std::int64_t value);
    Statement& bind(int index, std::string_view value);
    Statement& bind(int index, const std::string& value) { return bind(index, std::string_view(value)); }
    Statement& bind(int index, const char* value) { return bind(index, std::string_view(value)); }
    Statement& bind(int index, std::nullopt_t);
    Statement& bind(int index, const std::optional<std::string>& value);
    Statement& bind(int index, const std::optional<std::int64_t>& value);

    /// True while a row is available.
    bool step();
    void run() {
        while (step()) {
        }
    }
    void reset();

    std::int64_t column_int(int index) const;
    std::string column_text(int index) const;
    bool column_null(int index) const;
    std::optional<std::int64_t> column_opt_int(int index) const;
    std::optional<std::string> column_opt_text(int index) const;

private:
    Database* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

/// RAII transaction: rolls back unless commit() was called.
class Transaction {
public:
    explicit Transaction(Database& db, bool immediate = true);
    ~Transaction();
    void commit();

private:
    Database& db_;
    bool done_ = false;
};

}  // namespace prooflab::sql
