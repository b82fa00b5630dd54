#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace prooflab::workspace {

struct ArchiveEntry {
    std::string name;
    std::string content;

    bool operator==(const ArchiveEntry&) const = default;
};

/// Minimal POSIX ustar writer/reader for regular files with short names.
std::string write_tar(const std::vector<ArchiveEntry>& entries);
/// Regular-file entries only; directories and links are skipped. Throws
/// Error(invalid_argument) on a corrupt archive.
std::vector<ArchiveEntry> read_tar(std::string_view tar);

}  // namespace prooflab::workspace
