#include "prooflab/workspace/archive.hpp"

#include "prooflab/common.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <ctime>

namespace prooflab::workspace {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
    // width includes the terminating NUL
    std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

std::uint64_t get_octal(const char* field, std::size_t width) {
    std::uint64_t value = 0;
    std::size_t i = 0;
    while (i < width && (field[i] == ' ' || field[i] == '\0')) ++i;
    for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) value = value * 8 + static_cast<unsigned>(field[i] - '0');
    return value;
}

unsigned checksum(const char* header) {
    unsigned sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) {
        sum += (i >= 148 && i < 156) ? static_cast<unsigned>(' ') : static_cast<unsigned char>(header[i]);
    }
    return sum;
}

}  // namespace

std::string write_tar(const std::vector<ArchiveEntry>& entries) {
    std::string out;
    const auto mtime = static_cast<std::uint64_t>(std::time(nullptr));
    for (const auto& e : entries) {
        if (e.name.empty() || e.name.size() > 99) {
            throw Error(ErrorCode::invalid_argument, "archive entry name must be 1 to 99 bytes: " + e.name);
        }
        std::array<char, kBlock> h{};
        std::memcpy(h.data(), e.name.data(), e.name.size());
        put_octal(h.data() + 100, 8, 0644);
        put_octal(h.data() + 108, 8, 0);
        put_octal(h.data() + 116, 8, 0);
        put_octal(h.data() + 124, 12, e.content.size());
        put_octal(h.data() + 136, 12, mtime);
        h[156] = '0';
        std::memcpy(h.data() + 257, "ustar", 6);
        std::memcpy(h.data() + 263, "00", 2);
        std::snprintf(h.data() + 148, 8, "%06o", checksum(h.data()));
        h[155] = ' ';
        out.append(h.data(), h.size());
        out += e.content;
        out.append((kBlock - e.content.size() % kBlock) % kBlock, '\0');
    }
    out.append(2 * kBlock, '\0');
    return out;
}

std::vector<ArchiveEntry> read_tar(std::string_view tar) {
    std::vector<ArchiveEntry> entries;
    std::size_t pos = 0;
    while (pos + kBlock <= tar.size()) {
        const char* h = tar.data() + pos;
        if (std::all_of(h, h + kBlock, [](char c) { return c == '\0'; })) return entries;
        if (get_octal(h + 148, 8) != checksum(h)) throw Error(ErrorCode::invalid_argument, "corrupt archive header");
        const std::uint64_t size = get_octal(h + 124, 12);
        const std::size_t data = pos + kBlock;
        if (size > tar.size() - data) throw Error(ErrorCode::invalid_argument, "truncated archive entry");
        std::string name(h, strnlen(h, 100));
        if (std::memcmp(h + 257, "ustar", 5) == 0 && h[345] != '\0') {
            name = std::string(h + 345, strnlen(h + 345, 155)) + "/" + name;
        }
        const char type = h[156];
        if (type == '0' || type == '\0') entries.push_back({name, std::string(tar.substr(data, size))});
        pos = data + (size + kBlock - 1) / kBlock * kBlock;
    }
    if (pos != tar.size()) throw Error(ErrorCode::invalid_argument, "truncated archive");
    return entries;
}

}  // namespace prooflab::workspace
