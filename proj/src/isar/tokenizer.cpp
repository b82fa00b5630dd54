#include "prooflab/isar/tokenizer.hpp"

#include <algorithm>
#include <array>

namespace prooflab::isar {

namespace {

constexpr std::string_view kOpenCartouche = "\xE2\x80\xB9";   // ‹
constexpr std::string_view kCloseCartouche = "\xE2\x80\xBA";  // ›
constexpr std::string_view kOpenCartoucheAscii = "\\<open>";
constexpr std::string_view kCloseCartoucheAscii = "\\<close>";

constexpr std::array kCommandKeywords = std::to_array<std::string_view>({
    "abbreviation", "also", "apply", "apply_end", "assume", "axiomatization", "begin", "by",
    "case", "chapter", "class", "consts", "context", "corollary", "datatype", "declare",
    "definition", "done", "end", "finally", "find_theorems", "fix", "from", "fun", "function",
    "have", "hence", "inductive", "inductive_set", "instance", "instantiation", "interpretation",
    "lemma", "lemmas", "let", "locale", "moreover", "next", "note", "notepad", "obtain", "oops",
    "paragraph", "presume", "primrec", "proof", "proposition", "qed", "record", "schematic_goal",
    "section", "show", "sorry", "subsection", "subsubsection", "term", "termination", "text",
    "then", "theorem", "theory", "thm", "thus", "txt", "type_synonym", "typedecl", "ultimately",
    "unfolding", "using", "value", "with",
});

constexpr std::array kInnerKeywords = std::to_array<std::string_view>({
    "and", "assumes", "defines", "fixes", "for", "if", "imports", "in", "includes", "is",
    "keywords", "obtains", "shows", "where",
});

bool is_ascii_alpha(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_ident_start(unsigned char c) { return is_ascii_alpha(c) || c == '_'; }
bool is_ident_char(unsigned char c) {
    return is_ascii_alpha(c) || is_ascii_digit(c) || c == '_' || c == '\'';
}
bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Byte length of the well-formed UTF-8 sequence at `i`, or 0 if malformed.
std::size_t utf8_length(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return 1;
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return 0;
    }
    if (i + len > s.size()) return 0;
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return 0;
        cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr std::array<std::uint32_t, 5> kMin = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
    return len;
}

/// Length of one position unit: a code point, or one byte when malformed.
std::size_t unit_length(std::string_view s, std::size_t i) {
    const std::size_t n = utf8_length(s, i);
    return n == 0 ? 1 : n;
}

bool starts_with_at(std::string_view s, std::size_t i, std::string_view prefix) {
    return s.substr(i, prefix.size()) == prefix;
}

class Lexer {
public:
    explicit Lexer(std::string_view text) : text_(text) {}

    std::vector<Token> run() {
        while (pos_ < text_.size()) {
            const std::size_t start = pos_;
            const TokenClass cls = scan();
            emit(cls, start);
        }
        return std::move(tokens_);
    }

private:
    TokenClass scan() {
        const auto c = static_cast<unsigned char>(text_[pos_]);
        if (is_space(c)) {
            while (pos_ < text_.size() && is_space(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            return TokenClass::whitespace;
        }
        if (starts_with_at(text_, pos_, "(*")) {
            scan_comment();
            return TokenClass::comment;
        }
        if (c == '"') {
            scan_string();
            return TokenClass::string_literal;
        }
        if (starts_with_at(text_, pos_, kOpenCartouche) || starts_with_at(text_, pos_, kOpenCartoucheAscii)) {
            scan_cartouche();
            return TokenClass::cartouche;
        }
        if (const std::size_t n = symbol_escape_length(text_, pos_); n > 0) {
            pos_ += n;
            return TokenClass::symbol;
        }
        if (is_ident_start(c) || is_ascii_digit(c)) {
            const std::size_t start = pos_;
            if (is_ascii_digit(c)) {
                while (pos_ < text_.size() && is_ascii_digit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            } else {
                while (pos_ < text_.size() && is_ident_char(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            }
            const std::string_view word = text_.substr(start, pos_ - start);
            if (is_command_keyword(word)) return TokenClass::command_keyword;
            if (is_inner_keyword(word)) return TokenClass::inner_keyword;
            return TokenClass::identifier;
        }
        if (c < 0x80) {
            ++pos_;
            if (c < 0x20 || c == 0x7F) return TokenClass::unknown;
            return TokenClass::symbol;
        }
        const std::size_t n = utf8_length(text_, pos_);
        if (n == 0) {
            ++pos_;
            return TokenClass::unknown;
        }
        pos_ += n;
        return TokenClass::symbol;
    }

    void scan_comment() {
        int depth = 0;
        while (pos_ < text_.size()) {
            if (starts_with_at(text_, pos_, "(*")) {
                ++depth;
                pos_ += 2;
            } else if (starts_with_at(text_, pos_, "*)")) {
                pos_ += 2;
                if (--depth == 0) return;
            } else {
                pos_ += unit_length(text_, pos_);
            }
        }
    }

    void scan_string() {
        ++pos_;
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == '\\' && pos_ + 1 < text_.size()) {
                pos_ += 1 + unit_length(text_, pos_ + 1);
            } else if (c == '"') {
                ++pos_;
                return;
            } else {
                pos_ += unit_length(text_, pos_);
            }
        }
    }

    void scan_cartouche() {
        int depth = 0;
        while (pos_ < text_.size()) {
            if (starts_with_at(text_, pos_, kOpenCartouche)) {
                ++depth;
                pos_ += kOpenCartouche.size();
            } else if (starts_with_at(text_, pos_, kOpenCartoucheAscii)) {
                ++depth;
                pos_ += kOpenCartoucheAscii.size();
            } else if (starts_with_at(text_, pos_, kCloseCartouche) ||
                       starts_with_at(text_, pos_, kCloseCartoucheAscii)) {
                pos_ += starts_with_at(text_, pos_, kCloseCartouche) ? kCloseCartouche.size()
                                                                      : kCloseCartoucheAscii.size();
                if (--depth == 0) return;
            } else {
                pos_ += unit_length(text_, pos_);
            }
        }
    }

    void emit(TokenClass cls, std::size_t start) {
        Token tok;
        tok.cls = cls;
        tok.text = std::string(text_.substr(start, pos_ - start));
        tok.offset = start;
        tok.range.line = line_;
        tok.range.column = column_;
        advance_position(tok.text, line_, column_);
        tok.range.end_line = line_;
        tok.range.end_column = column_;
        tokens_.push_back(std::move(tok));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int column_ = 0;
    std::vector<Token> tokens_;
};

}  // namespace

std::size_t symbol_escape_length(std::string_view s, std::size_t i) {
    if (!starts_with_at(s, i, "\\<")) return 0;
    std::size_t j = i + 2;
    if (j < s.size() && s[j] == '^') ++j;
    const std::size_t name_start = j;
    while (j < s.size() && is_ident_char(static_cast<unsigned char>(s[j]))) ++j;
    if (j == name_start || j >= s.size() || s[j] != '>') return 0;
    return j + 1 - i;
}

std::string_view to_string(TokenClass c) {
    switch (c) {
    case TokenClass::command_keyword: return "command-keyword";
    case TokenClass::inner_keyword: return "inner-keyword";
    case TokenClass::identifier: return "identifier";
    case TokenClass::symbol: return "symbol";
    case TokenClass::string_literal: return "string-literal";
    case TokenClass::cartouche: return "cartouche";
    case TokenClass::comment: return "comment";
    case TokenClass::whitespace: return "whitespace";
    case TokenClass::unknown: return "unknown";
    }
    return "unknown";
}

bool is_command_keyword(std::string_view word) {
    return std::find(kCommandKeywords.begin(), kCommandKeywords.end(), word) != kCommandKeywords.end();
}

bool is_inner_keyword(std::string_view word) {
    return std::find(kInnerKeywords.begin(), kInnerKeywords.end(), word) != kInnerKeywords.end();
}

std::size_t code_point_length(std::string_view text, std::size_t i) { return unit_length(text, i); }

void advance_position(std::string_view text, int& line, int& column) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '\n') {
            ++line;
            column = 0;
            ++i;
        } else {
            ++column;
            i += unit_length(text, i);
        }
    }
}

std::vector<Token> tokenize(std::string_view text) { return Lexer(text).run(); }

}  // namespace prooflab::isar
