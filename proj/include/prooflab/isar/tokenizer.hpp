#pragma once

#include "prooflab/common.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace prooflab::isar {

enum class TokenClass {
    command_keyword,
    inner_keyword,
    identifier,
    symbol,
    string_literal,
    cartouche,
    comment,
    whitespace,
    unknown,
};

std::string_view to_string(TokenClass c);

struct Token {
    TokenClass cls = TokenClass::unknown;
    std::string text;
    SourceRange range;
    std::size_t offset = 0;  // byte offset into the tokenized input

    bool is_trivia() const { return cls == TokenClass::whitespace || cls == TokenClass::comment; }
    bool is(TokenClass c, std::string_view t) const { return cls == c && text == t; }
};

/// Lossless tokenization: concatenating the text of every token reproduces
/// the input byte for byte. `(* *)` comments and `‹ ›` cartouches nest;
/// unterminated ones run to end of input. Bytes that are not valid UTF-8
/// become single-byte unknown tokens.
std::vector<Token> tokenize(std::string_view text);

bool is_command_keyword(std::string_view word);
bool is_inner_keyword(std::string_view word);

/// Byte length of an Isabelle symbol `\<name>` or `\<^name>` at `i`, or 0.
std::size_t symbol_escape_length(std::string_view text, std::size_t i);

/// Byte length of the code point at `i`; 1 for a malformed byte.
std::size_t code_point_length(std::string_view text, std::size_t i);

/// Advances a line/column position over `text` (code-point columns).
void advance_position(std::string_view text, int& line, int& column);

}  // namespace prooflab::isar
