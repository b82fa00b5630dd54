#include "prooflab/isar/structure.hpp"

#include <algorithm>
#include <array>
#include <optional>

namespace prooflab::isar {

namespace {

struct BracketPair {
    std::string_view open;
    std::string_view close;
};

constexpr std::array kOuterBrackets = std::to_array<BracketPair>({{"(", ")"}, {"[", "]"}, {"{", "}"}});

// Brackets recognised inside term quotations, including the Isabelle
// meta-level brackets in both their Unicode and ASCII-symbol spellings.
constexpr std::array kInnerBrackets = std::to_array<BracketPair>({
    {"(", ")"},
    {"[", "]"},
    {"{", "}"},
    {"\xE2\x9F\xA6", "\xE2\x9F\xA7"},  // ⟦ ⟧
    {"\\<lbrakk>", "\\<rbrakk>"},
});

constexpr std::array kDocumentCommands = std::to_array<std::string_view>(
    {"text", "txt", "section", "subsection", "subsubsection", "chapter", "paragraph"});

SourceRange range_from(int line, int column, std::string_view text) {
    SourceRange r{line, column, line, column};
    advance_position(text, r.end_line, r.end_column);
    return r;
}

/// Sub-range covering the first `prefix_bytes` bytes of a token.
SourceRange prefix_range(const Token& tok, std::size_t prefix_bytes) {
    return range_from(tok.range.line, tok.range.column, std::string_view(tok.text).substr(0, prefix_bytes));
}

bool comment_closed(std::string_view text) {
    int depth = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.substr(i, 2) == "(*") {
            ++depth;
            i += 2;
        } else if (text.substr(i, 2) == "*)") {
            i += 2;
            if (--depth == 0) return i == text.size();
        } else {
            ++i;
        }
    }
    return false;
}

bool string_closed(std::string_view text) {
    if (text.size() < 2 || text.back() != '"') return false;
    // The closing quote must not be escaped.
    std::size_t i = 1;
    while (i < text.size()) {
        if (text[i] == '\\') {
            i += 2;
        } else if (text[i] == '"') {
            return i == text.size() - 1;
        } else {
            ++i;
        }
    }
    return false;
}

bool cartouche_closed(std::string_view text) {
    constexpr std::string_view open_u = "\xE2\x80\xB9", close_u = "\xE2\x80\xBA";
    constexpr std::string_view open_a = "\\<open>", close_a = "\\<close>";
    int depth = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.substr(i, open_u.size()) == open_u) {
            ++depth;
            i += open_u.size();
        } else if (text.substr(i, open_a.size()) == open_a) {
            ++depth;
            i += open_a.size();
        } else if (text.substr(i, close_u.size()) == close_u || text.substr(i, close_a.size()) == close_a) {
            i += text.substr(i, close_u.size()) == close_u ? close_u.size() : close_a.size();
            if (--depth == 0) return i == text.size();
        } else {
            ++i;
        }
    }
    return false;
}

struct OpenBracket {
    std::size_t pair;
    SourceRange range;
};

class BracketChecker {
public:
    template <std::size_t N>
    BracketChecker(const std::array<BracketPair, N>& pairs, std::vector<StructureDiagnostic>& out)
        : pairs_(pairs.begin(), pairs.end()), out_(out) {}

    /// Returns the byte length of the bracket at `text`, or 0.
    std::size_t feed(std::string_view text, int line, int column) {
        for (std::size_t p = 0; p < pairs_.size(); ++p) {
            if (text.substr(0, pairs_[p].open.size()) == pairs_[p].open) {
                stack_.push_back({p, range_from(line, column, pairs_[p].open)});
                return pairs_[p].open.size();
            }
            if (text.substr(0, pairs_[p].close.size()) == pairs_[p].close) {
                close(p, range_from(line, column, pairs_[p].close));
                return pairs_[p].close.size();
            }
        }
        return 0;
    }

    void finish() {
        for (const auto& open : stack_) {
            report(open.range, "unclosed '" + std::string(pairs_[open.pair].open) + "'");
        }
        stack_.clear();
    }

private:
    void close(std::size_t pair, const SourceRange& range) {
        auto match = std::find_if(stack_.rbegin(), stack_.rend(),
                                  [&](const OpenBracket& o) { return o.pair == pair; });
        if (match == stack_.rend()) {
            report(range, "unmatched '" + std::string(pairs_[pair].close) + "'");
            return;
        }
        // Everything opened after the match is left unclosed.
        for (auto it = stack_.rbegin(); it != match; ++it) {
            report(it->range, "unclosed '" + std::string(pairs_[it->pair].open) + "' before '" +
                                  std::string(pairs_[pair].close) + "'");
        }
        stack_.erase(std::next(match).base(), stack_.end());
    }

    void report(const SourceRange& range, std::string message) {
        out_.push_back({StructureCode::unbalanced_bracket, range, std::move(message)});
    }

    std::vector<BracketPair> pairs_;
    std::vector<OpenBracket> stack_;
    std::vector<StructureDiagnostic>& out_;
};

/// Checks bracket balance inside one quotation token. Escapes (`\"`) and
/// symbols other than the bracket symbols are skipped.
void check_quotation(const Token& tok, std::vector<StructureDiagnostic>& out) {
    BracketChecker checker(kInnerBrackets, out);
    const std::string_view text = tok.text;
    int line = tok.range.line;
    int column = tok.range.column;
    std::size_t i = 0;
    auto step = [&](std::size_t n) {
        advance_position(text.substr(i, n), line, column);
        i += n;
    };
    // Skip the opening delimiter.
    if (tok.cls == TokenClass::string_literal) {
        step(1);
    } else {
        step(text.substr(0, 1) == "\\" ? 7 : 3);
    }
    while (i < text.size()) {
        if (const std::size_t n = checker.feed(text.substr(i), line, column); n > 0) {
            step(n);
            continue;
        }
        if (text[i] == '\\') {
            // Isabelle symbol, else an escaped character.
            if (const std::size_t n = symbol_escape_length(text, i); n > 0) {
                step(n);
                continue;
            }
            const std::size_t j = i + 1;
            step(j < text.size() ? 1 + code_point_length(text, j) : 1);
            continue;
        }
        step(code_point_length(text, i));
    }
    checker.finish();
}

class BlockChecker {
public:
    explicit BlockChecker(std::vector<StructureDiagnostic>& out) : out_(out) {}

    void on_keyword(const Token& tok) {
        if (tok.text == "proof") {
            stack_.push_back({Kind::proof, &tok});
        } else if (tok.text == "qed") {
            if (!stack_.empty() && stack_.back().kind == Kind::proof) {
                folds_.push_back({stack_.back().tok->range.line, tok.range.end_line});
                stack_.pop_back();
            } else {
                out_.push_back({StructureCode::qed_without_proof, tok.range, "'qed' without matching 'proof'"});
            }
        } else if (tok.text == "oops") {
            while (!stack_.empty() && stack_.back().kind == Kind::proof) stack_.pop_back();
        } else if (tok.text == "begin") {
            stack_.push_back({Kind::begin, &tok});
        } else if (tok.text == "end") {
            pop_proofs_unclosed();
            if (!stack_.empty()) {
                if (stack_.size() > 1 || !theory_frame_) {
                    folds_.push_back({stack_.back().tok->range.line, tok.range.end_line});
                } else {
                    theory_closed_ = true;
                }
                stack_.pop_back();
            }
        }
    }

    void open_theory_frame(const Token& begin_tok) {
        stack_.push_back({Kind::begin, &begin_tok});
        theory_frame_ = true;
    }

    void finish() {
        while (!stack_.empty()) {
            if (stack_.back().kind == Kind::proof) {
                report_unclosed_proof(*stack_.back().tok);
            }
            stack_.pop_back();
        }
    }

    bool theory_closed() const { return theory_closed_; }
    std::vector<FoldRegion>& folds() { return folds_; }

private:
    enum class Kind { proof, begin };
    struct Frame {
        Kind kind;
        const Token* tok;
    };

    void pop_proofs_unclosed() {
        while (!stack_.empty() && stack_.back().kind == Kind::proof) {
            report_unclosed_proof(*stack_.back().tok);
            stack_.pop_back();
        }
    }

    void report_unclosed_proof(const Token& tok) {
        out_.push_back({StructureCode::proof_without_qed, tok.range, "'proof' without matching 'qed'"});
    }

    std::vector<StructureDiagnostic>& out_;
    std::vector<Frame> stack_;
    std::vector<FoldRegion> folds_;
    bool theory_frame_ = false;
    bool theory_closed_ = false;
};

/// Index of the `begin` that terminates a well-formed theory header starting
/// at significant token `first`, or nullopt.
std::optional<std::size_t> match_header(const std::vector<const Token*>& sig, std::size_t first) {
    std::size_t i = first;
    if (i >= sig.size() || !sig[i]->is(TokenClass::command_keyword, "theory")) return std::nullopt;
    ++i;
    if (i >= sig.size() || sig[i]->cls != TokenClass::identifier) return std::nullopt;
    ++i;
    if (i >= sig.size() || !sig[i]->is(TokenClass::inner_keyword, "imports")) return std::nullopt;
    ++i;
    bool any_import = false;
    for (; i < sig.size(); ++i) {
        const Token& t = *sig[i];
        if (t.is(TokenClass::command_keyword, "begin")) {
            return any_import ? std::optional(i) : std::nullopt;
        }
        if (t.cls == TokenClass::command_keyword) return std::nullopt;
        if (t.cls == TokenClass::identifier || t.cls == TokenClass::string_literal) any_import = true;
    }
    return std::nullopt;
}

struct Analysis {
    std::vector<StructureDiagnostic> diagnostics;
    std::vector<FoldRegion> folds;
};

Analysis analyze(std::span<const Token> tokens) {
    Analysis result;
    auto& out = result.diagnostics;

    std::vector<const Token*> sig;
    for (const Token& tok : tokens) {
        if (tok.cls == TokenClass::comment) {
            if (!comment_closed(tok.text)) {
                out.push_back({StructureCode::unclosed_comment, prefix_range(tok, 2), "unterminated comment"});
            }
            continue;
        }
        if (tok.cls == TokenClass::whitespace) continue;
        sig.push_back(&tok);
    }

    // Theory frame.
    std::optional<std::size_t> header_begin;
    if (sig.empty()) {
        // An empty range where the header should start: the first comment, or the very beginning.
        SourceRange at{};
        const auto it = std::find_if(tokens.begin(), tokens.end(),
                                     [](const Token& t) { return t.cls != TokenClass::whitespace; });
        if (it != tokens.end()) at = {it->range.line, it->range.column, it->range.line, it->range.column};
        out.push_back({StructureCode::missing_theory_header, at, "missing 'theory ... imports ... begin' header"});
    } else if (header_begin = match_header(sig, 0); !header_begin) {
        out.push_back({StructureCode::missing_theory_header, sig.front()->range,
                       "missing 'theory ... imports ... begin' header"});
    }

    BracketChecker outer(kOuterBrackets, out);
    BlockChecker blocks(out);
    const Token* previous = nullptr;
    for (std::size_t i = 0; i < sig.size(); ++i) {
        const Token& tok = *sig[i];
        if (header_begin && i == *header_begin) {
            blocks.open_theory_frame(tok);
        } else if (tok.cls == TokenClass::command_keyword && (!header_begin || i > *header_begin)) {
            blocks.on_keyword(tok);
        }

        switch (tok.cls) {
        case TokenClass::symbol:
            outer.feed(tok.text, tok.range.line, tok.range.column);
            break;
        case TokenClass::string_literal:
            if (!string_closed(tok.text)) {
                out.push_back({StructureCode::unclosed_string, prefix_range(tok, 1), "unterminated string"});
            }
            check_quotation(tok, out);
            break;
        case TokenClass::cartouche: {
            if (!cartouche_closed(tok.text)) {
                out.push_back({StructureCode::unclosed_string, prefix_range(tok, tok.text.starts_with("\\") ? 7 : 3),
                               "unterminated cartouche"});
            }
            const bool prose = previous != nullptr && previous->cls == TokenClass::command_keyword &&
                               std::find(kDocumentCommands.begin(), kDocumentCommands.end(), previous->text) !=
                                   kDocumentCommands.end();
            if (!prose) check_quotation(tok, out);
            break;
        }
        default:
            break;
        }
        previous = &tok;
    }
    outer.finish();
    blocks.finish();

    if (header_begin && !blocks.theory_closed()) {
        out.push_back({StructureCode::missing_theory_header, sig.front()->range, "theory is not closed by 'end'"});
    }

    std::stable_sort(out.begin(), out.end(),
                     [](const StructureDiagnostic& a, const StructureDiagnostic& b) { return a.range < b.range; });
    result.folds = std::move(blocks.folds());
    return result;
}

}  // namespace

std::string_view to_string(StructureCode code) {
    switch (code) {
    case StructureCode::unbalanced_bracket: return "unbalanced-bracket";
    case StructureCode::unclosed_comment: return "unclosed-comment";
    case StructureCode::unclosed_string: return "unclosed-string";
    case StructureCode::proof_without_qed: return "proof-without-qed";
    case StructureCode::qed_without_proof: return "qed-without-proof";
    case StructureCode::missing_theory_header: return "missing-theory-header";
    }
    return "unknown";
}

std::vector<StructureDiagnostic> check_structure(std::span<const Token> tokens) {
    return analyze(tokens).diagnostics;
}

std::vector<FoldRegion> fold_regions(std::span<const Token> tokens) {
    auto folds = analyze(tokens).folds;
    std::sort(folds.begin(), folds.end(), [](const FoldRegion& a, const FoldRegion& b) {
        return a.start_line != b.start_line ? a.start_line < b.start_line : a.end_line > b.end_line;
    });
    return folds;
}

Diagnostic to_diagnostic(const StructureDiagnostic& d) {
    return Diagnostic{DiagnosticSource::structure, Severity::error, std::string(to_string(d.code)), d.message,
                      d.range};
}

std::string theory_header_name(std::span<const Token> tokens) {
    bool after_theory = false;
    for (const auto& tok : tokens) {
        if (tok.is_trivia()) continue;
        if (after_theory) return tok.cls == TokenClass::identifier ? tok.text : std::string();
        if (tok.is(TokenClass::command_keyword, "theory")) after_theory = true;
    }
    return {};
}

std::string theory_header_name(std::string_view text) { return theory_header_name(tokenize(text)); }

}  // namespace prooflab::isar
