#pragma once

#include "prooflab/common.hpp"
#include "prooflab/isar/tokenizer.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace prooflab::isar {

enum class StructureCode {
    unbalanced_bracket,
    unclosed_comment,
    unclosed_string,
    proof_without_qed,
    qed_without_proof,
    missing_theory_header,
};

std::string_view to_string(StructureCode code);

struct StructureDiagnostic {
    StructureCode code;
    SourceRange range;
    std::string message;

    bool operator==(const StructureDiagnostic&) const = default;
};

/// Structural pre-assessment of a token stream: bracket balance (outside and
/// inside term quotations), proof/qed block pairing, begin/end pairing and the
/// `theory NAME imports ... begin ... end` frame. Results are ordered by range.
std::vector<StructureDiagnostic> check_structure(std::span<const Token> tokens);

struct FoldRegion {
    int start_line;
    int end_line;

    auto operator<=>(const FoldRegion&) const = default;
};

/// One region per matched proof/qed pair and per nested begin/end block
/// (the theory body itself is not folded). Outer regions precede inner ones.
std::vector<FoldRegion> fold_regions(std::span<const Token> tokens);

Diagnostic to_diagnostic(const StructureDiagnostic& d);

/// Name in the first `theory NAME` header, or empty when there is none.
std::string theory_header_name(std::span<const Token> tokens);
std::string theory_header_name(std::string_view text);

}  // namespace prooflab::isar
