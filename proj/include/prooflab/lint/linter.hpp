#pragma once

#include "prooflab/common.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace prooflab::lint {

/// Declarative form of a rule as written in an activity configuration.
struct RuleSpec {
    std::string id;
    std::string pattern;
    Severity severity = Severity::warning;
    /// `{token}` is replaced by the matched token text.
    std::string message_template;
};

struct LinterConfig {
    /// Names of built-in rule groups, e.g. "no-automation".
    std::vector<std::string> builtins;
    std::vector<RuleSpec> rules;
    bool student_toggleable = true;
    /// Reject submissions with error-severity lint diagnostics.
    bool enforce = false;
};

void to_json(json& j, const RuleSpec& r);
void from_json(const json& j, RuleSpec& r);
void to_json(json& j, const LinterConfig& c);
void from_json(const json& j, LinterConfig& c);

/// Expansion of a built-in rule group, or empty if unknown.
std::vector<RuleSpec> builtin_rules(std::string_view name);

class LintRule {
public:
    LintRule(RuleSpec spec);  // throws Error(invalid_pattern)
    ~LintRule();
    LintRule(LintRule&&) noexcept;
    LintRule& operator=(LintRule&&) noexcept;

    const std::string& id() const { return spec_.id; }
    const RuleSpec& spec() const { return spec_; }

    /// Whole-token match.
    bool matches(std::string_view token_text) const;
    std::string render_message(std::string_view token_text) const;

private:
    struct Compiled;
    RuleSpec spec_;
    std::unique_ptr<Compiled> compiled_;
};

struct Ruleset {
    std::vector<LintRule> rules;
    bool student_toggleable = true;
    bool enforce = false;

    bool empty() const { return rules.empty(); }
};

/// Expands built-ins and compiles every pattern. Rule ids must be unique.
/// Throws Error(invalid_pattern) naming the rule id and the offending
/// position within its pattern.
Ruleset compile_ruleset(const LinterConfig& config);

/// One diagnostic per (rule, matching token), in source order. Only
/// identifier, keyword, symbol and unknown tokens are considered; comments,
/// string literals and cartouches are never matched.
std::vector<Diagnostic> lint(std::string_view text, const Ruleset& rules);

}  // namespace prooflab::lint
