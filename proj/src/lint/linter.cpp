#include "prooflab/lint/linter.hpp"

#include "prooflab/isar/tokenizer.hpp"

#include <boost/regex.hpp>

#include <set>

namespace prooflab::lint {

struct LintRule::Compiled {
    boost::regex re;
};

namespace {

RuleSpec automation_rule(const std::string& tactic) {
    return RuleSpec{"no-automation/" + tactic, tactic, Severity::warning,
                    "automatic tactic '{token}' is not allowed in this activity"};
}

bool lintable(isar::TokenClass cls) {
    using isar::TokenClass;
    switch (cls) {
    case TokenClass::command_keyword:
    case TokenClass::inner_keyword:
    case TokenClass::identifier:
    case TokenClass::symbol:
    case TokenClass::unknown:
        return true;
    default:
        return false;
    }
}

}  // namespace

void to_json(json& j, const RuleSpec& r) {
    j = json{{"id", r.id}, {"pattern", r.pattern}, {"severity", to_string(r.severity)}, {"message", r.message_template}};
}

void from_json(const json& j, RuleSpec& r) {
    r.id = j.at("id").get<std::string>();
    r.pattern = j.at("pattern").get<std::string>();
    r.severity = parse_severity(j.value("severity", std::string("warning")));
    if (r.severity == Severity::info) {
        throw Error(ErrorCode::invalid_argument, "lint rule '" + r.id + "': severity must be warning or error");
    }
    r.message_template = j.value("message", std::string("'{token}' is not allowed in this activity"));
}

void to_json(json& j, const LinterConfig& c) {
    j = json{{"builtins", c.builtins}, {"rules", c.rules}, {"toggle_allowed", c.student_toggleable}, {"enforce", c.enforce}};
}

void from_json(const json& j, LinterConfig& c) {
    c.builtins = j.value("builtins", std::vector<std::string>{});
    c.rules = j.value("rules", std::vector<RuleSpec>{});
    c.student_toggleable = j.value("toggle_allowed", true);
    c.enforce = j.value("enforce", false);
}

std::vector<RuleSpec> builtin_rules(std::string_view name) {
    if (name == "no-automation") {
        return {automation_rule("auto"), automation_rule("simp"), automation_rule("arith"), automation_rule("blast")};
    }
    return {};
}

LintRule::LintRule(RuleSpec spec) : spec_(std::move(spec)), compiled_(std::make_unique<Compiled>()) {
    try {
        compiled_->re = boost::regex(spec_.pattern, boost::regex::perl);
    } catch (const boost::regex_error& e) {
        throw Error(ErrorCode::invalid_pattern, "rule '" + spec_.id + "': invalid pattern at position " +
                                                    std::to_string(e.position()) + ": " + e.what());
    }
}

LintRule::~LintRule() = default;
LintRule::LintRule(LintRule&&) noexcept = default;
LintRule& LintRule::operator=(LintRule&&) noexcept = default;

bool LintRule::matches(std::string_view token_text) const {
    return boost::regex_match(token_text.begin(), token_text.end(), compiled_->re);
}

std::string LintRule::render_message(std::string_view token_text) const {
    std::string out = spec_.message_template;
    constexpr std::string_view placeholder = "{token}";
    for (auto pos = out.find(placeholder); pos != std::string::npos;
         pos = out.find(placeholder, pos + token_text.size())) {
        out.replace(pos, placeholder.size(), token_text);
    }
    return out;
}

Ruleset compile_ruleset(const LinterConfig& config) {
    Ruleset rs;
    rs.student_toggleable = config.student_toggleable;
    rs.enforce = config.enforce;
    std::vector<RuleSpec> specs;
    for (const auto& name : config.builtins) {
        auto expanded = builtin_rules(name);
        if (expanded.empty()) {
            throw Error(ErrorCode::invalid_argument, "unknown built-in lint rule group '" + name + "'");
        }
        specs.insert(specs.end(), expanded.begin(), expanded.end());
    }
    specs.insert(specs.end(), config.rules.begin(), config.rules.end());

    std::set<std::string> seen;
    for (auto& spec : specs) {
        if (!seen.insert(spec.id).second) {
            throw Error(ErrorCode::invalid_argument, "duplicate lint rule id '" + spec.id + "'");
        }
        rs.rules.emplace_back(std::move(spec));
    }
    return rs;
}

std::vector<Diagnostic> lint(std::string_view text, const Ruleset& rules) {
    std::vector<Diagnostic> out;
    if (rules.empty()) return out;
    for (const auto& tok : isar::tokenize(text)) {
        if (!lintable(tok.cls)) continue;
        for (const auto& rule : rules.rules) {
            if (rule.matches(tok.text)) {
                out.push_back(Diagnostic{DiagnosticSource::linter, rule.spec().severity, rule.id(),
                                         rule.render_message(tok.text), tok.range});
            }
        }
    }
    return out;
}

}  // namespace prooflab::lint
