#pragma once

#include "finprompt/provider.hpp"

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::provider {

// One scripted reply. A rule matches when the role agrees (or is unset),
// every `contains_all` string occurs in the request text, no
// `contains_none` string occurs, and `pattern` (if any) is found.
// `{{N}}` in the response is replaced by capture group N of `pattern`.
struct MatchRule {
    std::optional<RoleTag> role;
    std::vector<std::string> contains_all;
    std::vector<std::string> contains_none;
    std::optional<std::string> pattern;
    std::string response;
};

struct ScriptedBehavior {
    std::vector<MatchRule> rules;
    std::string default_response;

    // {"rules": [{"role": "solver", "contains": [...], "not_contains": [...],
    //             "pattern": "...", "response": "..."}], "default_response": "..."}
    static ScriptedBehavior from_json(const nlohmann::json& doc);
    static ScriptedBehavior load(const std::string& path);
};

// Deterministic test double: first matching rule wins; no network, no
// hidden state. Token usage is estimated from byte counts.
class MockProvider final : public Provider {
public:
    explicit MockProvider(ScriptedBehavior behavior);

    ChatResponse complete(const ChatRequest& request) override;
    std::string id() const override { return "mock"; }

    const ScriptedBehavior& behavior() const { return behavior_; }

private:
    struct CompiledRule {
        MatchRule rule;
        std::optional<std::regex> regex;
    };

    ScriptedBehavior behavior_;
    std::vector<CompiledRule> compiled_;
};

} // namespace finprompt::provider
