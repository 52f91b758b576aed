#include "finprompt/mock_provider.hpp"

#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>

namespace finprompt::provider {

namespace {

std::vector<std::string> string_list(const nlohmann::json& rule, const char* key) {
    std::vector<std::string> out;
    if (!rule.contains(key)) return out;
    const auto& v = rule.at(key);
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
        for (const auto& s : v) out.push_back(s.get<std::string>());
    } else {
        throw SchemaError(std::string("mock rule field '") + key + "' must be a string or list");
    }
    return out;
}

std::string substitute_groups(const std::string& tmpl, const std::smatch& m) {
    std::string out;
    out.reserve(tmpl.size());
    for (size_t i = 0; i < tmpl.size();) {
        if (tmpl.compare(i, 2, "{{") == 0) {
            size_t close = tmpl.find("}}", i + 2);
            if (close != std::string::npos) {
                const std::string inner = tmpl.substr(i + 2, close - i - 2);
                if (!inner.empty() && std::all_of(inner.begin(), inner.end(), ::isdigit)) {
                    const size_t g = std::stoul(inner);
                    if (g < m.size()) out += m[g].str();
                    i = close + 2;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

} // namespace

ScriptedBehavior ScriptedBehavior::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("mock script must be a JSON object");
    ScriptedBehavior b;
    b.default_response = doc.value("default_response", std::string{});
    if (doc.contains("rules")) {
        for (const auto& r : doc.at("rules")) {
            MatchRule rule;
            const std::string role = r.value("role", std::string("*"));
            if (role != "*" && role != "any") {
                rule.role = role_from_string(role);
                if (!rule.role) throw SchemaError("mock rule has unknown role '" + role + "'");
            }
            rule.contains_all = string_list(r, "contains");
            rule.contains_none = string_list(r, "not_contains");
            if (r.contains("pattern")) rule.pattern = r.at("pattern").get<std::string>();
            if (!r.contains("response")) throw SchemaError("mock rule without 'response'");
            rule.response = r.at("response").get<std::string>();
            b.rules.push_back(std::move(rule));
        }
    }
    return b;
}

ScriptedBehavior ScriptedBehavior::load(const std::string& path) {
    const std::string text = read_file(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("mock script " + path + ": " + e.what());
    }
    return from_json(doc);
}

MockProvider::MockProvider(ScriptedBehavior behavior) : behavior_(std::move(behavior)) {
    for (const auto& rule : behavior_.rules) {
        CompiledRule c{rule, std::nullopt};
        if (rule.pattern) {
            try {
                c.regex.emplace(*rule.pattern, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw SchemaError("mock rule pattern '" + *rule.pattern + "': " + e.what());
            }
        }
        compiled_.push_back(std::move(c));
    }
}

ChatResponse MockProvider::complete(const ChatRequest& request) {
    request.validate();
    const std::string text = request.joined_text();

    std::string reply = behavior_.default_response;
    for (const auto& c : compiled_) {
        const MatchRule& rule = c.rule;
        if (rule.role && *rule.role != request.role) continue;
        const bool all = std::all_of(rule.contains_all.begin(), rule.contains_all.end(),
                                     [&](const std::string& s) { return text.find(s) != std::string::npos; });
        if (!all) continue;
        const bool none = std::none_of(rule.contains_none.begin(), rule.contains_none.end(),
                                       [&](const std::string& s) { return text.find(s) != std::string::npos; });
        if (!none) continue;
        if (c.regex) {
            std::smatch m;
            if (!std::regex_search(text, m, *c.regex)) continue;
            reply = substitute_groups(rule.response, m);
        } else {
            reply = rule.response;
        }
        break;
    }

    ChatResponse resp;
    resp.text = std::move(reply);
    resp.usage.prompt_tokens = estimate_tokens(text);
    resp.usage.completion_tokens = std::min<std::int64_t>(estimate_tokens(resp.text), request.max_tokens);
    resp.backend_id = id();
    return resp;
}

} // namespace finprompt::provider
