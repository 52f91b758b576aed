#include <doctest.h>

#include "finprompt/error.hpp"
#include "finprompt/http_provider.hpp"
#include "finprompt/mock_provider.hpp"
#include "finprompt/provider.hpp"
#include "support.hpp"

#include <deque>

using namespace finprompt;
using namespace finprompt::provider;

namespace {

ChatRequest simple(RoleTag role, const std::string& user = "hello") { return make_request(role, "sys", user); }

struct FakeTransport : HttpTransport {
    std::deque<HttpResult> replies;
    int failures_before_reply = 0;
    int calls = 0;
    std::string last_body;
    HttpHeaders last_headers;

    HttpResult post(const std::string&, const std::string& body, const HttpHeaders& headers) override {
        ++calls;
        last_body = body;
        last_headers = headers;
        if (failures_before_reply > 0) {
            --failures_before_reply;
            throw TransportFailure("connection reset");
        }
        if (replies.empty()) return {503, "unavailable"};
        auto r = replies.front();
        if (replies.size() > 1) replies.pop_front();
        return r;
    }
};

std::string ok_body(const std::string& text) {
    return nlohmann::json{{"choices", {{{"message", {{"content", text}}}}}},
                          {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}}}
        .dump();
}

HttpBackendConfig http_config() {
    HttpBackendConfig c;
    c.endpoint = "https://example.invalid/v1/chat/completions";
    c.model = "test-model";
    c.api_key = "secret";
    return c;
}

} // namespace

TEST_CASE("role parameters") {
    CHECK(role_params(RoleTag::generator).temperature == 0.5);
    CHECK(role_params(RoleTag::voter).temperature == 0.0);
    CHECK(role_params(RoleTag::analyzer).temperature == 0.0);
    CHECK(role_params(RoleTag::recommender).temperature == 0.5);
    CHECK(role_params(RoleTag::reviser).temperature == 0.0);
    CHECK(role_params(RoleTag::solver).temperature == 0.0);
    CHECK(role_params(RoleTag::generator).max_tokens == 2048);
    CHECK(role_params(RoleTag::reviser).max_tokens == 2048);
    CHECK(role_params(RoleTag::voter).max_tokens == 512);
    CHECK(role_params(RoleTag::solver).max_tokens == 512);
    for (auto r : kAllRoles) CHECK(role_from_string(to_string(r)) == r);
}

TEST_CASE("request validation") {
    ChatRequest empty;
    CHECK_THROWS_AS(empty.validate(), ContractError);

    auto r = simple(RoleTag::solver);
    r.messages.front().speaker = Speaker::user;
    CHECK_THROWS_AS(r.validate(), ContractError);

    r = simple(RoleTag::solver);
    r.temperature = 2.5;
    CHECK_THROWS_AS(r.validate(), ContractError);
    r.temperature = -0.1;
    CHECK_THROWS_AS(r.validate(), ContractError);
    r.temperature = 2.0;
    CHECK_NOTHROW(r.validate());
    r.max_tokens = 0;
    CHECK_THROWS_AS(r.validate(), ContractError);
}

TEST_CASE("mock: first matching rule wins and is deterministic") {
    auto m = test_support::mock({{"rules",
                                  {{{"role", "generator"}, {"response", "CANNED"}},
                                   {{"role", "solver"}, {"contains", {"alpha"}}, {"response", "A"}},
                                   {{"role", "solver"}, {"response", "B"}}}},
                                 {"default_response", "DEFAULT"}});
    CHECK(m->complete(simple(RoleTag::generator, "anything at all")).text == "CANNED");
    CHECK(m->complete(simple(RoleTag::solver, "alpha beta")).text == "A");
    CHECK(m->complete(simple(RoleTag::solver, "beta")).text == "B");
    CHECK(m->complete(simple(RoleTag::voter, "beta")).text == "DEFAULT");

    const auto req = simple(RoleTag::solver, "alpha");
    const auto a = m->complete(req);
    const auto b = m->complete(req);
    CHECK(a.text == b.text);
    CHECK(a.usage.total() == b.usage.total());
    CHECK(a.backend_id == "mock");
}

TEST_CASE("mock: empty messages is a contract error") {
    auto m = test_support::mock({{"default_response", "x"}});
    CHECK_THROWS_AS(m->complete(ChatRequest{}), ContractError);
}

TEST_CASE("mock: exclusions, patterns and capture groups") {
    auto m = test_support::mock({{"rules",
                                  {{{"role", "*"}, {"not_contains", {"skip"}}, {"pattern", "value=(\\d+)"},
                                    {"response", "got {{1}}"}}}},
                                 {"default_response", "none"}});
    CHECK(m->complete(simple(RoleTag::solver, "value=42")).text == "got 42");
    CHECK(m->complete(simple(RoleTag::solver, "value=42 skip")).text == "none");
    CHECK(m->complete(simple(RoleTag::solver, "no value")).text == "none");
}

TEST_CASE("mock: malformed scripts are schema errors") {
    CHECK_THROWS_AS(ScriptedBehavior::from_json(nlohmann::json::array()), SchemaError);
    CHECK_THROWS_AS(ScriptedBehavior::from_json({{"rules", {{{"role", "nobody"}, {"response", ""}}}}}), SchemaError);
    CHECK_THROWS_AS(ScriptedBehavior::from_json({{"rules", {{{"role", "solver"}}}}}), SchemaError);
    CHECK_THROWS_AS(MockProvider(ScriptedBehavior::from_json(
                        {{"rules", {{{"pattern", "("}, {"response", ""}}}}})),
                    SchemaError);
}

TEST_CASE("usage meter refuses at the boundary") {
    auto inner = test_support::mock({{"default_response", "ok"}});
    const auto req = simple(RoleTag::solver, "abcd");
    const auto need = prompt_token_upper_bound(req) + req.max_tokens;

    SUBCASE("ceiling exactly one call") {
        auto meter = std::make_shared<UsageMeter>(UsageLimits{need, std::nullopt});
        BudgetedProvider p(inner, meter);
        CHECK_NOTHROW(p.complete(req));
        const auto used = meter->totals();
        CHECK(used.calls == 1);
        CHECK(used.tokens <= need);
        // Whatever is left is less than a worst-case call, so the next one is refused up front.
        CHECK_THROWS_AS(p.complete(req), BudgetExceeded);
        CHECK(meter->totals() == used);
    }
    SUBCASE("zero ceiling refuses the first call") {
        auto meter = std::make_shared<UsageMeter>(UsageLimits{0, std::nullopt});
        BudgetedProvider p(inner, meter);
        CHECK_THROWS_AS(p.complete(req), BudgetExceeded);
        CHECK(meter->totals().calls == 0);
    }
    SUBCASE("call ceiling") {
        auto meter = std::make_shared<UsageMeter>(UsageLimits{std::nullopt, 2});
        BudgetedProvider p(inner, meter);
        p.complete(req);
        p.complete(req);
        CHECK_THROWS_AS(p.complete(req), BudgetExceeded);
    }
    SUBCASE("cumulative usage never exceeds the ceiling") {
        const std::int64_t ceiling = 5000;
        auto meter = std::make_shared<UsageMeter>(UsageLimits{ceiling, std::nullopt});
        BudgetedProvider p(inner, meter);
        int ok = 0;
        for (int i = 0; i < 100; ++i) {
            try {
                p.complete(simple(RoleTag::solver, std::string(static_cast<std::size_t>(i * 7 % 300), 'x')));
                ++ok;
            } catch (const BudgetExceeded&) {
            }
            CHECK(meter->totals().tokens <= ceiling);
        }
        CHECK(ok > 0);
    }
}

TEST_CASE("provider set routes roles and shares one meter") {
    auto a = test_support::mock({{"default_response", "A"}});
    auto b = test_support::mock({{"default_response", "B"}});
    ProviderSet set(a);
    set.set(RoleTag::solver, b);
    CHECK(set.for_role(RoleTag::generator).complete(simple(RoleTag::generator)).text == "A");
    CHECK(set.for_role(RoleTag::solver).complete(simple(RoleTag::solver)).text == "B");

    auto meter = std::make_shared<UsageMeter>(UsageLimits{});
    auto metered = set.with_meter(meter);
    metered.for_role(RoleTag::voter).complete(simple(RoleTag::voter));
    metered.for_role(RoleTag::solver).complete(simple(RoleTag::solver));
    CHECK(meter->totals().calls == 2);
    CHECK(metered.shared_for_role(RoleTag::voter) == metered.shared_for_role(RoleTag::generator));

    ProviderSet none;
    CHECK_THROWS_AS(none.for_role(RoleTag::solver), ContractError);
}

TEST_CASE("backoff schedule") {
    BackoffPolicy p;
    CHECK(p.ceiling_for_retry(1).count() == 500);
    CHECK(p.ceiling_for_retry(2).count() == 1000);
    CHECK(p.ceiling_for_retry(3).count() == 2000);
    CHECK(p.ceiling_for_retry(20).count() == 30000);
    std::mt19937_64 rng(1);
    for (int k = 1; k <= 8; ++k) {
        for (int i = 0; i < 50; ++i) {
            const auto d = p.delay_for_retry(k, rng);
            CHECK(d.count() >= 0);
            CHECK(d <= p.ceiling_for_retry(k));
        }
    }
}

TEST_CASE("http provider: success, body and headers") {
    auto t = std::make_unique<FakeTransport>();
    auto* raw = t.get();
    raw->replies.push_back({200, ok_body("The answer is 60")});
    HttpChatProvider p(http_config(), std::move(t), [](auto) {});
    auto req = simple(RoleTag::solver, "q");
    req.seed = 7;
    const auto resp = p.complete(req);
    CHECK(resp.text == "The answer is 60");
    CHECK(resp.usage.prompt_tokens == 11);
    CHECK(resp.usage.completion_tokens == 7);
    const auto body = nlohmann::json::parse(raw->last_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["seed"] == 7);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "q");
    CHECK(raw->last_headers.at(0).second == "Bearer secret");
}

TEST_CASE("http provider: seed is omitted when the backend does not take one") {
    auto cfg = http_config();
    cfg.send_seed = false;
    HttpChatProvider p(cfg, std::make_unique<FakeTransport>(), [](auto) {});
    auto req = simple(RoleTag::solver);
    req.seed = 3;
    CHECK_FALSE(nlohmann::json::parse(p.request_body(req)).contains("seed"));
}

TEST_CASE("http provider: retries transient failures up to max_attempts") {
    SUBCASE("always failing transport") {
        auto t = std::make_unique<FakeTransport>();
        auto* raw = t.get();
        raw->failures_before_reply = 1000;
        int sleeps = 0;
        HttpChatProvider p(http_config(), std::move(t), [&](auto) { ++sleeps; });
        CHECK_THROWS_AS(p.complete(simple(RoleTag::solver)), TransportError);
        CHECK(raw->calls == 5);
        CHECK(sleeps == 4);
    }
    SUBCASE("rate limited then success") {
        auto t = std::make_unique<FakeTransport>();
        auto* raw = t.get();
        raw->replies = {{429, "slow down"}, {500, "oops"}, {200, ok_body("fine")}};
        HttpChatProvider p(http_config(), std::move(t), [](auto) {});
        CHECK(p.complete(simple(RoleTag::solver)).text == "fine");
        CHECK(raw->calls == 3);
    }
    SUBCASE("custom attempt cap") {
        auto cfg = http_config();
        cfg.backoff.max_attempts = 2;
        auto t = std::make_unique<FakeTransport>();
        auto* raw = t.get();
        HttpChatProvider p(cfg, std::move(t), [](auto) {});
        CHECK_THROWS_AS(p.complete(simple(RoleTag::solver)), TransportError);
        CHECK(raw->calls == 2);
    }
}

TEST_CASE("http provider: auth and client errors fail fast") {
    for (int status : {401, 403}) {
        auto t = std::make_unique<FakeTransport>();
        auto* raw = t.get();
        raw->replies.push_back({status, "denied"});
        HttpChatProvider p(http_config(), std::move(t), [](auto) {});
        CHECK_THROWS_AS(p.complete(simple(RoleTag::solver)), AuthError);
        CHECK(raw->calls == 1);
    }
    auto t = std::make_unique<FakeTransport>();
    t->replies.push_back({400, "bad request"});
    HttpChatProvider p(http_config(), std::move(t), [](auto) {});
    CHECK_THROWS_AS(p.complete(simple(RoleTag::solver)), TransportError);

    auto cfg = http_config();
    cfg.api_key.clear();
    HttpChatProvider keyless(cfg, std::make_unique<FakeTransport>(), [](auto) {});
    CHECK_THROWS_AS(keyless.complete(simple(RoleTag::solver)), AuthError);
}

TEST_CASE("http provider: malformed body is a transport error") {
    auto t = std::make_unique<FakeTransport>();
    t->replies.push_back({200, "{\"nope\": 1}"});
    HttpChatProvider p(http_config(), std::move(t), [](auto) {});
    CHECK_THROWS_AS(p.complete(simple(RoleTag::solver)), TransportError);
}
