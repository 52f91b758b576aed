#include <doctest.h>

#include "finprompt/assets.hpp"
#include "finprompt/error.hpp"
#include "finprompt/evaluator.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace finprompt;
using namespace finprompt::evaluator;

namespace {

struct Throwing : provider::Provider {
    provider::ChatResponse complete(const provider::ChatRequest& r) override {
        if (r.messages.back().text.find("boom") != std::string::npos) throw TransportError("boom");
        return {"1", {}, "throwing"};
    }
    std::string id() const override { return "throwing"; }
};

std::vector<corpus::Example> fixture_examples() {
    std::vector<corpus::Example> all;
    for (const char* name : {"simpshort", "compshort", "simplong", "complong"}) {
        auto part = corpus::load_dataset(test_support::data_path(std::string("data/sample/") + name + ".jsonl"));
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

} // namespace

TEST_CASE("compare") {
    CHECK(compare(60, 60, 0, 0));
    CHECK(compare(60.5, 60, 0.01, 0));
    CHECK(compare(60.59, 60, 0.01, 0));
    CHECK_FALSE(compare(60.61, 60, 0.01, 0));
    CHECK_FALSE(compare(60.0001, 60, 0, 0));
    CHECK(compare(-60.5, -60, 0.01, 0));
    CHECK_FALSE(compare(60, -60, 0.01, 0));
    // Near zero the absolute floor decides.
    CHECK(compare(5e-7, 0, 0.01, 1e-6));
    CHECK_FALSE(compare(2e-6, 0, 0.01, 1e-6));
    CHECK_FALSE(compare(std::nan(""), 1, 0.01, 1e-6));
    CHECK_FALSE(compare(std::numeric_limits<double>::infinity(), 1, 0.01, 1e-6));
    CHECK_THROWS_AS(compare(1, 1, -0.1, 0), ContractError);
    CHECK_THROWS_AS(compare(1, 1, 0, -1), ContractError);
    CHECK(compare(100.9, 100, Tolerance{}));
    CHECK_FALSE(compare(100.9, 100, Tolerance::exact()));
}

TEST_CASE("compare is symmetric in sign and monotone in tolerance") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1e4, 1e4), t(0, 0.2);
    for (int i = 0; i < 2000; ++i) {
        const double p = d(rng), g = d(rng), r1 = t(rng), r2 = r1 + t(rng);
        CHECK(compare(p, g, r1, 0) == compare(-p, -g, r1, 0));
        if (compare(p, g, r1, 0)) CHECK(compare(p, g, r2, 0));
        CHECK(compare(g, g, r1, 0));
    }
}

TEST_CASE("normalize_number") {
    CHECK(normalize_number("$1,914") == 1914.0);
    CHECK(normalize_number("(25)") == -25.0);
    CHECK(normalize_number("12.5%") == 12.5);
    CHECK(normalize_number(" -3 ") == -3.0);
    CHECK(normalize_number("abc") == std::nullopt);
    CHECK(normalize_number("") == std::nullopt);
}

TEST_CASE("solve extracts the last number") {
    const auto e = test_support::real_example("e1", "|A|2020|\n|---|---|\n|x|60|\n", "What is x in 2020?", 60);
    LogicalClock clock;
    auto solver = test_support::mock({{"rules",
                                       {{{"contains", {"first"}}, {"response", "The final answer is 60"}},
                                        {{"contains", {"second"}}, {"response", "I do not know."}},
                                        {{"contains", {"third"}}, {"response", "answers: 50 and 10"}}}},
                                      {"default_response", "Answer: $60.4"}});
    const auto p1 = solve("first prompt", e, *solver, {}, clock);
    CHECK(p1.correct);
    CHECK(p1.parsed_answer == 60.0);
    CHECK(p1.example_id == "e1");
    CHECK(p1.latency_ms == 0);
    CHECK(p1.raw_output == "The final answer is 60");

    const auto p2 = solve("second prompt", e, *solver, {}, clock);
    CHECK_FALSE(p2.correct);
    CHECK_FALSE(p2.parsed_answer.has_value());

    const auto p3 = solve("third prompt", e, *solver, {}, clock);
    CHECK(p3.parsed_answer == 10.0);
    CHECK_FALSE(p3.correct);

    CHECK(solve("other", e, *solver, {}, clock).correct);
    CHECK_FALSE(solve("other", e, *solver, Tolerance::exact(), clock).correct);
    CHECK_THROWS_AS(solve("", e, *solver, {}, clock), ContractError);

    const auto req = solver_request("SYS", e);
    CHECK(req.role == provider::RoleTag::solver);
    REQUIRE(req.messages.size() == 2);
    CHECK(req.messages[0].text == "SYS");
    CHECK(req.messages[1].text == e.passage + "\n\n" + e.question);
}

TEST_CASE("prediction json round trip") {
    Prediction p{"x", "out 3", 3.0, true, 12};
    CHECK(nlohmann::json(p).get<Prediction>() == p);
    Prediction q{"y", "none", std::nullopt, false, 0};
    CHECK(nlohmann::json(q).get<Prediction>() == q);
}

TEST_CASE("accuracy on small sets") {
    std::vector<corpus::Example> es{
        test_support::real_example("a", "|A|1|\n|---|---|\n|x|1|\n", "q1 alpha", 5, corpus::Subset::SimpShort),
        test_support::real_example("b", "|A|1|\n|---|---|\n|x|1|\n", "q2 beta", 7, corpus::Subset::SimpShort)};
    auto all_right = test_support::mock({{"rules",
                                          {{{"contains", {"alpha"}}, {"response", "5"}},
                                           {{"contains", {"beta"}}, {"response", "7"}}}},
                                         {"default_response", "0"}});
    auto half = test_support::mock({{"rules", {{{"contains", {"alpha"}}, {"response", "5"}}}}, {"default_response", "0"}});
    CHECK(accuracy("p", "v0", es, *all_right).overall == 1.0);
    const auto r = accuracy("p", "v0", es, *half);
    CHECK(r.overall == 0.5);
    CHECK(r.macro == 0.5);
    CHECK(r.correct_count() == 1);
    CHECK(r.prompt_version == "v0");
    CHECK(r.per_subset.at("SimpShort") == SubsetScore{2, 1, 0.5});
    CHECK_THROWS_AS(accuracy("p", "v0", std::vector<corpus::Example>{}, *half), EmptySet);
    CHECK_THROWS_AS(build_report("v0", {}, {}), EmptySet);
}

TEST_CASE("accuracy on the mock evaluation fixture") {
    const auto examples = fixture_examples();
    REQUIRE(examples.size() == 800);
    auto solver = test_support::mock(nlohmann::json::parse(read_file(test_support::data_path("data/mock/evaluate_fixture.json"))));
    EvalOptions opt;
    LogicalClock clock;
    opt.clock = &clock;
    const auto r = accuracy(*assets::preset_prompt("base"), "base", examples, *solver, opt);

    // Independent count: the fixture answers the first k examples of each subset.
    const std::map<std::string, std::size_t> expected{{"SimpShort", 173}, {"CompShort", 166}, {"SimpLong", 66}, {"CompLong", 128}};
    for (const auto& [name, k] : expected) CHECK(r.per_subset.at(name).correct == k);
    CHECK(r.per_subset.at("SimpShort").n == 200);
    CHECK(r.per_subset.at("CompLong").n == 300);
    const double macro = (173.0 / 200 + 166.0 / 200 + 66.0 / 100 + 128.0 / 300) / 4;
    const double weighted = (173.0 + 166 + 66 + 128) / 800;
    CHECK(r.macro == doctest::Approx(macro).epsilon(1e-12));
    CHECK(r.overall == doctest::Approx(weighted).epsilon(1e-12));
    CHECK(r.overall == doctest::Approx(0.66625));

    const auto text = format_report(r);
    CHECK(text.find("69.54") != std::string::npos);
    CHECK(text.find("66.62") != std::string::npos);
    CHECK(text.find("Avg. Acc") != std::string::npos);
    CHECK(text.find("SimpShort") < text.find("CompShort"));
    CHECK(text.find("CompShort") < text.find("SimpLong"));
    CHECK(text.find("SimpLong") < text.find("CompLong"));

    SUBCASE("order invariance and parallel determinism") {
        auto shuffled = examples;
        std::mt19937_64 rng(3);
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        EvalOptions one = opt;
        one.concurrency = 1;
        const auto s = accuracy(*assets::preset_prompt("base"), "base", shuffled, *solver, one);
        CHECK(s.overall == r.overall);
        CHECK(s.macro == r.macro);
        CHECK(s.per_subset == r.per_subset);
        for (std::size_t i = 0; i < shuffled.size(); ++i) CHECK(s.predictions[i].example_id == shuffled[i].id);

        EvalOptions many = opt;
        many.concurrency = 8;
        const auto m = accuracy(*assets::preset_prompt("base"), "base", examples, *solver, many);
        CHECK(m.predictions == r.predictions);
    }
}

TEST_CASE("provider errors propagate") {
    std::vector<corpus::Example> es;
    for (int i = 0; i < 10; ++i)
        es.push_back(test_support::real_example("e" + std::to_string(i), "p", i == 6 ? "boom" : "q", 1));
    Throwing t;
    CHECK_THROWS_AS(accuracy("p", "v", es, t), TransportError);
}

TEST_CASE("subset keys") {
    auto e = test_support::real_example("a", "p", "q", 1);
    CHECK(subset_key(e) == "unlabelled");
    e.subset = corpus::Subset::CompLong;
    CHECK(subset_key(e) == "CompLong");
    auto s = test_support::real_example("b", "p", "q", 1);
    s.origin = corpus::Origin::synthetic;
    CHECK(subset_key(s) == "synthetic");
}
