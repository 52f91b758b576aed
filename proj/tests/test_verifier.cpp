#include <doctest.h>

#include "finprompt/error.hpp"
#include "finprompt/generator.hpp"
#include "finprompt/verifier.hpp"
#include "oracle_fuzz.hpp"
#include "support.hpp"

#include <algorithm>
#include <memory>

using namespace finprompt;
using namespace finprompt::verifier;
using generator::CandidateExample;

namespace {

CandidateExample sample_candidate() {
    return generator::parse_candidate(test_support::read_fixture("generated_sample.txt"), 3, "syn-1");
}

CandidateExample with(std::string passage, std::string question, double gold) {
    CandidateExample c;
    c.example.id = "c";
    c.example.passage = std::move(passage);
    c.example.question = std::move(question);
    c.example.gold_answer = gold;
    c.example.origin = corpus::Origin::synthetic;
    c.example.difficulty = 1;
    return c;
}

// A voter backend that fails the test if it is ever called.
struct NoCalls : provider::Provider {
    int calls = 0;
    provider::ChatResponse complete(const provider::ChatRequest&) override {
        ++calls;
        return {"FINAL ANSWER: -99999", {}, "nocalls"};
    }
    std::string id() const override { return "nocalls"; }
};

} // namespace

TEST_CASE("oracle on the generated sample") {
    const auto c = sample_candidate();
    const auto tables = corpus::extract_tables(c.example.passage);
    CHECK(oracle_answer(tables, c.example.question) == 60.0);
    CHECK(oracle_answer(tables, "What is Research & Development in 2020?") == 320.0);
    CHECK(oracle_answer(tables, "What is the total of 'Europe' across 2020, 2021 and 2022?") == 930.0);
    CHECK(oracle_answer(tables, "What is the change in Asia from 2020 to 2023?") == 60.0);
    CHECK(oracle_answer(tables, "By how much did Sales & Marketing decrease from 2020 to 2023?") == 30.0);
    CHECK(oracle_answer(tables, "What is the ratio of North America to Europe in 2020?") == 2.0);
    CHECK(oracle_answer(tables, "What is the difference between Europe and Asia in 2023?") == 70.0);
    CHECK(oracle_answer(tables, "What is the sum of Europe and Asia in 2021?") == 530.0);
    CHECK(oracle_answer(tables, "What is the percentage increase in Asia from 2020 to 2023?") == std::nullopt);
    CHECK(oracle_answer(tables, "What is the average of Europe over 2020 and 2021?") == std::nullopt);
    CHECK(oracle_answer(tables, "What is 'Latin America' in 2020?") == std::nullopt);
    CHECK(oracle_answer(tables, "What is Europe in 2020 multiplied by 2?") == std::nullopt);
    CHECK(oracle_answer(tables, "What is Europe in 2019?") == std::nullopt);
    CHECK(oracle_answer(tables, "Describe the company.") == std::nullopt);
    // Ordinal rows need a single table.
    CHECK(oracle_answer(tables, "What is the value in the second row for 2020?") == std::nullopt);
    CHECK(oracle_answer({}, "What is Europe in 2020?") == std::nullopt);
}

TEST_CASE("oracle matches brute force on random tables") {
    oracle_fuzz::Generator gen(12345);
    int mismatches = 0, answered = 0;
    for (int i = 0; i < 1500; ++i) {
        const auto c = gen.next();
        const auto tables = corpus::extract_tables(c.passage);
        REQUIRE(tables.size() == c.tables.size());
        const auto got = oracle_answer(tables, c.question);
        if (got != c.expected) {
            ++mismatches;
            MESSAGE(c.op << ": " << c.question);
        }
        if (got) ++answered;
    }
    CHECK(mismatches == 0);
    CHECK(answered > 1000);
}

TEST_CASE("oracle agrees with the sample corpus gold answers") {
    for (const char* name : {"simpshort", "compshort", "simplong", "complong"}) {
        const auto examples = corpus::load_dataset(test_support::data_path(std::string("data/sample/") + name + ".jsonl"));
        for (const auto& e : examples) {
            const auto v = oracle_answer(corpus::extract_tables(e.passage), e.question);
            REQUIRE_MESSAGE(v.has_value(), e.id << ": " << e.question);
            CHECK(evaluator::compare(*v, e.gold_answer, 1e-6, 1e-6));
        }
    }
}

TEST_CASE("structural voter") {
    CHECK(vote_structural(sample_candidate()).accepted());

    auto ragged = with("Intro\n|A|2020|2021|\n|---|---|---|\n|x|1|2|\n|y|3|\n", "What is x in 2020?", 1);
    const auto v = vote_structural(ragged);
    CHECK_FALSE(v.accepted());
    CHECK(v.reason.find("row 2") != std::string::npos);
    CHECK(v.reason.find("'y'") != std::string::npos);

    auto empty_q = sample_candidate();
    empty_q.example.question = "  ";
    CHECK_FALSE(vote_structural(empty_q).accepted());

    auto no_table = with("Only prose here.", "What is x?", 1);
    CHECK_FALSE(vote_structural(no_table).accepted());
}

TEST_CASE("numerical voter") {
    NoCalls none;
    auto c = sample_candidate();
    const auto ok = vote_numerical(c, none);
    CHECK(ok.accepted());
    CHECK(ok.evidence == "oracle=60");

    c.example.gold_answer = 61;
    const auto bad = vote_numerical(c, none);
    CHECK_FALSE(bad.accepted());
    CHECK(bad.evidence == "oracle=60");
    CHECK(none.calls == 0);

    SUBCASE("LLM fallback for questions outside the grammar") {
        auto free_form = sample_candidate();
        free_form.example.question = "Which region grew fastest and by how many units did it grow overall?";
        free_form.example.gold_answer = 150;
        auto voter = test_support::mock(
            {{"rules", {{{"role", "voter"}, {"contains", {"grew fastest"}}, {"response", "Work...\nFINAL ANSWER: 150"}}}},
             {"default_response", "FINAL ANSWER: 0"}});
        const auto v = vote_numerical(free_form, *voter);
        CHECK(v.accepted());
        CHECK(v.evidence == "llm=150");
        free_form.example.gold_answer = 140;
        CHECK_FALSE(vote_numerical(free_form, *voter).accepted());
    }
    SUBCASE("tolerance comes from the options") {
        auto near = sample_candidate();
        near.example.gold_answer = 60.5;
        CHECK(vote_numerical(near, none).accepted());
        VerifierOptions exact;
        exact.tolerance = evaluator::Tolerance::exact();
        CHECK_FALSE(vote_numerical(near, none, exact).accepted());
    }
}

TEST_CASE("table permutation") {
    const auto passage = sample_candidate().example.passage;
    for (int k = 0; k < 6; ++k) {
        auto rng = derived_rng(1, "t", static_cast<std::uint64_t>(k));
        const auto out = permute_tables(passage, k, rng);
        const auto before = corpus::extract_tables(passage);
        const auto after = corpus::extract_tables(out);
        REQUIRE(after.size() == 2);
        const auto& same_slot = k % 2 ? before[1] : before[0];
        CHECK(after[0].stub == same_slot.stub);
        CHECK(after[0].rows.size() == same_slot.rows.size());
        bool moved = false;
        for (std::size_t r = 0; r < after[0].rows.size(); ++r)
            moved = moved || after[0].rows[r].label != same_slot.rows[r].label;
        CHECK(moved);
        CHECK(out.find("Total expenses and revenues have increased") != std::string::npos);
    }
    CHECK(permute_tables("no tables", 0, *std::make_unique<std::mt19937_64>(1)) == "no tables");
}

TEST_CASE("robustness voter") {
    NoCalls none;
    SUBCASE("generated sample is stable, including with swapped tables") {
        CHECK(vote_robustness(sample_candidate(), none).accepted());
        auto swapped = sample_candidate();
        auto rng = derived_rng(0, "swap", 0);
        swapped.example.passage = permute_tables(swapped.example.passage, 1, rng);
        CHECK(oracle_answer(corpus::extract_tables(swapped.example.passage), swapped.example.question) == 60.0);
        CHECK(vote_robustness(swapped, none).accepted());
    }
    SUBCASE("positional question is rejected") {
        auto c = with("Figures:\n|Item|2020|\n|---|---|\n|Alpha|10|\n|Beta|25|\n", "What is the value in the second row for 2020?",
                      25);
        CHECK(oracle_answer(corpus::extract_tables(c.example.passage), c.example.question) == 25.0);
        CHECK(vote_numerical(c, none).accepted());
        const auto v = vote_robustness(c, none);
        CHECK_FALSE(v.accepted());
        CHECK(v.reason.find("perturbation 0") != std::string::npos);
    }
    SUBCASE("zero perturbations accept vacuously") {
        VerifierOptions opt;
        opt.perturbations = 0;
        auto c = with("x", "y", 1);
        CHECK(vote_robustness(c, none, opt).accepted());
    }
    SUBCASE("synonym rewording keeps the oracle answer") {
        VerifierOptions opt;
        opt.reword = RewordMode::synonyms;
        CHECK(vote_robustness(sample_candidate(), none, opt).accepted());
        const auto reworded = reword_narrative(sample_candidate().example.passage);
        CHECK(reworded != sample_candidate().example.passage);
        CHECK(reworded.find("|Research & Development") != std::string::npos);
    }
    SUBCASE("llm rewording") {
        VerifierOptions opt;
        opt.reword = RewordMode::llm;
        auto voter = test_support::mock({{"default_response", "Reworded narrative."}});
        CHECK(vote_robustness(sample_candidate(), *voter, opt).accepted());
    }
    CHECK(none.calls == 0);
}

TEST_CASE("consensus is a pure conjunction") {
    for (int mask = 0; mask < 8; ++mask) {
        std::vector<Verdict> vs;
        for (int i = 0; i < 3; ++i) {
            const bool ok = mask & (1 << i);
            vs.push_back(ok ? Verdict::accept(kAllVoters[static_cast<std::size_t>(i)], "fine")
                            : Verdict::reject(kAllVoters[static_cast<std::size_t>(i)], "bad"));
        }
        std::reverse(vs.begin(), vs.end());  // order must not matter
        const auto r = combine(vs);
        CHECK(r.accepted() == (mask == 7));
        REQUIRE(r.verdicts.size() == 3);
        CHECK(r.verdicts[0].voter == VoterId::structural);
    }
    CHECK_THROWS_AS(combine({Verdict::accept(VoterId::structural, "a"), Verdict::accept(VoterId::numerical, "b")}),
                    ContractError);
    CHECK_THROWS_AS(combine({Verdict::accept(VoterId::structural, "a"), Verdict::accept(VoterId::numerical, "b"),
                             Verdict::accept(VoterId::numerical, "c")}),
                    ContractError);
    CHECK_THROWS_AS(Verdict::reject(VoterId::numerical, ""), ContractError);
}

TEST_CASE("consensus runs every voter and is repeatable") {
    NoCalls none;
    const auto a = consensus(sample_candidate(), none);
    CHECK(a.accepted());
    CHECK(a.verdicts.size() == 3);
    CHECK(consensus(sample_candidate(), none) == a);

    auto tampered = sample_candidate();
    tampered.example.gold_answer = 61;
    const auto r = consensus(tampered, none);
    CHECK_FALSE(r.accepted());
    // The robustness voter still ran and left its verdict after the numerical rejection.
    CHECK(r.verdicts[2].voter == VoterId::robustness);
    CHECK_FALSE(r.verdicts[2].accepted());
    CHECK(r.verdicts[0].accepted());
    CHECK(r.rejection_summary().find("numerical: ") != std::string::npos);
}

TEST_CASE("verdict json round trip") {
    const auto v = Verdict::reject(VoterId::robustness, "unstable", "p0:oracle=1");
    CHECK(nlohmann::json(v).get<Verdict>() == v);
    const auto a = Verdict::accept(VoterId::numerical, "ok");
    CHECK(nlohmann::json(a).get<Verdict>() == a);
}
