#include <doctest.h>

#include "finprompt/cli.hpp"
#include "finprompt/corpus.hpp"
#include "finprompt/ledger.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace finprompt;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = FINPROMPT_SOURCE_DIR;

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "finprompt");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string datasets(bool all = false) {
    std::string s = "[datasets]\nSimpShort = \"" + (kRoot / "data/sample/simpshort.jsonl").string() + "\"\nCompShort = \"" +
                    (kRoot / "data/sample/compshort.jsonl").string() + "\"\n";
    if (all)
        s += "SimpLong = \"" + (kRoot / "data/sample/simplong.jsonl").string() + "\"\nCompLong = \"" +
             (kRoot / "data/sample/complong.jsonl").string() + "\"\n";
    return s;
}

// The cooperative config with its paths made absolute, plus `extra` lines.
std::string write_config(const test_support::TempDir& dir, const std::string& name, const std::string& script,
                         const std::string& budgets_extra = "", bool all_data = false) {
    std::string text = "regime = \"Short\"\nrng_seed = 7\nledger_path = \"run.jsonl\"\nseed_prompt = \"base\"\n\n" +
                       datasets(all_data) +
                       "\n[budgets]\nexamples = 5\nmax_refinements = 10\ninner_cap = 4\nmax_regenerations = 5\n" +
                       budgets_extra + "\n[evaluator]\nconcurrency = 4\n\n[backend.default]\nkind = \"mock\"\nscript = \"" +
                       (kRoot / "data/mock" / script).string() + "\"\n";
    const auto path = dir.file(name);
    std::ofstream(path) << text;
    return path;
}

std::string golden() { return read_file((kRoot / "tests/golden/cooperative.jsonl").string()); }

std::string first_lines(const std::string& text, std::size_t n) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos = text.find('\n', pos) + 1;
    return text.substr(0, pos);
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

} // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"--help"}).code == cli::kExitOk);
    CHECK(invoke({"optimize"}).code == cli::kExitUsage);
    CHECK(invoke({"optimize", "--config", "x.toml", "--bogus"}).code == cli::kExitUsage);
    const auto r = invoke({"optimize", "--config", "/no/such/config.toml"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("cannot read config") != std::string::npos);
}

TEST_CASE("optimize with the cooperative mock reproduces the golden ledger") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    const auto out_prompt = dir.file("final.txt");
    const auto r = invoke({"optimize", "--config", cfg, "--logical-clock", "--out", out_prompt});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("final prompt: v5") != std::string::npos);
    CHECK(r.out.find("100.00") != std::string::npos);
    const auto ledger_text = read_file(dir.file("run.jsonl"));
    CHECK(ledger_text == golden());
    CHECK(read_file(out_prompt).find("[fix:5]") != std::string::npos);

    SUBCASE("a second optimize refuses to overwrite") {
        const auto again = invoke({"optimize", "--config", cfg});
        CHECK(again.code == cli::kExitUsage);
        CHECK(again.err.find("already exists") != std::string::npos);
    }
    SUBCASE("resume on a finished ledger is a no-op") {
        const auto again = invoke({"resume", "--config", cfg});
        CHECK(again.code == cli::kExitOk);
        CHECK(again.out.find("nothing to do") != std::string::npos);
        CHECK(read_file(dir.file("run.jsonl")) == ledger_text);
    }
}

TEST_CASE("resume after example_accepted #2 matches the uninterrupted run") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    const auto g = golden();
    const auto events = ledger::read_ledger((kRoot / "tests/golden/cooperative.jsonl").string()).events;
    std::size_t cut = 0, seen = 0;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events[i].kind == "example_accepted" && ++seen == 2) cut = i + 1;
    REQUIRE(cut > 0);
    std::ofstream(dir.file("run.jsonl"), std::ios::binary) << first_lines(g, cut);
    const auto r = invoke({"resume", "--config", cfg, "--logical-clock", "--out", dir.file("final.txt")});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("after " + std::to_string(cut) + " events") != std::string::npos);
    CHECK(read_file(dir.file("run.jsonl")) == g);
}

TEST_CASE("a corrupted ledger line is reported by sequence number") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    auto text = first_lines(golden(), 12);
    const auto start = first_lines(text, 9).size();
    text.replace(start, text.find('\n', start) - start, "{\"seq\":9,");
    std::ofstream(dir.file("run.jsonl"), std::ios::binary) << text;
    const auto r = invoke({"resume", "--config", cfg});
    CHECK(r.code != cli::kExitOk);
    CHECK(r.err.find("ledger event 9") != std::string::npos);
}

TEST_CASE("a missing dataset path fails before any ledger exists") {
    test_support::TempDir dir("cli");
    const auto cfg = dir.file("bad.toml");
    std::ofstream(cfg) << "ledger_path = \"run.jsonl\"\n[datasets]\nSimpShort = \"missing.jsonl\"\n[backend.default]\n"
                          "script = \""
                       << (kRoot / "data/mock/cooperative.json").string() << "\"\n";
    const auto r = invoke({"optimize", "--config", cfg});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("dataset file not found") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.file("run.jsonl")));
}

TEST_CASE("a zero token ceiling aborts with a resumable ledger") {
    test_support::TempDir dir("cli");
    const auto capped = write_config(dir, "capped.toml", "cooperative.json", "token_ceiling = 0\n");
    const auto r = invoke({"optimize", "--config", capped, "--logical-clock"});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("budget") != std::string::npos);
    CHECK(r.err.find("resume") != std::string::npos);
    const auto partial = ledger::read_ledger(dir.file("run.jsonl"));
    REQUIRE(partial.events.size() == 1);
    CHECK(partial.events[0].kind == "run_started");

    const auto open = write_config(dir, "open.toml", "cooperative.json");
    CHECK(invoke({"resume", "--config", open, "--logical-clock"}).code == cli::kExitOk);
    CHECK(read_file(dir.file("run.jsonl")) == golden());
}

TEST_CASE("an interrupt stops after the event in flight and the run resumes") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    cli::request_interrupt();
    const auto r = invoke({"optimize", "--config", cfg, "--logical-clock"});
    cli::clear_interrupt();
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("interrupted") != std::string::npos);
    CHECK(ledger::read_ledger(dir.file("run.jsonl")).events.size() == 1);
    CHECK(invoke({"resume", "--config", cfg, "--logical-clock"}).code == cli::kExitOk);
    CHECK(read_file(dir.file("run.jsonl")) == golden());
}

TEST_CASE("overrides reach the recorded run options") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    const auto r = invoke({"optimize", "--config", cfg, "--logical-clock", "--t-max", "2", "--max-difficulty", "3",
                        "--mock", (kRoot / "data/mock/adversarial.json").string(), "--ledger", dir.file("o.jsonl")});
    REQUIRE(r.code == cli::kExitOk);
    const auto events = ledger::read_ledger(dir.file("o.jsonl")).events;
    const auto& opts = events.front().payload.at("options");
    CHECK(opts.at("max_refinements") == 2);
    CHECK(opts.at("c_max") == 3);
    for (const auto& e : events)
        if (e.kind == "example_accepted") CHECK(e.payload.at("difficulty").get<int>() <= 3);
    // The adversarial reviser never helps.
    CHECK(r.out.find("refinements accepted: 0") != std::string::npos);
}

TEST_CASE("evaluate prints the subset table and writes JSON") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "evaluate_fixture.json", "", true);
    const auto json_out = dir.file("report.json");
    const auto r = invoke({"evaluate", "--config", cfg, "--prompt", "synthesized-long", "--out", json_out});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("Avg. Acc") != std::string::npos);
    CHECK(r.out.find("69.54") != std::string::npos);
    CHECK(r.out.find("66.62") != std::string::npos);
    const auto report = nlohmann::json::parse(read_file(json_out));
    CHECK(report.at("per_subset").at("SimpShort").at("correct") == 173);

    const auto simp_long = invoke({"evaluate", "--config", cfg, "--subset", "SimpLong"});
    REQUIRE(simp_long.code == cli::kExitOk);
    CHECK(simp_long.out.find("SimpLong") != std::string::npos);
    CHECK(simp_long.out.find("CompShort") == std::string::npos);
    CHECK(simp_long.out.find(" 100") != std::string::npos);

    std::ofstream(dir.file("empty.jsonl")) << "";
    const auto empty = invoke({"evaluate", "--config", cfg, "--dataset", dir.file("empty.jsonl")});
    CHECK(empty.code == cli::kExitRuntime);
    CHECK(empty.err.find("empty") != std::string::npos);
}

TEST_CASE("generate writes verified examples in the corpus schema") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    const auto out = dir.file("gen.jsonl");
    REQUIRE(invoke({"generate", "--config", cfg, "--count", "3", "--out", out}).code == cli::kExitOk);
    const auto examples = corpus::load_dataset(out);
    REQUIRE(examples.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(examples[i].difficulty == i + 1);
        CHECK(examples[i].origin == corpus::Origin::synthetic);
    }

    const auto zero = dir.file("zero.jsonl");
    CHECK(invoke({"generate", "--config", cfg, "-n", "0", "--out", zero}).code == cli::kExitOk);
    CHECK(fs::exists(zero));
    CHECK(fs::file_size(zero) == 0);

    const auto garbage = dir.file("garbage.json");
    std::ofstream(garbage) << R"({"rules": [], "default_response": "no idea"})";
    const auto r = invoke({"generate", "--config", cfg, "-n", "2", "--mock", garbage, "--out", dir.file("none.jsonl")});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("attempt(s)") != std::string::npos);
    CHECK(line_count(read_file(dir.file("none.jsonl"))) == 0);
}

TEST_CASE("show-config prints a document that parses to the same config") {
    test_support::TempDir dir("cli");
    const auto cfg = write_config(dir, "c.toml", "cooperative.json");
    const auto r = invoke({"show-config", "--config", cfg});
    REQUIRE(r.code == cli::kExitOk);
    std::ofstream(dir.file("again.toml")) << r.out;
    const auto again = invoke({"show-config", "--config", dir.file("again.toml")});
    CHECK(again.out == r.out);
}
