#include <doctest.h>

#include "finprompt/error.hpp"
#include "finprompt/ledger.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>

using namespace finprompt;
using namespace finprompt::ledger;
using nlohmann::json;

namespace {

void write_raw(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        out.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return out;
}

} // namespace

TEST_CASE("events serialize to one sorted-key line and parse back") {
    LedgerEvent e{3, "1970-01-01T00:00:00Z", "patch", json{{"b", 1}, {"a", "x\ny"}}, {120, 4}};
    const auto line = serialize(e);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.rfind("{\"kind\":\"patch\",\"payload\":{\"a\":", 0) == 0);
    CHECK(parse_line(line, 3) == e);
}

TEST_CASE("parse_line names the sequence number it expected") {
    const auto good = serialize({0, "t", "run_started", json::object(), {}});
    try {
        parse_line(good, 5);
        FAIL("gap accepted");
    } catch (const LedgerError& err) {
        CHECK(err.sequence_no() == 5);
    }
    CHECK_THROWS_AS(parse_line(serialize({2, "t", "coffee_break", json::object(), {}}), 2), LedgerError);
    CHECK_THROWS_AS(parse_line("{\"seq\":0}", 0), LedgerError);
    CHECK_THROWS_AS(parse_line("not json", 0), LedgerError);
    CHECK(event_kinds().size() == 15);
    CHECK(is_event_kind("final_selected"));
}

TEST_CASE("the writer produces a gapless ledger that reads back") {
    test_support::TempDir dir("ledger");
    const auto path = dir.file("sub/run.jsonl");
    LogicalClock clock;
    std::int64_t calls = 0;
    {
        auto w = LedgerWriter::create(path, clock, [&] { return provider::UsageTotals{calls * 10, calls}; });
        for (const char* kind : {"run_started", "generated", "kl_gate"}) {
            ++calls;
            w.append({kind, json{{"k", kind}}});
        }
        CHECK(w.next_seq() == 3);
    }
    const auto c = read_ledger(path);
    REQUIRE(c.events.size() == 3);
    for (std::size_t i = 0; i < c.events.size(); ++i) CHECK(c.events[i].seq == static_cast<std::int64_t>(i));
    CHECK(c.events.back().usage == provider::UsageTotals{30, 3});
    CHECK_FALSE(c.dropped_torn_tail);
    CHECK_FALSE(c.finished());
    CHECK(c.valid_bytes == std::filesystem::file_size(path));

    CHECK_THROWS_AS(LedgerWriter::create(path, clock), IoError);
    auto w = LedgerWriter::create(dir.file("other.jsonl"), clock);
    CHECK_THROWS_AS(w.append({"bogus", json::object()}), ContractError);
}

TEST_CASE("a torn final line is dropped and cut off on resume") {
    test_support::TempDir dir("ledger");
    const auto golden = read_file(test_support::data_path("tests/golden/cooperative.jsonl"));
    const auto lines = lines_of(golden);
    const auto path = dir.file("torn.jsonl");
    write_raw(path, lines[0] + "\n" + lines[1] + "\n" + lines[2].substr(0, 40));

    const auto c = read_ledger(path);
    CHECK(c.events.size() == 2);
    CHECK(c.dropped_torn_tail);
    CHECK(c.valid_bytes == lines[0].size() + lines[1].size() + 2);

    LogicalClock clock;
    auto w = LedgerWriter::resume(path, c, clock);
    CHECK(w.next_seq() == 2);
    const auto third = parse_line(lines[2], 2);
    w.append(third.event());
    w.flush();
    // Same clock and no usage source: only usage may differ from the golden line.
    const auto again = read_ledger(path);
    REQUIRE(again.events.size() == 3);
    CHECK(again.events[2].payload == third.payload);
    CHECK_FALSE(again.dropped_torn_tail);
}

TEST_CASE("a malformed complete line is an error naming its sequence number") {
    test_support::TempDir dir("ledger");
    const auto lines = lines_of(read_file(test_support::data_path("tests/golden/cooperative.jsonl")));
    const auto path = dir.file("bad.jsonl");
    write_raw(path, lines[0] + "\n" + lines[1] + "\n{oops\n" + lines[3] + "\n");
    try {
        read_ledger(path);
        FAIL("corruption accepted");
    } catch (const LedgerError& e) {
        CHECK(e.sequence_no() == 2);
    }
    write_raw(path, lines[0] + "\n" + lines[2] + "\n");
    try {
        read_ledger(path);
        FAIL("gap accepted");
    } catch (const LedgerError& e) {
        CHECK(e.sequence_no() == 1);
    }
    CHECK_THROWS_AS(read_ledger(dir.file("missing.jsonl")), IoError);
}

TEST_CASE("the golden ledger is well formed") {
    const auto c = read_ledger(test_support::data_path("tests/golden/cooperative.jsonl"));
    REQUIRE(c.finished());
    CHECK(c.events.front().kind == "run_started");
    CHECK(c.events[c.events.size() - 2].kind == "final_selected");
    std::int64_t last_calls = 0;
    for (const auto& e : c.events) {
        CHECK(e.usage.calls >= last_calls);
        last_calls = e.usage.calls;
        CHECK(e.timestamp == "1970-01-01T00:00:00Z");
    }
}
