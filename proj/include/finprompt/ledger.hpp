#pragma once

#include "finprompt/event.hpp"
#include "finprompt/provider.hpp"
#include "finprompt/util.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::ledger {

// Event kinds a ledger may hold.
const std::vector<std::string>& event_kinds();
bool is_event_kind(std::string_view kind);

struct LedgerEvent {
    std::int64_t seq = 0;
    std::string timestamp;
    std::string kind;
    nlohmann::json payload;
    provider::UsageTotals usage;  // run totals after the event

    Event event() const { return {kind, payload}; }
    bool operator==(const LedgerEvent&) const = default;
};

// One line of JSON, without the newline.
std::string serialize(const LedgerEvent& e);
// Throws LedgerError carrying `expected_seq` when the line is not an event.
LedgerEvent parse_line(std::string_view line, std::int64_t expected_seq);

struct LedgerContents {
    std::vector<LedgerEvent> events;
    bool dropped_torn_tail = false;
    std::uintmax_t valid_bytes = 0;  // length of the well-formed prefix

    bool finished() const { return !events.empty() && events.back().kind == "run_finished"; }
    std::vector<Event> plain_events() const;
};

// Reads every event. Lines are written whole, newline included, so a final
// line without its newline was torn by a crash and is dropped with a
// warning. Any malformed complete line, gap or unknown kind throws
// LedgerError; IoError if the file cannot be read.
LedgerContents read_ledger(const std::string& path);

// Appends events with gapless sequence numbers, flushing every line.
class LedgerWriter {
public:
    using UsageSource = std::function<provider::UsageTotals()>;

    // Starts a new ledger; IoError if `path` already exists.
    static LedgerWriter create(const std::string& path, const Clock& clock, UsageSource usage = {});
    // Continues `contents`, cutting a torn tail off the file first.
    static LedgerWriter resume(const std::string& path, const LedgerContents& contents, const Clock& clock,
                               UsageSource usage = {});

    LedgerWriter(LedgerWriter&&) = default;

    const LedgerEvent& append(const Event& event);
    std::int64_t next_seq() const { return next_seq_; }
    const std::string& path() const { return path_; }
    void flush();

private:
    LedgerWriter(std::string path, std::int64_t next_seq, const Clock& clock, UsageSource usage);

    std::string path_;
    std::ofstream out_;
    std::int64_t next_seq_;
    const Clock* clock_;
    UsageSource usage_;
    LedgerEvent last_;
};

} // namespace finprompt::ledger
