#include "finprompt/ledger.hpp"

#include "finprompt/error.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

namespace finprompt::ledger {

using nlohmann::json;

const std::vector<std::string>& event_kinds() {
    static const std::vector<std::string> kinds{
        "run_started", "generated",      "kl_gate",         "verdict",        "consensus",
        "example_accepted", "eval",      "error_slice",     "patch",          "revision",
        "local_confirm", "global_confirm", "prompt_accepted", "final_selected", "run_finished"};
    return kinds;
}

bool is_event_kind(std::string_view kind) {
    const auto& k = event_kinds();
    return std::find(k.begin(), k.end(), kind) != k.end();
}

std::string serialize(const LedgerEvent& e) {
    json j{{"seq", e.seq},
           {"ts", e.timestamp},
           {"kind", e.kind},
           {"payload", e.payload},
           {"usage", json{{"tokens", e.usage.tokens}, {"calls", e.usage.calls}}}};
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

LedgerEvent parse_line(std::string_view line, std::int64_t expected_seq) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw LedgerError(expected_seq, std::string("malformed JSON: ") + e.what());
    }
    try {
        LedgerEvent e;
        e.seq = j.at("seq").get<std::int64_t>();
        e.timestamp = j.at("ts").get<std::string>();
        e.kind = j.at("kind").get<std::string>();
        e.payload = j.at("payload");
        e.usage.tokens = j.at("usage").at("tokens").get<std::int64_t>();
        e.usage.calls = j.at("usage").at("calls").get<std::int64_t>();
        if (e.seq != expected_seq)
            throw LedgerError(expected_seq, "sequence number " + std::to_string(e.seq) + " breaks the sequence");
        if (!is_event_kind(e.kind)) throw LedgerError(expected_seq, "unknown event kind '" + e.kind + "'");
        return e;
    } catch (const json::exception& e) {
        throw LedgerError(expected_seq, std::string("bad event fields: ") + e.what());
    }
}

std::vector<Event> LedgerContents::plain_events() const {
    std::vector<Event> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.event());
    return out;
}

LedgerContents read_ledger(const std::string& path) {
    const std::string text = read_file(path);
    LedgerContents out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view line(text.data() + pos, (nl == std::string::npos ? text.size() : nl) - pos);
        const auto seq = static_cast<std::int64_t>(out.events.size());
        if (nl == std::string::npos) {
            log_warn("ledger " + path + ": dropping incomplete final line (event " + std::to_string(seq) + ")");
            out.dropped_torn_tail = true;
            break;
        }
        out.events.push_back(parse_line(line, seq));
        pos = nl + 1;
        out.valid_bytes = pos;
    }
    return out;
}

LedgerWriter::LedgerWriter(std::string path, std::int64_t next_seq, const Clock& clock, UsageSource usage)
    : path_(std::move(path)), next_seq_(next_seq), clock_(&clock), usage_(std::move(usage)) {
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot open ledger " + path_ + " for writing");
}

LedgerWriter LedgerWriter::create(const std::string& path, const Clock& clock, UsageSource usage) {
    if (std::filesystem::exists(path)) throw IoError("ledger " + path + " already exists");
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    return LedgerWriter(path, 0, clock, std::move(usage));
}

LedgerWriter LedgerWriter::resume(const std::string& path, const LedgerContents& contents, const Clock& clock,
                                  UsageSource usage) {
    if (std::filesystem::file_size(path) != contents.valid_bytes) std::filesystem::resize_file(path, contents.valid_bytes);
    return LedgerWriter(path, static_cast<std::int64_t>(contents.events.size()), clock, std::move(usage));
}

const LedgerEvent& LedgerWriter::append(const Event& event) {
    if (!is_event_kind(event.kind)) throw ContractError("unknown event kind " + event.kind);
    last_ = LedgerEvent{next_seq_, clock_->timestamp(), event.kind, event.payload, usage_ ? usage_() : provider::UsageTotals{}};
    out_ << serialize(last_) << '\n';
    out_.flush();
    if (!out_) throw IoError("write to ledger " + path_ + " failed");
    ++next_seq_;
    return last_;
}

void LedgerWriter::flush() { out_.flush(); }

} // namespace finprompt::ledger
