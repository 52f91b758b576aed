#include "finprompt/corpus.hpp"

#include "finprompt/util.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace finprompt::corpus {

namespace {

struct Line {
    std::size_t start;
    std::size_t end;  // exclusive, before the newline
    std::string_view text;
};

std::vector<Line> lines_with_offsets(std::string_view s) {
    std::vector<Line> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t nl = s.find('\n', start);
        std::size_t end = nl == std::string_view::npos ? s.size() : nl;
        std::size_t text_end = end;
        if (text_end > start && s[text_end - 1] == '\r') --text_end;
        out.push_back({start, text_end, s.substr(start, text_end - start)});
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return out;
}

bool is_pipe_line(std::string_view line) {
    for (char c : line) {
        if (c == ' ' || c == '\t') continue;
        return c == '|';
    }
    return false;
}

std::vector<std::string> split_cells(std::string_view line) {
    std::string t = trim(line);
    std::string_view body(t);
    if (!body.empty() && body.front() == '|') body.remove_prefix(1);
    if (!body.empty() && body.back() == '|') body.remove_suffix(1);
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t bar = body.find('|', start);
        cells.push_back(trim(body.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
        if (bar == std::string_view::npos) break;
        start = bar + 1;
    }
    return cells;
}

bool is_separator(const std::vector<std::string>& cells) {
    bool any = false;
    for (const auto& c : cells) {
        std::string compact;
        for (char ch : c)
            if (ch != ' ') compact += ch;
        if (compact.empty()) continue;
        std::string_view v(compact);
        if (v.front() == ':') v.remove_prefix(1);
        if (!v.empty() && v.back() == ':') v.remove_suffix(1);
        if (v.empty() || v.find_first_not_of('-') != std::string_view::npos) return false;
        any = true;
    }
    return any;
}

struct RunResult {
    std::optional<Table> table;
    std::optional<TableIssue> issue;
};

RunResult parse_run(const std::vector<Line>& run) {
    const std::pair<std::size_t, std::size_t> span{run.front().start, run.back().end};
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : run) {
        auto cells = split_cells(line.text);
        if (is_separator(cells)) continue;
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) return {std::nullopt, TableIssue{span, std::nullopt, "pipe run contains only separator rows"}};
    const auto& head = rows.front();
    if (head.size() < 2) {
        return {std::nullopt, TableIssue{span, std::nullopt, "table needs a label column and a value column"}};
    }
    if (rows.size() < 2) return {std::nullopt, TableIssue{span, std::nullopt, "table has no data rows"}};

    Table table;
    table.source_span = span;
    table.stub = head.front();
    table.header.assign(head.begin() + 1, head.end());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (cells.size() != head.size()) {
            std::ostringstream msg;
            msg << "row " << r << " ('" << cells.front() << "') has " << cells.size() - 1 << " value cell(s), header has "
                << head.size() - 1;
            return {std::nullopt, TableIssue{span, r, msg.str()}};
        }
        TableRow row;
        row.label = cells.front();
        for (std::size_t c = 1; c < cells.size(); ++c) row.cells.push_back({cells[c], parse_number(cells[c])});
        table.rows.push_back(std::move(row));
    }
    return {std::move(table), std::nullopt};
}

} // namespace

std::string normalize_label(std::string_view label) {
    std::string out;
    bool pending_space = false;
    for (std::size_t i = 0; i < label.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(label[i]);
        // Typographic apostrophe (U+2019) folds to ASCII.
        if (c == 0xE2 && i + 2 < label.size() && static_cast<unsigned char>(label[i + 1]) == 0x80 &&
            static_cast<unsigned char>(label[i + 2]) == 0x99) {
            c = '\'';
            i += 2;
        }
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

std::optional<std::size_t> Table::column_index(std::string_view label) const {
    const std::string want = normalize_label(label);
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (normalize_label(header[i]) == want) {
            if (found) return std::nullopt;  // duplicate header: ambiguous
            found = i;
        }
    }
    return found;
}

std::vector<std::size_t> Table::rows_labelled(std::string_view label) const {
    const std::string want = normalize_label(label);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (normalize_label(rows[i].label) == want) out.push_back(i);
    return out;
}

TableScan scan_tables(std::string_view passage) {
    TableScan scan;
    const auto lines = lines_with_offsets(passage);
    std::vector<Line> run;
    auto flush = [&] {
        if (run.empty()) return;
        auto res = parse_run(run);
        if (res.table) scan.tables.push_back(std::move(*res.table));
        if (res.issue) scan.issues.push_back(std::move(*res.issue));
        run.clear();
    };
    for (const auto& line : lines) {
        if (is_pipe_line(line.text)) {
            run.push_back(line);
        } else {
            flush();
        }
    }
    flush();
    return scan;
}

std::vector<Table> extract_tables(std::string_view passage) {
    auto scan = scan_tables(passage);
    for (const auto& issue : scan.issues) {
        log(LogLevel::debug, "pipe table skipped at offset " + std::to_string(issue.source_span.first) + ": " +
                                 issue.message);
    }
    return std::move(scan.tables);
}

std::string render_table(const Table& table) {
    std::string out = "|" + table.stub;
    for (const auto& h : table.header) out += "|" + h;
    out += "|\n|---";
    for (std::size_t i = 0; i < table.header.size(); ++i) out += "|---";
    out += "|";
    for (const auto& row : table.rows) {
        out += "\n|" + row.label;
        for (const auto& c : row.cells) out += "|" + c.raw;
        out += "|";
    }
    return out;
}

} // namespace finprompt::corpus
