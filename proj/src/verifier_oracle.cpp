#include "finprompt/verifier.hpp"

#include "finprompt/util.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace finprompt::verifier {

using corpus::Table;

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

struct Span {
    std::size_t begin;
    std::size_t end;
};

bool overlaps(const Span& a, const Span& b) { return a.begin < b.end && b.begin < a.end; }

// Word-bounded occurrences of `needle` in `hay` that avoid masked bytes.
std::vector<Span> find_words(const std::string& hay, const std::string& needle, const std::vector<bool>& mask) {
    std::vector<Span> out;
    if (needle.empty()) return out;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        const std::size_t end = pos + needle.size();
        if (pos > 0 && is_word_char(hay[pos - 1]) && is_word_char(needle.front())) continue;
        if (end < hay.size() && is_word_char(hay[end]) && is_word_char(needle.back())) continue;
        if (std::any_of(mask.begin() + static_cast<std::ptrdiff_t>(pos), mask.begin() + static_cast<std::ptrdiff_t>(end),
                        [](bool m) { return m; }))
            continue;
        out.push_back({pos, end});
    }
    return out;
}

struct Match {
    Span span;
    std::string text;  // normalized label or header
};

// Longest matches first, then discard anything overlapping an earlier pick.
std::vector<Match> longest_matches(const std::string& hay, const std::set<std::string>& needles,
                                   const std::vector<bool>& mask) {
    std::vector<Match> all;
    for (const auto& n : needles)
        for (const auto& s : find_words(hay, n, mask)) all.push_back({s, n});
    std::stable_sort(all.begin(), all.end(), [](const Match& a, const Match& b) {
        const auto la = a.span.end - a.span.begin, lb = b.span.end - b.span.begin;
        if (la != lb) return la > lb;
        return a.span.begin < b.span.begin;
    });
    std::vector<Match> picked;
    for (const auto& m : all) {
        if (std::none_of(picked.begin(), picked.end(), [&](const Match& p) { return overlaps(p.span, m.span); }))
            picked.push_back(m);
    }
    std::sort(picked.begin(), picked.end(), [](const Match& a, const Match& b) { return a.span.begin < b.span.begin; });
    return picked;
}

void apply_mask(std::vector<bool>& mask, const Span& s) {
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(s.begin), mask.begin() + static_cast<std::ptrdiff_t>(s.end),
              true);
}

// Opening and closing quote marks after normalize_label (which folds the
// right single quote into ASCII).
constexpr std::string_view kOpenQuotes[] = {"'", "\"", "`", "\xE2\x80\x98", "\xE2\x80\x9C"};
constexpr std::string_view kCloseQuotes[] = {"'", "\"", "\xE2\x80\x9D"};

struct Quoted {
    Span outer;
    std::string content;
};

std::vector<Quoted> find_quoted(const std::string& q) {
    std::vector<Quoted> out;
    std::size_t i = 0;
    while (i < q.size()) {
        std::size_t open_len = 0;
        for (auto o : kOpenQuotes) {
            if (q.compare(i, o.size(), o) == 0 && (i == 0 || !is_word_char(q[i - 1]))) {
                open_len = o.size();
                break;
            }
        }
        if (!open_len) {
            ++i;
            continue;
        }
        const std::size_t content_begin = i + open_len;
        bool closed = false;
        for (std::size_t j = content_begin + 1; j < q.size() && !closed; ++j) {
            for (auto c : kCloseQuotes) {
                if (q.compare(j, c.size(), c) != 0) continue;
                const std::size_t after = j + c.size();
                if (after < q.size() && is_word_char(q[after])) continue;
                out.push_back({{i, after}, trim(std::string_view(q).substr(content_begin, j - content_begin))});
                i = after;
                closed = true;
                break;
            }
        }
        if (!closed) i = content_begin;
    }
    return out;
}

const std::set<std::string> kBlockers{"average", "averages", "mean",   "percent",  "percentage", "percentages",
                                      "rate",    "rates",    "proportion", "share", "median",   "cagr",
                                      "product", "multiplied", "multiply", "times", "per",     "each",
                                      "margin",  "growth rate", "squared", "half",  "double",  "twice"};
const std::set<std::string> kRatioWords{"ratio", "divided"};
const std::set<std::string> kDiffWords{"difference", "differ",    "increase", "increased", "increases",
                                       "decrease",   "decreased", "decreases", "change",   "changed",
                                       "changes",    "grow",      "grew",      "growth",   "rise",
                                       "rose",       "risen",     "decline",   "declined", "declines",
                                       "drop",       "dropped",   "fall",      "fell",     "fallen"};
const std::set<std::string> kFallingWords{"decrease", "decreased", "decreases", "decline", "declined", "declines",
                                          "drop",     "dropped",   "fall",      "fell",    "fallen"};
const std::set<std::string> kSumWords{"sum",  "total", "totals", "combined", "combine",  "together",
                                      "add",  "added", "plus",   "aggregate", "aggregated"};

const std::vector<std::string> kOrdinals{"first", "second", "third",  "fourth", "fifth",
                                         "sixth", "seventh", "eighth", "ninth",  "tenth"};

bool contains_any(const std::string& hay, const std::set<std::string>& words, const std::vector<bool>& mask) {
    for (const auto& w : words)
        if (!find_words(hay, w, mask).empty()) return true;
    return false;
}

struct RowRef {
    std::size_t table;
    std::size_t row;
};

struct LabelRef {
    Span span;
    std::optional<std::string> label;      // textual label
    std::optional<std::size_t> position;   // ordinal row of the single table (SIZE_MAX = last)
};

} // namespace

std::optional<double> oracle_answer(std::span<const Table> tables, std::string_view question) {
    if (tables.empty()) return std::nullopt;
    const std::string q = corpus::normalize_label(question);
    std::vector<bool> mask(q.size(), false);

    std::set<std::string> row_labels;
    std::set<std::string> headers;
    for (const auto& t : tables) {
        for (const auto& r : t.rows) row_labels.insert(corpus::normalize_label(r.label));
        for (const auto& h : t.header) headers.insert(corpus::normalize_label(h));
    }
    row_labels.erase("");
    headers.erase("");

    // Row references: quoted labels first, then bare mentions in the rest.
    std::vector<LabelRef> labels;
    const auto quoted = find_quoted(q);
    for (const auto& qt : quoted) {
        if (row_labels.count(qt.content)) {
            labels.push_back({qt.outer, qt.content, std::nullopt});
            apply_mask(mask, qt.outer);
        } else if (headers.count(qt.content)) {
            continue;  // a quoted column name is found by the column scan
        } else {
            return std::nullopt;
        }
    }
    for (const auto& m : longest_matches(q, row_labels, mask)) {
        labels.push_back({m.span, m.text, std::nullopt});
        apply_mask(mask, m.span);
    }

    // Ordinal rows only make sense with a single table.
    for (std::size_t k = 0; k <= kOrdinals.size(); ++k) {
        const std::string word = (k < kOrdinals.size() ? kOrdinals[k] : std::string("last")) + " row";
        for (const auto& s : find_words(q, word, mask)) {
            if (tables.size() != 1) return std::nullopt;
            labels.push_back({s, std::nullopt, k < kOrdinals.size() ? k : SIZE_MAX});
            apply_mask(mask, s);
        }
    }
    std::sort(labels.begin(), labels.end(),
              [](const LabelRef& a, const LabelRef& b) { return a.span.begin < b.span.begin; });

    const auto column_matches = longest_matches(q, headers, mask);
    std::vector<std::string> columns;
    for (const auto& m : column_matches) {
        columns.push_back(m.text);
        apply_mask(mask, m.span);
    }

    // Whatever is left must be plain wording.
    std::string rest = q;
    for (std::size_t i = 0; i < rest.size(); ++i)
        if (mask[i]) rest[i] = ' ';
    const std::vector<bool> no_mask(rest.size(), false);
    if (std::any_of(rest.begin(), rest.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        return std::nullopt;
    if (contains_any(rest, kBlockers, no_mask)) return std::nullopt;
    if (rest.find('%') != std::string::npos) return std::nullopt;

    const bool ratio = contains_any(rest, kRatioWords, no_mask);
    const bool diff = contains_any(rest, kDiffWords, no_mask);
    const bool sum = contains_any(rest, kSumWords, no_mask);
    const bool falling = contains_any(rest, kFallingWords, no_mask);
    const bool difference_between = !find_words(rest, "difference between", no_mask).empty();
    const double direction = falling ? -1.0 : 1.0;

    const std::size_t L = labels.size();
    const std::size_t C = columns.size();
    if (L == 0 || C == 0) return std::nullopt;

    // Every label must land on exactly one row of a table that has all of
    // the columns that label is read at.
    auto resolve = [&](const LabelRef& ref, const std::vector<std::string>& cols) -> std::optional<RowRef> {
        std::optional<RowRef> found;
        for (std::size_t ti = 0; ti < tables.size(); ++ti) {
            const auto& t = tables[ti];
            if (!std::all_of(cols.begin(), cols.end(), [&](const std::string& c) { return t.column_index(c).has_value(); }))
                continue;
            std::vector<std::size_t> rows;
            if (ref.label) {
                rows = t.rows_labelled(*ref.label);
            } else if (!t.rows.empty()) {
                const std::size_t idx = *ref.position == SIZE_MAX ? t.rows.size() - 1 : *ref.position;
                if (idx < t.rows.size()) rows.push_back(idx);
            }
            for (auto r : rows) {
                if (found) return std::nullopt;
                found = RowRef{ti, r};
            }
        }
        return found;
    };
    auto value = [&](const LabelRef& ref, const std::string& col,
                     const std::vector<std::string>& needed) -> std::optional<double> {
        const auto rr = resolve(ref, needed);
        if (!rr) return std::nullopt;
        const auto& t = tables[rr->table];
        const auto ci = t.column_index(col);
        if (!ci) return std::nullopt;
        return t.rows[rr->row].cells[*ci].value;
    };

    if (ratio) {
        if (diff || sum) return std::nullopt;
        std::optional<double> num, den;
        if (L == 2 && C == 1) {
            num = value(labels[0], columns[0], columns);
            den = value(labels[1], columns[0], columns);
        } else if (L == 1 && C == 2) {
            num = value(labels[0], columns[0], columns);
            den = value(labels[0], columns[1], columns);
        } else {
            return std::nullopt;
        }
        if (!num || !den || *den == 0.0) return std::nullopt;
        return *num / *den;
    }

    if (diff && sum) {
        if (L < 2 || C != 2 * L) return std::nullopt;
        double total = 0.0;
        for (std::size_t i = 0; i < L; ++i) {
            const std::vector<std::string> pair{columns[2 * i], columns[2 * i + 1]};
            const auto from = value(labels[i], pair[0], pair);
            const auto to = value(labels[i], pair[1], pair);
            if (!from || !to) return std::nullopt;
            total += direction * (*to - *from);
        }
        return total;
    }

    if (diff) {
        if (L == 1 && C == 2) {
            const auto from = value(labels[0], columns[0], columns);
            const auto to = value(labels[0], columns[1], columns);
            if (!from || !to) return std::nullopt;
            return direction * (*to - *from);
        }
        if (L == 2 && C == 1 && difference_between) {
            const auto a = value(labels[0], columns[0], columns);
            const auto b = value(labels[1], columns[0], columns);
            if (!a || !b) return std::nullopt;
            return *a - *b;
        }
        return std::nullopt;
    }

    if (sum) {
        double total = 0.0;
        if (L == 1 && C >= 2) {
            for (const auto& c : columns) {
                const auto v = value(labels[0], c, columns);
                if (!v) return std::nullopt;
                total += *v;
            }
            return total;
        }
        if (L >= 2 && C == 1) {
            for (const auto& l : labels) {
                const auto v = value(l, columns[0], columns);
                if (!v) return std::nullopt;
                total += *v;
            }
            return total;
        }
        return std::nullopt;
    }

    if (L == 1 && C == 1) return value(labels[0], columns[0], columns);
    return std::nullopt;
}

} // namespace finprompt::verifier

namespace finprompt::verifier {

std::string question_operation(std::string_view question) {
    const std::string q = corpus::normalize_label(question);
    const std::vector<bool> mask(q.size(), false);
    const bool ratio = contains_any(q, kRatioWords, mask);
    const bool diff = contains_any(q, kDiffWords, mask);
    const bool sum = contains_any(q, kSumWords, mask);
    if (ratio) return "ratio";
    if (diff && sum) return "combined difference";
    if (diff) return "difference";
    if (sum) return "sum";
    return "lookup";
}

} // namespace finprompt::verifier
