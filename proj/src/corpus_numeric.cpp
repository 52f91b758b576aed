#include "finprompt/corpus.hpp"

#include "finprompt/util.hpp"

#include <array>
#include <charconv>
#include <cctype>
#include <cmath>
#include <regex>

namespace finprompt::corpus {

namespace {

constexpr std::array<std::string_view, 6> kCurrencyPrefixes{"US$", "$", "\xE2\x82\xAC" /* € */, "\xC2\xA3" /* £ */,
                                                            "\xC2\xA5" /* ¥ */, "\xE2\x82\xB9" /* ₹ */};
constexpr std::string_view kUnicodeMinus = "\xE2\x88\x92";

bool consume_prefix(std::string& s, std::string_view prefix) {
    if (s.size() < prefix.size() || s.compare(0, prefix.size(), prefix) != 0) return false;
    s = trim(std::string_view(s).substr(prefix.size()));
    return true;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

} // namespace

std::optional<double> parse_number(std::string_view raw) {
    std::string s = trim(raw);
    bool negative = false;
    bool sign_seen = false;

    for (bool changed = true; changed && !s.empty();) {
        changed = false;
        for (auto cur : kCurrencyPrefixes) {
            if (consume_prefix(s, cur)) {
                changed = true;
                break;
            }
        }
        if (!sign_seen) {
            if (consume_prefix(s, "-") || consume_prefix(s, kUnicodeMinus)) {
                negative = sign_seen = changed = true;
            } else if (consume_prefix(s, "+")) {
                sign_seen = changed = true;
            }
        }
        if (s.size() >= 2 && s.front() == '(' && s.back() == ')') {
            s = trim(std::string_view(s).substr(1, s.size() - 2));
            negative = changed = true;
        }
    }

    if (!s.empty() && s.back() == '%') s = trim(std::string_view(s).substr(0, s.size() - 1));
    if (s.empty()) return std::nullopt;

    std::string digits;
    digits.reserve(s.size());
    bool seen_dot = false;
    bool seen_digit = false;
    for (size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (is_digit(c)) {
            digits += c;
            seen_digit = true;
        } else if (c == ',') {
            // Thousands separator only between digits.
            if (i == 0 || i + 1 >= s.size() || !is_digit(s[i - 1]) || !is_digit(s[i + 1]) || seen_dot)
                return std::nullopt;
        } else if (c == '.' && !seen_dot) {
            digits += c;
            seen_dot = true;
        } else {
            return std::nullopt;
        }
    }
    if (!seen_digit) return std::nullopt;

    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || !std::isfinite(value)) return std::nullopt;
    return negative ? -value : value;
}

std::optional<double> extract_last_number(std::string_view text) {
    static const std::regex token(
        R"((\(\s*)?(?:-|\xE2\x88\x92|\+)?\s*(?:US\$|\$|\xE2\x82\xAC|\xC2\xA3|\xC2\xA5)?\s*(?:-|\xE2\x88\x92)?\d[\d,]*(?:\.\d+)?(?:\s*%)?(\s*\))?)");

    const std::string str(text);
    std::optional<double> last;
    for (auto it = std::sregex_iterator(str.begin(), str.end(), token); it != std::sregex_iterator(); ++it) {
        std::string tok = it->str();
        const auto pos = static_cast<size_t>(it->position());
        const bool open = (*it)[1].matched;
        const bool close = (*it)[2].matched;
        if (open != close) {
            // Unbalanced parenthesis belongs to the surrounding prose.
            if (open) tok.erase(0, tok.find('(') + 1);
            if (close) tok.erase(tok.rfind(')'));
        }
        // A '-' glued to a preceding word or number is a range dash ("2020-2021").
        if (pos > 0 && (tok.front() == '-') && std::isalnum(static_cast<unsigned char>(str[pos - 1]))) {
            tok.erase(0, 1);
        }
        while (!tok.empty() && tok.back() == ',') tok.pop_back();
        if (auto v = parse_number(tok)) last = v;
    }
    return last;
}

std::string format_number(double value) {
    if (value == 0.0) return "0";
    char buf[512];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed);
    if (ec != std::errc{}) return std::to_string(value);
    return std::string(buf, ptr);
}

} // namespace finprompt::corpus
