#include "finprompt/verifier.hpp"

#include "finprompt/assets.hpp"
#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

namespace finprompt::verifier {

using nlohmann::json;
using generator::CandidateExample;

std::string_view to_string(VoterId voter) {
    switch (voter) {
        case VoterId::structural: return "structural";
        case VoterId::numerical: return "numerical";
        case VoterId::robustness: return "robustness";
    }
    return "structural";
}

std::optional<VoterId> voter_from_string(std::string_view name) {
    for (auto v : kAllVoters)
        if (to_string(v) == name) return v;
    return std::nullopt;
}

std::string_view to_string(Decision decision) { return decision == Decision::accept ? "accept" : "reject"; }

Verdict Verdict::accept(VoterId voter, std::string reason, std::optional<std::string> evidence) {
    return {voter, Decision::accept, std::move(reason), std::move(evidence)};
}

Verdict Verdict::reject(VoterId voter, std::string reason, std::optional<std::string> evidence) {
    if (trim(reason).empty()) throw ContractError("a reject verdict needs a reason");
    return {voter, Decision::reject, std::move(reason), std::move(evidence)};
}

void to_json(json& j, const Verdict& v) {
    j = json{{"voter", std::string(to_string(v.voter))},
             {"decision", std::string(to_string(v.decision))},
             {"reason", v.reason}};
    if (v.evidence) j["evidence"] = *v.evidence;
}

void from_json(const json& j, Verdict& v) {
    const auto voter = voter_from_string(j.at("voter").get<std::string>());
    if (!voter) throw SchemaError("unknown voter " + j.at("voter").dump());
    v.voter = *voter;
    v.decision = j.at("decision").get<std::string>() == "accept" ? Decision::accept : Decision::reject;
    v.reason = j.at("reason").get<std::string>();
    v.evidence = j.contains("evidence") ? std::optional<std::string>(j["evidence"].get<std::string>()) : std::nullopt;
}

std::string ConsensusResult::rejection_summary() const {
    std::vector<std::string> parts;
    for (const auto& v : verdicts)
        if (!v.accepted()) parts.push_back(std::string(to_string(v.voter)) + ": " + v.reason);
    return join(parts, "; ");
}

ConsensusResult combine(std::vector<Verdict> verdicts) {
    if (verdicts.size() != kAllVoters.size())
        throw ContractError("consensus needs exactly " + std::to_string(kAllVoters.size()) + " verdicts, got " +
                            std::to_string(verdicts.size()));
    ConsensusResult result;
    for (auto voter : kAllVoters) {
        auto it = std::find_if(verdicts.begin(), verdicts.end(), [&](const Verdict& v) { return v.voter == voter; });
        if (it == verdicts.end()) throw ContractError("consensus is missing the " + std::string(to_string(voter)) + " verdict");
        if (std::count_if(verdicts.begin(), verdicts.end(), [&](const Verdict& v) { return v.voter == voter; }) != 1)
            throw ContractError("duplicate " + std::string(to_string(voter)) + " verdict");
        result.verdicts.push_back(*it);
    }
    const bool all = std::all_of(result.verdicts.begin(), result.verdicts.end(),
                                 [](const Verdict& v) { return v.accepted(); });
    result.decision = all ? Decision::accept : Decision::reject;
    return result;
}

std::string_view to_string(RewordMode mode) {
    switch (mode) {
        case RewordMode::none: return "none";
        case RewordMode::synonyms: return "synonyms";
        case RewordMode::llm: return "llm";
    }
    return "none";
}

std::optional<RewordMode> reword_mode_from_string(std::string_view name) {
    for (auto m : {RewordMode::none, RewordMode::synonyms, RewordMode::llm})
        if (to_string(m) == name) return m;
    return std::nullopt;
}

// ---------------------------------------------------------------------------

Verdict vote_structural(const CandidateExample& candidate) {
    const auto& e = candidate.example;
    if (trim(e.question).empty()) return Verdict::reject(VoterId::structural, "question is empty");
    if (!std::isfinite(e.gold_answer)) return Verdict::reject(VoterId::structural, "answer is not a finite number");
    const auto scan = corpus::scan_tables(e.passage);
    if (!scan.issues.empty()) {
        const auto& issue = scan.issues.front();
        return Verdict::reject(VoterId::structural, "malformed table: " + issue.message,
                               "offset " + std::to_string(issue.source_span.first));
    }
    if (scan.tables.empty()) return Verdict::reject(VoterId::structural, "passage contains no well-formed table");
    return Verdict::accept(VoterId::structural, std::to_string(scan.tables.size()) + " well-formed table(s)");
}

namespace {

std::string fmt(double v) { return corpus::format_number(v); }

} // namespace

Verdict vote_numerical(const CandidateExample& candidate, provider::Provider& voter, const VerifierOptions& options) {
    const auto& e = candidate.example;
    const auto tables = corpus::extract_tables(e.passage);
    if (auto oracle = oracle_answer(tables, e.question)) {
        const std::string evidence = "oracle=" + fmt(*oracle);
        if (evaluator::compare(*oracle, e.gold_answer, options.tolerance))
            return Verdict::accept(VoterId::numerical, "oracle recomputation matches the answer", evidence);
        return Verdict::reject(VoterId::numerical,
                               "oracle computes " + fmt(*oracle) + " but the answer is " + fmt(e.gold_answer), evidence);
    }

    auto request = provider::make_request(provider::RoleTag::voter, trim(assets::get("prompts/voter_numerical.txt")),
                                          e.passage + "\n\n" + e.question);
    const auto response = voter.complete(request);
    const auto recomputed = corpus::extract_last_number(response.text);
    if (!recomputed) return Verdict::reject(VoterId::numerical, "voter returned no numeric answer", "llm=none");
    const std::string evidence = "llm=" + fmt(*recomputed);
    if (evaluator::compare(*recomputed, e.gold_answer, options.tolerance))
        return Verdict::accept(VoterId::numerical, "independent recomputation matches the answer", evidence);
    return Verdict::reject(VoterId::numerical,
                           "recomputation gives " + fmt(*recomputed) + " but the answer is " + fmt(e.gold_answer),
                           evidence);
}

// ---------------------------------------------------------------------------

std::string permute_tables(std::string_view passage, int k, std::mt19937_64& rng) {
    auto scan = corpus::scan_tables(passage);
    if (scan.tables.empty()) return std::string(passage);
    auto& tables = scan.tables;
    for (auto& t : tables) {
        if (t.rows.size() < 2) continue;
        std::vector<std::size_t> order(t.rows.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        if (std::is_sorted(order.begin(), order.end())) std::rotate(order.begin(), order.begin() + 1, order.end());
        std::vector<corpus::TableRow> rows;
        for (auto i : order) rows.push_back(t.rows[i]);
        t.rows = std::move(rows);
    }
    std::vector<std::size_t> placement(tables.size());
    std::iota(placement.begin(), placement.end(), 0);
    if (k % 2 == 1) std::reverse(placement.begin(), placement.end());

    std::string out;
    std::size_t cursor = 0;
    for (std::size_t slot = 0; slot < tables.size(); ++slot) {
        const auto [begin, end] = tables[slot].source_span;
        out.append(passage.substr(cursor, begin - cursor));
        out += corpus::render_table(tables[placement[slot]]);
        cursor = end;
    }
    out.append(passage.substr(cursor));
    return out;
}

namespace {

const std::map<std::string, std::string>& synonym_table() {
    static const std::map<std::string, std::string> table = [] {
        std::map<std::string, std::string> m;
        for (const auto& line : split_lines(assets::get("synonyms.tsv"))) {
            const auto tab = line.find('\t');
            if (tab == std::string::npos) continue;
            m.emplace(to_lower(trim(line.substr(0, tab))), trim(line.substr(tab + 1)));
        }
        return m;
    }();
    return table;
}

std::string reword_text(std::string_view text) {
    const auto& table = synonym_table();
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!std::isalpha(static_cast<unsigned char>(text[i]))) {
            out += text[i++];
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
        const std::string word(text.substr(i, j - i));
        auto it = table.find(to_lower(word));
        if (it == table.end()) {
            out += word;
        } else {
            std::string repl = it->second;
            if (std::isupper(static_cast<unsigned char>(word.front())) && !repl.empty())
                repl.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(repl.front())));
            out += repl;
        }
        i = j;
    }
    return out;
}

// Applies `fn` to every stretch of text outside the pipe tables.
template <typename Fn>
std::string map_narrative(std::string_view passage, Fn fn) {
    const auto scan = corpus::scan_tables(passage);
    std::string out;
    std::size_t cursor = 0;
    for (const auto& t : scan.tables) {
        out += fn(passage.substr(cursor, t.source_span.first - cursor));
        out.append(passage.substr(t.source_span.first, t.source_span.second - t.source_span.first));
        cursor = t.source_span.second;
    }
    out += fn(passage.substr(cursor));
    return out;
}

bool same_tables(std::string_view a, std::string_view b) {
    auto ta = corpus::extract_tables(a);
    auto tb = corpus::extract_tables(b);
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        ta[i].source_span = tb[i].source_span = {0, 0};
        if (!(ta[i] == tb[i])) return false;
    }
    return true;
}

std::string reword_with_llm(std::string_view passage, provider::Provider& voter) {
    return map_narrative(passage, [&](std::string_view text) -> std::string {
        if (trim(text).empty()) return std::string(text);
        auto request =
            provider::make_request(provider::RoleTag::voter, trim(assets::get("prompts/reword.txt")), std::string(text));
        auto rewritten = voter.complete(request).text;
        if (trim(rewritten).empty()) return std::string(text);
        // Keep the line structure around tables intact.
        std::string lead, tail;
        for (char c : text) {
            if (c != '\n') break;
            lead += c;
        }
        for (auto it = text.rbegin(); it != text.rend() && *it == '\n'; ++it) tail += '\n';
        return lead + trim(rewritten) + tail;
    });
}

} // namespace

std::string reword_narrative(std::string_view passage) { return map_narrative(passage, reword_text); }

Verdict vote_robustness(const CandidateExample& candidate, provider::Provider& voter, const VerifierOptions& options) {
    if (options.perturbations <= 0) return Verdict::accept(VoterId::robustness, "no perturbations configured");
    const auto& e = candidate.example;
    const std::uint64_t base = fnv1a(e.passage + "\n" + e.question);
    std::vector<std::string> evidence;
    for (int k = 0; k < options.perturbations; ++k) {
        auto rng = derived_rng(options.seed, "perturb", base + static_cast<std::uint64_t>(k));
        std::string passage = permute_tables(e.passage, k, rng);
        if (options.reword == RewordMode::synonyms) {
            passage = reword_narrative(passage);
        } else if (options.reword == RewordMode::llm) {
            auto reworded = reword_with_llm(passage, voter);
            if (same_tables(passage, reworded)) passage = std::move(reworded);
            else log_warn("reworded passage altered its tables; using the permuted passage only");
        }
        CandidateExample perturbed = candidate;
        perturbed.example.passage = std::move(passage);
        const auto v = vote_numerical(perturbed, voter, options);
        if (v.evidence) evidence.push_back("p" + std::to_string(k) + ":" + *v.evidence);
        if (!v.accepted())
            return Verdict::reject(VoterId::robustness,
                                   "answer not stable under perturbation " + std::to_string(k) + ": " + v.reason,
                                   join(evidence, " "));
    }
    return Verdict::accept(VoterId::robustness,
                           "answer stable under " + std::to_string(options.perturbations) + " perturbation(s)",
                           join(evidence, " "));
}

ConsensusResult consensus(const CandidateExample& candidate, provider::Provider& voter, const VerifierOptions& options) {
    std::vector<Verdict> verdicts;
    verdicts.push_back(vote_structural(candidate));
    verdicts.push_back(vote_numerical(candidate, voter, options));
    verdicts.push_back(vote_robustness(candidate, voter, options));
    return combine(std::move(verdicts));
}

} // namespace finprompt::verifier
