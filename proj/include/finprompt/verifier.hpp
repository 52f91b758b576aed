#pragma once

#include "finprompt/candidate.hpp"
#include "finprompt/corpus.hpp"
#include "finprompt/evaluator.hpp"
#include "finprompt/provider.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::verifier {

enum class VoterId { structural, numerical, robustness };
enum class Decision { accept, reject };

inline constexpr std::array<VoterId, 3> kAllVoters{VoterId::structural, VoterId::numerical, VoterId::robustness};

std::string_view to_string(VoterId voter);
std::optional<VoterId> voter_from_string(std::string_view name);
std::string_view to_string(Decision decision);

struct Verdict {
    VoterId voter = VoterId::structural;
    Decision decision = Decision::accept;
    std::string reason;
    std::optional<std::string> evidence;

    bool accepted() const { return decision == Decision::accept; }

    static Verdict accept(VoterId voter, std::string reason, std::optional<std::string> evidence = std::nullopt);
    // Throws ContractError on an empty reason.
    static Verdict reject(VoterId voter, std::string reason, std::optional<std::string> evidence = std::nullopt);

    bool operator==(const Verdict&) const = default;
};

void to_json(nlohmann::json& j, const Verdict& v);
void from_json(const nlohmann::json& j, Verdict& v);

struct ConsensusResult {
    std::vector<Verdict> verdicts;  // structural, numerical, robustness
    Decision decision = Decision::reject;

    bool accepted() const { return decision == Decision::accept; }
    // "voter: reason" for every rejecting voter, joined with "; ".
    std::string rejection_summary() const;

    bool operator==(const ConsensusResult&) const = default;
};

// Unanimity. Throws ContractError unless there is exactly one verdict per
// voter; the result lists them in canonical voter order.
ConsensusResult combine(std::vector<Verdict> verdicts);

enum class RewordMode { none, synonyms, llm };
std::string_view to_string(RewordMode mode);
std::optional<RewordMode> reword_mode_from_string(std::string_view name);

struct VerifierOptions {
    evaluator::Tolerance tolerance;
    int perturbations = 2;
    RewordMode reword = RewordMode::none;
    std::uint64_t seed = 0;
};

// Deterministic arithmetic for the question shapes a pipe table can answer
// mechanically: lookup, sum, difference, ratio and sums of differences.
// Returns nullopt whenever the question is not recognized or a reference
// is ambiguous.
std::optional<double> oracle_answer(std::span<const corpus::Table> tables, std::string_view question);

// Coarse operation class of a question from its wording: "ratio",
// "combined difference", "difference", "sum" or "lookup".
std::string question_operation(std::string_view question);

Verdict vote_structural(const generator::CandidateExample& candidate);
Verdict vote_numerical(const generator::CandidateExample& candidate, provider::Provider& voter,
                       const VerifierOptions& options = {});
Verdict vote_robustness(const generator::CandidateExample& candidate, provider::Provider& voter,
                        const VerifierOptions& options = {});

// Runs all three voters (no short-circuit) and combines them.
ConsensusResult consensus(const generator::CandidateExample& candidate, provider::Provider& voter,
                          const VerifierOptions& options = {});

// Perturbation k: every table's rows are shuffled (never left in the
// original order when a table has two or more rows) and, for odd k, the
// table order is reversed. Narrative text is kept.
std::string permute_tables(std::string_view passage, int k, std::mt19937_64& rng);

// Word-level synonym substitution applied to the narrative outside tables.
std::string reword_narrative(std::string_view passage);

} // namespace finprompt::verifier
