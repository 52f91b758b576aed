#pragma once

#include "finprompt/candidate.hpp"
#include "finprompt/corpus.hpp"
#include "finprompt/event.hpp"
#include "finprompt/provider.hpp"
#include "finprompt/verifier.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::generator {

enum class Regime { Short, Long };
std::string_view to_string(Regime regime);
std::optional<Regime> regime_from_string(std::string_view name);

struct HistoryEntry {
    int difficulty = 1;
    std::string summary;
    corpus::Example example;

    bool operator==(const HistoryEntry&) const = default;
};

void to_json(nlohmann::json& j, const HistoryEntry& h);
void from_json(const nlohmann::json& j, HistoryEntry& h);

struct GeneratorState {
    int current_difficulty = 1;
    int c_max = 15;
    std::vector<HistoryEntry> history;
    std::vector<corpus::Example> exemplars;  // exactly two real examples
    Regime regime = Regime::Short;
    double kl_threshold = 1.0;
    double lambda_weight = 0.0;

    // Throws ContractError.
    void validate() const;

    bool operator==(const GeneratorState&) const = default;
};

// Above this many history entries the prompt lists summaries instead of
// full samples.
inline constexpr std::size_t kFullHistoryLimit = 5;

std::string render_sample(const corpus::Example& example);
std::string render_history(std::span<const HistoryEntry> history);

// The data-generation template with {c}, {c_max}, {history} and {exemplars}
// filled in. `feedback` (the previous rejection) becomes a second user
// message.
provider::ChatRequest build_generation_prompt(const GeneratorState& state,
                                              const std::optional<std::string>& feedback = std::nullopt,
                                              std::optional<std::int64_t> seed = std::nullopt);

// Throws ParseError naming the missing section, or AnswerNotNumeric.
CandidateExample parse_candidate(std::string_view raw, int difficulty, std::string id = "synthetic");

struct KlDecision {
    bool accept = false;
    double kl_value = 0.0;
};

// KL(q || p) in nats over aligned bucket probabilities.
double kl_divergence(std::span<const double> q, std::span<const double> p);

// q is the add-one smoothed bucket distribution of `answers`.
KlDecision kl_gate(std::span<const double> answers, const corpus::LabelPrior& prior, double threshold);

// Deterministic one-line summary: table count, operation, topic, answer bucket.
std::string summarize_previous(const corpus::Example& example);

// Analyzer-role summary; falls back to the local template on an empty reply.
std::string summarize_with_llm(const corpus::Example& example, provider::Provider& analyzer);

enum class Outcome { accepted, rejected };
int next_difficulty(const GeneratorState& state, Outcome last_outcome);

// Two real exemplars, one from each pool of the regime (SimpShort and
// CompShort, or SimpLong and CompLong). When `focus_operation` is set,
// examples whose question_operation matches it weigh 1 + lambda.
std::vector<corpus::Example> draw_exemplars(std::span<const corpus::Example> real, Regime regime, std::mt19937_64& rng,
                                            double lambda = 0.0,
                                            const std::optional<std::string>& focus_operation = std::nullopt);

// ---------------------------------------------------------------------------
// Generation as a sequence of single-event steps
// ---------------------------------------------------------------------------

enum class SummaryMode { local, llm };
std::string_view to_string(SummaryMode mode);
std::optional<SummaryMode> summary_mode_from_string(std::string_view name);

struct GenerationContext {
    provider::Provider* generator = nullptr;
    provider::Provider* voter = nullptr;
    provider::Provider* analyzer = nullptr;  // only for SummaryMode::llm
    const corpus::LabelPrior* prior = nullptr;
    verifier::VerifierOptions verifier;
    int max_regenerations = 5;
    SummaryMode summary = SummaryMode::local;
    std::uint64_t seed = 0;
};

enum class GenStage { generate, gate, vote, decide, accept };

// Progress towards the next accepted example.
struct GenerationAttempt {
    GenStage stage = GenStage::generate;
    int attempts = 0;  // generator calls made for this example
    std::optional<CandidateExample> candidate;
    std::vector<verifier::Verdict> verdicts;
    std::vector<std::string> rejections;
    bool exhausted = false;

    bool operator==(const GenerationAttempt&) const = default;
};

// Effectful half: performs the work of the current stage and describes
// it as one event (generated, kl_gate, verdict, consensus or
// example_accepted).
Event generation_step(const GeneratorState& state, const GenerationAttempt& attempt, const GenerationContext& ctx);

// Pure half. Returns the accepted example when `event` completes one.
std::optional<corpus::Example> apply_generation_event(GeneratorState& state, GenerationAttempt& attempt,
                                                      const Event& event, int max_regenerations);

// Runs steps until an example is accepted. Every event goes to `sink`
// first. Throws RegenerationExhausted after max_regenerations rejected
// generator calls.
corpus::Example generate_accepted(GeneratorState& state, const GenerationContext& ctx, const EventSink& sink = {});

} // namespace finprompt::generator
