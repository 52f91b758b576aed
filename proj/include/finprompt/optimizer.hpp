#pragma once

#include "finprompt/corpus.hpp"
#include "finprompt/evaluator.hpp"
#include "finprompt/event.hpp"
#include "finprompt/generator.hpp"
#include "finprompt/provider.hpp"
#include "finprompt/verifier.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::optimizer {

enum class CreatedBy { seed, revision };
std::string_view to_string(CreatedBy c);

struct Prompt {
    int version = 0;
    std::string text;
    std::optional<int> parent_version;
    CreatedBy created_by = CreatedBy::seed;
    std::map<std::string, double> scores;  // dataset tag -> accuracy

    bool operator==(const Prompt&) const = default;
};

void to_json(nlohmann::json& j, const Prompt& p);
void from_json(const nlohmann::json& j, Prompt& p);

struct FailedExample {
    corpus::Example example;
    evaluator::Prediction prediction;

    bool operator==(const FailedExample&) const = default;
};

struct ErrorSlice {
    int iteration = 0;
    std::vector<FailedExample> failing;

    bool empty() const { return failing.empty(); }
    std::vector<std::string> ids() const;
    bool operator==(const ErrorSlice&) const = default;
};

struct Patch {
    std::string analysis;
    std::vector<std::string> recommendations;
    int source_iteration = 0;
    bool degraded = false;  // response did not follow the ANALYSIS/RECOMMENDATIONS format

    bool operator==(const Patch&) const = default;
};

void to_json(nlohmann::json& j, const Patch& p);
void from_json(const nlohmann::json& j, Patch& p);

// Predictions already computed, keyed by (prompt version, example id).
// Versions are immutable, so entries never go stale.
class PredictionCache {
public:
    const evaluator::Prediction* find(int version, const std::string& id) const;
    void insert(int version, const evaluator::Prediction& p);
    std::size_t size() const { return entries_.size(); }
    bool operator==(const PredictionCache&) const = default;

private:
    std::map<std::pair<int, std::string>, evaluator::Prediction> entries_;
};

// Scores `examples` under `prompt`, calling the solver only for pairs not
// in `cache`. Returns the newly computed predictions in input order; the
// cache is not modified.
std::vector<evaluator::Prediction> evaluate_missing(const Prompt& prompt, std::span<const corpus::Example> examples,
                                                    provider::Provider& solver, const evaluator::EvalOptions& options,
                                                    const PredictionCache& cache);

// Throws ContractError unless every example has a cached prediction.
double cached_score(int version, std::span<const corpus::Example> examples, const PredictionCache& cache);

// ---------------------------------------------------------------------------
// Single operations
// ---------------------------------------------------------------------------

// Throws ContractError on an empty dataset.
ErrorSlice collect_errors(const Prompt& prompt, std::span<const corpus::Example> dataset, provider::Provider& solver,
                          const evaluator::EvalOptions& options = {}, int iteration = 0);

provider::ChatRequest recommend_request(const Prompt& prompt, const ErrorSlice& slice,
                                        std::optional<std::int64_t> seed = std::nullopt);
// ANALYSIS / RECOMMENDATIONS reply; anything else becomes one degraded
// recommendation holding the raw text.
Patch parse_patch(std::string_view text, int source_iteration);
// Throws ContractError on an empty slice.
Patch recommend(const Prompt& prompt, const ErrorSlice& slice, provider::Provider& recommender,
                std::optional<std::int64_t> seed = std::nullopt);

provider::ChatRequest revise_request(const Patch& patch, const Prompt& prompt, const ErrorSlice& slice);

struct Revision {
    Prompt prompt;
    bool noop = false;  // text identical to the parent
};

// Throws ContractError on a patch without recommendations, EmptyRevision,
// or LengthExceeded when the revised text is longer than `max_chars`.
Revision revise(const Patch& patch, const Prompt& prompt, const ErrorSlice& slice, provider::Provider& reviser,
                int new_version, std::size_t max_chars);

struct LocalConfirmation {
    bool passed = false;
    double score = 0.0;  // accuracy on the slice
    ErrorSlice remaining;
    std::vector<evaluator::Prediction> predictions;
};

LocalConfirmation confirm_local(const Prompt& candidate, const ErrorSlice& slice, provider::Provider& solver,
                                const evaluator::EvalOptions& options = {});

struct GlobalConfirmation {
    bool passed = false;
    double score = 0.0;
    ErrorSlice regressions;
    std::vector<evaluator::Prediction> predictions;
};

GlobalConfirmation confirm_global(const Prompt& candidate, std::span<const corpus::Example> dataset,
                                  provider::Provider& solver, const evaluator::EvalOptions& options = {});

// Index of the highest score; ties go to the lowest version.
std::size_t argmax_version(std::span<const std::pair<int, double>> scores);

Prompt select_final(std::span<const Prompt> prompts, std::span<const corpus::Example> dataset,
                    provider::Provider& solver, const evaluator::EvalOptions& options = {});

// ---------------------------------------------------------------------------
// The run loop as a ledger-backed state machine
// ---------------------------------------------------------------------------

struct Budgets {
    int examples = 15;            // M
    int max_refinements = 15;     // T_max
    int inner_cap = 4;
    int max_regenerations = 5;

    bool operator==(const Budgets&) const = default;
};

// Everything that shapes a run besides the backends. Stored in the
// run_started event so that a resumed run uses the same settings.
struct LoopOptions {
    Budgets budgets;
    std::uint64_t seed = 0;
    generator::Regime regime = generator::Regime::Short;
    int c_max = 15;
    double kl_threshold = 1.0;
    double lambda_weight = 0.0;
    evaluator::Tolerance tolerance;
    int concurrency = 4;
    std::size_t max_prompt_chars = 16000;
    int perturbations = 2;
    verifier::RewordMode reword = verifier::RewordMode::none;
    generator::SummaryMode summary = generator::SummaryMode::local;

    bool operator==(const LoopOptions&) const = default;
};

void to_json(nlohmann::json& j, const LoopOptions& o);
void from_json(const nlohmann::json& j, LoopOptions& o);

enum class Phase {
    generate,
    evaluate,
    collect,
    recommend,
    revise,
    confirm_local,
    confirm_global,
    adopt,
    select_eval,
    select,
    finish,
    done
};
std::string_view to_string(Phase p);

enum class AdoptMode { accepted, best_effort, kept };
std::string_view to_string(AdoptMode m);

// Work on one error slice.
struct Repair {
    std::vector<std::string> slice;  // ids still failing under `base`
    int base_version = 0;
    std::optional<Patch> patch;
    std::optional<int> candidate_version;
    std::optional<int> best_version;
    double best_score = -1.0;
    int inner_attempts = 0;
    AdoptMode outcome = AdoptMode::kept;

    bool operator==(const Repair&) const = default;
};

struct RunState {
    LoopOptions options;
    int t = 0;
    std::vector<corpus::Example> dataset;  // D_t
    corpus::LabelPrior prior;
    generator::GeneratorState generator;
    generator::GenerationAttempt generation;
    std::map<int, Prompt> prompts;     // every version ever created
    std::vector<int> adopted;          // seed, then each prompt that became current
    int current_version = 0;
    int refinements_accepted = 0;
    int regression_loops = 0;          // global, bounded by T_max
    std::vector<double> accepted_scores;
    Repair repair;
    PredictionCache cache;
    std::vector<std::pair<int, double>> final_scores;
    std::optional<int> final_version;
    std::string stop_reason;
    Phase phase = Phase::generate;
    bool started = false;

    const Prompt& current() const { return prompts.at(current_version); }
    std::vector<Prompt> adopted_prompts() const;
    bool operator==(const RunState&) const = default;
};

// What a step needs besides the state: backends, the real pool (only read
// when lambda > 0 re-draws exemplars) and the clock.
struct LoopContext {
    provider::Provider* generator = nullptr;
    provider::Provider* voter = nullptr;
    provider::Provider* analyzer = nullptr;
    provider::Provider* recommender = nullptr;
    provider::Provider* reviser = nullptr;
    provider::Provider* solver = nullptr;
    std::span<const corpus::Example> real;
    const Clock* clock = nullptr;  // system clock when null

    static LoopContext from(const provider::ProviderSet& set, std::span<const corpus::Example> real = {});
};

// The run_started event. Exemplars are drawn here, once per run.
Event start_event(const LoopOptions& options, std::string_view seed_prompt, std::span<const corpus::Example> real);

// Generator wiring for the state's options; `s` must outlive the result.
generator::GenerationContext generation_context(const RunState& s, const LoopContext& ctx);

// Effectful half: performs the current phase's work and reports it as one event.
Event step(const RunState& state, const LoopContext& ctx);

// Pure half. Throws ContractError on an event that does not fit the state.
void apply(RunState& state, const Event& event);

RunState replay(std::span<const Event> events);

struct RunResult {
    Prompt final_prompt;
    RunState state;
};

// Steps from `state` until the run is finished. Every event goes to
// `sink` before it is applied.
RunResult continue_run(RunState state, const LoopContext& ctx, const EventSink& sink = {});

RunResult run_loop(const LoopOptions& options, std::string_view seed_prompt, const LoopContext& ctx,
                   const EventSink& sink = {});

} // namespace finprompt::optimizer
