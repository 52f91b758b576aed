#pragma once

#include "finprompt/corpus.hpp"
#include "finprompt/provider.hpp"
#include "finprompt/util.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finprompt::evaluator {

// Answer equality: |pred - gold| <= max(abs_tol, rel_tol * |gold|).
// Exact match is {0, 0}.
struct Tolerance {
    double rel_tol = 0.01;
    double abs_tol = 1e-6;

    static Tolerance exact() { return {0.0, 0.0}; }
    bool operator==(const Tolerance&) const = default;
};

bool compare(double pred, double gold, double rel_tol, double abs_tol);
inline bool compare(double pred, double gold, const Tolerance& tol) {
    return compare(pred, gold, tol.rel_tol, tol.abs_tol);
}

// Same normalizer as the corpus: currency, separators, '%' and accounting
// negatives; none when the text is not a number.
std::optional<double> normalize_number(std::string_view raw);

struct Prediction {
    std::string example_id;
    std::string raw_output;
    std::optional<double> parsed_answer;
    bool correct = false;
    std::int64_t latency_ms = 0;

    bool operator==(const Prediction&) const = default;
};

void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);

// Solver request: system = prompt, user = passage, blank line, question.
provider::ChatRequest solver_request(std::string_view prompt_text, const corpus::Example& example);

Prediction solve(std::string_view prompt_text, const corpus::Example& example, provider::Provider& solver,
                 const Tolerance& tol = {}, const Clock& clock = system_clock());

struct SubsetScore {
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;

    bool operator==(const SubsetScore&) const = default;
};

struct EvalReport {
    std::string prompt_version;
    std::map<std::string, SubsetScore> per_subset;  // keyed by subset name, "synthetic" or "unlabelled"
    double overall = 0.0;                           // example-weighted
    double macro = 0.0;                             // unweighted mean over subsets
    std::vector<Prediction> predictions;            // input order

    std::size_t correct_count() const;
    std::size_t size() const { return predictions.size(); }
};

void to_json(nlohmann::json& j, const EvalReport& r);

struct EvalOptions {
    Tolerance tolerance;
    int concurrency = 4;
    const Clock* clock = nullptr;  // system clock when null
};

// Group key used by the report for one example.
std::string subset_key(const corpus::Example& example);

// Aggregates already computed predictions; `examples` and `predictions`
// are parallel.
EvalReport build_report(std::string prompt_version, std::span<const corpus::Example> examples,
                        std::vector<Prediction> predictions);

// Runs every example through the solver with up to `concurrency` calls in
// flight. Throws EmptySet on an empty input; the first provider error (in
// input order) is rethrown after all workers stop.
EvalReport accuracy(std::string_view prompt_text, std::string prompt_version,
                    std::span<const corpus::Example> examples, provider::Provider& solver,
                    const EvalOptions& options = {});

// Aligned text table: one column per subset, then Avg. Acc (macro) and
// Overall (weighted), accuracies in percent with two decimals.
std::string format_report(const EvalReport& report);

} // namespace finprompt::evaluator
