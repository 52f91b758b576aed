#include "finprompt/evaluator.hpp"

#include "finprompt/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

namespace finprompt::evaluator {

using nlohmann::json;

bool compare(double pred, double gold, double rel_tol, double abs_tol) {
    if (rel_tol < 0.0 || abs_tol < 0.0) throw ContractError("tolerances must be non-negative");
    if (!std::isfinite(pred) || !std::isfinite(gold)) return false;
    return std::fabs(pred - gold) <= std::max(abs_tol, rel_tol * std::fabs(gold));
}

std::optional<double> normalize_number(std::string_view raw) { return corpus::parse_number(raw); }

void to_json(json& j, const Prediction& p) {
    j = json{{"example_id", p.example_id},
             {"raw_output", p.raw_output},
             {"parsed_answer", p.parsed_answer ? json(*p.parsed_answer) : json(nullptr)},
             {"correct", p.correct},
             {"latency_ms", p.latency_ms}};
}

void from_json(const json& j, Prediction& p) {
    p.example_id = j.at("example_id").get<std::string>();
    p.raw_output = j.at("raw_output").get<std::string>();
    const auto& a = j.at("parsed_answer");
    p.parsed_answer = a.is_null() ? std::nullopt : std::optional<double>(a.get<double>());
    p.correct = j.at("correct").get<bool>();
    p.latency_ms = j.value("latency_ms", std::int64_t{0});
}

provider::ChatRequest solver_request(std::string_view prompt_text, const corpus::Example& example) {
    return provider::make_request(provider::RoleTag::solver, std::string(prompt_text),
                                  example.passage + "\n\n" + example.question);
}

Prediction solve(std::string_view prompt_text, const corpus::Example& example, provider::Provider& solver,
                 const Tolerance& tol, const Clock& clock) {
    if (trim(prompt_text).empty()) throw ContractError("cannot solve with an empty prompt");
    const auto started = clock.now_ms();
    const auto response = solver.complete(solver_request(prompt_text, example));
    Prediction p;
    p.example_id = example.id;
    p.raw_output = response.text;
    p.parsed_answer = corpus::extract_last_number(response.text);
    p.correct = p.parsed_answer && compare(*p.parsed_answer, example.gold_answer, tol);
    p.latency_ms = std::max<std::int64_t>(0, clock.now_ms() - started);
    return p;
}

std::size_t EvalReport::correct_count() const {
    return static_cast<std::size_t>(std::count_if(predictions.begin(), predictions.end(),
                                                  [](const Prediction& p) { return p.correct; }));
}

void to_json(json& j, const EvalReport& r) {
    json subsets = json::object();
    for (const auto& [name, s] : r.per_subset)
        subsets[name] = json{{"n", s.n}, {"correct", s.correct}, {"accuracy", s.accuracy}};
    j = json{{"prompt_version", r.prompt_version},
             {"per_subset", subsets},
             {"overall", r.overall},
             {"macro", r.macro},
             {"predictions", r.predictions}};
}

std::string subset_key(const corpus::Example& example) {
    if (example.subset) return std::string(corpus::to_string(*example.subset));
    return example.origin == corpus::Origin::synthetic ? "synthetic" : "unlabelled";
}

EvalReport build_report(std::string prompt_version, std::span<const corpus::Example> examples,
                        std::vector<Prediction> predictions) {
    if (examples.empty()) throw EmptySet("accuracy over an empty example set");
    if (examples.size() != predictions.size()) throw ContractError("examples and predictions differ in length");
    EvalReport report;
    report.prompt_version = std::move(prompt_version);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        auto& s = report.per_subset[subset_key(examples[i])];
        ++s.n;
        if (predictions[i].correct) {
            ++s.correct;
            ++correct;
        }
    }
    double macro_sum = 0.0;
    for (auto& [_, s] : report.per_subset) {
        s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.n);
        macro_sum += s.accuracy;
    }
    report.overall = static_cast<double>(correct) / static_cast<double>(examples.size());
    report.macro = macro_sum / static_cast<double>(report.per_subset.size());
    report.predictions = std::move(predictions);
    return report;
}

EvalReport accuracy(std::string_view prompt_text, std::string prompt_version,
                    std::span<const corpus::Example> examples, provider::Provider& solver,
                    const EvalOptions& options) {
    if (examples.empty()) throw EmptySet("accuracy over an empty example set");
    const Clock& clock = options.clock ? *options.clock : system_clock();
    std::vector<Prediction> predictions(examples.size());
    std::vector<std::exception_ptr> errors(examples.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};

    auto worker = [&] {
        for (std::size_t i = next++; i < examples.size(); i = next++) {
            if (failed) return;
            try {
                predictions[i] = solve(prompt_text, examples[i], solver, options.tolerance, clock);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };

    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.concurrency)), 1,
                                                   examples.size());
    if (k == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return build_report(std::move(prompt_version), examples, std::move(predictions));
}

namespace {

std::string percent(double acc) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", acc * 100.0);
    return buf;
}

int subset_rank(const std::string& name) {
    static const char* order[] = {"SimpShort", "CompShort", "SimpLong", "CompLong"};
    for (int i = 0; i < 4; ++i)
        if (name == order[i]) return i;
    return 4;
}

} // namespace

std::string format_report(const EvalReport& report) {
    std::vector<std::string> names;
    for (const auto& [name, _] : report.per_subset) names.push_back(name);
    std::stable_sort(names.begin(), names.end(),
                     [](const std::string& a, const std::string& b) { return subset_rank(a) < subset_rank(b); });

    std::vector<std::string> head{"Prompt"};
    std::vector<std::string> acc{report.prompt_version};
    std::vector<std::string> counts{"n"};
    for (const auto& n : names) {
        head.push_back(n);
        acc.push_back(percent(report.per_subset.at(n).accuracy));
        counts.push_back(std::to_string(report.per_subset.at(n).n));
    }
    head.push_back("Avg. Acc");
    acc.push_back(percent(report.macro));
    counts.push_back(std::to_string(report.size()));
    head.push_back("Overall");
    acc.push_back(percent(report.overall));
    counts.push_back(std::to_string(report.size()));

    std::vector<std::size_t> width(head.size());
    for (std::size_t i = 0; i < head.size(); ++i)
        width[i] = std::max({head[i].size(), acc[i].size(), counts[i].size()});

    auto row = [&](const std::vector<std::string>& cells) {
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += "  ";
            std::string cell = cells[i];
            if (i == 0) cell.resize(width[i], ' ');
            else cell.insert(0, width[i] - cell.size(), ' ');
            line += cell;
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        return line + "\n";
    };
    std::string out = row(head);
    std::string rule;
    for (std::size_t i = 0; i < width.size(); ++i) rule += (i ? "  " : "") + std::string(width[i], '-');
    out += rule + "\n";
    out += row(acc);
    out += row(counts);
    return out;
}

} // namespace finprompt::evaluator
