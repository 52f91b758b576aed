#include "finprompt/optimizer.hpp"

#include "finprompt/assets.hpp"
#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

namespace finprompt::optimizer {

using corpus::Example;
using evaluator::Prediction;
using nlohmann::json;

std::string_view to_string(CreatedBy c) { return c == CreatedBy::seed ? "seed" : "revision"; }

void to_json(json& j, const Prompt& p) {
    j = json{{"version", p.version}, {"text", p.text}, {"created_by", std::string(to_string(p.created_by))},
             {"scores", p.scores}};
    j["parent_version"] = p.parent_version ? json(*p.parent_version) : json(nullptr);
}

void from_json(const json& j, Prompt& p) {
    p.version = j.at("version").get<int>();
    p.text = j.at("text").get<std::string>();
    const auto& parent = j.at("parent_version");
    p.parent_version = parent.is_null() ? std::nullopt : std::optional<int>(parent.get<int>());
    const auto by = j.at("created_by").get<std::string>();
    if (by != "seed" && by != "revision") throw SchemaError("unknown created_by: " + by);
    p.created_by = by == "seed" ? CreatedBy::seed : CreatedBy::revision;
    p.scores = j.value("scores", std::map<std::string, double>{});
}

std::vector<std::string> ErrorSlice::ids() const {
    std::vector<std::string> out;
    for (const auto& f : failing) out.push_back(f.example.id);
    return out;
}

void to_json(json& j, const Patch& p) {
    j = json{{"analysis", p.analysis},
             {"recommendations", p.recommendations},
             {"source_iteration", p.source_iteration},
             {"degraded", p.degraded}};
}

void from_json(const json& j, Patch& p) {
    p.analysis = j.at("analysis").get<std::string>();
    p.recommendations = j.at("recommendations").get<std::vector<std::string>>();
    p.source_iteration = j.at("source_iteration").get<int>();
    p.degraded = j.value("degraded", false);
}

const Prediction* PredictionCache::find(int version, const std::string& id) const {
    auto it = entries_.find({version, id});
    return it == entries_.end() ? nullptr : &it->second;
}

void PredictionCache::insert(int version, const Prediction& p) { entries_[{version, p.example_id}] = p; }

std::vector<Prediction> evaluate_missing(const Prompt& prompt, std::span<const Example> examples,
                                         provider::Provider& solver, const evaluator::EvalOptions& options,
                                         const PredictionCache& cache) {
    std::vector<Example> missing;
    std::set<std::string> seen;
    for (const auto& e : examples)
        if (!cache.find(prompt.version, e.id) && seen.insert(e.id).second) missing.push_back(e);
    if (missing.empty()) return {};
    return evaluator::accuracy(prompt.text, "v" + std::to_string(prompt.version), missing, solver, options).predictions;
}

double cached_score(int version, std::span<const Example> examples, const PredictionCache& cache) {
    if (examples.empty()) throw ContractError("score over an empty set");
    std::size_t correct = 0;
    for (const auto& e : examples) {
        const auto* p = cache.find(version, e.id);
        if (!p) throw ContractError("no prediction for " + e.id + " under v" + std::to_string(version));
        correct += p->correct ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------

ErrorSlice collect_errors(const Prompt& prompt, std::span<const Example> dataset, provider::Provider& solver,
                          const evaluator::EvalOptions& options, int iteration) {
    if (dataset.empty()) throw ContractError("collect_errors needs a non-empty dataset");
    const auto report = evaluator::accuracy(prompt.text, "v" + std::to_string(prompt.version), dataset, solver, options);
    ErrorSlice slice;
    slice.iteration = iteration;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!report.predictions[i].correct) slice.failing.push_back({dataset[i], report.predictions[i]});
    return slice;
}

namespace {

std::string quote_prompt(const Prompt& prompt) { return "CURRENT PROMPT:\n<<<\n" + prompt.text + "\n>>>"; }

std::string render_failures(const ErrorSlice& slice) {
    std::string out = "FAILED EXAMPLES:";
    int i = 0;
    for (const auto& f : slice.failing) {
        out += "\n\nExample " + std::to_string(++i) + " (" + f.example.id + "):\nPASSAGE:\n" + f.example.passage +
               "\nQUESTION:\n" + f.example.question + "\nGOLD ANSWER: " + corpus::format_number(f.example.gold_answer) +
               "\nMODEL OUTPUT:\n" + f.prediction.raw_output;
    }
    return out;
}

std::string strip_markup(std::string_view line) {
    std::string s;
    for (char c : line)
        if (c != '*' && c != '#') s += c;
    return trim(s);
}

// "1. text", "2) text", "- text" -> text
std::optional<std::string> list_item(const std::string& line) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return trim(line.substr(i + 1));
    if (i == 0 && !line.empty() && (line[0] == '-' || line[0] == '*')) return trim(line.substr(1));
    return std::nullopt;
}

} // namespace

provider::ChatRequest recommend_request(const Prompt& prompt, const ErrorSlice& slice,
                                        std::optional<std::int64_t> seed) {
    return provider::make_request(provider::RoleTag::recommender, trim(assets::get("prompts/recommender.txt")),
                                  quote_prompt(prompt) + "\n\n" + render_failures(slice), seed);
}

Patch parse_patch(std::string_view text, int source_iteration) {
    Patch patch;
    patch.source_iteration = source_iteration;
    enum { before, analysis, recs } where = before;
    std::vector<std::string> analysis_lines;
    for (const auto& raw : split_lines(text)) {
        const auto line = strip_markup(raw);
        const auto lower = to_lower(line);
        if (starts_with_ci(lower, "analysis:")) {
            where = analysis;
            const auto rest = trim(line.substr(9));
            if (!rest.empty()) analysis_lines.push_back(rest);
            continue;
        }
        if (starts_with_ci(lower, "recommendations:")) {
            where = recs;
            continue;
        }
        if (where == analysis && !line.empty()) analysis_lines.push_back(line);
        if (where == recs && !line.empty()) {
            if (auto item = list_item(line)) patch.recommendations.push_back(*item);
            else if (!patch.recommendations.empty()) patch.recommendations.back() += " " + line;
            else patch.recommendations.push_back(line);
        }
    }
    patch.analysis = join(analysis_lines, "\n");
    std::erase_if(patch.recommendations, [](const std::string& r) { return r.empty(); });
    if (patch.recommendations.empty()) {
        // No headers: a bare numbered list still counts.
        std::vector<std::string> preamble;
        for (const auto& raw : split_lines(text)) {
            const auto line = strip_markup(raw);
            if (line.empty()) continue;
            const auto item = list_item(line);
            if (item && std::isdigit(static_cast<unsigned char>(line[0]))) patch.recommendations.push_back(*item);
            else if (patch.recommendations.empty()) preamble.push_back(line);
            else patch.recommendations.back() += " " + line;
        }
        std::erase_if(patch.recommendations, [](const std::string& r) { return r.empty(); });
        if (!patch.recommendations.empty()) patch.analysis = join(preamble, "\n");
    }
    if (patch.recommendations.empty()) {
        patch.degraded = true;
        patch.analysis.clear();
        const auto whole = trim(text);
        patch.recommendations = {whole.empty() ? "Revise the prompt so that the failed examples are answered correctly."
                                               : whole};
        log_warn("recommender reply has no numbered recommendations; using the raw text");
    }
    return patch;
}

Patch recommend(const Prompt& prompt, const ErrorSlice& slice, provider::Provider& recommender,
                std::optional<std::int64_t> seed) {
    if (slice.empty()) throw ContractError("recommend needs a non-empty error slice");
    return parse_patch(recommender.complete(recommend_request(prompt, slice, seed)).text, slice.iteration);
}

provider::ChatRequest revise_request(const Patch& patch, const Prompt& prompt, const ErrorSlice& slice) {
    std::string user = quote_prompt(prompt) + "\n\n";
    if (!patch.analysis.empty()) user += "ANALYSIS:\n" + patch.analysis + "\n\n";
    user += "RECOMMENDATIONS:";
    for (std::size_t i = 0; i < patch.recommendations.size(); ++i)
        user += "\n" + std::to_string(i + 1) + ". " + patch.recommendations[i];
    if (!slice.empty()) user += "\n\n" + render_failures(slice);
    return provider::make_request(provider::RoleTag::reviser, trim(assets::get("prompts/reviser.txt")), user);
}

namespace {

// Models like to wrap the prompt in a code fence or the <<< >>> markers
// they were shown.
std::string unwrap(std::string text) {
    text = trim(text);
    auto strip = [&](std::string_view open, std::string_view close) {
        if (text.size() >= open.size() + close.size() && text.rfind(open, 0) == 0 &&
            text.compare(text.size() - close.size(), close.size(), close) == 0) {
            auto inner = text.substr(open.size(), text.size() - open.size() - close.size());
            if (open == "```") {
                const auto nl = inner.find('\n');
                inner = nl == std::string::npos ? std::string() : inner.substr(nl + 1);
            }
            text = trim(inner);
        }
    };
    strip("```", "```");
    strip("<<<", ">>>");
    return text;
}

} // namespace

Revision revise(const Patch& patch, const Prompt& prompt, const ErrorSlice& slice, provider::Provider& reviser,
                int new_version, std::size_t max_chars) {
    if (patch.recommendations.empty()) throw ContractError("patch has no recommendations");
    const auto text = unwrap(reviser.complete(revise_request(patch, prompt, slice)).text);
    if (text.empty()) throw EmptyRevision("reviser returned an empty prompt");
    if (text.size() > max_chars)
        throw LengthExceeded("revised prompt has " + std::to_string(text.size()) + " characters; the cap is " +
                             std::to_string(max_chars));
    Revision r;
    r.prompt.version = new_version;
    r.prompt.text = text;
    r.prompt.parent_version = prompt.version;
    r.prompt.created_by = CreatedBy::revision;
    r.noop = text == prompt.text;
    return r;
}

LocalConfirmation confirm_local(const Prompt& candidate, const ErrorSlice& slice, provider::Provider& solver,
                                const evaluator::EvalOptions& options) {
    if (slice.empty()) throw ContractError("confirm_local needs a non-empty slice");
    std::vector<Example> examples;
    for (const auto& f : slice.failing) examples.push_back(f.example);
    auto report = evaluator::accuracy(candidate.text, "v" + std::to_string(candidate.version), examples, solver, options);
    LocalConfirmation out;
    out.remaining.iteration = slice.iteration;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (!report.predictions[i].correct) out.remaining.failing.push_back({examples[i], report.predictions[i]});
    out.passed = out.remaining.empty();
    out.score = report.overall;
    out.predictions = std::move(report.predictions);
    return out;
}

GlobalConfirmation confirm_global(const Prompt& candidate, std::span<const Example> dataset, provider::Provider& solver,
                                  const evaluator::EvalOptions& options) {
    GlobalConfirmation out;
    const auto slice = collect_errors(candidate, dataset, solver, options);
    out.regressions = slice;
    out.passed = slice.empty();
    out.score = 1.0 - static_cast<double>(slice.failing.size()) / static_cast<double>(dataset.size());
    return out;
}

std::size_t argmax_version(std::span<const std::pair<int, double>> scores) {
    if (scores.empty()) throw ContractError("argmax over no prompts");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const auto& [v, s] = scores[i];
        if (s > scores[best].second || (s == scores[best].second && v < scores[best].first)) best = i;
    }
    return best;
}

Prompt select_final(std::span<const Prompt> prompts, std::span<const Example> dataset, provider::Provider& solver,
                    const evaluator::EvalOptions& options) {
    if (prompts.empty()) throw ContractError("select_final needs at least one prompt");
    std::vector<std::pair<int, double>> scores;
    for (const auto& p : prompts) {
        const double s = dataset.empty()
                             ? 0.0
                             : evaluator::accuracy(p.text, "v" + std::to_string(p.version), dataset, solver, options)
                                   .overall;
        scores.emplace_back(p.version, s);
    }
    return prompts[argmax_version(scores)];
}

// ---------------------------------------------------------------------------
// Loop options
// ---------------------------------------------------------------------------

void to_json(json& j, const LoopOptions& o) {
    j = json{{"examples", o.budgets.examples},
             {"max_refinements", o.budgets.max_refinements},
             {"inner_cap", o.budgets.inner_cap},
             {"max_regenerations", o.budgets.max_regenerations},
             {"seed", o.seed},
             {"regime", std::string(generator::to_string(o.regime))},
             {"c_max", o.c_max},
             {"lambda", o.lambda_weight},
             {"rel_tol", o.tolerance.rel_tol},
             {"abs_tol", o.tolerance.abs_tol},
             {"concurrency", o.concurrency},
             {"max_prompt_chars", o.max_prompt_chars},
             {"perturbations", o.perturbations},
             {"reword", std::string(verifier::to_string(o.reword))},
             {"summary", std::string(generator::to_string(o.summary))}};
    j["kl_threshold"] = std::isfinite(o.kl_threshold) ? json(o.kl_threshold) : json("inf");
}

void from_json(const json& j, LoopOptions& o) {
    o.budgets.examples = j.at("examples").get<int>();
    o.budgets.max_refinements = j.at("max_refinements").get<int>();
    o.budgets.inner_cap = j.at("inner_cap").get<int>();
    o.budgets.max_regenerations = j.at("max_regenerations").get<int>();
    o.seed = j.at("seed").get<std::uint64_t>();
    const auto regime = generator::regime_from_string(j.at("regime").get<std::string>());
    if (!regime) throw SchemaError("unknown regime");
    o.regime = *regime;
    o.c_max = j.at("c_max").get<int>();
    const auto& kl = j.at("kl_threshold");
    o.kl_threshold = kl.is_string() ? std::numeric_limits<double>::infinity() : kl.get<double>();
    o.lambda_weight = j.at("lambda").get<double>();
    o.tolerance = {j.at("rel_tol").get<double>(), j.at("abs_tol").get<double>()};
    o.concurrency = j.at("concurrency").get<int>();
    o.max_prompt_chars = j.at("max_prompt_chars").get<std::size_t>();
    o.perturbations = j.at("perturbations").get<int>();
    const auto reword = verifier::reword_mode_from_string(j.at("reword").get<std::string>());
    const auto summary = generator::summary_mode_from_string(j.at("summary").get<std::string>());
    if (!reword || !summary) throw SchemaError("unknown reword or summary mode");
    o.reword = *reword;
    o.summary = *summary;
}

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::generate: return "generate";
        case Phase::evaluate: return "evaluate";
        case Phase::collect: return "collect";
        case Phase::recommend: return "recommend";
        case Phase::revise: return "revise";
        case Phase::confirm_local: return "confirm_local";
        case Phase::confirm_global: return "confirm_global";
        case Phase::adopt: return "adopt";
        case Phase::select_eval: return "select_eval";
        case Phase::select: return "select";
        case Phase::finish: return "finish";
        case Phase::done: return "done";
    }
    return "?";
}

std::string_view to_string(AdoptMode m) {
    switch (m) {
        case AdoptMode::accepted: return "accepted";
        case AdoptMode::best_effort: return "best_effort";
        case AdoptMode::kept: return "kept";
    }
    return "?";
}

std::vector<Prompt> RunState::adopted_prompts() const {
    std::vector<Prompt> out;
    for (int v : adopted) out.push_back(prompts.at(v));
    return out;
}

LoopContext LoopContext::from(const provider::ProviderSet& set, std::span<const Example> real) {
    using provider::RoleTag;
    LoopContext c;
    c.generator = &set.for_role(RoleTag::generator);
    c.voter = &set.for_role(RoleTag::voter);
    c.analyzer = &set.for_role(RoleTag::analyzer);
    c.recommender = &set.for_role(RoleTag::recommender);
    c.reviser = &set.for_role(RoleTag::reviser);
    c.solver = &set.for_role(RoleTag::solver);
    c.real = real;
    return c;
}

// ---------------------------------------------------------------------------
// State machine
// ---------------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ContractError(what);
}

void validate(const LoopOptions& o) {
    require(o.budgets.examples >= 0, "examples (M) must be >= 0");
    require(o.budgets.max_refinements >= 1, "max_refinements (T_max) must be >= 1");
    require(o.budgets.inner_cap >= 1, "inner_cap must be >= 1");
    require(o.budgets.max_regenerations >= 1, "max_regenerations must be >= 1");
    require(o.c_max >= 1, "c_max must be >= 1");
    require(o.concurrency >= 1, "concurrency must be >= 1");
    require(o.max_prompt_chars >= 1, "max_prompt_chars must be >= 1");
    require(o.perturbations >= 0, "perturbations must be >= 0");
    require(o.lambda_weight >= 0.0, "lambda must be >= 0");
    require(!(o.kl_threshold < 0.0), "kl_threshold must be >= 0");
}

std::int64_t call_seed(const LoopOptions& o, std::string_view stream, std::uint64_t index) {
    auto rng = derived_rng(o.seed, stream, index);
    return static_cast<std::int64_t>(rng() >> 33);
}

evaluator::EvalOptions eval_options(const RunState& s, const LoopContext& ctx) {
    evaluator::EvalOptions e;
    e.tolerance = s.options.tolerance;
    e.concurrency = s.options.concurrency;
    e.clock = ctx.clock;
    return e;
}

std::vector<Example> examples_by_id(const RunState& s, const std::vector<std::string>& ids) {
    std::vector<Example> out;
    for (const auto& id : ids) {
        auto it = std::find_if(s.dataset.begin(), s.dataset.end(), [&](const Example& e) { return e.id == id; });
        require(it != s.dataset.end(), "unknown example id " + id);
        out.push_back(*it);
    }
    return out;
}

ErrorSlice slice_for(const RunState& s, const std::vector<std::string>& ids, int version) {
    ErrorSlice slice;
    slice.iteration = s.t;
    for (auto& e : examples_by_id(s, ids)) {
        const auto* p = s.cache.find(version, e.id);
        require(p != nullptr, "no cached prediction for " + e.id);
        slice.failing.push_back({std::move(e), *p});
    }
    return slice;
}

json predictions_json(const std::vector<Prediction>& ps) { return json(ps); }

// Score over `examples` once `fresh` is merged into the cache.
double merged_score(const RunState& s, int version, std::span<const Example> examples,
                    const std::vector<Prediction>& fresh) {
    PredictionCache c = s.cache;
    for (const auto& p : fresh) c.insert(version, p);
    return cached_score(version, examples, c);
}

std::vector<std::string> failing_ids(const RunState& s, int version, std::span<const Example> examples,
                                     const std::vector<Prediction>& fresh) {
    PredictionCache c = s.cache;
    for (const auto& p : fresh) c.insert(version, p);
    std::vector<std::string> out;
    for (const auto& e : examples)
        if (!c.find(version, e.id)->correct) out.push_back(e.id);
    return out;
}

int next_version(const RunState& s) { return s.prompts.empty() ? 0 : s.prompts.rbegin()->first + 1; }

Phase after_iteration(RunState& s) {
    if (s.t >= s.options.budgets.examples) {
        s.stop_reason = "target_reached";
        return Phase::select_eval;
    }
    if (s.refinements_accepted >= s.options.budgets.max_refinements) {
        s.stop_reason = "refinement_budget";
        return Phase::select_eval;
    }
    return Phase::generate;
}

std::optional<int> next_unscored(const RunState& s) {
    for (int v : s.adopted) {
        const bool done = std::any_of(s.final_scores.begin(), s.final_scores.end(),
                                      [&](const auto& p) { return p.first == v; });
        if (!done) return v;
    }
    return std::nullopt;
}

Phase after_adoption_or_select(RunState& s) {
    if (s.phase == Phase::select_eval && (s.dataset.empty() || !next_unscored(s))) return Phase::select;
    return s.phase;
}

void insert_predictions(RunState& s, int version, const json& ps) {
    for (const auto& p : ps) s.cache.insert(version, p.get<Prediction>());
}

void set_phase(RunState& s, Phase p) {
    s.phase = p;
    s.phase = after_adoption_or_select(s);
}

void end_inner_round(RunState& s) {
    const bool out_of_budget = s.repair.inner_attempts >= s.options.budgets.inner_cap ||
                               s.regression_loops >= s.options.budgets.max_refinements;
    if (out_of_budget) {
        s.repair.outcome = s.repair.best_version ? AdoptMode::best_effort : AdoptMode::kept;
        set_phase(s, Phase::adopt);
    } else {
        set_phase(s, Phase::recommend);
    }
}

void expect_phase(const RunState& s, std::initializer_list<Phase> allowed, const std::string& kind) {
    require(s.started, "event " + kind + " before run_started");
    for (auto p : allowed)
        if (s.phase == p) return;
    throw ContractError("event " + kind + " does not fit phase " + std::string(to_string(s.phase)));
}

} // namespace

Event start_event(const LoopOptions& options, std::string_view seed_prompt, std::span<const Example> real) {
    validate(options);
    if (trim(seed_prompt).empty()) throw ContractError("seed prompt is empty");
    const auto prior = corpus::estimate_label_prior(real);
    auto rng = derived_rng(options.seed, "exemplars", 0);
    const auto exemplars = generator::draw_exemplars(real, options.regime, rng);
    return {"run_started", json{{"options", options},
                                {"seed_prompt", std::string(seed_prompt)},
                                {"exemplars", exemplars},
                                {"prior", prior}}};
}

generator::GenerationContext generation_context(const RunState& s, const LoopContext& ctx) {
    generator::GenerationContext g;
    g.generator = ctx.generator;
    g.voter = ctx.voter;
    g.analyzer = ctx.analyzer;
    g.prior = &s.prior;
    g.verifier.tolerance = s.options.tolerance;
    g.verifier.perturbations = s.options.perturbations;
    g.verifier.reword = s.options.reword;
    g.verifier.seed = s.options.seed;
    g.max_regenerations = s.options.budgets.max_regenerations;
    g.summary = s.options.summary;
    g.seed = s.options.seed;
    return g;
}

Event step(const RunState& s, const LoopContext& ctx) {
    require(s.started, "run has not started");
    const auto eopt = eval_options(s, ctx);
    switch (s.phase) {
        case Phase::generate: {
            const auto g = generation_context(s, ctx);
            return generator::generation_step(s.generator, s.generation, g);
        }
        case Phase::evaluate: {
            require(ctx.solver, "evaluation needs a solver");
            const auto fresh = evaluate_missing(s.current(), s.dataset, *ctx.solver, eopt, s.cache);
            return {"eval", json{{"scope", "step1"},
                                 {"iteration", s.t},
                                 {"version", s.current_version},
                                 {"score", merged_score(s, s.current_version, s.dataset, fresh)},
                                 {"predictions", predictions_json(fresh)}}};
        }
        case Phase::collect: {
            const auto ids = failing_ids(s, s.current_version, s.dataset, {});
            json payload{{"iteration", s.t}, {"version", s.current_version}, {"failing", ids}};
            // With lambda > 0 the next example is conditioned on exemplars
            // that share the failing question's operation.
            if (!ids.empty() && s.options.lambda_weight > 0.0 && ctx.real.size() >= 2) {
                const auto focus = verifier::question_operation(examples_by_id(s, {ids.front()}).front().question);
                auto rng = derived_rng(s.options.seed, "exemplars", static_cast<std::uint64_t>(s.t));
                payload["exemplars"] = generator::draw_exemplars(ctx.real, s.options.regime, rng, s.options.lambda_weight, focus);
                payload["focus"] = focus;
            }
            return {"error_slice", std::move(payload)};
        }
        case Phase::recommend: {
            require(ctx.recommender, "recommendation needs a recommender");
            const auto& base = s.prompts.at(s.repair.base_version);
            const auto slice = slice_for(s, s.repair.slice, base.version);
            const auto seed = call_seed(s.options, "recommend/" + std::to_string(s.t),
                                        static_cast<std::uint64_t>(s.repair.inner_attempts));
            const auto patch = recommend(base, slice, *ctx.recommender, seed);
            return {"patch", json{{"iteration", s.t}, {"version", base.version}, {"patch", patch}}};
        }
        case Phase::revise: {
            require(ctx.reviser, "revision needs a reviser");
            require(s.repair.patch.has_value(), "revise without a patch");
            const auto& base = s.prompts.at(s.repair.base_version);
            const auto slice = slice_for(s, s.repair.slice, base.version);
            const int version = next_version(s);
            json payload{{"iteration", s.t}, {"parent_version", base.version}, {"version", version}};
            try {
                const auto r = revise(*s.repair.patch, base, slice, *ctx.reviser, version, s.options.max_prompt_chars);
                payload["status"] = "ok";
                payload["prompt"] = r.prompt;
                payload["noop"] = r.noop;
            } catch (const EmptyRevision& e) {
                payload["status"] = "rejected";
                payload["error"] = e.what();
            } catch (const LengthExceeded& e) {
                payload["status"] = "rejected";
                payload["error"] = e.what();
            }
            return {"revision", std::move(payload)};
        }
        case Phase::confirm_local: {
            require(ctx.solver, "confirmation needs a solver");
            const int v = *s.repair.candidate_version;
            const auto examples = examples_by_id(s, s.repair.slice);
            const auto fresh = evaluate_missing(s.prompts.at(v), examples, *ctx.solver, eopt, s.cache);
            const auto still = failing_ids(s, v, examples, fresh);
            return {"local_confirm", json{{"iteration", s.t},
                                          {"version", v},
                                          {"passed", still.empty()},
                                          {"score", merged_score(s, v, examples, fresh)},
                                          {"failing", still},
                                          {"predictions", predictions_json(fresh)}}};
        }
        case Phase::confirm_global: {
            require(ctx.solver, "confirmation needs a solver");
            const int v = *s.repair.candidate_version;
            const auto fresh = evaluate_missing(s.prompts.at(v), s.dataset, *ctx.solver, eopt, s.cache);
            const auto regressions = failing_ids(s, v, s.dataset, fresh);
            return {"global_confirm", json{{"iteration", s.t},
                                           {"version", v},
                                           {"passed", regressions.empty()},
                                           {"score", merged_score(s, v, s.dataset, fresh)},
                                           {"regressions", regressions},
                                           {"predictions", predictions_json(fresh)}}};
        }
        case Phase::adopt: {
            json payload{{"iteration", s.t}, {"inner_attempts", s.repair.inner_attempts}};
            AdoptMode mode = s.repair.outcome;
            int version = s.current_version;
            if (mode == AdoptMode::accepted) version = *s.repair.candidate_version;
            else if (mode == AdoptMode::best_effort) version = *s.repair.best_version;
            payload["mode"] = std::string(to_string(mode));
            payload["version"] = version;
            if (mode == AdoptMode::accepted) payload["score"] = s.prompts.at(version).scores.at("D" + std::to_string(s.t));
            if (mode != AdoptMode::accepted) {
                payload["reason"] = s.repair.inner_attempts >= s.options.budgets.inner_cap
                                        ? "InnerBudgetExhausted"
                                        : "regression budget exhausted";
                payload["best_slice_score"] = s.repair.best_score < 0 ? json(nullptr) : json(s.repair.best_score);
            }
            return {"prompt_accepted", std::move(payload)};
        }
        case Phase::select_eval: {
            require(ctx.solver, "selection needs a solver");
            const int v = *next_unscored(s);
            const auto fresh = evaluate_missing(s.prompts.at(v), s.dataset, *ctx.solver, eopt, s.cache);
            return {"eval", json{{"scope", "final"},
                                 {"iteration", s.t},
                                 {"version", v},
                                 {"score", merged_score(s, v, s.dataset, fresh)},
                                 {"predictions", predictions_json(fresh)}}};
        }
        case Phase::select: {
            json scores = json::array();
            int version = s.adopted.front();
            json score = nullptr;
            if (!s.final_scores.empty()) {
                const auto best = s.final_scores[argmax_version(s.final_scores)];
                version = best.first;
                score = best.second;
                for (const auto& [v, sc] : s.final_scores) scores.push_back(json{{"version", v}, {"score", sc}});
            }
            return {"final_selected",
                    json{{"version", version}, {"score", score}, {"scores", scores}, {"text", s.prompts.at(version).text}}};
        }
        case Phase::finish:
            return {"run_finished", json{{"stop_reason", s.stop_reason},
                                         {"examples", s.t},
                                         {"refinements_accepted", s.refinements_accepted},
                                         {"accepted_scores", s.accepted_scores},
                                         {"final_version", *s.final_version}}};
        case Phase::done: break;
    }
    throw ContractError("run is already finished");
}

namespace {

void apply_event(RunState& s, const Event& ev) {
    const auto& p = ev.payload;
    const auto& kind = ev.kind;
    if (kind == "run_started") {
        require(!s.started, "second run_started event");
        RunState fresh;
        fresh.options = p.at("options").get<LoopOptions>();
        Prompt seed;
        seed.text = p.at("seed_prompt").get<std::string>();
        fresh.prompts[0] = seed;
        fresh.adopted = {0};
        fresh.prior = p.at("prior").get<corpus::LabelPrior>();
        fresh.generator.c_max = fresh.options.c_max;
        fresh.generator.exemplars = p.at("exemplars").get<std::vector<Example>>();
        fresh.generator.regime = fresh.options.regime;
        fresh.generator.kl_threshold = fresh.options.kl_threshold;
        fresh.generator.lambda_weight = fresh.options.lambda_weight;
        fresh.started = true;
        fresh.phase = after_iteration(fresh);
        s = std::move(fresh);
        set_phase(s, s.phase);
        return;
    }
    if (kind == "generated" || kind == "kl_gate" || kind == "verdict" || kind == "consensus" ||
        kind == "example_accepted") {
        expect_phase(s, {Phase::generate}, kind);
        const auto accepted =
            generator::apply_generation_event(s.generator, s.generation, ev, s.options.budgets.max_regenerations);
        if (accepted) {
            s.dataset.push_back(*accepted);
            s.t = static_cast<int>(s.dataset.size());
            set_phase(s, Phase::evaluate);
        } else if (s.generation.exhausted) {
            s.stop_reason = "regeneration_exhausted";
            s.generation = {};
            set_phase(s, Phase::select_eval);
        }
        return;
    }
    if (kind == "eval") {
        const auto scope = p.at("scope").get<std::string>();
        const int v = p.at("version").get<int>();
        if (scope == "step1") {
            expect_phase(s, {Phase::evaluate}, kind);
            require(v == s.current_version, "step1 eval of a non-current prompt");
            insert_predictions(s, v, p.at("predictions"));
            s.prompts.at(v).scores["D" + std::to_string(s.t)] = p.at("score").get<double>();
            set_phase(s, Phase::collect);
        } else if (scope == "final") {
            expect_phase(s, {Phase::select_eval}, kind);
            require(next_unscored(s) == v, "final eval out of order");
            insert_predictions(s, v, p.at("predictions"));
            const double score = p.at("score").get<double>();
            s.prompts.at(v).scores["final"] = score;
            s.final_scores.emplace_back(v, score);
            set_phase(s, Phase::select_eval);
        } else {
            throw ContractError("unknown eval scope " + scope);
        }
        return;
    }
    if (kind == "error_slice") {
        expect_phase(s, {Phase::collect}, kind);
        if (p.contains("exemplars")) s.generator.exemplars = p.at("exemplars").get<std::vector<Example>>();
        auto ids = p.at("failing").get<std::vector<std::string>>();
        if (ids.empty()) {
            set_phase(s, after_iteration(s));
        } else {
            s.repair = Repair{};
            s.repair.slice = std::move(ids);
            s.repair.base_version = s.current_version;
            set_phase(s, Phase::recommend);
        }
        return;
    }
    if (kind == "patch") {
        expect_phase(s, {Phase::recommend}, kind);
        s.repair.patch = p.at("patch").get<Patch>();
        set_phase(s, Phase::revise);
        return;
    }
    if (kind == "revision") {
        expect_phase(s, {Phase::revise}, kind);
        s.repair.inner_attempts += 1;
        if (p.at("status").get<std::string>() == "ok") {
            auto prompt = p.at("prompt").get<Prompt>();
            require(prompt.version == next_version(s), "revision version out of sequence");
            require(prompt.parent_version == s.repair.base_version, "revision parent mismatch");
            const int v = prompt.version;
            s.prompts[v] = std::move(prompt);
            s.repair.candidate_version = v;
            set_phase(s, Phase::confirm_local);
        } else {
            s.repair.candidate_version.reset();
            end_inner_round(s);
        }
        return;
    }
    if (kind == "local_confirm") {
        expect_phase(s, {Phase::confirm_local}, kind);
        const int v = p.at("version").get<int>();
        require(s.repair.candidate_version == v, "local_confirm for a different candidate");
        insert_predictions(s, v, p.at("predictions"));
        const double score = p.at("score").get<double>();
        if (score >= s.repair.best_score) {
            s.repair.best_score = score;
            s.repair.best_version = v;
        }
        if (p.at("passed").get<bool>()) {
            set_phase(s, Phase::confirm_global);
        } else {
            s.repair.slice = p.at("failing").get<std::vector<std::string>>();
            s.repair.base_version = v;
            end_inner_round(s);
        }
        return;
    }
    if (kind == "global_confirm") {
        expect_phase(s, {Phase::confirm_global}, kind);
        const int v = p.at("version").get<int>();
        require(s.repair.candidate_version == v, "global_confirm for a different candidate");
        insert_predictions(s, v, p.at("predictions"));
        s.prompts.at(v).scores["D" + std::to_string(s.t)] = p.at("score").get<double>();
        if (p.at("passed").get<bool>()) {
            s.repair.outcome = AdoptMode::accepted;
            set_phase(s, Phase::adopt);
        } else {
            s.regression_loops += 1;
            s.repair.slice = p.at("regressions").get<std::vector<std::string>>();
            s.repair.base_version = v;
            end_inner_round(s);
        }
        return;
    }
    if (kind == "prompt_accepted") {
        expect_phase(s, {Phase::adopt}, kind);
        const auto mode = p.at("mode").get<std::string>();
        const int v = p.at("version").get<int>();
        require(s.prompts.count(v) == 1, "adopted an unknown prompt version");
        if (mode == "accepted") {
            s.current_version = v;
            s.adopted.push_back(v);
            s.refinements_accepted += 1;
            s.accepted_scores.push_back(p.at("score").get<double>());
        } else if (mode == "best_effort") {
            s.current_version = v;
            s.adopted.push_back(v);
        } else {
            require(mode == "kept", "unknown adoption mode " + mode);
        }
        s.repair = Repair{};
        set_phase(s, after_iteration(s));
        return;
    }
    if (kind == "final_selected") {
        expect_phase(s, {Phase::select}, kind);
        s.final_version = p.at("version").get<int>();
        set_phase(s, Phase::finish);
        return;
    }
    if (kind == "run_finished") {
        expect_phase(s, {Phase::finish}, kind);
        set_phase(s, Phase::done);
        return;
    }
    throw ContractError("unknown event kind " + kind);
}

} // namespace

void apply(RunState& s, const Event& ev) {
    if (ev.kind != "run_started") require(s.started, ev.kind + " event before run_started");
    try {
        apply_event(s, ev);
    } catch (const nlohmann::json::exception& e) {
        throw ContractError("malformed " + ev.kind + " payload: " + e.what());
    }
}

RunState replay(std::span<const Event> events) {
    RunState s;
    for (const auto& e : events) apply(s, e);
    return s;
}

RunResult continue_run(RunState state, const LoopContext& ctx, const EventSink& sink) {
    while (state.phase != Phase::done) {
        const Event ev = step(state, ctx);
        if (sink) sink(ev);
        apply(state, ev);
    }
    return {state.prompts.at(*state.final_version), std::move(state)};
}

RunResult run_loop(const LoopOptions& options, std::string_view seed_prompt, const LoopContext& ctx,
                   const EventSink& sink) {
    const Event start = start_event(options, seed_prompt, ctx.real);
    if (sink) sink(start);
    RunState state;
    apply(state, start);
    return continue_run(std::move(state), ctx, sink);
}

} // namespace finprompt::optimizer
