#include "finprompt/generator.hpp"

#include "finprompt/assets.hpp"
#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>

namespace finprompt::generator {

using corpus::Example;
using nlohmann::json;

std::string_view to_string(Regime regime) { return regime == Regime::Short ? "Short" : "Long"; }

std::optional<Regime> regime_from_string(std::string_view name) {
    const auto n = to_lower(name);
    if (n == "short") return Regime::Short;
    if (n == "long") return Regime::Long;
    return std::nullopt;
}

std::string_view to_string(SummaryMode mode) { return mode == SummaryMode::local ? "local" : "llm"; }

std::optional<SummaryMode> summary_mode_from_string(std::string_view name) {
    if (name == "local") return SummaryMode::local;
    if (name == "llm") return SummaryMode::llm;
    return std::nullopt;
}

void to_json(json& j, const HistoryEntry& h) {
    j = json{{"difficulty", h.difficulty}, {"summary", h.summary}, {"example", h.example}};
}

void from_json(const json& j, HistoryEntry& h) {
    h.difficulty = j.at("difficulty").get<int>();
    h.summary = j.at("summary").get<std::string>();
    h.example = j.at("example").get<Example>();
}

void GeneratorState::validate() const {
    if (c_max < 1) throw ContractError("c_max must be >= 1");
    if (current_difficulty < 1 || current_difficulty > c_max)
        throw ContractError("current difficulty " + std::to_string(current_difficulty) + " outside [1, " +
                            std::to_string(c_max) + "]");
    if (exemplars.size() != 2) throw ContractError("generator needs exactly 2 exemplars");
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i].difficulty < history[i - 1].difficulty)
            throw ContractError("history difficulties must be non-decreasing");
    if (!(kl_threshold > 0.0)) throw ContractError("kl_threshold must be positive");
    if (!(lambda_weight >= 0.0)) throw ContractError("lambda must be non-negative");
}

// ---------------------------------------------------------------------------

std::string render_sample(const Example& example) {
    return "Generated Paragraphs:\n" + example.passage + "\n\nGenerated Question:\n" + example.question +
           "\n\nGenerated Answer: " + corpus::format_number(example.gold_answer);
}

std::string render_history(std::span<const HistoryEntry> history) {
    if (history.empty()) return "(none)";
    std::vector<std::string> parts;
    if (history.size() <= kFullHistoryLimit) {
        for (std::size_t i = 0; i < history.size(); ++i)
            parts.push_back("Sample " + std::to_string(i + 1) + " (difficulty " +
                            std::to_string(history[i].difficulty) + "):\n" + render_sample(history[i].example));
        return join(parts, "\n\n");
    }
    for (std::size_t i = 0; i < history.size(); ++i)
        parts.push_back(std::to_string(i + 1) + ". (difficulty " + std::to_string(history[i].difficulty) + ") " +
                        history[i].summary);
    return join(parts, "\n");
}

namespace {

std::string render_exemplars(std::span<const Example> exemplars) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < exemplars.size(); ++i)
        parts.push_back("Example " + std::to_string(i + 1) + ":\n" + render_sample(exemplars[i]));
    return join(parts, "\n\n");
}

// Single pass so that substituted text is never re-scanned for slots.
std::string fill_slots(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& slots) {
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        bool hit = false;
        if (tmpl[i] == '{') {
            for (const auto& [name, value] : slots) {
                if (tmpl.compare(i, name.size(), name) == 0) {
                    out += value;
                    i += name.size();
                    hit = true;
                    break;
                }
            }
        }
        if (!hit) out += tmpl[i++];
    }
    return out;
}

} // namespace

provider::ChatRequest build_generation_prompt(const GeneratorState& state, const std::optional<std::string>& feedback,
                                              std::optional<std::int64_t> seed) {
    state.validate();
    const std::string_view tmpl = assets::get("prompts/data_generation.txt");
    constexpr std::string_view kSystem = "[System Input]:";
    constexpr std::string_view kUser = "[User Input]:";
    const auto sys_pos = tmpl.find(kSystem);
    const auto user_pos = tmpl.find(kUser);
    if (sys_pos == std::string_view::npos || user_pos == std::string_view::npos || user_pos < sys_pos)
        throw ContractError("data generation template lacks its input markers");

    const std::vector<std::pair<std::string, std::string>> slots{
        {"{c_max}", std::to_string(state.c_max)},
        {"{c}", std::to_string(state.current_difficulty)},
        {"{history}", render_history(state.history)},
        {"{exemplars}", render_exemplars(state.exemplars)},
    };
    const std::string system = trim(tmpl.substr(sys_pos + kSystem.size(), user_pos - sys_pos - kSystem.size()));
    const std::string user = trim(fill_slots(tmpl.substr(user_pos + kUser.size()), slots));

    auto request = provider::make_request(provider::RoleTag::generator, system, user, seed);
    if (feedback) {
        request.messages.push_back(
            {provider::Speaker::user, "Your previous sample was rejected by the verifiers: " + *feedback +
                                          "\nGenerate a new, different sample that avoids these problems."});
    }
    return request;
}

// ---------------------------------------------------------------------------

namespace {

struct Section {
    std::string name;
    std::size_t header_line = 0;
    std::string inline_text;
};

// Header text of a line with markdown decoration removed.
std::string undecorated(std::string_view line) {
    std::string s;
    for (char c : line)
        if (c != '*' && c != '#' && c != '_') s += c;
    return trim(s);
}

std::string strip_emphasis(std::string s) {
    s = trim(s);
    while (!s.empty() && (s.front() == '*' || s.front() == '_')) s.erase(0, 1);
    while (!s.empty() && (s.back() == '*' || s.back() == '_')) s.pop_back();
    return trim(s);
}

} // namespace

CandidateExample parse_candidate(std::string_view raw, int difficulty, std::string id) {
    if (trim(raw).empty()) throw ParseError("Generated Paragraphs");
    static const char* kNames[] = {"Generated Paragraphs", "Generated Question", "Generated Answer"};

    const auto lines = split_lines(raw);
    std::optional<Section> found[3];
    CandidateExample out;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const std::string clean = undecorated(lines[li]);
        for (int s = 0; s < 3; ++s) {
            const std::string head = std::string(kNames[s]) + ":";
            if (found[s] || !starts_with_ci(clean, head)) continue;
            if (clean != trim(lines[li])) out.parse_diagnostics.push_back("markdown emphasis around " + head);
            found[s] = Section{kNames[s], li, trim(std::string_view(clean).substr(head.size()))};
            break;
        }
    }
    for (int s = 0; s < 3; ++s)
        if (!found[s]) throw ParseError(kNames[s]);
    for (int s = 1; s < 3; ++s)
        if (found[s]->header_line <= found[s - 1]->header_line)
            throw ParseError(std::string(kNames[s]) + " (out of order)");

    auto body = [&](int s) {
        const std::size_t end = s < 2 ? found[s + 1]->header_line : lines.size();
        std::vector<std::string> parts;
        if (!found[s]->inline_text.empty()) parts.push_back(found[s]->inline_text);
        for (std::size_t li = found[s]->header_line + 1; li < end; ++li) parts.push_back(lines[li]);
        return trim(join(parts, "\n"));
    };

    const std::string passage = body(0);
    const std::string question = strip_emphasis(body(1));
    const std::string answer_block = body(2);
    if (passage.empty()) throw ParseError("Generated Paragraphs");
    if (question.empty()) throw ParseError("Generated Question");
    if (answer_block.empty()) throw ParseError("Generated Answer");

    std::string answer_line = strip_emphasis(split_lines(answer_block).front());
    if (answer_block.find('\n') != std::string::npos) out.parse_diagnostics.push_back("ignored text after the answer");
    if (!answer_line.empty() && answer_line.back() == '.') answer_line.pop_back();
    const auto value = corpus::parse_number(answer_line);
    if (!value) throw AnswerNotNumeric("generated answer is not a single number: '" + answer_line + "'");

    out.example.id = std::move(id);
    out.example.passage = passage;
    out.example.question = question;
    out.example.gold_answer = *value;
    out.example.difficulty = difficulty;
    out.example.origin = corpus::Origin::synthetic;
    out.raw_response = std::string(raw);
    try {
        out.example.validate();
    } catch (const SchemaError& e) {
        throw AnswerNotNumeric(e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------

double kl_divergence(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size()) throw ContractError("KL over distributions of different arity");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] <= 0.0) continue;
        if (p[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += q[i] * std::log(q[i] / p[i]);
    }
    return std::max(0.0, kl);
}

KlDecision kl_gate(std::span<const double> answers, const corpus::LabelPrior& prior, double threshold) {
    if (answers.empty()) throw ContractError("kl_gate needs at least one answer");
    if (prior.buckets != corpus::default_buckets()) throw ContractError("label prior uses a different bucketing");
    const auto q = corpus::label_distribution(answers);
    KlDecision d;
    d.kl_value = kl_divergence(q.probabilities, prior.probabilities);
    d.accept = d.kl_value <= threshold;
    return d;
}

// ---------------------------------------------------------------------------

namespace {

std::string table_count_word(std::size_t n) {
    switch (n) {
        case 0: return "text-only";
        case 1: return "single-table";
        case 2: return "two-table";
        case 3: return "three-table";
        default: return std::to_string(n) + "-table";
    }
}

std::string clip_utf8(std::string s, std::size_t limit) {
    if (s.size() <= limit) return s;
    std::size_t cut = limit;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    s.resize(cut);
    return s;
}

constexpr std::size_t kSummaryLimit = 240;

} // namespace

std::string summarize_previous(const Example& example) {
    static const std::regex quoted(R"((?:'|"|`|\xE2\x80\x98|\xE2\x80\x9C)([^'"\n]+?)(?:'|"|\xE2\x80\x99|\xE2\x80\x9D)(?![A-Za-z0-9]))");
    const auto tables = corpus::extract_tables(example.passage);
    std::vector<std::string> topics;
    for (auto it = std::sregex_iterator(example.question.begin(), example.question.end(), quoted);
         it != std::sregex_iterator(); ++it)
        topics.push_back(trim((*it)[1].str()));
    std::string topic;
    if (!topics.empty()) topic = join(topics, " and ");
    else if (!tables.empty() && !trim(tables.front().stub).empty()) topic = trim(tables.front().stub);
    else topic = "the passage";

    const auto& bucket = corpus::default_buckets()[corpus::bucket_index(example.gold_answer)];
    std::string s = table_count_word(tables.size()) + " " + verifier::question_operation(example.question) +
                    " question on " + topic;
    const std::string tail = "; answer bucket " + bucket.name;
    return clip_utf8(s, kSummaryLimit - tail.size()) + tail;
}

std::string summarize_with_llm(const Example& example, provider::Provider& analyzer) {
    auto request = provider::make_request(provider::RoleTag::analyzer, trim(assets::get("prompts/summarizer.txt")),
                                          render_sample(example));
    std::string text = trim(analyzer.complete(request).text);
    for (auto& c : text)
        if (c == '\n') c = ' ';
    if (text.empty()) return summarize_previous(example);
    return clip_utf8(text, kSummaryLimit);
}

int next_difficulty(const GeneratorState& state, Outcome last_outcome) {
    if (last_outcome == Outcome::rejected) return state.current_difficulty;
    return std::min(state.current_difficulty + 1, state.c_max);
}

// ---------------------------------------------------------------------------

namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::optional<std::size_t> weighted_pick(const std::vector<std::size_t>& pool, std::span<const Example> real,
                                         std::mt19937_64& rng, double lambda,
                                         const std::optional<std::string>& focus) {
    if (pool.empty()) return std::nullopt;
    std::vector<double> weights;
    double total = 0.0;
    for (auto i : pool) {
        double w = 1.0;
        if (focus && lambda > 0.0 && verifier::question_operation(real[i].question) == *focus) w += lambda;
        weights.push_back(w);
        total += w;
    }
    double u = unit_draw(rng) * total;
    for (std::size_t k = 0; k < pool.size(); ++k) {
        if (u < weights[k]) return pool[k];
        u -= weights[k];
    }
    return pool.back();
}

} // namespace

std::vector<Example> draw_exemplars(std::span<const Example> real, Regime regime, std::mt19937_64& rng, double lambda,
                                    const std::optional<std::string>& focus_operation) {
    if (real.size() < 2) throw ContractError("need at least two real examples to draw exemplars");
    const corpus::Subset first = regime == Regime::Short ? corpus::Subset::SimpShort : corpus::Subset::SimpLong;
    const corpus::Subset second = regime == Regime::Short ? corpus::Subset::CompShort : corpus::Subset::CompLong;

    std::vector<std::size_t> chosen;
    for (auto subset : {first, second}) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < real.size(); ++i)
            if (real[i].subset == subset && std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pool.push_back(i);
        if (pool.empty()) {
            log_warn("no " + std::string(corpus::to_string(subset)) + " examples; drawing the exemplar from any subset");
            for (std::size_t i = 0; i < real.size(); ++i)
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pool.push_back(i);
        }
        chosen.push_back(*weighted_pick(pool, real, rng, lambda, focus_operation));
    }
    return {real[chosen[0]], real[chosen[1]]};
}

// ---------------------------------------------------------------------------

namespace {

std::int64_t generation_seed(const GenerationContext& ctx, std::size_t index, int attempt) {
    auto rng = derived_rng(ctx.seed, "generate/" + std::to_string(index), static_cast<std::uint64_t>(attempt));
    return static_cast<std::int64_t>(rng() >> 33);
}

bool is_duplicate(const GeneratorState& state, const Example& e) {
    return std::any_of(state.history.begin(), state.history.end(), [&](const HistoryEntry& h) {
        return h.example.passage == e.passage && h.example.question == e.question;
    });
}

std::vector<double> synthetic_answers(const GeneratorState& state) {
    std::vector<double> out;
    for (const auto& h : state.history) out.push_back(h.example.gold_answer);
    return out;
}

void require(bool ok, const char* what) {
    if (!ok) throw ContractError(what);
}

} // namespace

Event generation_step(const GeneratorState& state, const GenerationAttempt& attempt, const GenerationContext& ctx) {
    if (attempt.exhausted) throw ContractError("generation attempt is exhausted");
    const int difficulty = state.current_difficulty;
    const std::string id = "syn-" + std::to_string(state.history.size() + 1);

    switch (attempt.stage) {
        case GenStage::generate: {
            require(ctx.generator, "generation needs a generator provider");
            const int number = attempt.attempts + 1;
            std::optional<std::string> feedback;
            if (!attempt.rejections.empty()) feedback = attempt.rejections.back();
            const auto seed = generation_seed(ctx, state.history.size(), number);
            const auto response = ctx.generator->complete(build_generation_prompt(state, feedback, seed));
            json payload{{"difficulty", difficulty}, {"attempt", number}, {"raw", response.text}};
            try {
                auto cand = parse_candidate(response.text, difficulty, id);
                if (is_duplicate(state, cand.example)) {
                    payload["status"] = "duplicate";
                    payload["error"] = "sample repeats an earlier generated sample";
                } else {
                    payload["status"] = "parsed";
                    payload["example"] = cand.example;
                    payload["diagnostics"] = cand.parse_diagnostics;
                }
            } catch (const ParseError& e) {
                payload["status"] = "parse_error";
                payload["error"] = e.what();
            } catch (const AnswerNotNumeric& e) {
                payload["status"] = "parse_error";
                payload["error"] = e.what();
            }
            return {"generated", std::move(payload)};
        }
        case GenStage::gate: {
            require(ctx.prior, "generation needs a label prior");
            require(attempt.candidate.has_value(), "gate without a candidate");
            auto answers = synthetic_answers(state);
            answers.push_back(attempt.candidate->example.gold_answer);
            const auto d = kl_gate(answers, *ctx.prior, state.kl_threshold);
            json payload{{"kl", d.kl_value}, {"accept", d.accept}, {"samples", answers.size()}};
            if (std::isfinite(state.kl_threshold)) payload["threshold"] = state.kl_threshold;
            else payload["threshold"] = "inf";
            return {"kl_gate", std::move(payload)};
        }
        case GenStage::vote: {
            require(ctx.voter, "verification needs a voter provider");
            require(attempt.candidate.has_value(), "vote without a candidate");
            const auto which = verifier::kAllVoters.at(attempt.verdicts.size());
            verifier::Verdict v;
            switch (which) {
                case verifier::VoterId::structural: v = verifier::vote_structural(*attempt.candidate); break;
                case verifier::VoterId::numerical:
                    v = verifier::vote_numerical(*attempt.candidate, *ctx.voter, ctx.verifier);
                    break;
                case verifier::VoterId::robustness:
                    v = verifier::vote_robustness(*attempt.candidate, *ctx.voter, ctx.verifier);
                    break;
            }
            return {"verdict", json(v)};
        }
        case GenStage::decide: {
            const auto result = verifier::combine(attempt.verdicts);
            json payload{{"decision", std::string(verifier::to_string(result.decision))}};
            if (!result.accepted()) payload["reasons"] = result.rejection_summary();
            return {"consensus", std::move(payload)};
        }
        case GenStage::accept: {
            require(attempt.candidate.has_value(), "accept without a candidate");
            const auto& e = attempt.candidate->example;
            std::string summary = ctx.summary == SummaryMode::llm && ctx.analyzer ? summarize_with_llm(e, *ctx.analyzer)
                                                                                   : summarize_previous(e);
            return {"example_accepted",
                    json{{"example", e},
                         {"summary", summary},
                         {"difficulty", difficulty},
                         {"next_difficulty", next_difficulty(state, Outcome::accepted)},
                         {"attempts", attempt.attempts}}};
        }
    }
    throw ContractError("unknown generation stage");
}

namespace {

void reject(GenerationAttempt& attempt, std::string reason, int max_regenerations) {
    attempt.rejections.push_back(std::move(reason));
    attempt.candidate.reset();
    attempt.verdicts.clear();
    attempt.stage = GenStage::generate;
    if (attempt.attempts >= max_regenerations) attempt.exhausted = true;
}

} // namespace

std::optional<Example> apply_generation_event(GeneratorState& state, GenerationAttempt& attempt, const Event& event,
                                              int max_regenerations) {
    const auto& p = event.payload;
    if (event.kind == "generated") {
        attempt.attempts = p.at("attempt").get<int>();
        if (p.at("status").get<std::string>() == "parsed") {
            CandidateExample cand;
            cand.example = p.at("example").get<Example>();
            cand.raw_response = p.at("raw").get<std::string>();
            cand.parse_diagnostics = p.value("diagnostics", std::vector<std::string>{});
            attempt.candidate = std::move(cand);
            attempt.stage = GenStage::gate;
        } else {
            reject(attempt, p.at("error").get<std::string>(), max_regenerations);
        }
    } else if (event.kind == "kl_gate") {
        if (p.at("accept").get<bool>()) {
            attempt.stage = GenStage::vote;
        } else {
            reject(attempt, "answer distribution drifts from the label prior (KL " + p.at("kl").dump() + ")",
                   max_regenerations);
        }
    } else if (event.kind == "verdict") {
        attempt.verdicts.push_back(p.get<verifier::Verdict>());
        if (attempt.verdicts.size() == verifier::kAllVoters.size()) attempt.stage = GenStage::decide;
    } else if (event.kind == "consensus") {
        if (p.at("decision").get<std::string>() == "accept") attempt.stage = GenStage::accept;
        else reject(attempt, p.at("reasons").get<std::string>(), max_regenerations);
    } else if (event.kind == "example_accepted") {
        HistoryEntry entry;
        entry.example = p.at("example").get<Example>();
        entry.summary = p.at("summary").get<std::string>();
        entry.difficulty = p.at("difficulty").get<int>();
        state.history.push_back(entry);
        state.current_difficulty = p.at("next_difficulty").get<int>();
        attempt = GenerationAttempt{};
        return entry.example;
    } else {
        throw ContractError("not a generation event: " + event.kind);
    }
    return std::nullopt;
}

corpus::Example generate_accepted(GeneratorState& state, const GenerationContext& ctx, const EventSink& sink) {
    if (ctx.max_regenerations < 1) throw ContractError("max_regenerations must be >= 1");
    GenerationAttempt attempt;
    while (true) {
        const Event event = generation_step(state, attempt, ctx);
        if (sink) sink(event);
        if (auto accepted = apply_generation_event(state, attempt, event, ctx.max_regenerations)) return *accepted;
        if (attempt.exhausted) throw RegenerationExhausted(attempt.attempts, attempt.rejections);
    }
}

} // namespace finprompt::generator
