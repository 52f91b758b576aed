#include "finprompt/cli.hpp"

#include "finprompt/config.hpp"
#include "finprompt/corpus.hpp"
#include "finprompt/error.hpp"
#include "finprompt/evaluator.hpp"
#include "finprompt/generator.hpp"
#include "finprompt/ledger.hpp"
#include "finprompt/optimizer.hpp"
#include "finprompt/util.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>

namespace finprompt::cli {

namespace {
std::atomic<bool> g_interrupt{false};
}

void request_interrupt() noexcept { g_interrupt.store(true); }
bool interrupt_requested() noexcept { return g_interrupt.load(); }
void clear_interrupt() noexcept { g_interrupt.store(false); }

namespace {

namespace fs = std::filesystem;
using corpus::Example;
using nlohmann::json;

struct Interrupted : Error {
    Interrupted() : Error("interrupted") {}
};

struct Options {
    std::string config;
    std::optional<std::string> mock;
    std::optional<std::string> ledger;
    std::optional<std::string> subset;
    std::optional<std::string> out;
    std::optional<int> max_difficulty;
    std::optional<int> t_max;
    std::optional<int> examples;
    std::optional<int> inner_cap;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> prompt;
    std::optional<std::string> dataset;
    int count = 0;
    bool logical_clock = false;
};

RunConfig configure(const Options& o) {
    std::string text;
    try {
        text = read_file(o.config);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    RunConfig c = parse_config(text, fs::absolute(o.config).parent_path());
    if (o.mock) {
        BackendConfig b;
        b.kind = BackendKind::mock;
        b.script = fs::absolute(*o.mock).lexically_normal().string();
        c.default_backend = b;
        c.backends.clear();
    }
    if (o.ledger) c.ledger_path = fs::absolute(*o.ledger).lexically_normal().string();
    if (o.max_difficulty) c.c_max = *o.max_difficulty;
    if (o.t_max) c.budgets.max_refinements = *o.t_max;
    if (o.examples) c.budgets.examples = *o.examples;
    if (o.inner_cap) c.budgets.inner_cap = *o.inner_cap;
    if (o.seed) c.rng_seed = *o.seed;
    if (o.subset && !corpus::subset_from_string(*o.subset)) throw ConfigError("unknown subset " + *o.subset);
    c.validate();
    return c;
}

std::vector<Example> load_real(const RunConfig& c, const std::optional<std::string>& subset) {
    std::vector<Example> all;
    for (const auto& [name, path] : c.datasets) {
        if (subset && name != *subset) continue;
        corpus::LoadOptions lo;
        lo.default_subset = corpus::subset_from_string(name);
        auto part = corpus::load_dataset(path, lo);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

const Clock& pick_clock(const Options& o, LogicalClock& logical) {
    return o.logical_clock ? static_cast<const Clock&>(logical) : system_clock();
}

std::shared_ptr<provider::UsageMeter> make_meter(const RunConfig& c, provider::UsageTotals used = {}) {
    return std::make_shared<provider::UsageMeter>(provider::UsageLimits{c.token_ceiling, c.call_ceiling}, used);
}

void write_text(const std::string& path, const std::string& text) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + path);
}

void report_run(const optimizer::RunResult& r, const Options& o, std::ostream& out) {
    const auto& s = r.state;
    out << "stop reason: " << s.stop_reason << "\n";
    out << "examples generated: " << s.dataset.size() << ", refinements accepted: " << s.refinements_accepted << "\n";
    out << "final prompt: v" << r.final_prompt.version << "\n";
    if (!s.dataset.empty()) {
        std::vector<evaluator::Prediction> preds;
        for (const auto& e : s.dataset)
            if (const auto* p = s.cache.find(r.final_prompt.version, e.id)) preds.push_back(*p);
        if (preds.size() == s.dataset.size())
            out << evaluator::format_report(
                evaluator::build_report("v" + std::to_string(r.final_prompt.version), s.dataset, std::move(preds)));
    }
    out << "----- prompt -----\n" << r.final_prompt.text << "\n";
    if (o.out) write_text(*o.out, r.final_prompt.text + "\n");
}

EventSink ledger_sink(ledger::LedgerWriter& writer) {
    return [&writer](const Event& ev) {
        writer.append(ev);
        if (interrupt_requested()) throw Interrupted();
    };
}

int cmd_optimize(const Options& o, std::ostream& out) {
    const auto cfg = configure(o);
    const auto real = load_real(cfg, o.subset);
    const auto seed_prompt = resolve_prompt(cfg.seed_prompt);
    if (fs::exists(cfg.ledger_path))
        throw ConfigError("ledger " + cfg.ledger_path + " already exists; use `resume` or pick another --ledger");
    auto meter = make_meter(cfg);
    const auto providers = build_providers(cfg).with_meter(meter);
    LogicalClock logical;
    const Clock& clock = pick_clock(o, logical);
    auto writer = ledger::LedgerWriter::create(cfg.ledger_path, clock, [meter] { return meter->totals(); });
    auto ctx = optimizer::LoopContext::from(providers, real);
    ctx.clock = &clock;
    const auto result = optimizer::run_loop(cfg.loop_options(), seed_prompt, ctx, ledger_sink(writer));
    out << "ledger: " << cfg.ledger_path << "\n";
    report_run(result, o, out);
    return kExitOk;
}

int cmd_resume(const Options& o, std::ostream& out) {
    const auto cfg = configure(o);
    if (!fs::exists(cfg.ledger_path)) throw ConfigError("no ledger at " + cfg.ledger_path);
    const auto contents = ledger::read_ledger(cfg.ledger_path);
    const auto events = contents.plain_events();
    if (contents.finished()) {
        out << "run already finished (" << events.size() << " events in " << cfg.ledger_path << "); nothing to do\n";
        const auto state = optimizer::replay(events);
        report_run({state.prompts.at(*state.final_version), state}, o, out);
        return kExitOk;
    }
    const auto real = load_real(cfg, o.subset);
    const provider::UsageTotals used = events.empty() ? provider::UsageTotals{} : contents.events.back().usage;
    auto meter = make_meter(cfg, used);
    const auto providers = build_providers(cfg).with_meter(meter);
    LogicalClock logical;
    const Clock& clock = pick_clock(o, logical);
    auto writer = ledger::LedgerWriter::resume(cfg.ledger_path, contents, clock, [meter] { return meter->totals(); });
    auto ctx = optimizer::LoopContext::from(providers, real);
    ctx.clock = &clock;
    out << "resuming " << cfg.ledger_path << " after " << events.size() << " events\n";
    optimizer::RunResult result;
    if (events.empty()) {
        result = optimizer::run_loop(cfg.loop_options(), resolve_prompt(cfg.seed_prompt), ctx, ledger_sink(writer));
    } else {
        auto state = optimizer::replay(events);
        if (!(state.options == cfg.loop_options()))
            log_warn("config options differ from the ledger; continuing with the ledger's options");
        result = optimizer::continue_run(std::move(state), ctx, ledger_sink(writer));
    }
    report_run(result, o, out);
    return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const auto cfg = configure(o);
    std::vector<Example> data;
    if (o.dataset) {
        corpus::LoadOptions lo;
        if (o.subset) lo.subset_filter = corpus::subset_from_string(*o.subset);
        data = corpus::load_dataset(*o.dataset, lo);
    } else {
        data = load_real(cfg, o.subset);
    }
    const auto prompt_name = o.prompt.value_or(cfg.seed_prompt);
    const auto text = resolve_prompt(prompt_name);
    auto meter = make_meter(cfg);
    const auto providers = build_providers(cfg).with_meter(meter);
    evaluator::EvalOptions eo;
    eo.tolerance = cfg.tolerance;
    eo.concurrency = cfg.concurrency;
    const auto report = evaluator::accuracy(text, fs::path(prompt_name).stem().string(), data,
                                            providers.for_role(provider::RoleTag::solver), eo);
    out << evaluator::format_report(report);
    const auto totals = meter->totals();
    out << "calls: " << totals.calls << ", tokens: " << totals.tokens << "\n";
    if (o.out) write_text(*o.out, json(report).dump(2) + "\n");
    return kExitOk;
}

int cmd_generate(const Options& o, std::ostream& out) {
    const auto cfg = configure(o);
    if (o.count < 0) throw ConfigError("--count must be >= 0");
    const auto path = o.out.value_or("generated.jsonl");
    std::vector<Example> accepted;
    if (o.count == 0) {
        corpus::save_dataset(path, accepted);
        out << "wrote 0 examples to " << path << "\n";
        return kExitOk;
    }
    const auto real = load_real(cfg, o.subset);
    auto meter = make_meter(cfg);
    const auto providers = build_providers(cfg).with_meter(meter);
    auto ctx = optimizer::LoopContext::from(providers, real);
    optimizer::RunState state;
    optimizer::apply(state, optimizer::start_event(cfg.loop_options(), "unused", real));
    const auto gctx = optimizer::generation_context(state, ctx);
    try {
        for (int i = 0; i < o.count; ++i) {
            accepted.push_back(generator::generate_accepted(state.generator, gctx));
            if (interrupt_requested()) throw Interrupted();
        }
    } catch (...) {
        corpus::save_dataset(path, accepted);
        out << "wrote " << accepted.size() << " of " << o.count << " examples to " << path << "\n";
        throw;
    }
    corpus::save_dataset(path, accepted);
    out << "wrote " << accepted.size() << " examples to " << path << "\n";
    return kExitOk;
}

int cmd_show_config(const Options& o, std::ostream& out) {
    out << serialize_config(configure(o));
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Closed-loop prompt optimizer for numerical financial QA", "finprompt"};
    app.require_subcommand(1);
    Options o;

    auto common = [&o](CLI::App* sub) {
        sub->add_option("-c,--config", o.config, "Run configuration (TOML)")->required();
        sub->add_option("--mock", o.mock, "Serve every role from this scripted mock");
        sub->add_option("--subset", o.subset, "Restrict real data to one subset");
        sub->add_option("--max-difficulty", o.max_difficulty, "Curriculum ceiling");
        sub->add_option("--seed", o.seed, "Override rng_seed");
        sub->add_flag("--logical-clock", o.logical_clock, "Deterministic timestamps")->group("");
    };
    auto run_opts = [&o](CLI::App* sub) {
        sub->add_option("--ledger", o.ledger, "Ledger path (default from config)");
        sub->add_option("--t-max", o.t_max, "Cap on accepted refinements");
        sub->add_option("--examples", o.examples, "Synthetic examples to generate");
        sub->add_option("--inner-cap", o.inner_cap, "Revision attempts per error slice");
        sub->add_option("--out", o.out, "Write the final prompt here");
    };

    auto* optimize = app.add_subcommand("optimize", "Run the optimization loop from the seed prompt");
    common(optimize);
    run_opts(optimize);
    auto* resume = app.add_subcommand("resume", "Continue an interrupted run from its ledger");
    common(resume);
    run_opts(resume);
    auto* evaluate = app.add_subcommand("evaluate", "Score a prompt on a dataset");
    common(evaluate);
    evaluate->add_option("--prompt", o.prompt, "Preset name or prompt file (default: seed_prompt)");
    evaluate->add_option("--dataset", o.dataset, "JSONL dataset (default: the configured datasets)");
    evaluate->add_option("--out", o.out, "Write the report as JSON");
    auto* generate = app.add_subcommand("generate", "Produce verified synthetic examples");
    common(generate);
    generate->add_option("-n,--count", o.count, "Examples to accept")->required();
    generate->add_option("--out", o.out, "Output JSONL (default generated.jsonl)");
    auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
    common(show);

    // CLI11 consumes a reversed argument vector.
    std::vector<std::string> reversed(args.empty() ? args.end() : args.begin() + 1, args.end());
    std::reverse(reversed.begin(), reversed.end());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (optimize->parsed()) return cmd_optimize(o, out);
        if (resume->parsed()) return cmd_resume(o, out);
        if (evaluate->parsed()) return cmd_evaluate(o, out);
        if (generate->parsed()) return cmd_generate(o, out);
        return cmd_show_config(o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const LedgerError& e) {
        err << "corrupt ledger: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Interrupted&) {
        err << "interrupted; the ledger is intact. Continue with: finprompt resume --config " << o.config << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        const bool budget = dynamic_cast<const BudgetExceeded*>(&e) != nullptr;
        err << (budget ? "budget exceeded: " : "error: ") << e.what() << "\n";
        if (optimize->parsed() || resume->parsed())
            err << "the ledger holds every completed step. Continue with: finprompt resume --config " << o.config << "\n";
        return kExitRuntime;
    }
}

} // namespace finprompt::cli
