#include "finprompt/config.hpp"

#include "finprompt/assets.hpp"
#include "finprompt/error.hpp"
#include "finprompt/http_provider.hpp"
#include "finprompt/mock_provider.hpp"
#include "finprompt/util.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>
#include <variant>

namespace finprompt::cli {

namespace fs = std::filesystem;
using provider::RoleTag;

optimizer::LoopOptions RunConfig::loop_options() const {
    optimizer::LoopOptions o;
    o.budgets = budgets;
    o.seed = rng_seed;
    o.regime = regime;
    o.c_max = c_max;
    o.kl_threshold = kl_threshold;
    o.lambda_weight = lambda_weight;
    o.tolerance = tolerance;
    o.concurrency = concurrency;
    o.max_prompt_chars = max_prompt_chars;
    o.perturbations = perturbations;
    o.reword = reword;
    o.summary = summary;
    return o;
}

const BackendConfig& RunConfig::backend_for(RoleTag role) const {
    if (auto it = backends.find(role); it != backends.end()) return it->second;
    if (default_backend) return *default_backend;
    throw ConfigError("no backend configured for role " + std::string(provider::to_string(role)));
}

namespace {

void check(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

void validate_backend(const std::string& name, const BackendConfig& b) {
    if (b.kind == BackendKind::mock) {
        check(!b.script.empty(), "[" + name + "] mock backend needs a script");
        check(fs::exists(b.script), "[" + name + "] mock script not found: " + b.script);
    } else {
        check(!b.endpoint.empty(), "[" + name + "] http backend needs an endpoint");
        check(!b.model.empty(), "[" + name + "] http backend needs a model");
        check(!b.api_key_env.empty(), "[" + name + "] http backend needs api_key_env");
        check(b.timeout_s > 0, "[" + name + "] timeout_s must be positive");
        check(b.max_attempts > 0, "[" + name + "] max_attempts must be positive");
    }
}

} // namespace

void RunConfig::validate() const {
    check(budgets.examples > 0, "budgets.examples must be positive");
    check(budgets.max_refinements > 0, "budgets.max_refinements must be positive");
    check(budgets.inner_cap > 0, "budgets.inner_cap must be positive");
    check(budgets.max_regenerations > 0, "budgets.max_regenerations must be positive");
    check(!token_ceiling || *token_ceiling >= 0, "budgets.token_ceiling must be >= 0");
    check(!call_ceiling || *call_ceiling >= 0, "budgets.call_ceiling must be >= 0");
    check(tolerance.rel_tol >= 0 && tolerance.abs_tol >= 0, "tolerances must be >= 0");
    check(kl_threshold >= 0, "tolerances.kl_threshold must be >= 0");
    check(c_max > 0, "generator.c_max must be positive");
    check(lambda_weight >= 0, "generator.lambda must be >= 0");
    check(perturbations >= 0, "verifier.perturbations must be >= 0");
    check(concurrency > 0, "evaluator.concurrency must be positive");
    check(max_prompt_chars > 0, "evaluator.max_prompt_chars must be positive");
    check(!datasets.empty(), "[datasets] lists no files");
    for (const auto& [subset, path] : datasets) {
        check(corpus::subset_from_string(subset).has_value(), "unknown subset in [datasets]: " + subset);
        check(fs::exists(path), "dataset file not found: " + path);
    }
    if (default_backend) validate_backend("backend.default", *default_backend);
    for (const auto& [role, b] : backends) validate_backend("backend." + std::string(provider::to_string(role)), b);
    for (auto role : provider::kAllRoles) (void)backend_for(role);
    if (!assets::preset_prompt(seed_prompt)) check(fs::exists(seed_prompt), "seed prompt file not found: " + seed_prompt);
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

using Value = std::variant<std::string, std::int64_t, double, bool>;

struct Entry {
    Value value;
    int line;
};

std::string where(int line) { return "config line " + std::to_string(line) + ": "; }

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string && c == '\\') {
            ++i;
            continue;
        }
        if (c == '"') in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

Value parse_value(const std::string& raw, int line) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError(where(line) + "missing value");
    if (v.front() == '"') {
        std::string out;
        std::size_t i = 1;
        for (; i < v.size() && v[i] != '"'; ++i) {
            if (v[i] != '\\') {
                out += v[i];
                continue;
            }
            if (++i >= v.size()) break;
            switch (v[i]) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: throw ConfigError(where(line) + "unsupported escape \\" + std::string(1, v[i]));
            }
        }
        if (i >= v.size() || i + 1 != v.size()) throw ConfigError(where(line) + "malformed string");
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    std::string digits;
    for (char c : v)
        if (c != '_') digits += c;
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
    if (ec == std::errc() && p == digits.data() + digits.size()) return i;
    char* end = nullptr;
    const double d = std::strtod(digits.c_str(), &end);
    if (end && *end == '\0' && !digits.empty()) return d;
    throw ConfigError(where(line) + "cannot read value '" + v + "'");
}

class Table {
public:
    Table(std::string name, std::map<std::string, Entry> entries) : name_(std::move(name)), entries_(std::move(entries)) {}

    std::optional<std::string> str(const std::string& key) {
        auto e = take(key);
        if (!e) return std::nullopt;
        if (auto* s = std::get_if<std::string>(&e->value)) return *s;
        throw ConfigError(where(e->line) + name_ + key + " must be a string");
    }
    std::optional<std::int64_t> integer(const std::string& key) {
        auto e = take(key);
        if (!e) return std::nullopt;
        if (auto* i = std::get_if<std::int64_t>(&e->value)) return *i;
        throw ConfigError(where(e->line) + name_ + key + " must be an integer");
    }
    std::optional<double> number(const std::string& key) {
        auto e = take(key);
        if (!e) return std::nullopt;
        if (auto* d = std::get_if<double>(&e->value)) return *d;
        if (auto* i = std::get_if<std::int64_t>(&e->value)) return static_cast<double>(*i);
        if (auto* s = std::get_if<std::string>(&e->value); s && *s == "inf") return std::numeric_limits<double>::infinity();
        throw ConfigError(where(e->line) + name_ + key + " must be a number");
    }
    std::optional<bool> boolean(const std::string& key) {
        auto e = take(key);
        if (!e) return std::nullopt;
        if (auto* b = std::get_if<bool>(&e->value)) return *b;
        throw ConfigError(where(e->line) + name_ + key + " must be true or false");
    }
    const std::map<std::string, Entry>& rest() const { return entries_; }
    void finish() const {
        if (!entries_.empty()) {
            const auto& [k, e] = *entries_.begin();
            throw ConfigError(where(e.line) + "unknown key " + name_ + k);
        }
    }

private:
    std::optional<Entry> take(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        Entry e = it->second;
        entries_.erase(it);
        return e;
    }

    std::string name_;
    std::map<std::string, Entry> entries_;
};

std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_relative()) path = base / path;
    return path.lexically_normal().string();
}

int to_int(std::int64_t v, const std::string& key) {
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw ConfigError(key + " is out of range");
    return static_cast<int>(v);
}

BackendConfig parse_backend(Table t, const fs::path& base) {
    BackendConfig b;
    const auto kind = t.str("kind").value_or("mock");
    if (kind == "mock") b.kind = BackendKind::mock;
    else if (kind == "http") b.kind = BackendKind::http;
    else throw ConfigError("backend kind must be \"mock\" or \"http\", got \"" + kind + "\"");
    if (auto s = t.str("script")) b.script = resolve(base, *s);
    if (auto s = t.str("endpoint")) b.endpoint = *s;
    if (auto s = t.str("model")) b.model = *s;
    if (auto s = t.str("api_key_env")) b.api_key_env = *s;
    if (auto i = t.integer("timeout_s")) b.timeout_s = to_int(*i, "timeout_s");
    if (auto i = t.integer("max_attempts")) b.max_attempts = to_int(*i, "max_attempts");
    if (auto v = t.boolean("send_seed")) b.send_seed = *v;
    for (const auto& [k, e] : t.rest())
        if (k == "api_key" || k == "key" || k == "token")
            throw ConfigError(where(e.line) + "credentials never go in the config; name the variable with api_key_env");
    t.finish();
    return b;
}

} // namespace

RunConfig parse_config(std::string_view text, const fs::path& base_dir) {
    std::map<std::string, std::map<std::string, Entry>> sections;
    std::map<std::string, int> section_line;
    std::string current;
    sections[current];
    int line_no = 0;
    for (const auto& raw : split_lines(text)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) throw ConfigError(where(line_no) + "malformed section header");
            current = trim(line.substr(1, line.size() - 2));
            if (sections.count(current) && current != "")
                throw ConfigError(where(line_no) + "section [" + current + "] appears twice");
            sections[current];
            section_line[current] = line_no;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where(line_no) + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where(line_no) + "empty key");
        auto& sec = sections[current];
        if (sec.count(key)) throw ConfigError(where(line_no) + "duplicate key " + key);
        sec.emplace(key, Entry{parse_value(line.substr(eq + 1), line_no), line_no});
    }

    RunConfig c;
    Table top("", sections[""]);
    if (auto s = top.str("regime")) {
        auto r = generator::regime_from_string(*s);
        if (!r) throw ConfigError("regime must be \"Short\" or \"Long\"");
        c.regime = *r;
    }
    if (auto i = top.integer("rng_seed")) {
        if (*i < 0) throw ConfigError("rng_seed must be >= 0");
        c.rng_seed = static_cast<std::uint64_t>(*i);
    }
    if (auto s = top.str("ledger_path")) c.ledger_path = resolve(base_dir, *s);
    else c.ledger_path = resolve(base_dir, c.ledger_path);
    if (auto s = top.str("seed_prompt")) c.seed_prompt = assets::preset_prompt(*s) ? *s : resolve(base_dir, *s);
    top.finish();

    for (auto& [name, entries] : sections) {
        if (name.empty()) continue;
        if (name == "datasets") {
            for (const auto& [subset, e] : entries) {
                const auto* p = std::get_if<std::string>(&e.value);
                if (!p) throw ConfigError(where(e.line) + "dataset paths must be strings");
                c.datasets[subset] = resolve(base_dir, *p);
            }
        } else if (name == "budgets") {
            Table t("budgets.", entries);
            if (auto i = t.integer("examples")) c.budgets.examples = to_int(*i, "examples");
            if (auto i = t.integer("max_refinements")) c.budgets.max_refinements = to_int(*i, "max_refinements");
            if (auto i = t.integer("inner_cap")) c.budgets.inner_cap = to_int(*i, "inner_cap");
            if (auto i = t.integer("max_regenerations")) c.budgets.max_regenerations = to_int(*i, "max_regenerations");
            c.token_ceiling = t.integer("token_ceiling");
            c.call_ceiling = t.integer("call_ceiling");
            t.finish();
        } else if (name == "tolerances") {
            Table t("tolerances.", entries);
            if (auto d = t.number("rel_tol")) c.tolerance.rel_tol = *d;
            if (auto d = t.number("abs_tol")) c.tolerance.abs_tol = *d;
            if (auto d = t.number("kl_threshold")) c.kl_threshold = *d;
            t.finish();
        } else if (name == "generator") {
            Table t("generator.", entries);
            if (auto i = t.integer("c_max")) c.c_max = to_int(*i, "c_max");
            if (auto d = t.number("lambda")) c.lambda_weight = *d;
            if (auto s = t.str("summary")) {
                auto m = generator::summary_mode_from_string(*s);
                if (!m) throw ConfigError("generator.summary must be \"local\" or \"llm\"");
                c.summary = *m;
            }
            t.finish();
        } else if (name == "verifier") {
            Table t("verifier.", entries);
            if (auto i = t.integer("perturbations")) c.perturbations = to_int(*i, "perturbations");
            if (auto s = t.str("reword")) {
                auto m = verifier::reword_mode_from_string(*s);
                if (!m) throw ConfigError("verifier.reword must be \"none\", \"synonyms\" or \"llm\"");
                c.reword = *m;
            }
            t.finish();
        } else if (name == "evaluator") {
            Table t("evaluator.", entries);
            if (auto i = t.integer("concurrency")) c.concurrency = to_int(*i, "concurrency");
            if (auto i = t.integer("max_prompt_chars")) {
                if (*i <= 0) throw ConfigError("evaluator.max_prompt_chars must be positive");
                c.max_prompt_chars = static_cast<std::size_t>(*i);
            }
            t.finish();
        } else if (name.rfind("backend.", 0) == 0) {
            const auto role_name = name.substr(8);
            auto b = parse_backend(Table(name + ".", entries), base_dir);
            if (role_name == "default") {
                c.default_backend = b;
            } else {
                auto role = provider::role_from_string(role_name);
                if (!role) throw ConfigError(where(section_line[name]) + "unknown role in [" + name + "]");
                c.backends[*role] = b;
            }
        } else {
            throw ConfigError(where(section_line[name]) + "unknown section [" + name + "]");
        }
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    auto c = parse_config(text, fs::absolute(path).parent_path());
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out + "\"";
}

std::string number(double d) {
    if (std::isinf(d)) return "inf";
    std::ostringstream os;
    os << std::setprecision(17) << d;
    std::string s = os.str();
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

void write_backend(std::ostringstream& os, const std::string& name, const BackendConfig& b) {
    os << "\n[backend." << name << "]\n";
    os << "kind = " << quoted(b.kind == BackendKind::mock ? "mock" : "http") << "\n";
    os << "script = " << quoted(b.script) << "\n";
    os << "endpoint = " << quoted(b.endpoint) << "\n";
    os << "model = " << quoted(b.model) << "\n";
    os << "api_key_env = " << quoted(b.api_key_env) << "\n";
    os << "timeout_s = " << b.timeout_s << "\n";
    os << "max_attempts = " << b.max_attempts << "\n";
    os << "send_seed = " << (b.send_seed ? "true" : "false") << "\n";
}

} // namespace

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "regime = " << quoted(std::string(generator::to_string(c.regime))) << "\n";
    os << "rng_seed = " << c.rng_seed << "\n";
    os << "ledger_path = " << quoted(c.ledger_path) << "\n";
    os << "seed_prompt = " << quoted(c.seed_prompt) << "\n";
    os << "\n[datasets]\n";
    for (const auto& [k, v] : c.datasets) os << k << " = " << quoted(v) << "\n";
    os << "\n[budgets]\n";
    os << "examples = " << c.budgets.examples << "\n";
    os << "max_refinements = " << c.budgets.max_refinements << "\n";
    os << "inner_cap = " << c.budgets.inner_cap << "\n";
    os << "max_regenerations = " << c.budgets.max_regenerations << "\n";
    if (c.token_ceiling) os << "token_ceiling = " << *c.token_ceiling << "\n";
    if (c.call_ceiling) os << "call_ceiling = " << *c.call_ceiling << "\n";
    os << "\n[tolerances]\n";
    os << "rel_tol = " << number(c.tolerance.rel_tol) << "\n";
    os << "abs_tol = " << number(c.tolerance.abs_tol) << "\n";
    os << "kl_threshold = " << number(c.kl_threshold) << "\n";
    os << "\n[generator]\n";
    os << "c_max = " << c.c_max << "\n";
    os << "lambda = " << number(c.lambda_weight) << "\n";
    os << "summary = " << quoted(std::string(generator::to_string(c.summary))) << "\n";
    os << "\n[verifier]\n";
    os << "perturbations = " << c.perturbations << "\n";
    os << "reword = " << quoted(std::string(verifier::to_string(c.reword))) << "\n";
    os << "\n[evaluator]\n";
    os << "concurrency = " << c.concurrency << "\n";
    os << "max_prompt_chars = " << c.max_prompt_chars << "\n";
    if (c.default_backend) write_backend(os, "default", *c.default_backend);
    for (const auto& [role, b] : c.backends) write_backend(os, std::string(provider::to_string(role)), b);
    return os.str();
}

// ---------------------------------------------------------------------------

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

namespace {

std::shared_ptr<provider::Provider> make_backend(const BackendConfig& b, const EnvLookup& env) {
    if (b.kind == BackendKind::mock)
        return std::make_shared<provider::MockProvider>(provider::ScriptedBehavior::load(b.script));
    provider::HttpBackendConfig h;
    h.endpoint = b.endpoint;
    h.model = b.model;
    h.api_key = env(b.api_key_env).value_or("");
    h.backoff.max_attempts = b.max_attempts;
    h.send_seed = b.send_seed;
    return std::make_shared<provider::HttpChatProvider>(h, provider::make_http_transport(std::chrono::seconds(b.timeout_s)));
}

} // namespace

provider::ProviderSet build_providers(const RunConfig& config, const EnvLookup& env) {
    provider::ProviderSet set;
    std::vector<std::pair<BackendConfig, std::shared_ptr<provider::Provider>>> built;
    auto instance = [&](const BackendConfig& b) {
        for (const auto& [cfg, p] : built)
            if (cfg == b) return p;
        auto p = make_backend(b, env);
        built.emplace_back(b, p);
        return p;
    };
    if (config.default_backend) set.set_default(instance(*config.default_backend));
    for (const auto& [role, b] : config.backends) set.set(role, instance(b));
    return set;
}

std::string resolve_prompt(const std::string& name_or_path) {
    if (auto preset = assets::preset_prompt(name_or_path)) return *preset;
    try {
        return trim(read_file(name_or_path));
    } catch (const IoError&) {
        throw ConfigError("prompt is neither a preset (" + join(assets::preset_names(), ", ") + ") nor a readable file: " +
                          name_or_path);
    }
}

} // namespace finprompt::cli
