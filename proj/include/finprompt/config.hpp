#pragma once

#include "finprompt/evaluator.hpp"
#include "finprompt/generator.hpp"
#include "finprompt/optimizer.hpp"
#include "finprompt/provider.hpp"
#include "finprompt/verifier.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace finprompt::cli {

enum class BackendKind { mock, http };

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string script;       // mock: scripted behavior file
    std::string endpoint;     // http: chat-completions URL
    std::string model;
    std::string api_key_env;  // name of the variable holding the key
    int timeout_s = 60;
    int max_attempts = 5;
    bool send_seed = true;

    bool operator==(const BackendConfig&) const = default;
};

struct RunConfig {
    generator::Regime regime = generator::Regime::Short;
    std::map<std::string, std::string> datasets;  // subset name -> path
    std::optional<BackendConfig> default_backend;
    std::map<provider::RoleTag, BackendConfig> backends;
    optimizer::Budgets budgets;
    std::optional<std::int64_t> token_ceiling;
    std::optional<std::int64_t> call_ceiling;
    evaluator::Tolerance tolerance;
    double kl_threshold = 1.0;
    std::uint64_t rng_seed = 0;
    std::string ledger_path = "ledger.jsonl";
    std::string seed_prompt = "base";  // preset name or prompt file
    int c_max = 15;
    double lambda_weight = 0.0;
    generator::SummaryMode summary = generator::SummaryMode::local;
    int perturbations = 2;
    verifier::RewordMode reword = verifier::RewordMode::none;
    int concurrency = 4;
    std::size_t max_prompt_chars = 16000;

    optimizer::LoopOptions loop_options() const;
    // Backend for `role`, falling back to the default.
    const BackendConfig& backend_for(provider::RoleTag role) const;

    // Throws ConfigError: non-positive budgets, unknown subsets, missing
    // files, roles without a backend.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

// TOML subset: top-level keys, [section] and [backend.<role>] tables,
// quoted strings, integers, floats, booleans and `inf`. Relative paths
// resolve against `base_dir`. Throws ConfigError naming the line; does not
// check that files exist.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir);

// parse_config + validate.
RunConfig load_config(const std::string& path);

// Every field written explicitly; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// One backend instance per distinct configuration.
provider::ProviderSet build_providers(const RunConfig& config, const EnvLookup& env = process_env);

// Seed prompt text: a preset name, else a file path.
std::string resolve_prompt(const std::string& name_or_path);

} // namespace finprompt::cli
