#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Text assets shipped inside the library: prompt templates, prompt presets
// and the synonym table used for rewording perturbations.
namespace finprompt::assets {

std::optional<std::string_view> find(std::string_view name);

// Throws ContractError when the asset does not exist.
std::string_view get(std::string_view name);

std::vector<std::string> names();

// Prompt presets by short name: base, cot, pot, synthesized-long, synthesized-short.
std::optional<std::string> preset_prompt(std::string_view name);
std::vector<std::string> preset_names();

} // namespace finprompt::assets
