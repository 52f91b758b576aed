#include "finprompt/assets.hpp"

#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <utility>

namespace finprompt::assets {

namespace detail {
extern const std::pair<std::string_view, std::string_view> kEntries[];
extern const std::size_t kEntryCount;
} // namespace detail

namespace {

constexpr std::pair<std::string_view, std::string_view> kPresets[] = {
    {"base", "prompts/base.txt"},
    {"cot", "prompts/cot.txt"},
    {"pot", "prompts/pot.txt"},
    {"synthesized-long", "prompts/synthesized_long.txt"},
    {"synthesized-short", "prompts/synthesized_short.txt"},
};

} // namespace

std::optional<std::string_view> find(std::string_view name) {
    for (std::size_t i = 0; i < detail::kEntryCount; ++i) {
        if (detail::kEntries[i].first == name) return detail::kEntries[i].second;
    }
    return std::nullopt;
}

std::string_view get(std::string_view name) {
    if (auto a = find(name)) return *a;
    throw ContractError("unknown asset '" + std::string(name) + "'");
}

std::vector<std::string> names() {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < detail::kEntryCount; ++i) out.emplace_back(detail::kEntries[i].first);
    return out;
}

std::optional<std::string> preset_prompt(std::string_view name) {
    for (const auto& [preset, file] : kPresets) {
        if (preset == name) return trim(get(file));
    }
    return std::nullopt;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& p : kPresets) out.emplace_back(p.first);
    return out;
}

} // namespace finprompt::assets
