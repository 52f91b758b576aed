#pragma once

#include <functional>
#include <string>

#include <nlohmann/json.hpp>

namespace finprompt {

// One state transition as recorded in the run ledger.
struct Event {
    std::string kind;
    nlohmann::json payload;

    bool operator==(const Event&) const = default;
};

using EventSink = std::function<void(const Event&)>;

} // namespace finprompt
