#pragma once

#include "finprompt/corpus.hpp"

#include <string>
#include <vector>

namespace finprompt::generator {

// A parsed generator output waiting for verification.
struct CandidateExample {
    corpus::Example example;  // origin = synthetic
    std::string raw_response;
    std::vector<std::string> parse_diagnostics;

    bool operator==(const CandidateExample&) const = default;
};

} // namespace finprompt::generator
