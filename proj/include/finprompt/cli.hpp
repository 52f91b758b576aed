#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace finprompt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad arguments, config or ledger
inline constexpr int kExitRuntime = 2;  // run stopped; the ledger can be resumed

// Set from a signal handler; the run stops after the event in flight is
// on disk.
void request_interrupt() noexcept;
bool interrupt_requested() noexcept;
void clear_interrupt() noexcept;

// Entry point behind the executable. `args` holds argv, program name first.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace finprompt::cli
