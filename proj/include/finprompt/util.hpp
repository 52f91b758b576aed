#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace finprompt {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// 64-bit FNV-1a; stable across platforms, used to derive RNG streams and ids.
std::uint64_t fnv1a(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Every random choice draws from a stream derived from the run seed, a
// purpose tag and an index, so replays never depend on call order.
std::mt19937_64 derived_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index);

// Time source for ledger timestamps and latency measurement. The logical
// clock returns constants so that mock runs are byte-reproducible.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::string timestamp() const = 0;
    virtual std::int64_t now_ms() const = 0;
};

class SystemClock final : public Clock {
public:
    std::string timestamp() const override;
    std::int64_t now_ms() const override;
};

class LogicalClock final : public Clock {
public:
    std::string timestamp() const override { return "1970-01-01T00:00:00Z"; }
    std::int64_t now_ms() const override { return 0; }
};

const Clock& system_clock();

// Minimal stderr logging; tests silence it.
enum class LogLevel { debug, info, warn, error, off };
void set_log_level(LogLevel level);
void log(LogLevel level, std::string_view message);
inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }
inline void log_info(std::string_view m) { log(LogLevel::info, m); }

} // namespace finprompt
