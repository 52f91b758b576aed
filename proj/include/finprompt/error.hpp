#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace finprompt {

// Root of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A request or call violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Provider failures.
class AuthError : public Error {
public:
    using Error::Error;
};

class BudgetExceeded : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    using Error::Error;
};

// Corpus failures.
class SchemaError : public Error {
public:
    using Error::Error;
};

class EmptyCorpus : public Error {
public:
    using Error::Error;
};

// Generator failures.
class ParseError : public Error {
public:
    explicit ParseError(std::string section)
        : Error("missing section: " + section), section_(std::move(section)) {}

    const std::string& section() const noexcept { return section_; }

private:
    std::string section_;
};

class AnswerNotNumeric : public Error {
public:
    using Error::Error;
};

class RegenerationExhausted : public Error {
public:
    RegenerationExhausted(int attempts, std::vector<std::string> reasons);

    int attempts() const noexcept { return attempts_; }
    const std::vector<std::string>& reasons() const noexcept { return reasons_; }

private:
    int attempts_;
    std::vector<std::string> reasons_;
};

// Evaluator / optimizer failures.
class EmptySet : public Error {
public:
    using Error::Error;
};

class EmptyRevision : public Error {
public:
    using Error::Error;
};

class LengthExceeded : public Error {
public:
    using Error::Error;
};

// Ledger could not be read back; carries the sequence number of the bad line.
class LedgerError : public Error {
public:
    LedgerError(std::int64_t sequence_no, const std::string& what)
        : Error("ledger event " + std::to_string(sequence_no) + ": " + what), sequence_no_(sequence_no) {}

    std::int64_t sequence_no() const noexcept { return sequence_no_; }

private:
    std::int64_t sequence_no_;
};

} // namespace finprompt
