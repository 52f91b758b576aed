#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace finprompt::provider {

// Which pipeline stage issues a request. Backends and sampling defaults
// are chosen per role.
enum class RoleTag { generator, voter, analyzer, recommender, reviser, solver };

inline constexpr std::array<RoleTag, 6> kAllRoles{RoleTag::generator,   RoleTag::voter,   RoleTag::analyzer,
                                                  RoleTag::recommender, RoleTag::reviser, RoleTag::solver};

std::string_view to_string(RoleTag role);
std::optional<RoleTag> role_from_string(std::string_view name);

enum class Speaker { system, user, assistant };

std::string_view to_string(Speaker speaker);

struct Message {
    Speaker speaker;
    std::string text;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    RoleTag role = RoleTag::solver;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 512;
    std::optional<std::int64_t> seed;

    // Throws ContractError: empty messages, first speaker not system,
    // temperature outside [0, 2], non-positive max_tokens.
    void validate() const;

    // Message texts joined with newlines; what mock rules match against.
    std::string joined_text() const;

    bool operator==(const ChatRequest&) const = default;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    std::int64_t total() const { return prompt_tokens + completion_tokens; }
};

struct ChatResponse {
    std::string text;
    TokenUsage usage;
    std::string backend_id;
};

struct RoleParams {
    double temperature;
    int max_tokens;
};

// Sampling defaults per role: 0.5 for generation and recommendation, 0.0
// everywhere correctness matters. Long artifacts get 2048 tokens.
RoleParams role_params(RoleTag role);

// system + user request with the role's default sampling parameters.
ChatRequest make_request(RoleTag role, std::string system_text, std::string user_text,
                         std::optional<std::int64_t> seed = std::nullopt);

// Rough token count used by the mock backend (4 bytes per token).
std::int64_t estimate_tokens(std::string_view text);

// Conservative upper bound on the prompt tokens of a request; one token
// per byte plus per-message framing.
std::int64_t prompt_token_upper_bound(const ChatRequest& request);

class Provider {
public:
    virtual ~Provider() = default;

    // Thread-safe; implementations never share per-call state.
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string id() const = 0;
};

struct UsageLimits {
    std::optional<std::int64_t> token_ceiling;
    std::optional<std::int64_t> call_ceiling;
};

struct UsageTotals {
    std::int64_t tokens = 0;
    std::int64_t calls = 0;

    bool operator==(const UsageTotals&) const = default;
};

// Run-wide token and call accounting shared by every role's provider.
// A call is refused before it is sent if its worst-case cost could push
// the total past the ceiling.
class UsageMeter {
public:
    explicit UsageMeter(UsageLimits limits, UsageTotals already_used = {});

    // Returns the reserved token amount; throws BudgetExceeded.
    std::int64_t reserve(const ChatRequest& request);
    void commit(std::int64_t reserved, const TokenUsage& actual);
    void release(std::int64_t reserved);

    UsageTotals totals() const;
    const UsageLimits& limits() const { return limits_; }

private:
    UsageLimits limits_;
    mutable std::mutex mutex_;
    UsageTotals used_;
    std::int64_t reserved_tokens_ = 0;
    std::int64_t reserved_calls_ = 0;
};

class BudgetedProvider final : public Provider {
public:
    BudgetedProvider(std::shared_ptr<Provider> inner, std::shared_ptr<UsageMeter> meter);

    ChatResponse complete(const ChatRequest& request) override;
    std::string id() const override { return inner_->id(); }

private:
    std::shared_ptr<Provider> inner_;
    std::shared_ptr<UsageMeter> meter_;
};

// One backend per role. Roles without an explicit backend use the default.
class ProviderSet {
public:
    ProviderSet() = default;
    explicit ProviderSet(std::shared_ptr<Provider> default_backend);

    void set(RoleTag role, std::shared_ptr<Provider> backend);
    void set_default(std::shared_ptr<Provider> backend);

    // Throws ContractError if neither a role backend nor a default exists.
    Provider& for_role(RoleTag role) const;
    std::shared_ptr<Provider> shared_for_role(RoleTag role) const;

    // Wraps every backend in a BudgetedProvider sharing `meter`.
    ProviderSet with_meter(std::shared_ptr<UsageMeter> meter) const;

private:
    std::shared_ptr<Provider> default_;
    std::map<RoleTag, std::shared_ptr<Provider>> by_role_;
};

} // namespace finprompt::provider
