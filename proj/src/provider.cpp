#include "finprompt/provider.hpp"

#include "finprompt/error.hpp"

#include <sstream>

namespace finprompt::provider {

std::string_view to_string(RoleTag role) {
    switch (role) {
        case RoleTag::generator: return "generator";
        case RoleTag::voter: return "voter";
        case RoleTag::analyzer: return "analyzer";
        case RoleTag::recommender: return "recommender";
        case RoleTag::reviser: return "reviser";
        case RoleTag::solver: return "solver";
    }
    return "solver";
}

std::optional<RoleTag> role_from_string(std::string_view name) {
    for (RoleTag r : kAllRoles) {
        if (to_string(r) == name) return r;
    }
    return std::nullopt;
}

std::string_view to_string(Speaker speaker) {
    switch (speaker) {
        case Speaker::system: return "system";
        case Speaker::user: return "user";
        case Speaker::assistant: return "assistant";
    }
    return "user";
}

void ChatRequest::validate() const {
    if (messages.empty()) throw ContractError("chat request has no messages");
    if (messages.front().speaker != Speaker::system)
        throw ContractError("first message of a chat request must be the system message");
    if (!(temperature >= 0.0 && temperature <= 2.0))
        throw ContractError("temperature out of range [0, 2]: " + std::to_string(temperature));
    if (max_tokens <= 0) throw ContractError("max_tokens must be positive");
}

std::string ChatRequest::joined_text() const {
    std::string out;
    for (size_t i = 0; i < messages.size(); ++i) {
        if (i) out += '\n';
        out += messages[i].text;
    }
    return out;
}

RoleParams role_params(RoleTag role) {
    switch (role) {
        case RoleTag::generator: return {0.5, 2048};
        case RoleTag::voter: return {0.0, 512};
        case RoleTag::analyzer: return {0.0, 512};
        case RoleTag::recommender: return {0.5, 512};
        case RoleTag::reviser: return {0.0, 2048};
        case RoleTag::solver: return {0.0, 512};
    }
    return {0.0, 512};
}

ChatRequest make_request(RoleTag role, std::string system_text, std::string user_text,
                         std::optional<std::int64_t> seed) {
    const RoleParams params = role_params(role);
    ChatRequest req;
    req.role = role;
    req.messages.push_back({Speaker::system, std::move(system_text)});
    req.messages.push_back({Speaker::user, std::move(user_text)});
    req.temperature = params.temperature;
    req.max_tokens = params.max_tokens;
    req.seed = seed;
    return req;
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::int64_t prompt_token_upper_bound(const ChatRequest& request) {
    std::int64_t total = 3;
    for (const auto& m : request.messages) total += static_cast<std::int64_t>(m.text.size()) + 8;
    return total;
}

UsageMeter::UsageMeter(UsageLimits limits, UsageTotals already_used)
    : limits_(limits), used_(already_used) {}

std::int64_t UsageMeter::reserve(const ChatRequest& request) {
    const std::int64_t need = prompt_token_upper_bound(request) + request.max_tokens;
    std::lock_guard lock(mutex_);
    if (limits_.call_ceiling && used_.calls + reserved_calls_ + 1 > *limits_.call_ceiling) {
        throw BudgetExceeded("call ceiling " + std::to_string(*limits_.call_ceiling) + " reached");
    }
    if (limits_.token_ceiling && used_.tokens + reserved_tokens_ + need > *limits_.token_ceiling) {
        std::ostringstream os;
        os << "token ceiling " << *limits_.token_ceiling << " would be exceeded (used " << used_.tokens
           << ", request needs up to " << need << ")";
        throw BudgetExceeded(os.str());
    }
    reserved_tokens_ += need;
    reserved_calls_ += 1;
    return need;
}

void UsageMeter::commit(std::int64_t reserved, const TokenUsage& actual) {
    std::lock_guard lock(mutex_);
    reserved_tokens_ -= reserved;
    reserved_calls_ -= 1;
    used_.tokens += actual.total();
    used_.calls += 1;
}

void UsageMeter::release(std::int64_t reserved) {
    std::lock_guard lock(mutex_);
    reserved_tokens_ -= reserved;
    reserved_calls_ -= 1;
}

UsageTotals UsageMeter::totals() const {
    std::lock_guard lock(mutex_);
    return used_;
}

BudgetedProvider::BudgetedProvider(std::shared_ptr<Provider> inner, std::shared_ptr<UsageMeter> meter)
    : inner_(std::move(inner)), meter_(std::move(meter)) {
    if (!inner_ || !meter_) throw ContractError("budgeted provider needs a backend and a meter");
}

ChatResponse BudgetedProvider::complete(const ChatRequest& request) {
    request.validate();
    const std::int64_t reserved = meter_->reserve(request);
    try {
        ChatResponse resp = inner_->complete(request);
        meter_->commit(reserved, resp.usage);
        return resp;
    } catch (...) {
        meter_->release(reserved);
        throw;
    }
}

ProviderSet::ProviderSet(std::shared_ptr<Provider> default_backend) : default_(std::move(default_backend)) {}

void ProviderSet::set(RoleTag role, std::shared_ptr<Provider> backend) { by_role_[role] = std::move(backend); }

void ProviderSet::set_default(std::shared_ptr<Provider> backend) { default_ = std::move(backend); }

std::shared_ptr<Provider> ProviderSet::shared_for_role(RoleTag role) const {
    if (auto it = by_role_.find(role); it != by_role_.end()) return it->second;
    if (default_) return default_;
    throw ContractError("no backend configured for role " + std::string(to_string(role)));
}

Provider& ProviderSet::for_role(RoleTag role) const { return *shared_for_role(role); }

ProviderSet ProviderSet::with_meter(std::shared_ptr<UsageMeter> meter) const {
    // Wrap each distinct backend once so roles sharing a backend share the wrapper.
    std::map<Provider*, std::shared_ptr<Provider>> wrapped;
    auto wrap = [&](const std::shared_ptr<Provider>& p) -> std::shared_ptr<Provider> {
        if (!p) return nullptr;
        auto& slot = wrapped[p.get()];
        if (!slot) slot = std::make_shared<BudgetedProvider>(p, meter);
        return slot;
    };
    ProviderSet out;
    out.default_ = wrap(default_);
    for (const auto& [role, p] : by_role_) out.by_role_[role] = wrap(p);
    return out;
}

} // namespace finprompt::provider
