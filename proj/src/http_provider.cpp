#include "finprompt/http_provider.hpp"

#include "finprompt/error.hpp"
#include "finprompt/util.hpp"

#include <algorithm>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace finprompt::provider {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResult post(const std::string& url, const std::string& body, const HttpHeaders& headers) override {
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw TransportFailure("malformed endpoint URL: " + url);
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

        httplib::Client client(origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);

        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = client.Post(path, h, body, "application/json");
        if (!res) throw TransportFailure("HTTP transport error: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }

private:
    std::chrono::seconds timeout_;
};

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

} // namespace

std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
    return std::make_unique<HttplibTransport>(timeout);
}

std::chrono::milliseconds BackoffPolicy::ceiling_for_retry(int retry) const {
    const int shift = std::clamp(retry - 1, 0, 30);
    const auto raw = base.count() * (std::int64_t{1} << shift);
    return std::chrono::milliseconds(std::min<std::int64_t>(raw, cap.count()));
}

std::chrono::milliseconds BackoffPolicy::delay_for_retry(int retry, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::int64_t> dist(0, ceiling_for_retry(retry).count());
    return std::chrono::milliseconds(dist(rng));
}

HttpChatProvider::HttpChatProvider(HttpBackendConfig config, std::unique_ptr<HttpTransport> transport,
                                   Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    if (!transport_) throw ContractError("http provider needs a transport");
    if (config_.backoff.max_attempts < 1) throw ContractError("max_attempts must be >= 1");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpChatProvider::request_body(const ChatRequest& request) const {
    nlohmann::json body;
    body["model"] = config_.model;
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_tokens;
    if (config_.send_seed && request.seed) body["seed"] = *request.seed;
    auto& msgs = body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) {
        msgs.push_back({{"role", std::string(to_string(m.speaker))}, {"content", m.text}});
    }
    return body.dump();
}

ChatResponse HttpChatProvider::complete(const ChatRequest& request) {
    request.validate();
    if (config_.api_key.empty()) throw AuthError("no API credential configured for " + config_.endpoint);

    const std::string body = request_body(request);
    const HttpHeaders headers{{"Authorization", "Bearer " + config_.api_key}};
    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};

    std::string last_error;
    for (int attempt = 1; attempt <= config_.backoff.max_attempts; ++attempt) {
        if (attempt > 1) sleeper_(config_.backoff.delay_for_retry(attempt - 1, jitter_rng));
        HttpResult res;
        try {
            res = transport_->post(config_.endpoint, body, headers);
        } catch (const TransportFailure& e) {
            last_error = e.what();
            continue;
        }
        if (res.status == 401 || res.status == 403) {
            throw AuthError("backend rejected credential (HTTP " + std::to_string(res.status) + ")");
        }
        if (retryable_status(res.status)) {
            last_error = "HTTP " + std::to_string(res.status);
            continue;
        }
        if (res.status < 200 || res.status >= 300) {
            throw TransportError("HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 300));
        }
        try {
            const auto doc = nlohmann::json::parse(res.body);
            ChatResponse out;
            const auto& content = doc.at("choices").at(0).at("message").at("content");
            out.text = content.is_null() ? std::string{} : content.get<std::string>();
            if (doc.contains("usage")) {
                out.usage.prompt_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
                out.usage.completion_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
            }
            out.backend_id = id();
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed backend response: ") + e.what());
        }
    }
    throw TransportError("retries exhausted after " + std::to_string(config_.backoff.max_attempts) +
                         " attempt(s): " + last_error);
}

} // namespace finprompt::provider
