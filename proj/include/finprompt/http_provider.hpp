#pragma once

#include "finprompt/provider.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace finprompt::provider {

struct HttpResult {
    int status = 0;
    std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

// Raised by transports for connection-level failures (no HTTP status).
class TransportFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResult post(const std::string& url, const std::string& body, const HttpHeaders& headers) = 0;
};

// cpp-httplib backed transport; supports http:// and https:// URLs.
std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout);

// Exponential backoff with full jitter: before retry k (1-based) sleep a
// uniform draw from [0, min(cap, base * 2^(k-1))].
struct BackoffPolicy {
    std::chrono::milliseconds base{500};
    std::chrono::milliseconds cap{30000};
    int max_attempts = 5;

    std::chrono::milliseconds ceiling_for_retry(int retry) const;
    std::chrono::milliseconds delay_for_retry(int retry, std::mt19937_64& rng) const;
};

struct HttpBackendConfig {
    std::string endpoint;  // full chat-completions URL
    std::string model;
    std::string api_key;   // resolved from the environment by the caller
    BackoffPolicy backoff;
    bool send_seed = true;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Chat-completions client. Retries 408/429/5xx and connection failures up
// to backoff.max_attempts total attempts; 401/403 fail fast with AuthError.
class HttpChatProvider final : public Provider {
public:
    HttpChatProvider(HttpBackendConfig config, std::unique_ptr<HttpTransport> transport, Sleeper sleeper = {});

    ChatResponse complete(const ChatRequest& request) override;
    std::string id() const override { return "http:" + config_.model; }

    // Request body sent for `request`; exposed for tests.
    std::string request_body(const ChatRequest& request) const;

private:
    HttpBackendConfig config_;
    std::unique_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
};

} // namespace finprompt::provider
