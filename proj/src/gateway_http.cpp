#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cooprag/gateway.hpp"

namespace cooprag {

namespace {

// Splits "http://host:port/prefix" into the httplib client origin and the
// path prefix. Only plain http is supported; encoders and chat backends run
// next to this process, not across the open internet.
struct SplitUrl {
    std::string origin;
    std::string path_prefix;
};

SplitUrl split_url(const std::string& base_url) {
    const std::string scheme = "http://";
    if (base_url.rfind(scheme, 0) != 0) {
        throw GatewayError("base_url must start with http:// : " + base_url);
    }
    const auto slash = base_url.find('/', scheme.size());
    if (slash == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, slash), prefix};
}

} // namespace

std::string HttpChatGateway::build_request_body(const ChatRequest& req, const std::string& model) {
    nlohmann::json body;
    body["model"] = req.model.empty() ? model : req.model;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    auto& messages = body["messages"] = nlohmann::json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    }
    return body.dump();
}

HttpChatGateway::HttpChatGateway(GatewayConfig config) : config_(std::move(config)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw AuthError("credential variable " + config_.api_key_env + " is not set");
    }
    api_key_ = key;
    limiter_ = std::make_shared<InFlightLimiter>(config_.max_in_flight);
}

HttpChatGateway::~HttpChatGateway() = default;

std::string HttpChatGateway::chat(const ChatRequest& req) {
    req.validate();
    const auto guard = limiter_->acquire();

    const SplitUrl url = split_url(config_.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(0, config_.timeout_ms * 1000LL);
    client.set_write_timeout(0, config_.timeout_ms * 1000LL);
    client.set_bearer_token_auth(api_key_);

    const std::string body = build_request_body(req, config_.model);
    const std::string path = url.path_prefix + "/chat/completions";

    std::string last_failure;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(
                retry_delay_ms(attempt - 1, config_.retry_base_delay_ms)));
        }
        auto res = client.Post(path, body, "application/json");
        if (!res) {
            last_failure = "transport failure: " + httplib::to_string(res.error());
            continue; // timeouts and connection drops are retryable
        }
        if (res->status == 200) {
            try {
                const auto parsed = nlohmann::json::parse(res->body);
                const auto& choices = parsed.at("choices");
                if (!choices.is_array() || choices.empty()) {
                    throw BadResponse("response has no choices");
                }
                return choices.at(0).at("message").at("content").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw BadResponse(std::string("malformed chat response: ") + e.what());
            }
        }
        if (!retryable_status(res->status)) {
            throw GatewayError("chat backend returned status " + std::to_string(res->status) +
                               ": " + res->body);
        }
        last_failure = "status " + std::to_string(res->status);
    }
    throw GatewayError("chat request failed after " + std::to_string(config_.max_retries + 1) +
                       " attempts; last failure: " + last_failure);
}

} // namespace cooprag
