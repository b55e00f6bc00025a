#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "cooprag/errors.hpp"

namespace cooprag {

enum class ChatRole { System, User, Assistant };

std::string_view to_string(ChatRole role);

struct ChatMessage {
    ChatRole role = ChatRole::User;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0; // deterministic by default
    int max_tokens = 2048;
    std::string model; // empty -> provider default

    void validate() const;

    bool operator==(const ChatRequest&) const = default;
};

// Content hash identifying a request, used to key mock fixture files.
std::uint64_t request_hash(const ChatRequest& req);
std::string request_hash_hex(const ChatRequest& req);

class ChatGateway {
public:
    virtual ~ChatGateway() = default;

    // Returns the assistant message content for the request.
    virtual std::string chat(const ChatRequest& req) = 0;
};

// Counting gate shared by everything that talks to external services;
// acquire blocks while the configured number of calls is already in flight.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int max_in_flight);

    class Guard {
    public:
        explicit Guard(InFlightLimiter* limiter) : limiter_(limiter) {}
        Guard(Guard&& other) noexcept : limiter_(other.limiter_) { other.limiter_ = nullptr; }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;
        Guard& operator=(Guard&&) = delete;
        ~Guard();

    private:
        InFlightLimiter* limiter_;
    };

    Guard acquire();
    int in_flight() const;

private:
    friend class Guard;
    void release();

    const int max_in_flight_;
    mutable std::mutex mutex_;
    std::condition_variable available_;
    int active_ = 0;
};

// Deterministic test double. Responses come from, in priority order: the
// scripted FIFO, the in-memory fixture map, then <request-hash>.txt files in
// the fixture directory. Thread safe.
class MockChatGateway : public ChatGateway {
public:
    MockChatGateway() = default;
    explicit MockChatGateway(std::filesystem::path fixtures_dir);

    std::string chat(const ChatRequest& req) override;

    void add_fixture(const ChatRequest& req, std::string response);
    void push_response(std::string response);
    // Next scripted slot raises a GatewayError instead of answering.
    void push_failure(std::string message);

    void set_limiter(std::shared_ptr<InFlightLimiter> limiter);
    // Holds each call open for this long, to make concurrency observable.
    void set_delay_ms(int delay_ms) { delay_ms_ = delay_ms; }

    int calls() const { return calls_.load(); }
    int max_observed_in_flight() const { return max_in_flight_seen_.load(); }

    static void write_fixture(const std::filesystem::path& dir, const ChatRequest& req,
                              const std::string& response);

private:
    struct Scripted {
        bool fail = false;
        std::string payload;
    };

    std::filesystem::path fixtures_dir_;
    bool has_dir_ = false;
    std::mutex mutex_;
    std::deque<Scripted> script_;
    std::map<std::uint64_t, std::string> fixtures_;
    std::shared_ptr<InFlightLimiter> limiter_;
    int delay_ms_ = 0;
    std::atomic<int> calls_{0};
    std::atomic<int> live_{0};
    std::atomic<int> max_in_flight_seen_{0};
};

struct GatewayConfig {
    std::string base_url; // e.g. http://127.0.0.1:8000/v1
    std::string model;
    std::string api_key_env = "LLM_API_KEY";
    int timeout_ms = 60000;
    int max_retries = 3;
    int max_in_flight = 4;
    int retry_base_delay_ms = 250;
};

// Chat-completions client: POST {base_url}/chat/completions with the
// familiar model/messages/temperature body, reading back the first choice's
// message content. 429, 5xx and transport failures retry with exponential
// backoff; other statuses fail immediately.
class HttpChatGateway : public ChatGateway {
public:
    // Reads the API key from config.api_key_env; throws AuthError when the
    // variable is missing or empty, before any network activity.
    explicit HttpChatGateway(GatewayConfig config);
    ~HttpChatGateway() override;

    std::string chat(const ChatRequest& req) override;

    static bool retryable_status(int status);
    static int retry_delay_ms(int attempt, int base_delay_ms);
    static std::string build_request_body(const ChatRequest& req, const std::string& model);

private:
    GatewayConfig config_;
    std::string api_key_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

} // namespace cooprag
