#include "cooprag/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "cooprag/hash.hpp"

namespace cooprag {

std::string_view to_string(ChatRole role) {
    switch (role) {
    case ChatRole::System: return "system";
    case ChatRole::User: return "user";
    case ChatRole::Assistant: return "assistant";
    }
    throw InvariantViolation("unknown chat role");
}

void ChatRequest::validate() const {
    if (messages.empty()) throw InvariantViolation("chat request has no messages");
    for (const auto& m : messages) {
        if (m.content.empty()) throw InvariantViolation("chat message with empty content");
    }
    if (messages.back().role != ChatRole::User) {
        throw InvariantViolation("chat request must end with a user message");
    }
    if (temperature < 0.0) throw InvariantViolation("negative sampling temperature");
    if (max_tokens <= 0) throw InvariantViolation("max_tokens must be positive");
}

std::uint64_t request_hash(const ChatRequest& req) {
    // Role tags and separators keep distinct conversations from colliding
    // when message boundaries shift.
    std::string tagged;
    for (const auto& m : req.messages) {
        tagged += to_string(m.role);
        tagged += '\x1f';
        tagged += m.content;
        tagged += '\x1e';
    }
    return fnv1a64(tagged);
}

std::string request_hash_hex(const ChatRequest& req) { return to_hex(request_hash(req)); }

InFlightLimiter::InFlightLimiter(int max_in_flight) : max_in_flight_(max_in_flight) {
    if (max_in_flight < 1) throw InvariantViolation("in-flight limit must be at least 1");
}

InFlightLimiter::Guard InFlightLimiter::acquire() {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [&] { return active_ < max_in_flight_; });
    ++active_;
    return Guard(this);
}

int InFlightLimiter::in_flight() const {
    std::lock_guard lock(mutex_);
    return active_;
}

void InFlightLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --active_;
    }
    available_.notify_one();
}

InFlightLimiter::Guard::~Guard() {
    if (limiter_ != nullptr) limiter_->release();
}

MockChatGateway::MockChatGateway(std::filesystem::path fixtures_dir)
    : fixtures_dir_(std::move(fixtures_dir)), has_dir_(true) {}

std::string MockChatGateway::chat(const ChatRequest& req) {
    req.validate();
    std::shared_ptr<InFlightLimiter> limiter;
    {
        std::lock_guard lock(mutex_);
        limiter = limiter_;
    }
    std::optional<InFlightLimiter::Guard> guard;
    if (limiter) guard.emplace(limiter->acquire());

    calls_.fetch_add(1);
    const int live_now = live_.fetch_add(1) + 1;
    int seen = max_in_flight_seen_.load();
    while (live_now > seen && !max_in_flight_seen_.compare_exchange_weak(seen, live_now)) {
    }
    if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));

    struct LiveDrop {
        std::atomic<int>& live;
        ~LiveDrop() { live.fetch_sub(1); }
    } drop{live_};

    {
        std::lock_guard lock(mutex_);
        if (!script_.empty()) {
            Scripted next = std::move(script_.front());
            script_.pop_front();
            if (next.fail) throw GatewayError(next.payload);
            return next.payload;
        }
        if (auto it = fixtures_.find(request_hash(req)); it != fixtures_.end()) {
            return it->second;
        }
    }
    if (has_dir_) {
        const auto path = fixtures_dir_ / (request_hash_hex(req) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (in) {
            std::ostringstream body;
            body << in.rdbuf();
            return body.str();
        }
    }
    throw ProviderUnavailable("no mock response for request " + request_hash_hex(req));
}

void MockChatGateway::add_fixture(const ChatRequest& req, std::string response) {
    std::lock_guard lock(mutex_);
    fixtures_[request_hash(req)] = std::move(response);
}

void MockChatGateway::push_response(std::string response) {
    std::lock_guard lock(mutex_);
    script_.push_back({false, std::move(response)});
}

void MockChatGateway::push_failure(std::string message) {
    std::lock_guard lock(mutex_);
    script_.push_back({true, std::move(message)});
}

void MockChatGateway::set_limiter(std::shared_ptr<InFlightLimiter> limiter) {
    std::lock_guard lock(mutex_);
    limiter_ = std::move(limiter);
}

void MockChatGateway::write_fixture(const std::filesystem::path& dir, const ChatRequest& req,
                                    const std::string& response) {
    std::filesystem::create_directories(dir);
    const auto path = dir / (request_hash_hex(req) + ".txt");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write gateway fixture: " + path.string());
    out.write(response.data(), static_cast<std::streamsize>(response.size()));
    if (!out) throw IoError("short write on gateway fixture: " + path.string());
}

bool HttpChatGateway::retryable_status(int status) {
    return status == 429 || (status >= 500 && status <= 599);
}

int HttpChatGateway::retry_delay_ms(int attempt, int base_delay_ms) {
    // attempt is zero-based; delays double: base, 2*base, 4*base, ...
    if (attempt < 0) throw InvariantViolation("negative retry attempt");
    int delay = base_delay_ms;
    for (int i = 0; i < attempt && delay < 60000; ++i) delay *= 2;
    return std::min(delay, 60000);
}

} // namespace cooprag
