#pragma once

// Backend abstraction for multimodal chat completion: a scripted mock for
// deterministic runs and an OpenAI-compatible HTTP client with retry,
// token-bucket rate limiting and an in-flight cap.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hvcu/core.hpp"

namespace hvcu {

enum class Role { System, User, Assistant };

std::string_view role_name(Role role) noexcept;

struct ChatMessage {
    Role role = Role::User;
    std::string text;
    std::vector<ImageRef> images;  // user messages only
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<int> max_output_tokens;
    std::string tag;  // free-form label for logs
};

struct ChatResponse {
    std::string text;
    std::int64_t latency_ms = 0;
    int attempt_count = 1;
};

/// One user message carrying `text` and, when given, the image.
ChatRequest make_user_request(std::string text, const ImageRef* image, double temperature,
                              std::string tag);

/// Throws PreconditionError when the request breaks a ChatMessage/ChatRequest invariant.
void check_request(const ChatRequest& request, double temperature_cap);

/// Message texts joined by blank lines. Mock matchers run against this.
std::string render_prompt(const ChatRequest& request);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    virtual ChatResponse complete(const ChatRequest& request) = 0;

    /// True when responses depend on call order (scripted replay). Pipelines
    /// then issue calls sequentially in a fixed order.
    virtual bool requires_ordered_calls() const { return false; }

    virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// mock

struct ScriptEntry {
    std::string match;  // substring of the rendered prompt; empty matches anything
    std::string response;
};

std::vector<ScriptEntry> parse_mock_script(const Json& doc);
std::vector<ScriptEntry> load_mock_script(const std::filesystem::path& path);
Json mock_script_to_json(const std::vector<ScriptEntry>& script);

class MockBackend final : public ChatBackend {
public:
    struct Handle {
        std::size_t first = 0;
        std::size_t count = 0;
    };

    struct Call {
        std::size_t entry = 0;
        double temperature = 0.0;
        std::string tag;
        std::string prompt;
        std::size_t image_count = 0;
    };

    explicit MockBackend(std::string model = "mock", double temperature_cap = 2.0);

    /// Appends entries to the script; calls consume them in order.
    Handle enqueue(std::vector<ScriptEntry> script);

    ChatResponse complete(const ChatRequest& request) override;
    bool requires_ordered_calls() const override { return true; }
    std::string model_id() const override { return model_; }

    std::size_t consumed() const;
    std::size_t remaining() const;
    std::vector<Call> calls() const;

private:
    std::string model_;
    double temperature_cap_;
    mutable std::mutex mutex_;
    std::vector<ScriptEntry> script_;
    std::size_t cursor_ = 0;
    std::vector<Call> calls_;
};

// ---------------------------------------------------------------------------
// remote

struct HttpReply {
    int status = 0;  // 0: no HTTP response (connect/read failure)
    std::string body;
    std::string error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpReply post(const std::string& path, const std::string& body,
                           const HttpHeaders& headers) = 0;
};

/// cpp-httplib backed transport rooted at `base_url` (scheme://host[:port][/prefix]).
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::milliseconds timeout);

struct RemoteConfig {
    std::string api_base;
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{60'000};
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_multiplier = 2.0;
    std::chrono::milliseconds max_backoff{30'000};
    double requests_per_minute = 60.0;
    int max_in_flight = 4;
    double temperature_cap = 2.0;
    std::optional<std::uint64_t> seed;

    /// Reads HVCU_API_BASE, HVCU_API_KEY and HVCU_MODEL over `base`.
    static RemoteConfig from_env(RemoteConfig base);
    static RemoteConfig from_env();
};

/// Non-decreasing delay before retry `retry_index` (1-based).
std::chrono::milliseconds backoff_delay(const RemoteConfig& config, int retry_index);

/// Token bucket: `rate_per_minute` tokens per minute, holding at most `burst`.
class TokenBucket {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    TokenBucket(double rate_per_minute, double burst, Clock clock = {});

    /// Takes one token and returns how long the caller must wait before using it.
    std::chrono::nanoseconds reserve();

private:
    double rate_per_second_;
    double burst_;
    Clock clock_;
    std::mutex mutex_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
};

/// Counting gate bounding outstanding requests; exposes the live and peak counts.
class InFlightGate {
public:
    explicit InFlightGate(int limit);

    class Permit {
    public:
        explicit Permit(InFlightGate& gate) : gate_(&gate) { gate_->acquire(); }
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        ~Permit() { gate_->release(); }

    private:
        InFlightGate* gate_;
    };

    void acquire();
    void release();
    int current() const;
    int peak() const;
    int limit() const noexcept { return limit_; }

private:
    int limit_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    int current_ = 0;
    int peak_ = 0;
};

/// "data:<media>;base64,..." for local files; http(s) and data URIs pass through.
std::string image_url_for(const ImageRef& image);
std::string base64_encode(std::string_view bytes);

class RemoteBackend final : public ChatBackend {
public:
    using Sleeper = std::function<void(std::chrono::nanoseconds)>;

    RemoteBackend(RemoteConfig config, std::unique_ptr<HttpTransport> transport,
                  Sleeper sleeper = {}, TokenBucket::Clock clock = {});

    ChatResponse complete(const ChatRequest& request) override;
    std::string model_id() const override { return config_.model; }

    Json build_request_body(const ChatRequest& request) const;
    /// choices[0].message.content; throws ContractError otherwise.
    static std::string parse_response_body(const std::string& body);
    static bool is_retryable_status(int status) noexcept;

    const InFlightGate& in_flight() const noexcept { return gate_; }
    const RemoteConfig& config() const noexcept { return config_; }

private:
    RemoteConfig config_;
    std::unique_ptr<HttpTransport> transport_;
    Sleeper sleep_;
    TokenBucket bucket_;
    InFlightGate gate_;
};

}  // namespace hvcu
