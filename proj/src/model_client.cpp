#include "hvcu/model_client.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "hvcu/errors.hpp"

namespace hvcu {

std::string_view role_name(Role role) noexcept {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "";
}

ChatRequest make_user_request(std::string text, const ImageRef* image, double temperature,
                              std::string tag) {
    ChatMessage message;
    message.role = Role::User;
    message.text = std::move(text);
    if (image != nullptr) message.images.push_back(*image);
    ChatRequest request;
    request.messages.push_back(std::move(message));
    request.temperature = temperature;
    request.tag = std::move(tag);
    return request;
}

void check_request(const ChatRequest& request, double temperature_cap) {
    if (request.messages.empty()) throw PreconditionError("chat request has no messages");
    if (request.temperature < 0 || !std::isfinite(request.temperature)) {
        throw PreconditionError("temperature must be a finite value >= 0");
    }
    if (request.temperature > temperature_cap) {
        throw PreconditionError("temperature " + std::to_string(request.temperature) +
                                " exceeds cap " + std::to_string(temperature_cap));
    }
    if (request.max_output_tokens && *request.max_output_tokens <= 0) {
        throw PreconditionError("max_output_tokens must be positive");
    }
    for (const auto& message : request.messages) {
        if (!message.images.empty() && message.role != Role::User) {
            throw PreconditionError("images are only permitted on user messages");
        }
    }
}

std::string render_prompt(const ChatRequest& request) {
    std::string out;
    for (std::size_t i = 0; i < request.messages.size(); ++i) {
        if (i) out += "\n\n";
        out += request.messages[i].text;
    }
    return out;
}

// ---------------------------------------------------------------------------
// mock

std::vector<ScriptEntry> parse_mock_script(const Json& doc) {
    if (!doc.is_array()) throw InvariantError("mock script must be a JSON array");
    std::vector<ScriptEntry> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        if (!e.is_object() || !e.contains("response") || !e["response"].is_string()) {
            throw InvariantError("mock script entry " + std::to_string(i) +
                                 ": expected {match, response} with string response");
        }
        ScriptEntry entry;
        if (e.contains("match")) {
            if (!e["match"].is_string()) {
                throw InvariantError("mock script entry " + std::to_string(i) +
                                     ": match must be a string");
            }
            entry.match = e["match"].get<std::string>();
        }
        entry.response = e["response"].get<std::string>();
        out.push_back(std::move(entry));
    }
    return out;
}

std::vector<ScriptEntry> load_mock_script(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mock script " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw InvariantError("mock script " + path.string() + ": " + e.what());
    }
    return parse_mock_script(doc);
}

Json mock_script_to_json(const std::vector<ScriptEntry>& script) {
    Json out = Json::array();
    for (const auto& e : script) {
        Json j;
        j["match"] = e.match;
        j["response"] = e.response;
        out.push_back(std::move(j));
    }
    return out;
}

MockBackend::MockBackend(std::string model, double temperature_cap)
    : model_(std::move(model)), temperature_cap_(temperature_cap) {}

MockBackend::Handle MockBackend::enqueue(std::vector<ScriptEntry> script) {
    std::lock_guard lock(mutex_);
    Handle handle{script_.size(), script.size()};
    std::move(script.begin(), script.end(), std::back_inserter(script_));
    return handle;
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
    check_request(request, temperature_cap_);
    const std::string prompt = render_prompt(request);

    std::lock_guard lock(mutex_);
    if (cursor_ >= script_.size()) {
        throw ScriptExhausted("mock script exhausted after " + std::to_string(script_.size()) +
                              " entries (request '" + request.tag + "')");
    }
    const auto& entry = script_[cursor_];
    if (!entry.match.empty() && prompt.find(entry.match) == std::string::npos) {
        throw MatchError("mock script entry " + std::to_string(cursor_) + " expects '" +
                             entry.match + "' but request '" + request.tag + "' lacks it",
                         cursor_);
    }
    std::size_t images = 0;
    for (const auto& m : request.messages) images += m.images.size();
    calls_.push_back(Call{cursor_, request.temperature, request.tag, prompt, images});
    ChatResponse response{entry.response, 0, 1};
    ++cursor_;
    return response;
}

std::size_t MockBackend::consumed() const {
    std::lock_guard lock(mutex_);
    return cursor_;
}

std::size_t MockBackend::remaining() const {
    std::lock_guard lock(mutex_);
    return script_.size() - cursor_;
}

std::vector<MockBackend::Call> MockBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

// ---------------------------------------------------------------------------
// retry, rate limiting, in-flight cap

RemoteConfig RemoteConfig::from_env(RemoteConfig base) {
    if (const char* v = std::getenv("HVCU_API_BASE"); v && *v) base.api_base = v;
    if (const char* v = std::getenv("HVCU_API_KEY"); v && *v) base.api_key = v;
    if (const char* v = std::getenv("HVCU_MODEL"); v && *v) base.model = v;
    return base;
}

RemoteConfig RemoteConfig::from_env() { return from_env(RemoteConfig{}); }

std::chrono::milliseconds backoff_delay(const RemoteConfig& config, int retry_index) {
    const double scaled = static_cast<double>(config.initial_backoff.count()) *
                          std::pow(config.backoff_multiplier, std::max(0, retry_index - 1));
    const double capped = std::min(scaled, static_cast<double>(config.max_backoff.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

TokenBucket::TokenBucket(double rate_per_minute, double burst, Clock clock)
    : rate_per_second_(rate_per_minute / 60.0),
      burst_(std::max(1.0, burst)),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })),
      tokens_(burst_),
      last_(clock_()) {}

std::chrono::nanoseconds TokenBucket::reserve() {
    std::lock_guard lock(mutex_);
    if (rate_per_second_ <= 0) return std::chrono::nanoseconds::zero();  // unlimited
    const auto now = clock_();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_per_second_);
    tokens_ -= 1.0;
    if (tokens_ >= 0) return std::chrono::nanoseconds::zero();
    const double wait = -tokens_ / rate_per_second_;
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::duration<double>(wait));
}

InFlightGate::InFlightGate(int limit) : limit_(std::max(1, limit)) {}

void InFlightGate::acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return current_ < limit_; });
    ++current_;
    peak_ = std::max(peak_, current_);
}

void InFlightGate::release() {
    {
        std::lock_guard lock(mutex_);
        --current_;
    }
    cv_.notify_one();
}

int InFlightGate::current() const {
    std::lock_guard lock(mutex_);
    return current_;
}

int InFlightGate::peak() const {
    std::lock_guard lock(mutex_);
    return peak_;
}

// ---------------------------------------------------------------------------
// remote

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string image_url_for(const ImageRef& image) {
    const std::string& uri = image.path_or_uri;
    if (uri.starts_with("http://") || uri.starts_with("https://") || uri.starts_with("data:")) {
        return uri;
    }
    std::ifstream in(uri, std::ios::binary);
    if (!in) throw IoError("cannot read image " + uri);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string media = image.media_type.empty() ? media_type_for(uri) : image.media_type;
    return "data:" + media + ";base64," + base64_encode(bytes);
}

RemoteBackend::RemoteBackend(RemoteConfig config, std::unique_ptr<HttpTransport> transport,
                             Sleeper sleeper, TokenBucket::Clock clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleep_(sleeper ? std::move(sleeper)
                     : Sleeper([](std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); })),
      bucket_(config_.requests_per_minute, std::max(1.0, static_cast<double>(config_.max_in_flight)),
              std::move(clock)),
      gate_(config_.max_in_flight) {
    if (config_.max_attempts < 1) throw InvariantError("max_attempts must be positive");
    if (!transport_) throw InvariantError("remote backend needs a transport");
}

bool RemoteBackend::is_retryable_status(int status) noexcept {
    return status == 0 || status == 408 || status == 429 || (status >= 500 && status <= 599);
}

Json RemoteBackend::build_request_body(const ChatRequest& request) const {
    Json body;
    body["model"] = config_.model;
    Json messages = Json::array();
    for (const auto& m : request.messages) {
        Json msg;
        msg["role"] = role_name(m.role);
        if (m.role == Role::User) {
            Json parts = Json::array();
            parts.push_back({{"type", "text"}, {"text", m.text}});
            for (const auto& image : m.images) {
                parts.push_back({{"type", "image_url"},
                                 {"image_url", {{"url", image_url_for(image)}}}});
            }
            msg["content"] = std::move(parts);
        } else {
            msg["content"] = m.text;
        }
        messages.push_back(std::move(msg));
    }
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    if (request.max_output_tokens) body["max_tokens"] = *request.max_output_tokens;
    if (config_.seed) body["seed"] = *config_.seed;
    return body;
}

std::string RemoteBackend::parse_response_body(const std::string& body) {
    Json doc;
    try {
        doc = Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw ContractError(std::string("response body is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() ||
        doc["choices"].empty()) {
        throw ContractError("response body lacks choices[0]");
    }
    const auto& choice = doc["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
        throw ContractError("response body lacks choices[0].message");
    }
    const auto& content = choice["message"].value("content", Json());
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
        std::string text;
        for (const auto& part : content) {
            if (part.is_object() && part.value("type", "") == "text" && part.contains("text") &&
                part["text"].is_string()) {
                text += part["text"].get<std::string>();
            }
        }
        if (!text.empty()) return text;
    }
    throw ContractError("response body lacks assistant content");
}

ChatResponse RemoteBackend::complete(const ChatRequest& request) {
    check_request(request, config_.temperature_cap);
    const std::string body = build_request_body(request).dump();
    const HttpHeaders headers{{"Authorization", "Bearer " + config_.api_key},
                              {"Content-Type", "application/json"}};

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        if (auto wait = bucket_.reserve(); wait > std::chrono::nanoseconds::zero()) sleep_(wait);

        HttpReply reply;
        {
            InFlightGate::Permit permit(gate_);
            reply = transport_->post("/chat/completions", body, headers);
        }

        if (reply.status >= 200 && reply.status < 300) {
            ChatResponse response;
            response.text = parse_response_body(reply.body);
            response.attempt_count = attempt;
            response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                      std::chrono::steady_clock::now() - start)
                                      .count();
            return response;
        }
        if (reply.status == 401 || reply.status == 403) {
            throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(reply.status) +
                            ")");
        }
        if (!is_retryable_status(reply.status)) {
            throw ContractError("HTTP " + std::to_string(reply.status) + ": " +
                                reply.body.substr(0, 500));
        }

        last_error = reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status);
        spdlog::warn("request '{}' attempt {}/{} failed: {}", request.tag, attempt,
                     config_.max_attempts, last_error);
        if (attempt < config_.max_attempts) sleep_(backoff_delay(config_, attempt));
    }
    throw TransportError("request '" + request.tag + "' failed after " +
                             std::to_string(config_.max_attempts) + " attempts: " + last_error,
                         config_.max_attempts);
}

}  // namespace hvcu
