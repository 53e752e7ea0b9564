#pragma once

// Chat-completion client: request/response schema, pluggable transports
// (mock, replay, recording; HTTP lives in http_transport.hpp), retries with
// exponential backoff and a bound on concurrent requests.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "usersim/core.hpp"

namespace usersim::llm {

struct Message {
    std::string role; ///< system | user | assistant
    std::string content;
    /// Image attachments as http(s) URLs or data URLs.
    std::vector<std::string> images;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 2048;

    void validate() const
    {
        if (messages.empty()) {
            throw input_error("chat request needs at least one message");
        }
        if (max_tokens < 1) {
            throw input_error("max_tokens must be at least 1");
        }
        for (const auto& m : messages) {
            if (m.role != "system" && m.role != "user" && m.role != "assistant") {
                throw input_error("unknown message role '" + m.role + "'");
            }
        }
    }
};

/// Wire form. Messages with images use the content-part array; plain
/// messages keep a string content.
[[nodiscard]] inline json to_json(const ChatRequest& req)
{
    json msgs = json::array();
    for (const auto& m : req.messages) {
        if (m.images.empty()) {
            msgs.push_back({{"role", m.role}, {"content", m.content}});
            continue;
        }
        json parts = json::array();
        parts.push_back({{"type", "text"}, {"text", m.content}});
        for (const auto& url : m.images) {
            parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        }
        msgs.push_back({{"role", m.role}, {"content", parts}});
    }
    return json{{"model", req.model},
                {"messages", msgs},
                {"temperature", req.temperature},
                {"max_tokens", req.max_tokens}};
}

/// Minimal successful response body carrying `text` as the first choice.
[[nodiscard]] inline json completion_body(const std::string& text)
{
    return json{{"object", "chat.completion"},
                {"choices", json::array({{{"index", 0},
                                          {"message", {{"role", "assistant"}, {"content", text}}},
                                          {"finish_reason", "stop"}}})}};
}

/// First choice's message content.
[[nodiscard]] inline std::string extract_content(const std::string& body)
{
    json j;
    try {
        j = json::parse(body);
    } catch (const std::exception& e) {
        throw protocol_error(std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw protocol_error("response has no choices");
    }
    const auto& msg = j["choices"][0].value("message", json::object());
    if (!msg.contains("content") || msg["content"].is_null()) {
        return {};
    }
    if (!msg["content"].is_string()) {
        throw protocol_error("choices[0].message.content is not a string");
    }
    return msg["content"].get<std::string>();
}

struct HttpResult {
    int status = 0;
    std::string body;
};

/// One POST of a chat-completion body. Implementations throw
/// transport_error when no HTTP status was obtained (connect failure,
/// timeout); that case is retried like a 5xx.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResult post(const json& body) = 0;
    [[nodiscard]] virtual std::string describe() const = 0;
};

// ---------------------------------------------------------------------------
// Test and offline transports

/// Calls a handler per request and tracks concurrency.
class MockTransport final : public Transport {
public:
    using Handler = std::function<HttpResult(const json&)>;

    explicit MockTransport(Handler handler, std::string name = "mock") : handler_(std::move(handler)), name_(std::move(name)) {}

    /// Always answers `text` with status 200.
    static std::shared_ptr<MockTransport> canned(const std::string& text)
    {
        return std::make_shared<MockTransport>([text](const json&) { return HttpResult{200, completion_body(text).dump()}; });
    }

    HttpResult post(const json& body) override
    {
        const int now = ++in_flight_;
        int seen = max_in_flight_.load();
        while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
        }
        ++calls_;
        struct release {
            std::atomic<int>& n;
            ~release() { --n; }
        } guard{in_flight_};
        return handler_(body);
    }

    [[nodiscard]] std::string describe() const override { return name_; }
    [[nodiscard]] int calls() const noexcept { return calls_.load(); }
    [[nodiscard]] int max_in_flight() const noexcept { return max_in_flight_.load(); }

private:
    Handler handler_;
    std::string name_;
    std::atomic<int> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
};

/// Key under which a request is stored in a replay log.
[[nodiscard]] inline std::string replay_key(const json& request) { return request.dump(); }

/// Serves responses from a JSONL log of {"request", "response"} pairs.
/// Identical requests are answered in recorded order; the last recording
/// keeps answering once the queue is down to one. Unknown requests get a
/// non-retryable 404.
class ReplayTransport final : public Transport {
public:
    explicit ReplayTransport(const std::filesystem::path& path) : path_(path)
    {
        auto in = usersim::detail::open_input(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (usersim::detail::blank(line)) {
                continue;
            }
            try {
                auto j = json::parse(line);
                entries_[replay_key(j.at("request"))].push_back(j.at("response"));
            } catch (const std::exception& e) {
                throw input_error(usersim::detail::at_line(path, lineno) + "malformed replay row: " + e.what());
            }
        }
    }

    HttpResult post(const json& body) override
    {
        std::lock_guard lock(mu_);
        auto it = entries_.find(replay_key(body));
        if (it == entries_.end()) {
            ++misses_;
            return {404, json{{"error", "request not found in replay log " + path_.string()}}.dump()};
        }
        auto& q = it->second;
        json response = q.front();
        if (q.size() > 1) {
            q.pop_front();
        }
        return {200, response.dump()};
    }

    [[nodiscard]] std::string describe() const override { return "replay:" + path_.string(); }
    [[nodiscard]] std::size_t misses() const
    {
        std::lock_guard lock(mu_);
        return misses_;
    }

private:
    std::filesystem::path path_;
    std::map<std::string, std::deque<json>> entries_;
    std::size_t misses_ = 0;
    mutable std::mutex mu_;
};

/// Forwards to another transport and appends every 2xx exchange to a
/// replay log.
class RecordingTransport final : public Transport {
public:
    RecordingTransport(std::shared_ptr<Transport> inner, const std::filesystem::path& path)
        : inner_(std::move(inner)), out_(path, std::ios::app)
    {
        if (!out_) {
            throw input_error("cannot open replay log '" + path.string() + "' for writing");
        }
    }

    HttpResult post(const json& body) override
    {
        auto r = inner_->post(body);
        if (r.status >= 200 && r.status < 300) {
            json response;
            try {
                response = json::parse(r.body);
            } catch (const std::exception&) {
                response = r.body;
            }
            std::lock_guard lock(mu_);
            out_ << json{{"request", body}, {"response", response}}.dump() << '\n';
            out_.flush();
        }
        return r;
    }

    [[nodiscard]] std::string describe() const override { return inner_->describe(); }

private:
    std::shared_ptr<Transport> inner_;
    std::ofstream out_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Client

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string api_key;
    double timeout_seconds = 120.0;
    int max_retries = 3;
    std::chrono::milliseconds backoff_initial{500};
    double backoff_factor = 2.0;
    std::size_t max_in_flight = 4;

    void validate() const
    {
        if (max_in_flight < 1) {
            throw input_error("max in-flight requests must be at least 1");
        }
        if (max_retries < 0) {
            throw input_error("max retries must be non-negative");
        }
        if (!(timeout_seconds > 0.0)) {
            throw input_error("timeout must be positive");
        }
    }

    /// Reads the bearer token from the environment; absent means no auth.
    static std::string key_from_env(const char* var = "USERSIM_API_KEY")
    {
        const char* v = std::getenv(var);
        return v ? std::string(v) : std::string();
    }
};

struct Completion {
    std::string text;
    int retries = 0;
};

struct BatchResult {
    std::optional<std::string> text;
    std::string error; ///< set when text is empty
    int retries = 0;

    [[nodiscard]] bool ok() const noexcept { return text.has_value(); }
};

class ChatClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    ChatClient(std::shared_ptr<Transport> transport, EndpointConfig cfg)
        : transport_(std::move(transport)), cfg_((cfg.validate(), std::move(cfg))),
          slots_(static_cast<std::ptrdiff_t>(cfg_.max_in_flight)),
          sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })
    {
        if (!transport_) {
            throw input_error("chat client needs a transport");
        }
    }

    /// Replaces the backoff sleep, e.g. to record delays in tests.
    void set_sleeper(Sleeper s) { sleep_ = std::move(s); }

    [[nodiscard]] const EndpointConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::string endpoint() const { return transport_->describe(); }
    [[nodiscard]] int total_retries() const noexcept { return total_retries_.load(); }

    [[nodiscard]] std::string complete(const ChatRequest& req) { return complete_detailed(req).text; }

    /// Retries transport failures, 429 and 5xx with exponential backoff;
    /// other statuses fail at once.
    Completion complete_detailed(const ChatRequest& req)
    {
        req.validate();
        const auto body = to_json(req);
        std::string last;
        auto delay = cfg_.backoff_initial;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                ++total_retries_;
                sleep_(delay);
                delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * cfg_.backoff_factor));
            }
            std::optional<HttpResult> r;
            {
                slots_.acquire();
                struct release {
                    std::counting_semaphore<>& s;
                    ~release() { s.release(); }
                } guard{slots_};
                try {
                    r = transport_->post(body);
                } catch (const transport_error& e) {
                    last = e.what();
                    continue;
                }
            }
            if (r->status >= 200 && r->status < 300) {
                return {extract_content(r->body), attempt};
            }
            last = "HTTP " + std::to_string(r->status) + ": " + r->body.substr(0, 200);
            if (r->status != 429 && r->status < 500) {
                throw transport_error("endpoint " + endpoint() + " rejected the request (" + last + ")");
            }
        }
        throw transport_error("endpoint " + endpoint() + " failed after " + std::to_string(cfg_.max_retries + 1) +
                              " attempts (" + last + ")");
    }

    /// Runs requests concurrently, at most max_in_flight at a time. Results
    /// follow input order; a failure occupies its own slot only.
    std::vector<BatchResult> complete_batch(const std::vector<ChatRequest>& reqs)
    {
        std::vector<BatchResult> out(reqs.size());
        if (reqs.empty()) {
            return out;
        }
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t i = next++; i < reqs.size(); i = next++) {
                try {
                    auto c = complete_detailed(reqs[i]);
                    out[i].text = std::move(c.text);
                    out[i].retries = c.retries;
                } catch (const std::exception& e) {
                    out[i].error = e.what();
                }
            }
        };
        const auto workers = std::min(cfg_.max_in_flight, reqs.size());
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        pool.clear(); // joins
        return out;
    }

private:
    std::shared_ptr<Transport> transport_;
    EndpointConfig cfg_;
    std::counting_semaphore<> slots_;
    Sleeper sleep_;
    std::atomic<int> total_retries_{0};
};

} // namespace usersim::llm
