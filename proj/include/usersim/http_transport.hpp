#pragma once

// HTTP transport for the chat client. Kept apart from llmclient.hpp so that
// only programs that talk to a live endpoint pull in httplib.

#include <string>

#include <httplib.h>

#include "usersim/llmclient.hpp"

namespace usersim::llm {

/// POSTs to {base}/v1/chat/completions. A base URL that already ends in
/// /v1 gets only /chat/completions appended.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(EndpointConfig cfg) : cfg_(std::move(cfg))
    {
        auto url = cfg_.base_url;
        while (!url.empty() && url.back() == '/') {
            url.pop_back();
        }
        const auto scheme = url.find("://");
        if (scheme == std::string::npos) {
            throw input_error("endpoint URL '" + cfg_.base_url + "' lacks a scheme");
        }
        const auto slash = url.find('/', scheme + 3);
        origin_ = url.substr(0, slash);
        std::string prefix = slash == std::string::npos ? "" : url.substr(slash);
        const bool has_v1 = prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0;
        path_ = prefix + (has_v1 ? "/chat/completions" : "/v1/chat/completions");
    }

    HttpResult post(const json& body) override
    {
        // httplib clients are not safe to share across threads
        httplib::Client cli(origin_);
        const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
        cli.set_connection_timeout(secs);
        cli.set_read_timeout(secs);
        cli.set_write_timeout(secs);
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + cfg_.api_key);
        }
        auto res = cli.Post(path_, headers, body.dump(), "application/json");
        if (!res) {
            throw transport_error(describe() + ": " + httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    }

    [[nodiscard]] std::string describe() const override { return origin_ + path_; }

private:
    EndpointConfig cfg_;
    std::string origin_;
    std::string path_;
};

} // namespace usersim::llm
