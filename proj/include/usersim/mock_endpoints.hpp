#pragma once

// Offline responders addressed as mock:<name> endpoints. Each reply is a
// pure function of the request, so recordings of them replay exactly.
//
//   mock:yes            judgment "Yes"; selection candidate 1
//   mock:random[:seed]  uniform answer keyed on a hash of the prompt
//   mock:caption        three-turn item-perception replies built from the title

#include <memory>
#include <string>
#include <string_view>

#include "usersim/llmclient.hpp"

namespace usersim::llm {

namespace mock {

/// Text of a message in wire form (string or content-part array).
inline std::string message_text(const json& msg)
{
    const auto& c = msg.at("content");
    if (c.is_string()) {
        return c.get<std::string>();
    }
    std::string out;
    for (const auto& part : c) {
        if (part.value("type", "") == "text") {
            out += part.value("text", "");
        }
    }
    return out;
}

inline std::string last_user_text(const json& body)
{
    const auto& msgs = body.at("messages");
    for (auto it = msgs.rbegin(); it != msgs.rend(); ++it) {
        if (it->value("role", "") == "user") {
            return message_text(*it);
        }
    }
    return {};
}

/// Number of numbered candidate lines after the candidate header; 0 for a
/// judgment prompt.
inline std::size_t count_candidates(std::string_view prompt)
{
    constexpr std::string_view header = "Candidate videos for the next watch:";
    auto pos = prompt.find(header);
    if (pos == std::string_view::npos) {
        return 0;
    }
    std::size_t n = 0;
    for (auto nl = prompt.find('\n', pos); nl != std::string_view::npos; nl = prompt.find('\n', nl + 1)) {
        const auto expect = std::to_string(n + 1) + ". ";
        if (prompt.substr(nl + 1, expect.size()) == expect) {
            ++n;
        }
    }
    return n;
}

inline std::string user_sim_reply(const std::string& status, const std::string& answer)
{
    return "<think>(1) User_status: " + status + "</think><answer>(2) " + answer + "</answer>";
}

inline std::string yes_reply(const json& body)
{
    const auto prompt = last_user_text(body);
    if (count_candidates(prompt) > 0) {
        return user_sim_reply("always picks the first candidate", "Next_video: 1");
    }
    return user_sim_reply("likes everything", "Preference: Yes");
}

inline std::string random_reply(const json& body, std::uint64_t seed)
{
    const auto prompt = last_user_text(body);
    const auto h = mix_seed(seed, fnv1a(prompt));
    const auto n = count_candidates(prompt);
    if (n > 0) {
        return user_sim_reply("undecided", "Next_video: " + std::to_string(h % n + 1));
    }
    return user_sim_reply("undecided", std::string("Preference: ") + (h % 2 == 0 ? "Yes" : "No"));
}

inline std::string title_of(const json& body)
{
    constexpr std::string_view open = "the title of the video is: ";
    constexpr std::string_view close = ". Pay special attention";
    for (const auto& m : body.at("messages")) {
        if (m.value("role", "") != "user") {
            continue;
        }
        const auto text = message_text(m);
        auto a = text.find(open);
        if (a == std::string::npos) {
            continue;
        }
        a += open.size();
        auto b = text.find(close, a);
        return text.substr(a, b == std::string::npos ? std::string::npos : b - a);
    }
    return "untitled video";
}

inline std::string caption_reply(const json& body)
{
    std::size_t turns = 0;
    for (const auto& m : body.at("messages")) {
        turns += m.value("role", "") == "user" ? 1 : 0;
    }
    const auto title = title_of(body);
    switch (turns) {
    case 1: return "Understood. I will focus on the frames that relate to \"" + title + "\".";
    case 2:
        return "Main characters: the people shown in the frames. Core event: " + title +
               ". Emotional appeal: curiosity about how it turns out.";
    default: {
        const auto first = title.substr(0, title.find(' '));
        return "a short clip about " + title + " that shows how it turns out # " + first + " # daily video";
    }
    }
}

} // namespace mock

/// Transport for a mock:<name>[:seed] endpoint.
inline std::shared_ptr<MockTransport> make_mock_transport(std::string_view endpoint)
{
    auto spec = std::string(endpoint.substr(endpoint.find(':') + 1));
    std::string name = spec;
    std::uint64_t seed = 0;
    if (auto colon = spec.find(':'); colon != std::string::npos) {
        name = spec.substr(0, colon);
        try {
            seed = std::stoull(spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw input_error("bad seed in mock endpoint '" + std::string(endpoint) + "'");
        }
    }
    MockTransport::Handler handler;
    if (name == "yes") {
        handler = [](const json& b) { return HttpResult{200, completion_body(mock::yes_reply(b)).dump()}; };
    } else if (name == "random") {
        handler = [seed](const json& b) { return HttpResult{200, completion_body(mock::random_reply(b, seed)).dump()}; };
    } else if (name == "caption") {
        handler = [](const json& b) { return HttpResult{200, completion_body(mock::caption_reply(b)).dump()}; };
    } else {
        throw input_error("unknown mock endpoint '" + std::string(endpoint) + "' (expected mock:yes, mock:random or mock:caption)");
    }
    return std::make_shared<MockTransport>(std::move(handler), std::string(endpoint));
}

} // namespace usersim::llm
