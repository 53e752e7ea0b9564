#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"
#include "usersim/llmclient.hpp"
#include "usersim/mock_endpoints.hpp"

using namespace usersim;
using namespace usersim::llm;
using namespace testing_support;

namespace {

ChatRequest ask(const std::string& text)
{
    return {"default", {{"user", text, {}}}};
}

EndpointConfig fast(std::size_t in_flight = 4, int retries = 3)
{
    EndpointConfig c;
    c.max_in_flight = in_flight;
    c.max_retries = retries;
    c.backoff_initial = std::chrono::milliseconds(0);
    return c;
}

} // namespace

TEST(Client, CannedReply)
{
    auto t = MockTransport::canned("ok");
    ChatClient c(t, fast());
    EXPECT_EQ(c.complete(ask("hi")), "ok");
    EXPECT_EQ(t->calls(), 1);
}

TEST(Client, RetriesServerErrorsWithBackoff)
{
    int n = 0;
    auto t = std::make_shared<MockTransport>([&](const json&) {
        return ++n < 3 ? HttpResult{500, "busy"} : HttpResult{200, completion_body("done").dump()};
    });
    EndpointConfig cfg = fast();
    cfg.backoff_initial = std::chrono::milliseconds(100);
    ChatClient c(t, cfg);
    std::vector<long long> waits;
    c.set_sleeper([&](std::chrono::milliseconds d) { waits.push_back(d.count()); });
    const auto r = c.complete_detailed(ask("x"));
    EXPECT_EQ(r.text, "done");
    EXPECT_EQ(r.retries, 2);
    EXPECT_EQ(waits, (std::vector<long long>{100, 200}));
    EXPECT_EQ(c.total_retries(), 2);
}

TEST(Client, TimeoutNamesEndpointAfterRetries)
{
    auto t = std::make_shared<MockTransport>([](const json&) -> HttpResult { throw transport_error("timed out"); },
                                             "http://slow.example");
    ChatClient c(t, fast(4, 2));
    try {
        (void)c.complete(ask("x"));
        FAIL();
    } catch (const transport_error& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("http://slow.example"), std::string::npos) << what;
        EXPECT_NE(what.find("3 attempts"), std::string::npos) << what;
    }
    EXPECT_EQ(t->calls(), 3);
}

TEST(Client, ClientErrorsAreNotRetried)
{
    auto t = std::make_shared<MockTransport>([](const json&) { return HttpResult{401, "no"}; });
    ChatClient c(t, fast());
    EXPECT_THROW((void)c.complete(ask("x")), transport_error);
    EXPECT_EQ(t->calls(), 1);
    auto limited = std::make_shared<MockTransport>([](const json&) { return HttpResult{429, "slow down"}; });
    ChatClient d(limited, fast(4, 1));
    EXPECT_THROW((void)d.complete(ask("x")), transport_error);
    EXPECT_EQ(limited->calls(), 2);
}

TEST(Client, BatchRespectsConcurrencyBound)
{
    auto t = std::make_shared<MockTransport>([](const json& body) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return HttpResult{200, completion_body(mock::last_user_text(body)).dump()};
    });
    ChatClient c(t, fast(3));
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 20; ++i) {
        reqs.push_back(ask("q" + std::to_string(i)));
    }
    const auto out = c.complete_batch(reqs);
    ASSERT_EQ(out.size(), 20u);
    for (int i = 0; i < 20; ++i) {
        ASSERT_TRUE(out[i].ok());
        EXPECT_EQ(*out[i].text, "q" + std::to_string(i));
    }
    EXPECT_LE(t->max_in_flight(), 3);
    EXPECT_GE(t->max_in_flight(), 2);
    EXPECT_TRUE(c.complete_batch({}).empty());
}

TEST(Client, BatchFailureStaysInItsSlot)
{
    auto t = std::make_shared<MockTransport>([](const json& body) {
        const auto q = mock::last_user_text(body);
        return q == "bad" ? HttpResult{400, "nope"} : HttpResult{200, completion_body(q).dump()};
    });
    ChatClient c(t, fast(2));
    const auto out = c.complete_batch({ask("a"), ask("bad"), ask("c")});
    EXPECT_TRUE(out[0].ok());
    EXPECT_FALSE(out[1].ok());
    EXPECT_NE(out[1].error.find("400"), std::string::npos);
    EXPECT_EQ(*out[2].text, "c");
}

TEST(Protocol, ResponseShapes)
{
    EXPECT_THROW((void)extract_content("not json"), protocol_error);
    EXPECT_THROW((void)extract_content(R"({"choices":[]})"), protocol_error);
    EXPECT_EQ(extract_content(R"({"choices":[{"message":{"content":null}}]})"), "");
    EXPECT_THROW((void)extract_content(R"({"choices":[{"message":{"content":3}}]})"), protocol_error);
    auto t = MockTransport::canned("x");
    ChatClient c(std::make_shared<MockTransport>([](const json&) { return HttpResult{200, R"({"choices":[]})"}; }),
                 fast());
    EXPECT_THROW((void)c.complete(ask("x")), protocol_error);
}

TEST(Protocol, RequestWireForm)
{
    ChatRequest r{"gpt-4o", {{"system", "be brief", {}}, {"user", "look", {"https://x/1.jpg"}}}};
    const auto j = to_json(r);
    EXPECT_EQ(j.at("messages")[0].at("content"), "be brief");
    const auto& parts = j.at("messages")[1].at("content");
    ASSERT_TRUE(parts.is_array());
    EXPECT_EQ(parts[0].at("text"), "look");
    EXPECT_EQ(parts[1].at("image_url").at("url"), "https://x/1.jpg");
    EXPECT_THROW(ChatRequest{}.validate(), input_error);
    EXPECT_THROW((ChatRequest{"m", {{"robot", "x", {}}}}.validate()), input_error);
    EndpointConfig bad;
    bad.max_in_flight = 0;
    EXPECT_THROW(ChatClient(MockTransport::canned("x"), bad), input_error);
}

TEST(Replay, RecordThenReplayAnswersIdentically)
{
    const auto dir = temp_dir("replay");
    const auto log = dir / "log.jsonl";
    std::vector<std::string> live;
    {
        auto rec = std::make_shared<RecordingTransport>(make_mock_transport("mock:random:5"), log);
        ChatClient c(rec, fast());
        for (int i = 0; i < 10; ++i) {
            live.push_back(c.complete(ask("Candidate videos for the next watch: \n1. a\n2. b\n3. c " +
                                          std::to_string(i))));
        }
    }
    auto replay = std::make_shared<ReplayTransport>(log);
    ChatClient c(replay, fast());
    for (int i = 0; i < 10; ++i) {
        EXPECT_EQ(c.complete(ask("Candidate videos for the next watch: \n1. a\n2. b\n3. c " + std::to_string(i))),
                  live[static_cast<std::size_t>(i)]);
    }
    EXPECT_THROW((void)c.complete(ask("never recorded")), transport_error);
    EXPECT_EQ(replay->misses(), 1u);
}

TEST(Replay, QueuedResponsesInOrderThenSticky)
{
    const auto dir = temp_dir("replay_queue");
    const auto log = dir / "log.jsonl";
    const auto req = to_json(ask("same"));
    {
        std::ofstream out(log);
        for (const char* t : {"first", "second"}) {
            out << json{{"request", req}, {"response", completion_body(t)}}.dump() << '\n';
        }
    }
    ChatClient c(std::make_shared<ReplayTransport>(log), fast());
    EXPECT_EQ(c.complete(ask("same")), "first");
    EXPECT_EQ(c.complete(ask("same")), "second");
    EXPECT_EQ(c.complete(ask("same")), "second");
}

TEST(MockEndpoints, Behaviour)
{
    const std::string sel = "x\nCandidate videos for the next watch: \n1. a\n2. b\n3. c\n4. d";
    EXPECT_EQ(mock::count_candidates(sel), 4u);
    EXPECT_EQ(mock::count_candidates("Recommended video: \n1. a"), 0u);
    ChatClient yes(make_mock_transport("mock:yes"), fast());
    EXPECT_NE(yes.complete(ask("Recommended video: \n1. a")).find("Preference: Yes"), std::string::npos);
    ChatClient r1(make_mock_transport("mock:random:1"), fast());
    ChatClient r2(make_mock_transport("mock:random:1"), fast());
    EXPECT_EQ(r1.complete(ask(sel)), r2.complete(ask(sel)));
    EXPECT_THROW((void)make_mock_transport("mock:oracle"), input_error);
}
