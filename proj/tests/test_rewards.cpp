#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"
#include "usersim/toy_policy.hpp"

using namespace usersim;
using namespace testing_support;

TEST(Rewards, CanonicalTranscriptsScoreExactly)
{
    for (const auto& c : canonical_cases()) {
        const auto r = total_reward(c.transcript, c.task);
        EXPECT_EQ(r, c.expected) << c.name;
        EXPECT_EQ(r.total, r.r_format + r.r_task) << c.name;
    }
}

TEST(Rewards, ParseExamples)
{
    auto p = parse_response("<think>likes cooking</think><answer>Yes</answer>", judgment(Label::like));
    EXPECT_TRUE(p.tag_order_ok);
    EXPECT_EQ(p.action, Action::yes());
    EXPECT_EQ(p.think_text, "likes cooking");

    p = parse_response("<answer>2</answer><think>x</think>", selection(4, 1));
    EXPECT_FALSE(p.tag_order_ok);
    EXPECT_EQ(p.action, Action::select(2));

    p = parse_response("", selection(4, 1));
    EXPECT_FALSE(p.think_text || p.answer_text || p.user_status || p.action);
    EXPECT_FALSE(p.tag_order_ok);
}

TEST(Rewards, UserStatusExtracted)
{
    auto p = parse_response("<think>(1) User_status: binge-watching cooking</think><answer>(2) Preference: No</answer>",
                            judgment(Label::dislike));
    ASSERT_TRUE(p.user_status);
    EXPECT_EQ(*p.user_status, "binge-watching cooking");
    EXPECT_EQ(p.action, Action::no());
}

TEST(Rewards, JudgmentIsCaseInsensitive)
{
    for (const char* a : {"YES", "yes.", " Yes, they will", "\"yes\""}) {
        auto p = parse_response(std::string("<think>t</think><answer>") + a + "</answer>", judgment(Label::like));
        EXPECT_EQ(p.action, Action::yes()) << a;
    }
    auto p = parse_response("<think>t</think><answer>nope</answer>", judgment(Label::like));
    EXPECT_FALSE(p.action);
}

TEST(Rewards, SelectionIntegerWinsOverTitle)
{
    const std::vector<std::string> texts{"cat video", "2 dogs", "cooking", "news"};
    auto p = parse_response("<think>t</think><answer>cooking</answer>", selection(4, 3), texts);
    EXPECT_EQ(p.action, Action::select(3));
    // the title "2 dogs" contains an integer, which takes precedence
    p = parse_response("<think>t</think><answer>2 dogs</answer>", selection(4, 3), texts);
    EXPECT_EQ(p.action, Action::select(2));
    p = parse_response("<think>t</think><answer>(2) Next_video: 4</answer>", selection(4, 3), texts);
    EXPECT_EQ(p.action, Action::select(4));
    p = parse_response("<think>t</think><answer>(3)</answer>", selection(4, 3), texts);
    EXPECT_EQ(p.action, Action::select(3));
}

TEST(Rewards, SelectionOutOfRangeIsUnparseable)
{
    const auto task = selection(4, 1);
    for (const char* a : {"0", "5", "99999999999"}) {
        const auto r = total_reward(std::string("<think>t</think><answer>") + a + "</answer>", task);
        EXPECT_EQ(r.r_task, -2.0) << a;
    }
}

TEST(Rewards, OnlyFirstTagOccurrenceCounts)
{
    const auto r = total_reward("<think>a</think><answer>No</answer><answer>Yes</answer>", judgment(Label::like));
    EXPECT_EQ(r.r_task, -1.0);
}

TEST(Rewards, EmptyAnswerChargesTaskOnly)
{
    const auto r = total_reward("<think>a</think><answer></answer>", judgment(Label::like));
    EXPECT_EQ(r.r_format, 1.0);
    EXPECT_EQ(r.r_task, -1.0);
}

TEST(Rewards, RenderThenParseIsIdentityOnAction)
{
    const auto sel = selection(6, 2);
    for (std::size_t k = 0; k < 6; ++k) {
        auto p = parse_response(grpo::ToySoftmaxPolicy::render_response(sel, k), sel);
        EXPECT_EQ(p.action, Action::select(k + 1));
        EXPECT_EQ(format_reward(p), 1.0);
    }
    const auto j = judgment(Label::like);
    EXPECT_EQ(parse_response(grpo::ToySoftmaxPolicy::render_response(j, 0), j).action, Action::yes());
    EXPECT_EQ(parse_response(grpo::ToySoftmaxPolicy::render_response(j, 1), j).action, Action::no());
}

namespace {

std::string fuzz_string(std::mt19937_64& rng)
{
    static const std::vector<std::string> atoms{
        "<think>", "</think>", "<answer>", "</answer>", "Yes", "no", "1", "2", "3", "4", "17", "(2) Next_video: ",
        "(2) Preference: ", "User_status:", " ", "\n", "maybe", "<", ">", "/", "cooking", "\"", "-1", "0"};
    std::uniform_int_distribution<std::size_t> len(0, 12);
    std::uniform_int_distribution<std::size_t> pick(0, atoms.size() - 1);
    std::uniform_int_distribution<int> byte(0, 255);
    std::string s;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng() % 8 == 0) {
            s += static_cast<char>(byte(rng));
        } else {
            s += atoms[pick(rng)];
        }
    }
    return s;
}

} // namespace

TEST(RewardsProperty, FuzzedTranscriptsStayInTheTables)
{
    std::mt19937_64 rng(20240521);
    const std::set<double> formats{1.0, 0.5, 0.0, -1.0};
    const std::set<double> judg{1.0, -1.0};
    const std::set<double> sel{2.0, -1.5, -2.0};
    const auto like = judgment(Label::like);
    const auto pick = selection(4, 2);
    for (int i = 0; i < 100000; ++i) {
        const auto s = fuzz_string(rng);
        const auto j = total_reward(s, like);
        ASSERT_TRUE(formats.contains(j.r_format)) << s;
        ASSERT_TRUE(judg.contains(j.r_task)) << s;
        ASSERT_EQ(j.total, j.r_format + j.r_task);
        ASSERT_TRUE(j.total >= -2.0 && j.total <= 2.0);

        const auto r = total_reward(s, pick);
        ASSERT_TRUE(formats.contains(r.r_format)) << s;
        ASSERT_TRUE(sel.contains(r.r_task)) << s;
        ASSERT_EQ(r.total, r.r_format + r.r_task);
        ASSERT_TRUE(r.total >= -3.0 && r.total <= 3.0);

        const auto p = parse_response(s, pick);
        if (p.action) {
            ASSERT_TRUE(p.answer_text.has_value());
            ASSERT_GE(p.action->index, 1u);
            ASSERT_LE(p.action->index, 4u);
        }
        if (p.tag_order_ok) {
            ASSERT_TRUE(p.think_text && p.answer_text);
        }
    }
}
