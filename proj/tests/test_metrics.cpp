#include <random>

#include <gtest/gtest.h>

#include "rec_support.hpp"

using namespace usersim;
using namespace usersim::rec;
using namespace testing_support;

TEST(MetricsProperty, RankingMetricsMatchOracle)
{
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto c = metric_oracle_check(seed);
        ASSERT_LT(c.max_error, 1e-12) << seed;
        ASSERT_TRUE(c.hr_monotone) << seed;
    }
}

TEST(Metrics, F1)
{
    EXPECT_NEAR(f1_score(0.697, 0.760), 0.727, 0.0005);
    EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
    EXPECT_EQ(f1_score(1.0, 1.0), 1.0);
}

TEST(Metrics, NdcgAtRank)
{
    EXPECT_EQ(ndcg_at(1, 10), 1.0);
    EXPECT_NEAR(ndcg_at(3, 10), 0.5, 1e-15);
    EXPECT_EQ(ndcg_at(11, 10), 0.0);
}

TEST(Metrics, Classification)
{
    using L = Label;
    const auto m = classification_metrics({L::like, L::like, L::dislike, L::dislike, L::like},
                                          {L::like, L::dislike, L::like, L::dislike, L::like});
    EXPECT_NEAR(m.acc, 0.6, 1e-15);
    EXPECT_NEAR(m.precision, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.recall, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
    const auto yes = classification_metrics({L::like, L::like}, {L::like, L::dislike});
    EXPECT_EQ(yes.recall, 1.0);
    EXPECT_THROW((void)classification_metrics({}, {}), input_error);
    EXPECT_THROW((void)classification_metrics({L::like}, {}), input_error);
}

TEST(Metrics, ColdSliceCountsShortHistories)
{
    std::mt19937_64 rng(8);
    const auto log = random_log(rng, 40, 30);
    std::size_t cold = 0;
    for (const auto& h : log.histories) {
        cold += h.size() - 1 <= 5 ? 1 : 0;
    }
    auto g = make_generator(GeneratorKind::popularity);
    g->fit(log.histories, log.catalog);
    const auto r = evaluate_leave_one_out(*g, log.histories, {10}, Slice::cold);
    EXPECT_EQ(r.users, cold);
    EXPECT_EQ(r.slice, "cold");
    EXPECT_LT(cold, log.histories.size());
    EXPECT_THROW((void)parse_slice("warm"), input_error);
}

TEST(Metrics, RandomRankerBaseline)
{
    const std::vector<UserRank> ranks{{UserId("a"), 1, 20}, {UserId("b"), 3, 5}};
    EXPECT_NEAR(random_ranker_hr(ranks, 10), (10.0 / 20.0 + 1.0) / 2.0, 1e-15);
    EXPECT_EQ(random_ranker_hr({}, 10), 0.0);
}

TEST(Metrics, ReportJson)
{
    MetricReport r;
    r.users = 2;
    r.hr_at_k[10] = 0.5;
    r.ndcg_at_k[10] = 0.25;
    r.selection_acc[3] = 0.4;
    const auto j = to_json(r);
    EXPECT_EQ(j.at("hr@10"), 0.5);
    EXPECT_EQ(j.at("ndcg@10"), 0.25);
    EXPECT_EQ(j.at("selection_acc@m=3"), 0.4);
}

TEST(Rerank, HeldOutFeedbackDoesNotHurt)
{
    std::mt19937_64 rng(21);
    const auto log = random_log(rng, 40, 40);
    std::vector<Feedback> fb;
    for (const auto& h : log.histories) {
        fb.push_back({h.user(), h.target().item});
    }
    for (auto kind : {GeneratorKind::popularity, GeneratorKind::markov}) {
        const auto r = rerank_with_feedback(kind, log.histories, log.catalog, fb, {10});
        EXPECT_GE(r.after.hr_at_k.at(10), r.before.hr_at_k.at(10));
        const auto same = rerank_with_feedback(kind, log.histories, log.catalog, {}, {10});
        EXPECT_EQ(same.after.hr_at_k, same.before.hr_at_k);
        EXPECT_EQ(same.after.ndcg_at_k, same.before.ndcg_at_k);
    }
}
