#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "rec_support.hpp"

using namespace usersim;
using namespace usersim::rec;
using namespace testing_support;

namespace {

Catalog catalog_of(std::initializer_list<const char*> ids)
{
    Catalog c;
    for (const char* id : ids) {
        c.emplace(ItemId(id), Item{ItemId(id), id, std::nullopt, std::nullopt});
    }
    return c;
}

Sequence seq(const char* user, std::initializer_list<const char*> items)
{
    Sequence s{UserId(user), {}};
    for (const char* i : items) {
        s.items.emplace_back(i);
    }
    return s;
}

} // namespace

TEST(Markov, CountsTransitions)
{
    const auto c = catalog_of({"A", "B", "C", "D"});
    MarkovGenerator g;
    g.fit(std::vector<Sequence>{seq("u1", {"A", "B"}), seq("u2", {"A", "B"}), seq("u3", {"A", "C"}),
                                seq("u4", {"D", "C"}), seq("u5", {"D", "C"})},
          c);
    const auto top = g.top_k(seq("q", {"A"}), 3);
    ASSERT_EQ(top.size(), 3u);
    EXPECT_EQ(top[0], ItemId("B"));
    EXPECT_EQ(top[1], ItemId("C"));
    EXPECT_EQ(top[2], ItemId("D"));
    EXPECT_EQ(g.rank_of(seq("q", {"A"}), ItemId("C")), 2u);
}

TEST(Popularity, TiesBreakByAscendingId)
{
    const auto c = catalog_of({"x", "y", "z", "w"});
    PopularityGenerator g;
    g.fit(std::vector<Sequence>{seq("u", {"z", "y"})}, c);
    EXPECT_EQ(g.top_k(seq("q", {}), 4), (std::vector<ItemId>{ItemId("y"), ItemId("z"), ItemId("w"), ItemId("x")}));
}

TEST(Generators, TopKExcludesHistoryAndRankKeepsTarget)
{
    std::mt19937_64 rng(5);
    const auto log = random_log(rng, 30, 25);
    for (auto kind : {GeneratorKind::popularity, GeneratorKind::markov}) {
        auto g = make_generator(kind);
        g->fit(log.histories, log.catalog);
        for (const auto& h : log.histories) {
            const Sequence q{h.user(), h.profile_items()};
            const auto top = g->top_k(q, 10);
            for (const auto& id : top) {
                EXPECT_EQ(std::count(q.items.begin(), q.items.end(), id), 0);
            }
            // a target that is also in the history is still ranked
            const auto r = g->rank_of(q, q.items.front());
            EXPECT_GE(r, 1u);
            EXPECT_LE(r, g->eligible_count(q, q.items.front()));
        }
    }
}

TEST(Generators, RankMatchesOracle)
{
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto check = metric_oracle_check(seed);
        EXPECT_LT(check.max_error, 1e-12) << seed;
    }
}

TEST(Generators, ErrorsBeforeFitAndOnEmpty)
{
    MarkovGenerator g;
    EXPECT_THROW((void)g.top_k(seq("q", {}), 3), error);
    EXPECT_THROW(g.fit(std::vector<Sequence>{}, catalog_of({"a"})), input_error);
    EXPECT_THROW((void)parse_generator_kind("bert4rec"), input_error);
}

TEST(Embedding, UsesFeatureSimilarity)
{
    auto c = catalog_of({"a", "b", "c"});
    c.at(ItemId("a")).feature = std::vector<double>{1, 0};
    c.at(ItemId("b")).feature = std::vector<double>{0.9, 0.1};
    c.at(ItemId("c")).feature = std::vector<double>{-1, 0};
    EmbeddingGenerator g;
    g.fit(std::vector<Sequence>{seq("u", {"a", "c"})}, c);
    EXPECT_EQ(g.top_k(seq("q", {"a"}), 1).front(), ItemId("b"));
}

TEST(Features, JsonlAndBinaryRoundTrip)
{
    auto c = catalog_of({"a", "b"});
    attach_text_features(c, 16);
    const auto dir = temp_dir("features");
    std::ofstream(dir / "f.jsonl") << [&] {
        std::ostringstream s;
        write_features_jsonl(s, c);
        return s.str();
    }();
    write_features_binary(dir / "f.bin", c);
    for (const auto* name : {"f.jsonl", "f.bin"}) {
        auto d = catalog_of({"a", "b", "zz"});
        d.erase(ItemId("zz"));
        const auto rep = load_features(d, dir / name);
        EXPECT_EQ(rep.attached, 2u) << name;
        for (const auto& [id, item] : d) {
            ASSERT_TRUE(item.feature);
            for (std::size_t k = 0; k < 16; ++k) {
                EXPECT_NEAR((*item.feature)[k], (*c.at(id).feature)[k], 1e-7);
            }
        }
    }
    std::ofstream(dir / "bad.bin") << "nope";
    EXPECT_THROW((void)load_features(c, dir / "bad.bin"), input_error);
    std::ofstream(dir / "nan.jsonl") << R"({"item":"a","vec":[1,"x"]})" << '\n';
    EXPECT_THROW((void)load_features(c, dir / "nan.jsonl"), input_error);
}

TEST(Feedback, AugmentsWithFreshOrdinals)
{
    const auto c = catalog_of({"a", "b", "c", "d"});
    std::vector<UserHistory> hs{UserHistory(UserId("u"), {{ItemId("a"), std::nullopt, 1}, {ItemId("b"), std::nullopt, 9}})};
    const std::vector<Feedback> fb{{UserId("u"), ItemId("c")}, {UserId("u"), ItemId("d")}, {UserId("u"), ItemId("c")}};
    const auto out = augment_with_feedback(hs, fb, c);
    ASSERT_EQ(out.value.size(), 1u);
    const auto& b = out.value[0].behaviors();
    ASSERT_EQ(b.size(), 4u);
    EXPECT_EQ(b[2].item, ItemId("c"));
    EXPECT_EQ(b[2].timestamp, 10);
    EXPECT_EQ(b[3].timestamp, 11);
    EXPECT_EQ(out.warnings.size(), 1u);
    EXPECT_EQ(augment_with_feedback(hs, {}, c).value, hs);
    EXPECT_THROW((void)augment_with_feedback(hs, {{UserId("v"), ItemId("a")}}, c), input_error);
    EXPECT_THROW((void)augment_with_feedback(hs, {{UserId("u"), ItemId("q")}}, c), input_error);
}
