#include <gtest/gtest.h>

#include "cli_support.hpp"

using namespace usersim;
using namespace testing_support;

namespace {

std::vector<std::string> data_args()
{
    return {"--interactions", (data_dir / "interactions.jsonl").string(), "--items",
            (data_dir / "items.jsonl").string()};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST(Cli, ExitCodes)
{
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(run_cli({"eval-rec", "--k", "ten"}).code, 2);
    const auto dir = temp_dir("cli_missing");
    const auto r = run_cli({"eval-rec", "--interactions", (dir / "nope.jsonl").string(), "--run-dir", dir.string()});
    EXPECT_EQ(r.code, 2);
    const auto m = read_json(dir / "manifest.json");
    EXPECT_NE(m.at("status").get<std::string>().find("input error"), std::string::npos);
}

TEST(Cli, EvalRecBeatsRandomAndWritesManifest)
{
    const auto dir = temp_dir("cli_evalrec");
    const auto r = run_cli(concat({"eval-rec", "--run-dir", dir.string(), "--slice", "all,cold"}, data_args()));
    ASSERT_EQ(r.code, 0) << r.log;
    const auto report = read_json(dir / "report.json");
    const auto& all = report.at("reports")[0];
    EXPECT_EQ(all.at("slice"), "all");
    EXPECT_GT(all.at("hr@10").get<double>(), all.at("random_hr@10").get<double>());
    EXPECT_GE(all.at("hr@20").get<double>(), all.at("hr@10").get<double>());

    const auto log = load_interactions(data_dir / "interactions.jsonl");
    std::size_t cold = 0;
    for (const auto& h : log.histories) {
        cold += h.size() - 1 <= 5 ? 1 : 0;
    }
    EXPECT_EQ(report.at("reports")[1].at("users").get<std::size_t>(), cold);

    const auto m = read_json(dir / "manifest.json");
    EXPECT_EQ(m.at("command"), "eval-rec");
    EXPECT_EQ(m.at("status"), "ok");
    for (const char* key : {"config", "inputs", "outputs", "seeds", "summary"}) {
        EXPECT_TRUE(m.contains(key)) << key;
    }
    EXPECT_EQ(m.at("inputs").at("interactions").at("sha256").get<std::string>().size(), 64u);
    EXPECT_TRUE(std::filesystem::exists(dir / "config.toml"));
}

TEST(Cli, ConfigFileReproducesRun)
{
    const auto a = temp_dir("cli_cfg_a");
    const auto b = temp_dir("cli_cfg_b");
    ASSERT_EQ(run_cli(concat({"eval-rec", "--run-dir", a.string(), "--model", "popularity", "--k", "5,10"}, data_args()))
                  .code,
              0);
    ASSERT_EQ(run_cli({"--config", (a / "config.toml").string(), "eval-rec", "--run-dir", b.string()}).code, 0);
    EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
}

TEST(Cli, SimulateAlwaysYesHasFullRecall)
{
    const auto dir = temp_dir("cli_yes");
    const auto r = run_cli({"simulate", "--episodes", (data_dir / "episodes.jsonl").string(), "--endpoint", "mock:yes",
                            "--run-dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto m = read_json(dir / "metrics.json");
    EXPECT_EQ(m.at("judgment").at("recall"), 1.0);
    EXPECT_NEAR(m.at("judgment").at("precision").get<double>(), 0.5, 1e-12);
    EXPECT_EQ(m.at("errors"), 0);
}

TEST(Cli, SimulatePerfectReplayScoresOne)
{
    const auto dir = temp_dir("cli_perfect");
    const auto eps = env::read_episodes(data_dir / "episodes.jsonl");
    write_perfect_replay(eps, dir / "perfect.jsonl");
    const auto r = run_cli({"simulate", "--episodes", (data_dir / "episodes.jsonl").string(), "--replay",
                            (dir / "perfect.jsonl").string(), "--run-dir", (dir / "run").string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto m = read_json(dir / "run" / "metrics.json");
    EXPECT_EQ(m.at("judgment").at("acc"), 1.0);
    EXPECT_EQ(m.at("judgment").at("f1"), 1.0);
    EXPECT_EQ(m.at("selection").at("m=3").at("acc"), 1.0);
}

TEST(Cli, SimulateBundledReplayIsDeterministic)
{
    const auto a = temp_dir("cli_replay_a");
    const auto b = temp_dir("cli_replay_b");
    for (const auto& d : {a, b}) {
        ASSERT_EQ(run_cli({"simulate", "--episodes", (data_dir / "episodes.jsonl").string(), "--replay",
                           (data_dir / "sim_replay.jsonl").string(), "--run-dir", d.string()})
                      .code,
                  0);
    }
    EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
    EXPECT_EQ(read_json(a / "metrics.json").at("errors"), 0);
}

TEST(Cli, RerankEmptyFeedbackIsIdentity)
{
    const auto dir = temp_dir("cli_rerank_empty");
    std::ofstream(dir / "empty.jsonl") << "";
    const auto r = run_cli(concat({"rerank", "--feedback", (dir / "empty.jsonl").string(), "--run-dir",
                                   (dir / "run").string()},
                                  data_args()));
    ASSERT_EQ(r.code, 0) << r.log;
    const auto before = read_json(dir / "run" / "before.json");
    const auto after = read_json(dir / "run" / "after.json");
    EXPECT_EQ(before, after);
}

TEST(Cli, RerankMalformedFeedbackExitsTwo)
{
    const auto dir = temp_dir("cli_rerank_bad");
    std::ofstream(dir / "bad.jsonl") << "{\"user\": 3}\n";
    const auto r = run_cli(
        concat({"rerank", "--feedback", (dir / "bad.jsonl").string(), "--run-dir", (dir / "run").string()}, data_args()));
    EXPECT_EQ(r.code, 2);
    std::ofstream(dir / "unknown.jsonl") << R"({"user":"nobody","item":"x"})" << '\n';
    EXPECT_EQ(run_cli(concat({"rerank", "--feedback", (dir / "unknown.jsonl").string(), "--run-dir",
                              (dir / "run2").string()},
                             data_args()))
                  .code,
              2);
}

TEST(Cli, TrainToyShortRun)
{
    const auto dir = temp_dir("cli_toy");
    const auto r = run_cli({"train-toy", "--iters", "20", "--users", "40", "--items", "60", "--run-dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.log;
    const auto s = read_json(dir / "summary.json");
    EXPECT_EQ(s.at("switch_iteration"), 10);
    EXPECT_TRUE(std::filesystem::exists(dir / "trace.jsonl"));
    EXPECT_EQ(run_cli({"train-toy", "--mode", "sideways", "--iters", "2", "--run-dir", dir.string()}).code, 2);
}

TEST(Cli, AugmentResumesFromExistingCaptions)
{
    const auto dir = temp_dir("cli_augment");
    const auto args = concat({"augment", "--frame-scores", (data_dir / "frame_scores.jsonl").string(), "--endpoint",
                              "mock:caption", "--out", (dir / "captions.jsonl").string(), "--run-dir",
                              (dir / "run").string()},
                             data_args());
    // 106 of the 120 synthetic items occur in the interaction log
    const auto first = run_cli(args);
    ASSERT_EQ(first.code, 0) << first.log;
    EXPECT_NE(first.out.find("written: 106 skipped: 0 failed: 0"), std::string::npos) << first.out;
    const auto second = run_cli(args);
    EXPECT_NE(second.out.find("written: 0 skipped: 106 failed: 0"), std::string::npos) << second.out;
}
