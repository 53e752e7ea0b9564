#pragma once

// GRPO training loop: sample a group of responses per episode, score the
// rendered transcripts with the rule-based rewards, normalize within each
// group, then take one ascent step per batch of episodes on the clipped surrogate.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "usersim/grpo.hpp"
#include "usersim/rewards.hpp"
#include "usersim/synthetic.hpp"
#include "usersim/toy_policy.hpp"

namespace usersim::grpo {

enum class TaskMode { curriculum, judgment, selection };

[[nodiscard]] inline TaskMode parse_task_mode(std::string_view s)
{
    if (s == "curriculum") {
        return TaskMode::curriculum;
    }
    if (s == "judgment") {
        return TaskMode::judgment;
    }
    if (s == "selection") {
        return TaskMode::selection;
    }
    throw input_error("unknown task mode '" + std::string(s) + "' (expected curriculum, judgment or selection)");
}

struct TrainConfig {
    GrpoConfig grpo;
    std::size_t iterations = 2000;
    std::uint64_t seed = 0;
    TaskMode mode = TaskMode::curriculum;
    /// Episodes (prompts) per iteration, each with its own group of rollouts.
    std::size_t batch_size = 16;
    /// Share of iterations that are judgment-only before selection joins.
    double judgment_fraction = 0.5;
};

struct TraceRow {
    std::size_t iter = 0;
    double mean_reward = 0.0;
    double accuracy = 0.0;
    double objective = 0.0;
    std::string task;  ///< judgment | selection
    std::string phase; ///< judgment-only | mixed | judgment | selection

    friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    std::optional<std::size_t> switch_iteration; ///< first mixed-phase iteration
};

[[nodiscard]] inline json to_json(const TraceRow& r)
{
    return json{{"iter", r.iter},         {"mean_reward", r.mean_reward}, {"accuracy", r.accuracy},
                {"objective", r.objective}, {"task", r.task},             {"phase", r.phase}};
}

/// Index of the option with the highest current log-probability.
[[nodiscard]] inline std::size_t greedy_option(const PolicyInterface& policy, const Observation& obs)
{
    std::size_t best = 0;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < obs.options.size(); ++k) {
        const double lp = policy.log_probs(obs, TokenSeq{static_cast<int>(k)}, PolicyRole::current).front();
        if (lp > best_lp) {
            best_lp = lp;
            best = k;
        }
    }
    return best;
}

/// Greedy accuracy, scored through the same render/parse path as training.
[[nodiscard]] inline double evaluate_policy(const PolicyInterface& policy,
                                            const std::vector<env::TrainingEpisode>& episodes)
{
    if (episodes.empty()) {
        return 0.0;
    }
    std::size_t correct = 0;
    for (const auto& te : episodes) {
        const auto text = ToySoftmaxPolicy::render_response(te.episode.task, greedy_option(policy, te.observation));
        const auto parsed = parse_response(text, te.episode.task, te.episode.candidate_texts);
        correct += action_correct(parsed, te.episode.task) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(episodes.size());
}

/// Samples a group for one episode and fills rewards, advantages and the
/// old/reference log-probabilities. Sampling happens under the current
/// parameters, which equal the old snapshot at this point.
inline RolloutGroup collect_group(const env::TrainingEpisode& te, const PolicyInterface& policy,
                                  const GrpoConfig& cfg, std::mt19937_64& rng, double* accuracy = nullptr)
{
    RolloutGroup group;
    group.observation = te.observation;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
        auto sample = policy.sample_response(te.observation, rng);
        const auto option = static_cast<std::size_t>(sample.tokens.front());
        const auto text = ToySoftmaxPolicy::render_response(te.episode.task, option);
        const auto parsed = parse_response(text, te.episode.task, te.episode.candidate_texts);
        group.rewards.push_back(total_reward(text, te.episode.task, te.episode.candidate_texts).total);
        correct += action_correct(parsed, te.episode.task) ? 1 : 0;
        group.logp_ref.push_back(policy.log_probs(te.observation, sample.tokens, PolicyRole::reference));
        group.logp_old.push_back(sample.logp);
        group.logp_current.push_back(sample.logp);
        group.responses.push_back(std::move(sample.tokens));
    }
    group.advantages = normalize_advantages(group.rewards, cfg.std_floor);
    if (accuracy != nullptr) {
        *accuracy = static_cast<double>(correct) / static_cast<double>(cfg.group_size);
    }
    return group;
}

/// Runs `cfg.iterations` GRPO steps. The reference policy is frozen at the
/// start; the old policy is refreshed every iteration. Under the curriculum
/// the first `judgment_fraction` of iterations are judgment-only, then
/// judgment and selection are interleaved uniformly at random.
inline TrainResult train(env::EpisodeStream& stream, PolicyInterface& policy, const TrainConfig& cfg)
{
    cfg.grpo.validate();
    if (cfg.iterations < 1) {
        throw input_error("training needs at least one iteration");
    }
    if (cfg.batch_size < 1) {
        throw input_error("batch size must be at least 1");
    }
    if (!(cfg.judgment_fraction >= 0.0 && cfg.judgment_fraction <= 1.0)) {
        throw input_error("judgment fraction must lie in [0, 1]");
    }
    std::mt19937_64 rng(cfg.seed);
    std::bernoulli_distribution coin(0.5);
    policy.freeze_reference();

    TrainResult result;
    const auto switch_at = static_cast<std::size_t>(cfg.judgment_fraction * static_cast<double>(cfg.iterations));
    if (cfg.mode == TaskMode::curriculum && switch_at < cfg.iterations) {
        result.switch_iteration = switch_at;
    }

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        bool judgment = false;
        std::string phase;
        switch (cfg.mode) {
        case TaskMode::judgment:
            judgment = true;
            phase = "judgment";
            break;
        case TaskMode::selection:
            phase = "selection";
            break;
        case TaskMode::curriculum:
            if (it < switch_at) {
                judgment = true;
                phase = "judgment-only";
            } else {
                judgment = coin(rng);
                phase = "mixed";
            }
            break;
        }

        policy.snapshot_old();
        TraceRow row;
        row.iter = it;
        row.task = judgment ? "judgment" : "selection";
        row.phase = phase;

        // one group per episode; the step ascends the batch-mean surrogate
        std::vector<double> grad(policy.parameters().size(), 0.0);
        std::size_t responses = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto te = stream.draw(judgment, rng);
            double accuracy = 0.0;
            auto group = collect_group(te, policy, cfg.grpo, rng, &accuracy);
            row.accuracy += accuracy;
            for (double r : group.rewards) {
                row.mean_reward += r;
            }
            responses += group.size();
            row.objective += surrogate_objective(group, cfg.grpo);
            const auto g = objective_gradient(group, cfg.grpo, policy);
            for (std::size_t p = 0; p < grad.size(); ++p) {
                grad[p] += g[p];
            }
        }
        const auto batch = static_cast<double>(cfg.batch_size);
        row.accuracy /= batch;
        row.objective /= batch;
        row.mean_reward /= static_cast<double>(responses);
        for (auto& g : grad) {
            g /= batch;
        }
        policy.apply_gradient(grad, cfg.grpo.learning_rate);
        result.trace.push_back(std::move(row));
    }
    return result;
}

} // namespace usersim::grpo
