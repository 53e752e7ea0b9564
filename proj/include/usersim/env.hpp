#pragma once

// Simulated recommendation environment: a recall model proposes top-k items,
// m of them become negatives next to the user's real next item, and the
// episode prompt asks the simulator to judge or select.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "usersim/core.hpp"
#include "usersim/recommender.hpp"

namespace usersim::env {

struct EnvConfig {
    std::size_t top_k = 10;
    std::size_t m = 3;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (m < 1 || m > top_k) {
            throw input_error("m must satisfy 1 <= m <= top_k (m=" + std::to_string(m) +
                              ", top_k=" + std::to_string(top_k) + ")");
        }
    }
};

/// Draws m negatives uniformly without replacement from `recalled` minus
/// the positive, then shuffles positive and negatives together.
inline CandidateSet build_candidate_set(const std::vector<ItemId>& recalled, const ItemId& positive, std::size_t m,
                                        std::uint64_t seed)
{
    std::vector<ItemId> pool;
    pool.reserve(recalled.size());
    for (const auto& id : recalled) {
        if (id != positive && std::find(pool.begin(), pool.end(), id) == pool.end()) {
            pool.push_back(id);
        }
    }
    if (pool.size() < m) {
        throw input_error("only " + std::to_string(pool.size()) + " eligible negatives for m=" + std::to_string(m));
    }
    std::mt19937_64 rng(seed);
    // partial Fisher-Yates: the first m slots become the sample
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    CandidateSet c;
    c.positive = positive;
    c.negatives.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    c.presentation_order = c.negatives;
    c.presentation_order.push_back(positive);
    for (std::size_t i = c.presentation_order.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(c.presentation_order[i], c.presentation_order[pick(rng)]);
    }
    c.rng_seed = seed;
    return c;
}

enum class EpisodeKind { judgment_positive, judgment_negative, selection };

struct Episode {
    UserId user;
    std::vector<BehaviorRecord> profile;
    TaskKind task;
    std::string prompt;
    /// Rendered candidates in presentation order (one entry for judgment).
    std::vector<std::string> candidate_texts;

    [[nodiscard]] bool judgment() const noexcept { return is_judgment(task); }
};

// ---------------------------------------------------------------------------
// Prompt rendering

namespace prompts {

inline constexpr std::string_view preamble =
    "You are a helpful assistant. The assistant first thinks about the user's video watching history and the "
    "comments, analyzes their current status, such as preferences and purpose, and predicts: ";

inline constexpr std::string_view selection_goal =
    "which video they are most likely to watch next from the given candidates. ";

inline constexpr std::string_view judgment_goal = "if they like the next video. ";

inline constexpr std::string_view format_rules =
    "The reasoning process and answer are enclosed within <think> </think> and <answer> </answer> tags, "
    "respectively, i.e., <think> reasoning process here </think><answer> answer here </answer>. After thinking, "
    "when you finally reach a conclusion, give the user status and the answer you predict within <answer> "
    "</answer> tags. ";

inline constexpr std::string_view selection_answer =
    "i.e., <think> (1) User_status:... </think><answer>(2) Next_video:... </answer>.";

inline constexpr std::string_view judgment_answer =
    "i.e., <think> (1) User_status:... </think><answer>(2) Preference: Yes or No </answer>.";

} // namespace prompts

/// One numbered line per behavior; an absent comment renders as an empty field.
inline std::string render_history(std::span<const BehaviorRecord> profile, const Catalog& catalog)
{
    std::string out;
    for (std::size_t i = 0; i < profile.size(); ++i) {
        const auto& item = lookup(catalog, profile[i].item);
        out += "\n" + std::to_string(i + 1) + ". " + item.display_text() +
               " | comment: " + profile[i].comment.value_or("");
    }
    return out;
}

inline std::string render_candidates(const std::vector<std::string>& texts)
{
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        out += "\n" + std::to_string(i + 1) + ". " + texts[i];
    }
    return out;
}

inline std::string user_simulation_prompt(bool judgment, const std::string& history_str,
                                          const std::string& candidates_str)
{
    std::string p(prompts::preamble);
    p += judgment ? prompts::judgment_goal : prompts::selection_goal;
    p += prompts::format_rules;
    p += judgment ? prompts::judgment_answer : prompts::selection_answer;
    p += "\nUser's viewing history: " + history_str;
    p += judgment ? "\nRecommended video: " : "\nCandidate videos for the next watch: ";
    p += candidates_str;
    return p;
}

[[nodiscard]] inline std::uint64_t episode_seed(std::uint64_t root, const UserId& user, EpisodeKind kind)
{
    return mix_seed(root ^ fnv1a(user.str()), static_cast<std::uint64_t>(kind));
}

/// Builds one episode from a user's history. The profile is behaviors
/// 1..N-1; the generator's top-k for that profile supplies negatives.
inline Episode make_episode(const UserHistory& history, const Catalog& catalog, EpisodeKind kind,
                            const EnvConfig& cfg, const rec::CandidateGenerator& generator)
{
    cfg.validate();
    const auto profile = history.profile();
    const auto& positive = history.target().item;
    (void)lookup(catalog, positive);
    rec::Sequence query{history.user(), history.profile_items()};
    auto recalled = generator.top_k(query, cfg.top_k);
    const auto seed = episode_seed(cfg.seed, history.user(), kind);

    Episode ep;
    ep.user = history.user();
    ep.profile.assign(profile.begin(), profile.end());
    const auto history_str = render_history(profile, catalog);

    if (kind == EpisodeKind::selection) {
        auto candidates = build_candidate_set(recalled, positive, cfg.m, seed);
        for (const auto& id : candidates.presentation_order) {
            ep.candidate_texts.push_back(lookup(catalog, id).display_text());
        }
        ep.task = SelectionTask{std::move(candidates)};
    } else {
        ItemId item = positive;
        Label label = Label::like;
        if (kind == EpisodeKind::judgment_negative) {
            item = build_candidate_set(recalled, positive, 1, seed).negatives.front();
            label = Label::dislike;
        }
        ep.candidate_texts.push_back(lookup(catalog, item).display_text());
        ep.task = JudgmentTask{item, label};
    }
    ep.prompt = user_simulation_prompt(ep.judgment(), history_str, render_candidates(ep.candidate_texts));
    return ep;
}

/// One liked (true next item) and one disliked (sampled negative) episode.
inline std::vector<Episode> make_judgment_pair(const UserHistory& history, const Catalog& catalog,
                                               const EnvConfig& cfg, const rec::CandidateGenerator& generator)
{
    return {make_episode(history, catalog, EpisodeKind::judgment_positive, cfg, generator),
            make_episode(history, catalog, EpisodeKind::judgment_negative, cfg, generator)};
}

// ---------------------------------------------------------------------------
// JSONL export

inline json to_json(const Episode& ep)
{
    json j;
    j["user"] = ep.user.str();
    if (const auto* t = std::get_if<JudgmentTask>(&ep.task)) {
        j["task"] = "judgment";
        j["prompt"] = ep.prompt;
        j["truth"] = std::string(to_string(t->label));
        j["item"] = t->item.str();
    } else {
        const auto& c = std::get<SelectionTask>(ep.task).candidates;
        j["task"] = "selection";
        j["prompt"] = ep.prompt;
        j["truth"] = c.truth_index();
        json ids = json::array();
        for (const auto& id : c.presentation_order) {
            ids.push_back(id.str());
        }
        j["candidates"] = ids;
        j["seed"] = c.rng_seed;
    }
    j["candidate_texts"] = ep.candidate_texts;
    return j;
}

inline Episode episode_from_json(const json& j)
{
    Episode ep;
    ep.user = UserId(j.at("user").get<std::string>());
    ep.prompt = j.at("prompt").get<std::string>();
    ep.candidate_texts = j.value("candidate_texts", std::vector<std::string>{});
    const auto task = j.at("task").get<std::string>();
    if (task == "judgment") {
        const auto truth = j.at("truth").get<std::string>();
        if (truth != "like" && truth != "dislike") {
            throw input_error("judgment truth must be like or dislike, got '" + truth + "'");
        }
        ep.task = JudgmentTask{ItemId(j.value("item", std::string("?"))),
                               truth == "like" ? Label::like : Label::dislike};
    } else if (task == "selection") {
        const auto ids = j.at("candidates").get<std::vector<std::string>>();
        const auto truth = j.at("truth").get<std::size_t>();
        if (truth < 1 || truth > ids.size()) {
            throw input_error("selection truth index out of range");
        }
        CandidateSet c;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            c.presentation_order.emplace_back(ids[i]);
            if (i + 1 == truth) {
                c.positive = ItemId(ids[i]);
            } else {
                c.negatives.emplace_back(ids[i]);
            }
        }
        c.rng_seed = j.value("seed", std::uint64_t{0});
        ep.task = SelectionTask{std::move(c)};
    } else {
        throw input_error("unknown task '" + task + "'");
    }
    return ep;
}

inline void write_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes)
{
    std::ofstream out(path);
    if (!out) {
        throw input_error("cannot write '" + path.string() + "'");
    }
    for (const auto& ep : episodes) {
        out << to_json(ep).dump() << '\n';
    }
}

inline std::vector<Episode> read_episodes(const std::filesystem::path& path)
{
    auto in = usersim::detail::open_input(path);
    std::vector<Episode> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (usersim::detail::blank(line)) {
            continue;
        }
        try {
            out.push_back(episode_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw input_error(usersim::detail::at_line(path, lineno) + "malformed episode: " + e.what());
        }
    }
    return out;
}

} // namespace usersim::env
