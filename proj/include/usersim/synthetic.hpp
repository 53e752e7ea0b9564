#pragma once

// A small latent-factor world with oracle users: user u prefers item v in
// proportion to u.v, picks argmax u.v from whatever pool it is shown, and
// likes an item when u.v exceeds a threshold.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "usersim/core.hpp"
#include "usersim/env.hpp"
#include "usersim/grpo.hpp"
#include "usersim/recommender.hpp"

namespace usersim::env {

struct WorldOptions {
    std::size_t min_history = 3;
    std::size_t max_history = 12;
    std::size_t pool_size = 20;
    double noise = 0.0;          ///< Gumbel scale on oracle choices
    double like_threshold = 0.0; ///< like iff u.v > threshold
    double comment_rate = 0.5;
};

class SyntheticWorld {
public:
    std::size_t dim = 0;
    double like_threshold = 0.0;
    double noise = 0.0;
    std::vector<std::vector<double>> users;
    std::vector<std::vector<double>> items;
    std::vector<UserId> user_ids;
    std::vector<ItemId> item_ids;
    Catalog catalog;
    std::vector<UserHistory> histories;
    /// pools[u][t] = items the user chose behavior t from
    std::vector<std::vector<std::vector<std::size_t>>> pools;

    [[nodiscard]] double affinity(std::size_t u, std::size_t i) const
    {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            s += users[u][k] * items[i][k];
        }
        return s;
    }

    [[nodiscard]] std::size_t user_index(const UserId& id) const { return id_index.at_user(id); }
    [[nodiscard]] std::size_t item_index(const ItemId& id) const { return id_index.at_item(id); }

    [[nodiscard]] Label like_label(std::size_t u, std::size_t i) const
    {
        return affinity(u, i) > like_threshold ? Label::like : Label::dislike;
    }

    /// Position in `pool` of the user's choice. Noise-free when `rng` is null
    /// or noise is 0.
    [[nodiscard]] std::size_t oracle_choice(std::size_t u, std::span<const std::size_t> pool,
                                            std::mt19937_64* rng = nullptr) const
    {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
        for (std::size_t k = 0; k < pool.size(); ++k) {
            double s = affinity(u, pool[k]);
            if (noise > 0.0 && rng != nullptr) {
                s += noise * -std::log(-std::log(unif(*rng)));
            }
            if (s > best_score) {
                best_score = s;
                best = k;
            }
        }
        return best;
    }

    /// Policy input: context [u, 1]; options [v_k, 1], or for judgment
    /// {[v, 1], 0} so that "No" has a fixed zero logit.
    [[nodiscard]] grpo::Observation observe(std::size_t u, std::span<const std::size_t> options,
                                            bool judgment) const
    {
        grpo::Observation obs;
        obs.context = users[u];
        obs.context.push_back(1.0);
        for (auto i : options) {
            auto v = items[i];
            v.push_back(1.0);
            obs.options.push_back(std::move(v));
        }
        if (judgment) {
            obs.options.emplace_back(dim + 1, 0.0);
        }
        return obs;
    }

    [[nodiscard]] std::size_t observation_dim() const noexcept { return dim + 1; }

    struct Index {
        std::unordered_map<std::string, std::size_t> user;
        std::unordered_map<std::string, std::size_t> item;

        std::size_t at_user(const UserId& id) const
        {
            auto it = user.find(id.str());
            if (it == user.end()) {
                throw input_error("unknown synthetic user '" + id.str() + "'");
            }
            return it->second;
        }
        std::size_t at_item(const ItemId& id) const
        {
            auto it = item.find(id.str());
            if (it == item.end()) {
                throw input_error("unknown synthetic item '" + id.str() + "'");
            }
            return it->second;
        }
    };
    Index id_index;
};

namespace detail {

inline constexpr const char* topic_words[][2] = {
    {"cooking", "fitness"},   {"travel", "gaming"},   {"comedy", "news"},     {"pets", "cars"},
    {"music", "science"},     {"dance", "history"},   {"fashion", "finance"}, {"makeup", "sports"},
    {"anime", "diy"},         {"movies", "nature"},   {"family", "tech"},     {"thriller", "romance"},
    {"outdoors", "crafts"},   {"food", "art"},        {"vlog", "education"},  {"parody", "documentary"},
};

inline std::string topic_word(std::size_t dim, double value)
{
    constexpr std::size_t n = sizeof(topic_words) / sizeof(topic_words[0]);
    std::string w = topic_words[dim % n][value >= 0.0 ? 0 : 1];
    if (dim >= n) {
        w += std::to_string(dim / n);
    }
    return w;
}

inline std::string padded(char prefix, std::size_t i, std::size_t width)
{
    auto s = std::to_string(i);
    return std::string(1, prefix) + std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

} // namespace detail

/// Builds a reproducible world. Vectors are standard normal; each user's
/// history is a sequence of oracle choices over random unwatched pools.
inline SyntheticWorld generate_synthetic_world(std::size_t n_users, std::size_t n_items, std::size_t d,
                                               std::uint64_t seed, const WorldOptions& opts = {})
{
    if (n_users < 2 || n_items < 2 || d < 1) {
        throw input_error("synthetic world needs n_users >= 2, n_items >= 2 and d >= 1");
    }
    if (opts.min_history < 2 || opts.max_history < opts.min_history || opts.max_history > n_items) {
        throw input_error("history lengths must satisfy 2 <= min <= max <= n_items");
    }
    SyntheticWorld w;
    w.dim = d;
    w.like_threshold = opts.like_threshold;
    w.noise = opts.noise;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](std::size_t n) {
        std::vector<std::vector<double>> out(n, std::vector<double>(d));
        for (auto& v : out) {
            for (auto& x : v) {
                x = normal(rng);
            }
        }
        return out;
    };
    w.users = draw(n_users);
    w.items = draw(n_items);

    // Exact ties in u.v make the noiseless oracle ambiguous; nudge them apart.
    for (int pass = 0; pass < 8; ++pass) {
        bool tied = false;
        for (std::size_t u = 0; u < n_users; ++u) {
            std::vector<std::pair<double, std::size_t>> s;
            s.reserve(n_items);
            for (std::size_t i = 0; i < n_items; ++i) {
                s.emplace_back(w.affinity(u, i), i);
            }
            std::sort(s.begin(), s.end());
            for (std::size_t k = 1; k < s.size(); ++k) {
                if (s[k].first - s[k - 1].first < 1e-12) {
                    for (auto& x : w.items[s[k].second]) {
                        x += 1e-9 * normal(rng);
                    }
                    tied = true;
                }
            }
        }
        if (!tied) {
            break;
        }
    }

    const auto uw = std::to_string(n_users).size();
    const auto iw = std::to_string(n_items).size();
    for (std::size_t i = 0; i < n_items; ++i) {
        ItemId id(detail::padded('v', i, iw));
        w.id_index.item.emplace(id.str(), i);
        w.item_ids.push_back(id);
        // title from the two strongest latent directions
        std::vector<std::size_t> dims(d);
        std::iota(dims.begin(), dims.end(), std::size_t{0});
        std::stable_sort(dims.begin(), dims.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(w.items[i][a]) > std::abs(w.items[i][b]);
        });
        std::string title = detail::topic_word(dims[0], w.items[i][dims[0]]);
        if (d > 1) {
            title += " " + detail::topic_word(dims[1], w.items[i][dims[1]]);
        }
        title += " clip " + std::to_string(i);
        Item item{id, title, std::nullopt, w.items[i]};
        w.catalog.emplace(id, std::move(item));
    }

    std::uniform_int_distribution<std::size_t> length(opts.min_history, opts.max_history);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    w.pools.resize(n_users);
    for (std::size_t u = 0; u < n_users; ++u) {
        UserId uid(detail::padded('u', u, uw));
        w.id_index.user.emplace(uid.str(), u);
        w.user_ids.push_back(uid);
        const auto n = length(rng);
        std::vector<bool> watched(n_items, false);
        std::vector<BehaviorRecord> behaviors;
        for (std::size_t t = 0; t < n; ++t) {
            std::vector<std::size_t> unwatched;
            for (std::size_t i = 0; i < n_items; ++i) {
                if (!watched[i]) {
                    unwatched.push_back(i);
                }
            }
            const auto k = std::min(opts.pool_size, unwatched.size());
            for (std::size_t j = 0; j < k; ++j) {
                std::uniform_int_distribution<std::size_t> pick(j, unwatched.size() - 1);
                std::swap(unwatched[j], unwatched[pick(rng)]);
            }
            std::vector<std::size_t> pool(unwatched.begin(), unwatched.begin() + static_cast<std::ptrdiff_t>(k));
            const auto chosen = pool[w.oracle_choice(u, pool, &rng)];
            watched[chosen] = true;
            std::optional<std::string> comment;
            if (coin(rng) < opts.comment_rate) {
                const auto& title = w.catalog.at(w.item_ids[chosen]).title;
                comment = "enjoyed this " + title.substr(0, title.find(' '));
            }
            behaviors.push_back({w.item_ids[chosen], comment, static_cast<std::int64_t>(t + 1)});
            w.pools[u].push_back(std::move(pool));
        }
        w.histories.emplace_back(uid, std::move(behaviors));
    }
    return w;
}

/// An environment episode together with its numeric policy input.
struct TrainingEpisode {
    Episode episode;
    grpo::Observation observation;
};

class EpisodeStream {
public:
    virtual ~EpisodeStream() = default;
    virtual TrainingEpisode draw(bool judgment, std::mt19937_64& rng) = 0;
};

/// Episodes over a synthetic world. Ground truth comes from the oracle:
/// for selection the oracle's pick among the presented candidates becomes
/// the positive; for judgment the label is the like threshold.
class WorldEpisodeSource final : public EpisodeStream {
public:
    WorldEpisodeSource(const SyntheticWorld& world, EnvConfig cfg, double heldout_fraction = 0.2)
        : world_(world), cfg_(cfg)
    {
        cfg_.validate();
        const auto n = world.histories.size();
        auto heldout = static_cast<std::size_t>(std::round(heldout_fraction * static_cast<double>(n)));
        heldout = std::min(heldout, n - 1);
        train_users_.resize(n - heldout);
        std::iota(train_users_.begin(), train_users_.end(), std::size_t{0});
        for (std::size_t u = n - heldout; u < n; ++u) {
            heldout_users_.push_back(u);
        }
        recall_.fit(world.histories, world.catalog);
    }

    TrainingEpisode draw(bool judgment, std::mt19937_64& rng) override
    {
        std::uniform_int_distribution<std::size_t> pick(0, train_users_.size() - 1);
        const auto u = train_users_[pick(rng)];
        EpisodeKind kind = EpisodeKind::selection;
        if (judgment) {
            kind = std::bernoulli_distribution(0.5)(rng) ? EpisodeKind::judgment_positive
                                                         : EpisodeKind::judgment_negative;
        }
        return build(u, kind, rng());
    }

    /// Fixed evaluation episodes over held-out users, `per_user` each.
    /// Judgment sets hold per_user/2 liked and per_user/2 disliked distinct
    /// items per user (users without both kinds nearby are skipped), so a
    /// constant answer scores exactly 0.5.
    [[nodiscard]] std::vector<TrainingEpisode> heldout(bool judgment, std::size_t per_user = 6) const
    {
        std::vector<TrainingEpisode> out;
        for (auto u : heldout_users_) {
            if (!judgment) {
                for (std::size_t r = 0; r < per_user; ++r) {
                    out.push_back(build(u, EpisodeKind::selection, mix_seed(cfg_.seed ^ 0x5eedULL, u * 131 + r)));
                }
                continue;
            }
            const auto quota = per_user / 2;
            std::vector<TrainingEpisode> liked;
            std::vector<TrainingEpisode> disliked;
            std::set<ItemId> used;
            for (std::size_t r = 0; r < 64 && (liked.size() < quota || disliked.size() < quota); ++r) {
                const auto kind = r % 2 == 0 ? EpisodeKind::judgment_positive : EpisodeKind::judgment_negative;
                auto te = build(u, kind, mix_seed(cfg_.seed ^ 0x5eedULL, u * 131 + r));
                const auto& task = std::get<JudgmentTask>(te.episode.task);
                if (!used.insert(task.item).second) {
                    continue;
                }
                auto& bucket = task.label == Label::like ? liked : disliked;
                if (bucket.size() < quota) {
                    bucket.push_back(std::move(te));
                }
            }
            if (liked.size() == quota && disliked.size() == quota) {
                for (std::size_t k = 0; k < quota; ++k) {
                    out.push_back(std::move(liked[k]));
                    out.push_back(std::move(disliked[k]));
                }
            }
        }
        return out;
    }

    [[nodiscard]] const EnvConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const SyntheticWorld& world() const noexcept { return world_; }

    TrainingEpisode build(std::size_t u, EpisodeKind kind, std::uint64_t seed) const
    {
        auto cfg = cfg_;
        cfg.seed = seed;
        TrainingEpisode te{make_episode(world_.histories[u], world_.catalog, kind, cfg, recall_), {}};
        if (auto* sel = std::get_if<SelectionTask>(&te.episode.task)) {
            auto& c = sel->candidates;
            std::vector<std::size_t> idx;
            for (const auto& id : c.presentation_order) {
                idx.push_back(world_.item_index(id));
            }
            const auto pick = world_.oracle_choice(u, idx);
            c.positive = c.presentation_order[pick];
            c.negatives.clear();
            for (std::size_t k = 0; k < idx.size(); ++k) {
                if (k != pick) {
                    c.negatives.push_back(c.presentation_order[k]);
                }
            }
            te.observation = world_.observe(u, idx, false);
        } else {
            auto& j = std::get<JudgmentTask>(te.episode.task);
            const auto i = world_.item_index(j.item);
            j.label = world_.like_label(u, i);
            const std::size_t one[] = {i};
            te.observation = world_.observe(u, one, true);
        }
        return te;
    }

private:
    const SyntheticWorld& world_;
    EnvConfig cfg_;
    std::vector<std::size_t> train_users_;
    std::vector<std::size_t> heldout_users_;
    rec::PopularityGenerator recall_;
};

} // namespace usersim::env
