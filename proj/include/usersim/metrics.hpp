#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usersim/recommender.hpp"

namespace usersim::rec {

/// Users with at most this many training interactions form the cold slice.
inline constexpr std::size_t cold_start_max_interactions = 5;

enum class Slice { all, cold };

[[nodiscard]] inline std::string_view to_string(Slice s) noexcept
{
    return s == Slice::all ? "all" : "cold";
}

[[nodiscard]] inline Slice parse_slice(std::string_view s)
{
    if (s == "all") {
        return Slice::all;
    }
    if (s == "cold") {
        return Slice::cold;
    }
    throw input_error("unknown slice '" + std::string(s) + "' (expected all or cold)");
}

[[nodiscard]] inline bool in_slice(const UserHistory& h, Slice s) noexcept
{
    return s == Slice::all || h.size() - 1 <= cold_start_max_interactions;
}

struct ClassificationMetrics {
    double acc = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricReport {
    std::string slice = "all";
    std::size_t users = 0;
    std::map<std::size_t, double> hr_at_k;
    std::map<std::size_t, double> ndcg_at_k;
    std::optional<ClassificationMetrics> classification;
    std::map<std::size_t, double> selection_acc; ///< keyed by m
};

/// Harmonic mean; 0 when both inputs are 0.
[[nodiscard]] inline double f1_score(double precision, double recall) noexcept
{
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

/// Binary metrics with "like" as the positive class.
inline ClassificationMetrics classification_metrics(const std::vector<Label>& predictions,
                                                    const std::vector<Label>& truths)
{
    if (predictions.empty()) {
        throw input_error("classification metrics need at least one prediction");
    }
    if (predictions.size() != truths.size()) {
        throw input_error("predictions and truths differ in length");
    }
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool p = predictions[i] == Label::like;
        const bool t = truths[i] == Label::like;
        correct += p == t ? 1 : 0;
        tp += p && t ? 1 : 0;
        fp += p && !t ? 1 : 0;
        fn += !p && t ? 1 : 0;
    }
    ClassificationMetrics m;
    m.acc = correct / static_cast<double>(predictions.size());
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

/// Binary-gain NDCG of a single relevant item at 1-based `rank`.
[[nodiscard]] inline double ndcg_at(std::size_t rank, std::size_t k) noexcept
{
    return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

struct UserRank {
    UserId user;
    std::size_t rank = 0;
    std::size_t eligible = 0; ///< size of the ranked universe for this user
};

/// Rank of each user's held-out item against the catalog minus the user's
/// training items.
inline std::vector<UserRank> leave_one_out_ranks(const CandidateGenerator& generator,
                                                 const std::vector<UserHistory>& histories, Slice slice = Slice::all)
{
    if (!generator.fitted()) {
        throw error(generator.name() + ": evaluation needs a fitted generator");
    }
    std::vector<UserRank> out;
    for (const auto& h : histories) {
        if (!in_slice(h, slice)) {
            continue;
        }
        Sequence query{h.user(), h.profile_items()};
        out.push_back({h.user(), generator.rank_of(query, h.target().item),
                       generator.eligible_count(query, h.target().item)});
    }
    return out;
}

inline MetricReport ranking_report(const std::vector<UserRank>& ranks, const std::vector<std::size_t>& ks,
                                   Slice slice)
{
    MetricReport r;
    r.slice = std::string(to_string(slice));
    r.users = ranks.size();
    for (auto k : ks) {
        double hr = 0.0;
        double ndcg = 0.0;
        for (const auto& u : ranks) {
            hr += u.rank <= k ? 1.0 : 0.0;
            ndcg += ndcg_at(u.rank, k);
        }
        const double n = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
        r.hr_at_k[k] = hr / n;
        r.ndcg_at_k[k] = ndcg / n;
    }
    return r;
}

/// HR@k and NDCG@k of a fitted generator under leave-one-out.
inline MetricReport evaluate_leave_one_out(const CandidateGenerator& generator,
                                           const std::vector<UserHistory>& histories,
                                           const std::vector<std::size_t>& ks, Slice slice = Slice::all)
{
    return ranking_report(leave_one_out_ranks(generator, histories, slice), ks, slice);
}

/// Expected HR@k of a ranker that orders the eligible items uniformly at random.
[[nodiscard]] inline double random_ranker_hr(const std::vector<UserRank>& ranks, std::size_t k)
{
    if (ranks.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& u : ranks) {
        sum += static_cast<double>(std::min(k, u.eligible)) / static_cast<double>(u.eligible);
    }
    return sum / static_cast<double>(ranks.size());
}

inline json to_json(const MetricReport& r)
{
    json j;
    j["slice"] = r.slice;
    j["users"] = r.users;
    for (const auto& [k, v] : r.hr_at_k) {
        j["hr@" + std::to_string(k)] = v;
    }
    for (const auto& [k, v] : r.ndcg_at_k) {
        j["ndcg@" + std::to_string(k)] = v;
    }
    if (r.classification) {
        j["acc"] = r.classification->acc;
        j["precision"] = r.classification->precision;
        j["recall"] = r.classification->recall;
        j["f1"] = r.classification->f1;
    }
    for (const auto& [m, v] : r.selection_acc) {
        j["selection_acc@m=" + std::to_string(m)] = v;
    }
    return j;
}

struct RerankReports {
    MetricReport before;
    MetricReport after;
    std::vector<std::string> warnings;
};

/// Leave-one-out reports of the same model fitted without and with the
/// simulator's feedback appended to the training sequences. Both runs are
/// scored against the original histories, so a feedback item that equals a
/// user's held-out item stays eligible for ranking.
inline RerankReports rerank_with_feedback(GeneratorKind kind, const std::vector<UserHistory>& histories,
                                          const Catalog& catalog, const std::vector<Feedback>& feedback,
                                          const std::vector<std::size_t>& ks, Slice slice = Slice::all)
{
    const auto base = training_sequences(histories);
    auto augmented = augment_sequences(base, feedback, catalog);
    auto before = make_generator(kind);
    before->fit(base, catalog);
    auto after = make_generator(kind);
    after->fit(augmented.value, catalog);
    return {evaluate_leave_one_out(*before, histories, ks, slice),
            evaluate_leave_one_out(*after, histories, ks, slice), std::move(augmented.warnings)};
}

} // namespace usersim::rec
