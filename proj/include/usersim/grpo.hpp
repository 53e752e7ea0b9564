#pragma once

// Group Relative Policy Optimization.
//
// For a group of G responses o_i sampled for the same prompt:
//
//   A_i = (r_i - mean(r)) / std(r)                         population std
//   J   = 1/G sum_i 1/|o_i| sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
//                                   - beta * k3 ]
//   rho = pi(o_it) / pi_old(o_it),  k3 = pi_ref/pi - log(pi_ref/pi) - 1
//
// Episodes are single-step, so the discounted return collapses to the
// terminal reward and A_{i,t} = A_i for every token.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "usersim/error.hpp"

namespace usersim::grpo {

struct GrpoConfig {
    std::size_t group_size = 16;
    double clip_epsilon = 0.2;
    double kl_coefficient = 0.001;
    double learning_rate = 0.05;
    double std_floor = 1e-8;
    double discount = 1.0; ///< inert: every episode has exactly one step

    void validate() const
    {
        if (group_size < 2) {
            throw input_error("group size must be at least 2");
        }
        if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
            throw input_error("clip epsilon must lie in (0, 1)");
        }
        if (!(kl_coefficient >= 0.0)) {
            throw input_error("KL coefficient must be non-negative");
        }
        if (!(learning_rate >= 0.0)) {
            throw input_error("learning rate must be non-negative");
        }
        if (!(std_floor > 0.0)) {
            throw input_error("std floor must be positive");
        }
        if (!(discount >= 0.0 && discount <= 1.0)) {
            throw input_error("discount must lie in [0, 1]");
        }
    }
};

/// Group-normalized advantages with the population standard deviation.
/// Groups whose spread is below `std_floor` carry no signal and get zeros.
///
/// Computed from pairwise differences only, so adding a constant to every
/// reward gives bit-identical output whenever the shifted rewards are exact.
inline std::vector<double> normalize_advantages(std::span<const double> rewards, double std_floor = 1e-8)
{
    const auto g = rewards.size();
    if (g < 2) {
        throw input_error("advantage normalization needs at least 2 rewards");
    }
    for (double r : rewards) {
        if (!std::isfinite(r)) {
            throw input_error("non-finite reward in group");
        }
    }
    const auto gd = static_cast<double>(g);
    std::vector<double> centered(g, 0.0);
    double sum_sq = 0.0; // sum over i<j of (r_i - r_j)^2
    for (std::size_t i = 0; i < g; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g; ++j) {
            const double d = rewards[i] - rewards[j];
            acc += d;
            if (j > i) {
                sum_sq += d * d;
            }
        }
        centered[i] = acc / gd;
    }
    const double sd = std::sqrt(sum_sq) / gd;
    if (sd < std_floor) {
        return std::vector<double>(g, 0.0);
    }
    for (auto& c : centered) {
        c /= sd;
    }
    return centered;
}

/// k3 for log-ratio x = log pi_ref - log pi: exp(x) - x - 1, non-negative
/// and zero only at x == 0.
[[nodiscard]] inline double k3_from_log_ratio(double x) noexcept
{
    if (std::abs(x) < 1e-4) {
        return x * x * (0.5 + x * (1.0 / 6.0 + x / 24.0));
    }
    return std::expm1(x) - x;
}

/// Per-token low-variance KL estimate of pi (current) against pi_ref.
inline std::vector<double> kl_estimate(std::span<const double> logp_current, std::span<const double> logp_ref)
{
    if (logp_current.size() != logp_ref.size()) {
        throw input_error("kl_estimate: length mismatch (" + std::to_string(logp_current.size()) + " vs " +
                          std::to_string(logp_ref.size()) + ")");
    }
    std::vector<double> out(logp_current.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = k3_from_log_ratio(logp_ref[t] - logp_current[t]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policies

/// Numeric view of a prompt: a context vector and one feature vector per
/// option in the action space.
struct Observation {
    std::vector<double> context;
    std::vector<std::vector<double>> options;
};

using TokenSeq = std::vector<int>;

enum class PolicyRole { current, old, reference };

struct SampledResponse {
    TokenSeq tokens;
    std::vector<double> logp;
};

class PolicyInterface {
public:
    virtual ~PolicyInterface() = default;

    /// Draws a response from the current parameters.
    virtual SampledResponse sample_response(const Observation& obs, std::mt19937_64& rng) const = 0;

    virtual std::vector<double> log_probs(const Observation& obs, const TokenSeq& tokens,
                                          PolicyRole which) const = 0;

    /// theta += learning_rate * gradient
    virtual void apply_gradient(std::span<const double> gradient, double learning_rate) = 0;

    [[nodiscard]] virtual std::vector<double> parameters() const = 0;
    virtual void set_parameters(std::span<const double> params) = 0;

    /// Copies the current parameters into the old-policy snapshot.
    virtual void snapshot_old() = 0;
    /// Copies the current parameters into the frozen reference policy.
    virtual void freeze_reference() = 0;

    [[nodiscard]] virtual bool differentiable() const { return false; }

    /// d log pi(o_t) / d theta for every token, one row per token.
    virtual std::vector<std::vector<double>> grad_log_probs(const Observation&, const TokenSeq&) const
    {
        throw unsupported_operation("policy does not expose log-probability gradients");
    }
};

struct RolloutGroup {
    Observation observation;
    std::vector<TokenSeq> responses;
    std::vector<double> rewards;
    std::vector<double> advantages;
    std::vector<std::vector<double>> logp_current;
    std::vector<std::vector<double>> logp_old;
    std::vector<std::vector<double>> logp_ref;

    [[nodiscard]] std::size_t size() const noexcept { return responses.size(); }

    void check_shapes() const
    {
        const auto g = responses.size();
        if (rewards.size() != g || advantages.size() != g || logp_current.size() != g ||
            logp_old.size() != g || logp_ref.size() != g) {
            throw input_error("rollout group arrays disagree on group size");
        }
        for (std::size_t i = 0; i < g; ++i) {
            const auto n = responses[i].size();
            if (n == 0) {
                throw input_error("rollout group holds an empty response");
            }
            if (logp_current[i].size() != n || logp_old[i].size() != n || logp_ref[i].size() != n) {
                throw input_error("log-probability arrays disagree with response length");
            }
        }
    }
};

/// Recomputes logp_current under the policy's current parameters.
inline void refresh_current(RolloutGroup& group, const PolicyInterface& policy)
{
    for (std::size_t i = 0; i < group.size(); ++i) {
        group.logp_current[i] = policy.log_probs(group.observation, group.responses[i], PolicyRole::current);
    }
}

namespace detail {

[[nodiscard]] inline double clipped_term(double ratio, double adv, double eps) noexcept
{
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    return std::min(ratio * adv, clipped * adv);
}

/// d/d(ratio) of min(ratio*A, clip(ratio)*A): A where the unclipped branch
/// is active, 0 where the clip holds the value constant.
[[nodiscard]] inline double clipped_slope(double ratio, double adv, double eps) noexcept
{
    if (adv >= 0.0) {
        return ratio <= 1.0 + eps ? adv : 0.0;
    }
    return ratio >= 1.0 - eps ? adv : 0.0;
}

} // namespace detail

inline double surrogate_objective(const RolloutGroup& group, const GrpoConfig& cfg)
{
    group.check_shapes();
    const auto g = group.size();
    double total = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const auto& lc = group.logp_current[i];
        const auto n = lc.size();
        double per_response = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ratio = std::exp(lc[t] - group.logp_old[i][t]);
            const double kl = k3_from_log_ratio(group.logp_ref[i][t] - lc[t]);
            per_response += detail::clipped_term(ratio, group.advantages[i], cfg.clip_epsilon) -
                            cfg.kl_coefficient * kl;
        }
        total += per_response / static_cast<double>(n);
    }
    return total / static_cast<double>(g);
}

/// Exact gradient of surrogate_objective with respect to the policy
/// parameters. logp_old and logp_ref are constants; logp_current is
/// re-evaluated from the policy.
inline std::vector<double> objective_gradient(const RolloutGroup& group, const GrpoConfig& cfg,
                                              const PolicyInterface& policy)
{
    if (!policy.differentiable()) {
        throw unsupported_operation("objective_gradient needs a differentiable policy");
    }
    group.check_shapes();
    const auto g = group.size();
    std::vector<double> grad(policy.parameters().size(), 0.0);
    for (std::size_t i = 0; i < g; ++i) {
        const auto& tokens = group.responses[i];
        const auto lc = policy.log_probs(group.observation, tokens, PolicyRole::current);
        const auto dlogp = policy.grad_log_probs(group.observation, tokens);
        const double weight = 1.0 / (static_cast<double>(g) * static_cast<double>(tokens.size()));
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const double ratio = std::exp(lc[t] - group.logp_old[i][t]);
            const double x = group.logp_ref[i][t] - lc[t];
            // d ratio / d lc = ratio;  d k3 / d lc = 1 - exp(x)
            const double d_surr = detail::clipped_slope(ratio, group.advantages[i], cfg.clip_epsilon) * ratio;
            const double d_kl = -std::expm1(x);
            const double coeff = weight * (d_surr - cfg.kl_coefficient * d_kl);
            const auto& row = dlogp[t];
            for (std::size_t p = 0; p < grad.size(); ++p) {
                grad[p] += coeff * row[p];
            }
        }
    }
    return grad;
}

} // namespace usersim::grpo
