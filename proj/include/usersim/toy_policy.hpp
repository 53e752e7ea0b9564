#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "usersim/core.hpp"
#include "usersim/grpo.hpp"

namespace usersim::grpo {

/// Bilinear softmax policy: pi(k) = softmax_k(c . W . v_k / tau).
///
/// A response is one token, the index of the chosen option. For judgment
/// the options are {Yes: item features, No: zero vector}, so "No" has a
/// fixed logit of 0.
class ToySoftmaxPolicy final : public PolicyInterface {
public:
    ToySoftmaxPolicy(std::size_t dim, double temperature)
        : dim_(dim), temperature_(temperature), weights_(dim * dim, 0.0), old_(weights_), ref_(weights_)
    {
        if (dim == 0) {
            throw input_error("policy dimension must be positive");
        }
        if (!(temperature > 0.0)) {
            throw input_error("policy temperature must be positive");
        }
    }

    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] double temperature() const noexcept { return temperature_; }

    [[nodiscard]] std::vector<double> probabilities(const Observation& obs,
                                                    PolicyRole which = PolicyRole::current) const
    {
        auto logits = scores(obs, weights_for(which));
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (auto& z : logits) {
            z = std::exp(z - mx);
            sum += z;
        }
        for (auto& z : logits) {
            z /= sum;
        }
        return logits;
    }

    /// Highest-probability option; lowest index on ties.
    [[nodiscard]] std::size_t greedy(const Observation& obs) const
    {
        auto s = scores(obs, weights_);
        return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    }

    SampledResponse sample_response(const Observation& obs, std::mt19937_64& rng) const override
    {
        auto probs = probabilities(obs);
        std::discrete_distribution<int> pick(probs.begin(), probs.end());
        TokenSeq tokens{pick(rng)};
        auto logp = log_probs(obs, tokens, PolicyRole::current);
        return {std::move(tokens), std::move(logp)};
    }

    std::vector<double> log_probs(const Observation& obs, const TokenSeq& tokens,
                                  PolicyRole which) const override
    {
        auto lsm = log_softmax(obs, weights_for(which));
        std::vector<double> out;
        out.reserve(tokens.size());
        for (int k : tokens) {
            out.push_back(lsm.at(static_cast<std::size_t>(k)));
        }
        return out;
    }

    void apply_gradient(std::span<const double> gradient, double learning_rate) override
    {
        check_size(gradient.size());
        for (std::size_t p = 0; p < weights_.size(); ++p) {
            weights_[p] += learning_rate * gradient[p];
        }
    }

    [[nodiscard]] std::vector<double> parameters() const override { return weights_; }

    void set_parameters(std::span<const double> params) override
    {
        check_size(params.size());
        weights_.assign(params.begin(), params.end());
    }

    void snapshot_old() override { old_ = weights_; }
    void freeze_reference() override { ref_ = weights_; }

    [[nodiscard]] bool differentiable() const override { return true; }

    std::vector<std::vector<double>> grad_log_probs(const Observation& obs, const TokenSeq& tokens) const override
    {
        auto probs = probabilities(obs);
        // expected option features under pi
        std::vector<double> mean_v(dim_, 0.0);
        for (std::size_t k = 0; k < obs.options.size(); ++k) {
            for (std::size_t s = 0; s < dim_; ++s) {
                mean_v[s] += probs[k] * obs.options[k][s];
            }
        }
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (int tok : tokens) {
            const auto& v = obs.options.at(static_cast<std::size_t>(tok));
            std::vector<double> g(dim_ * dim_);
            for (std::size_t r = 0; r < dim_; ++r) {
                const double cr = obs.context[r] / temperature_;
                for (std::size_t s = 0; s < dim_; ++s) {
                    g[r * dim_ + s] = cr * (v[s] - mean_v[s]);
                }
            }
            out.push_back(std::move(g));
        }
        return out;
    }

    /// Renders a chosen option in the think/answer response format.
    [[nodiscard]] static std::string render_response(const TaskKind& task, std::size_t option)
    {
        if (is_judgment(task)) {
            return std::string("<think>(1) User_status: weighing the candidate against the viewing history</think>"
                               "<answer>(2) Preference: ") +
                   (option == 0 ? "Yes" : "No") + "</answer>";
        }
        return "<think>(1) User_status: weighing every candidate against the viewing history</think>"
               "<answer>(2) Next_video: " +
               std::to_string(option + 1) + "</answer>";
    }

private:
    void check_size(std::size_t n) const
    {
        if (n != weights_.size()) {
            throw input_error("parameter vector has " + std::to_string(n) + " entries, expected " +
                              std::to_string(weights_.size()));
        }
    }

    const std::vector<double>& weights_for(PolicyRole which) const noexcept
    {
        switch (which) {
        case PolicyRole::old: return old_;
        case PolicyRole::reference: return ref_;
        case PolicyRole::current: break;
        }
        return weights_;
    }

    std::vector<double> scores(const Observation& obs, const std::vector<double>& w) const
    {
        if (obs.context.size() != dim_ || obs.options.empty()) {
            throw input_error("observation does not match policy dimension");
        }
        // cw = c^T W
        std::vector<double> cw(dim_, 0.0);
        for (std::size_t r = 0; r < dim_; ++r) {
            for (std::size_t s = 0; s < dim_; ++s) {
                cw[s] += obs.context[r] * w[r * dim_ + s];
            }
        }
        std::vector<double> out;
        out.reserve(obs.options.size());
        for (const auto& v : obs.options) {
            if (v.size() != dim_) {
                throw input_error("option feature does not match policy dimension");
            }
            double z = 0.0;
            for (std::size_t s = 0; s < dim_; ++s) {
                z += cw[s] * v[s];
            }
            out.push_back(z / temperature_);
        }
        return out;
    }

    std::vector<double> log_softmax(const Observation& obs, const std::vector<double>& w) const
    {
        auto z = scores(obs, w);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) {
            sum += std::exp(v - mx);
        }
        const double lse = mx + std::log(sum);
        for (auto& v : z) {
            v -= lse;
        }
        return z;
    }

    std::size_t dim_;
    double temperature_;
    std::vector<double> weights_;
    std::vector<double> old_;
    std::vector<double> ref_;
};

} // namespace usersim::grpo
