#pragma once

#include <random>
#include <set>

#include "usersim/env.hpp"

namespace testing_support {

/// Empty when `c` is a valid m-negative candidate set drawn from `recalled`.
inline std::string candidate_set_violation(const usersim::CandidateSet& c, std::size_t m,
                                           const std::vector<usersim::ItemId>& recalled)
{
    using namespace usersim;
    if (c.size() != m + 1 || c.negatives.size() != m) {
        return "wrong size";
    }
    std::set<ItemId> negs(c.negatives.begin(), c.negatives.end());
    if (negs.size() != m) {
        return "duplicate negative";
    }
    if (negs.contains(c.positive)) {
        return "positive among negatives";
    }
    for (const auto& n : negs) {
        if (std::find(recalled.begin(), recalled.end(), n) == recalled.end()) {
            return "negative outside recall";
        }
    }
    auto shown = c.presentation_order;
    auto expected = c.negatives;
    expected.push_back(c.positive);
    std::sort(shown.begin(), shown.end());
    std::sort(expected.begin(), expected.end());
    if (shown != expected) {
        return "presentation order is not a permutation";
    }
    if (std::count(c.presentation_order.begin(), c.presentation_order.end(), c.positive) != 1) {
        return "positive not shown exactly once";
    }
    return {};
}

struct CandidateFuzzResult {
    std::size_t cases = 0;
    std::size_t violations = 0;
    std::size_t rejected = 0; ///< too few negatives, must throw input_error
    std::string first_violation;
};

/// Random recall lists (with repeats and the positive mixed in), random m.
inline CandidateFuzzResult fuzz_candidate_sets(std::size_t n, std::uint64_t seed)
{
    using namespace usersim;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len(0, 25);
    std::uniform_int_distribution<int> id(0, 30);
    std::uniform_int_distribution<std::size_t> mm(1, 9);
    CandidateFuzzResult out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<ItemId> recalled;
        const auto l = len(rng);
        for (std::size_t k = 0; k < l; ++k) {
            recalled.emplace_back("v" + std::to_string(id(rng)));
        }
        const ItemId positive("v" + std::to_string(id(rng)));
        const auto m = mm(rng);
        const auto s = rng();
        ++out.cases;
        std::set<ItemId> eligible(recalled.begin(), recalled.end());
        eligible.erase(positive);
        try {
            const auto c = env::build_candidate_set(recalled, positive, m, s);
            auto v = candidate_set_violation(c, m, recalled);
            if (v.empty() && (c != env::build_candidate_set(recalled, positive, m, s) || c.rng_seed != s)) {
                v = "not reproducible";
            }
            if (eligible.size() < m) {
                v = "accepted too few negatives";
            }
            if (!v.empty()) {
                ++out.violations;
                if (out.first_violation.empty()) {
                    out.first_violation = v;
                }
            }
        } catch (const input_error&) {
            ++out.rejected;
            if (eligible.size() >= m) {
                ++out.violations;
                if (out.first_violation.empty()) {
                    out.first_violation = "rejected a feasible request";
                }
            }
        }
    }
    return out;
}

} // namespace testing_support
