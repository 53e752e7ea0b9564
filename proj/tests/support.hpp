#pragma once

// Fixtures and oracles shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "usersim/core.hpp"
#include "usersim/rewards.hpp"

namespace testing_support {

using namespace usersim;

inline JudgmentTask judgment(Label label) { return {ItemId("v1"), label}; }

/// n candidates v1..vn presented in order, positive at 1-based `truth`.
inline SelectionTask selection(std::size_t n, std::size_t truth)
{
    CandidateSet c;
    for (std::size_t i = 1; i <= n; ++i) {
        ItemId id("v" + std::to_string(i));
        c.presentation_order.push_back(id);
        if (i == truth) {
            c.positive = id;
        } else {
            c.negatives.push_back(id);
        }
    }
    return {c};
}

struct CanonicalCase {
    const char* name;
    std::string transcript;
    TaskKind task;
    RewardBreakdown expected;
};

/// One transcript per row of the format, judgment and selection reward
/// tables, plus the two well-formed correct compositions.
inline std::vector<CanonicalCase> canonical_cases()
{
    const auto like = judgment(Label::like);
    const auto dislike = judgment(Label::dislike);
    const auto sel3 = selection(4, 3);
    return {
        // format rows
        {"format: both tags in order", "<think>likes cooking</think><answer>Yes</answer>", like, {1.0, 1.0, 2.0}},
        {"format: answer before think", "<answer>Yes</answer><think>likes cooking</think>", like, {0.5, 1.0, 1.5}},
        {"format: only think", "<think>likes cooking, so Yes</think>", like, {0.0, -1.0, -1.0}},
        {"format: empty text", "", like, {-1.0, -1.0, -2.0}},
        // judgment rows
        {"judgment: No vs dislike", "<think>x</think><answer>(2) Preference: No</answer>", dislike, {1.0, 1.0, 2.0}},
        {"judgment: No vs like", "<think>x</think><answer>No</answer>", like, {1.0, -1.0, 0.0}},
        {"judgment: unparseable", "<think>x</think><answer>maybe</answer>", like, {1.0, -1.0, 0.0}},
        // selection rows
        {"selection: 3 vs truth 3", "<think>x</think><answer>(2) Next_video: 3</answer>", sel3, {1.0, 2.0, 3.0}},
        {"selection: 1 vs truth 3", "<think>x</think><answer>1</answer>", sel3, {1.0, -1.5, -0.5}},
        {"selection: unparseable", "<think>x</think><answer>none of them</answer>", sel3, {1.0, -2.0, -1.0}},
        // compositions
        {"composition: correct judgment",
         "<think>(1) User_status: enjoys recipes</think><answer>(2) Preference: Yes</answer>", like, {1.0, 1.0, 2.0}},
        {"composition: correct selection wrong order", "<answer>3</answer><think>x</think>", sel3, {0.5, 2.0, 2.5}},
    };
}

/// Brute-force mean and population std in long double.
inline std::vector<double> advantages_oracle(const std::vector<double>& r, double floor = 1e-8)
{
    long double mean = 0;
    for (double x : r) {
        mean += x;
    }
    mean /= static_cast<long double>(r.size());
    long double var = 0;
    for (double x : r) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<long double>(r.size());
    const long double sd = std::sqrt(var);
    std::vector<double> out(r.size(), 0.0);
    if (sd < floor) {
        return out;
    }
    for (std::size_t i = 0; i < r.size(); ++i) {
        out[i] = static_cast<double>((r[i] - mean) / sd);
    }
    return out;
}

/// 1-based rank of `target` by full sort (descending score, ascending index).
inline std::size_t rank_oracle(const std::vector<double>& scores, std::size_t target,
                               const std::vector<bool>& excluded)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!excluded[i] || i == target) {
            idx.push_back(i);
        }
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    return static_cast<std::size_t>(std::find(idx.begin(), idx.end(), target) - idx.begin()) + 1;
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("usersim_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace testing_support
