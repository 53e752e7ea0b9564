#pragma once

// Transcript parsing and the rule-based rewards used for reinforcement
// fine-tuning of the user simulator.
//
// Format reward:    1 both tags in order, 0.5 both tags out of order,
//                   0 exactly one tag, -1 no tag at all (or empty text).
// Judgment reward:  +1 match, -1 mismatch, -1 unparseable.
// Selection reward: +2 match, -1.5 mismatch, -2 unparseable or out of range.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "usersim/core.hpp"

namespace usersim {

struct Action {
    enum class Kind { yes, no, select };

    Kind kind = Kind::yes;
    std::size_t index = 0; ///< 1-based, only meaningful for select

    static constexpr Action yes() noexcept { return {Kind::yes, 0}; }
    static constexpr Action no() noexcept { return {Kind::no, 0}; }
    static constexpr Action select(std::size_t i) noexcept { return {Kind::select, i}; }

    friend bool operator==(const Action&, const Action&) = default;
};

struct ParsedResponse {
    std::optional<std::string> think_text;
    std::optional<std::string> answer_text;
    std::optional<std::string> user_status;
    bool tag_order_ok = false;
    std::optional<Action> action;
};

struct RewardBreakdown {
    double r_format = 0.0;
    double r_task = 0.0;
    double total = 0.0;

    friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

namespace reward_values {
inline constexpr double format_ok = 1.0;
inline constexpr double format_wrong_order = 0.5;
inline constexpr double format_missing_tag = 0.0;
inline constexpr double format_unparseable = -1.0;

inline constexpr double judgment_match = 1.0;
inline constexpr double judgment_mismatch = -1.0;
inline constexpr double judgment_unparseable = -1.0;

inline constexpr double selection_match = 2.0;
inline constexpr double selection_mismatch = -1.5;
inline constexpr double selection_unparseable = -2.0;
} // namespace reward_values

namespace detail {

struct TagSpan {
    std::size_t open = std::string_view::npos;
    std::string_view inner;
};

/// First "<tag>" and the first "</tag>" after it.
inline std::optional<TagSpan> find_tag(std::string_view raw, std::string_view tag)
{
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    auto o = raw.find(open);
    if (o == std::string_view::npos) {
        return std::nullopt;
    }
    auto body = o + open.size();
    auto c = raw.find(close, body);
    if (c == std::string_view::npos) {
        return std::nullopt;
    }
    return TagSpan{o, raw.substr(body, c - body)};
}

inline std::string_view trim(std::string_view s)
{
    auto is_ws = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_ws(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_ws(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Removes a leading "Next_video:"-style label; nullopt when there is none.
inline std::optional<std::string_view> strip_label(std::string_view s)
{
    auto colon = s.find(':');
    if (colon == std::string_view::npos || colon == 0 ||
        !std::all_of(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(colon), [](unsigned char c) {
            return std::isalpha(c) || c == '_' || c == ' ' || c == '-';
        })) {
        return std::nullopt;
    }
    return trim(s.substr(colon + 1));
}

/// Strips an "(2) Next_video:" prefix from an answer. The enumerator goes
/// only together with a label, so a bare "(3)" still reads as candidate 3.
inline std::string_view answer_value(std::string_view answer)
{
    auto s = trim(answer);
    if (!s.empty() && s.front() == '(') {
        auto close = s.find(')');
        if (close != std::string_view::npos && close > 1 &&
            std::all_of(s.begin() + 1, s.begin() + static_cast<std::ptrdiff_t>(close),
                        [](unsigned char c) { return std::isdigit(c) || std::isspace(c); })) {
            if (auto rest = strip_label(trim(s.substr(close + 1)))) {
                return *rest;
            }
        }
    }
    return strip_label(s).value_or(s);
}

inline std::string_view strip_quotes(std::string_view s)
{
    s = trim(s);
    while (!s.empty() && (s.front() == '"' || s.front() == '\'' || s.front() == '[')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == ']' || s.back() == '.')) {
        s.remove_suffix(1);
    }
    return trim(s);
}

inline std::optional<Action> parse_judgment(std::string_view value)
{
    auto v = lower(strip_quotes(value));
    std::size_t end = 0;
    while (end < v.size() && std::isalpha(static_cast<unsigned char>(v[end]))) {
        ++end;
    }
    auto word = std::string_view(v).substr(0, end);
    if (word == "yes") {
        return Action::yes();
    }
    if (word == "no") {
        return Action::no();
    }
    return std::nullopt;
}

inline std::optional<Action> parse_selection(std::string_view value, std::size_t n_candidates,
                                             std::span<const std::string> candidate_texts)
{
    auto digit = std::find_if(value.begin(), value.end(),
                              [](unsigned char c) { return std::isdigit(c) != 0; });
    if (digit != value.end()) {
        std::size_t idx = 0;
        for (auto it = digit; it != value.end() && std::isdigit(static_cast<unsigned char>(*it)); ++it) {
            idx = idx * 10 + static_cast<std::size_t>(*it - '0');
            if (idx > 1'000'000) {
                return std::nullopt;
            }
        }
        if (idx < 1 || (n_candidates > 0 && idx > n_candidates)) {
            return std::nullopt;
        }
        return Action::select(idx);
    }
    auto wanted = lower(strip_quotes(value));
    if (wanted.empty()) {
        return std::nullopt;
    }
    for (std::size_t i = 0; i < candidate_texts.size(); ++i) {
        if (lower(strip_quotes(candidate_texts[i])) == wanted) {
            return Action::select(i + 1);
        }
    }
    return std::nullopt;
}

inline std::optional<std::string> find_user_status(std::string_view think)
{
    auto low = lower(think);
    auto pos = low.find("user_status:");
    if (pos == std::string::npos) {
        return std::nullopt;
    }
    return std::string(trim(think.substr(pos + std::string_view("user_status:").size())));
}

} // namespace detail

/// Splits a transcript into think/answer blocks and maps the answer onto the
/// task's action space. Never throws; anything unreadable yields no action.
/// For selection, an integer in the answer wins over a verbatim candidate
/// text; `candidate_texts` are the rendered candidates in presentation order.
inline ParsedResponse parse_response(std::string_view raw, const TaskKind& task,
                                     std::span<const std::string> candidate_texts = {})
{
    ParsedResponse p;
    auto think = detail::find_tag(raw, "think");
    auto answer = detail::find_tag(raw, "answer");
    if (think) {
        p.think_text = std::string(think->inner);
        p.user_status = detail::find_user_status(think->inner);
    }
    if (answer) {
        p.answer_text = std::string(answer->inner);
    }
    p.tag_order_ok = think && answer && think->open < answer->open;
    if (!answer) {
        return p;
    }
    auto value = detail::answer_value(answer->inner);
    if (const auto* sel = std::get_if<SelectionTask>(&task)) {
        p.action = detail::parse_selection(value, sel->candidates.size(), candidate_texts);
    } else {
        p.action = detail::parse_judgment(value);
    }
    return p;
}

[[nodiscard]] inline double format_reward(const ParsedResponse& p) noexcept
{
    using namespace reward_values;
    const bool has_think = p.think_text.has_value();
    const bool has_answer = p.answer_text.has_value();
    if (has_think && has_answer) {
        return p.tag_order_ok ? format_ok : format_wrong_order;
    }
    if (has_think || has_answer) {
        return format_missing_tag;
    }
    return format_unparseable;
}

[[nodiscard]] inline double judgment_reward(const ParsedResponse& p, Label truth) noexcept
{
    using namespace reward_values;
    if (!p.action || p.action->kind == Action::Kind::select) {
        return judgment_unparseable;
    }
    const bool said_yes = p.action->kind == Action::Kind::yes;
    return said_yes == (truth == Label::like) ? judgment_match : judgment_mismatch;
}

/// `n_candidates` bounds the index when known (0 = unchecked).
[[nodiscard]] inline double selection_reward(const ParsedResponse& p, std::size_t truth_index,
                                             std::size_t n_candidates = 0) noexcept
{
    using namespace reward_values;
    if (!p.action || p.action->kind != Action::Kind::select || p.action->index < 1 ||
        (n_candidates > 0 && p.action->index > n_candidates)) {
        return selection_unparseable;
    }
    return p.action->index == truth_index ? selection_match : selection_mismatch;
}

/// Format reward plus task reward. The ground truth is carried by the task:
/// the label for judgment, the positive's position for selection.
inline RewardBreakdown total_reward(std::string_view raw, const TaskKind& task,
                                    std::span<const std::string> candidate_texts = {})
{
    auto p = parse_response(raw, task, candidate_texts);
    RewardBreakdown r;
    r.r_format = format_reward(p);
    if (const auto* j = std::get_if<JudgmentTask>(&task)) {
        r.r_task = judgment_reward(p, j->label);
    } else {
        const auto& c = std::get<SelectionTask>(task).candidates;
        r.r_task = selection_reward(p, c.truth_index(), c.size());
    }
    r.total = r.r_format + r.r_task;
    return r;
}

/// Whether the parsed action is the correct one for the task.
[[nodiscard]] inline bool action_correct(const ParsedResponse& p, const TaskKind& task)
{
    if (const auto* j = std::get_if<JudgmentTask>(&task)) {
        return judgment_reward(p, j->label) == reward_values::judgment_match;
    }
    const auto& c = std::get<SelectionTask>(task).candidates;
    return selection_reward(p, c.truth_index(), c.size()) == reward_values::selection_match;
}

} // namespace usersim
