#pragma once

// Domain types shared by every module, plus ingestion of interaction,
// item and caption files into them.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "usersim/error.hpp"

namespace usersim {

using json = nlohmann::json;

/// Opaque non-empty identifier. The tag keeps user and item ids apart.
template <typename Tag>
class strong_id {
public:
    strong_id() = default;
    explicit strong_id(std::string value) : value_(std::move(value))
    {
        if (value_.empty()) {
            throw input_error(std::string(Tag::name) + " id must be non-empty");
        }
    }

    [[nodiscard]] const std::string& str() const noexcept { return value_; }
    [[nodiscard]] bool empty() const noexcept { return value_.empty(); }

    friend auto operator<=>(const strong_id&, const strong_id&) = default;
    friend bool operator==(const strong_id&, const strong_id&) = default;

private:
    std::string value_;
};

struct item_tag { static constexpr const char* name = "item"; };
struct user_tag { static constexpr const char* name = "user"; };

using ItemId = strong_id<item_tag>;
using UserId = strong_id<user_tag>;

struct Item {
    ItemId id;
    std::string title;
    std::optional<std::string> enhanced_caption;
    std::optional<std::vector<double>> feature;

    /// Text the simulator sees for this item: the enhanced caption when present.
    [[nodiscard]] const std::string& display_text() const
    {
        return enhanced_caption ? *enhanced_caption : title;
    }

    friend bool operator==(const Item&, const Item&) = default;
};

using Catalog = std::map<ItemId, Item>;

struct BehaviorRecord {
    ItemId item;
    std::optional<std::string> comment;
    std::int64_t timestamp = 0;

    friend bool operator==(const BehaviorRecord&, const BehaviorRecord&) = default;
};

/// Chronological behaviors of one user. The last behavior is the prediction
/// target, everything before it is the profile.
class UserHistory {
public:
    UserHistory(UserId user, std::vector<BehaviorRecord> behaviors)
        : user_(std::move(user)), behaviors_(std::move(behaviors))
    {
        if (behaviors_.size() < 2) {
            throw input_error("history of user '" + user_.str() + "' needs at least 2 behaviors");
        }
        for (std::size_t i = 1; i < behaviors_.size(); ++i) {
            if (behaviors_[i].timestamp <= behaviors_[i - 1].timestamp) {
                throw input_error("history of user '" + user_.str() +
                                  "' has non-increasing timestamps");
            }
        }
    }

    [[nodiscard]] const UserId& user() const noexcept { return user_; }
    [[nodiscard]] const std::vector<BehaviorRecord>& behaviors() const noexcept { return behaviors_; }
    [[nodiscard]] std::size_t size() const noexcept { return behaviors_.size(); }

    /// Behaviors 1..N-1.
    [[nodiscard]] std::span<const BehaviorRecord> profile() const noexcept
    {
        return std::span<const BehaviorRecord>(behaviors_).first(behaviors_.size() - 1);
    }

    /// Behavior N.
    [[nodiscard]] const BehaviorRecord& target() const noexcept { return behaviors_.back(); }

    [[nodiscard]] std::vector<ItemId> profile_items() const
    {
        std::vector<ItemId> out;
        out.reserve(behaviors_.size() - 1);
        for (const auto& b : profile()) {
            out.push_back(b.item);
        }
        return out;
    }

    friend bool operator==(const UserHistory&, const UserHistory&) = default;

private:
    UserId user_;
    std::vector<BehaviorRecord> behaviors_;
};

enum class Label { like, dislike };

[[nodiscard]] inline std::string_view to_string(Label l) noexcept
{
    return l == Label::like ? "like" : "dislike";
}

/// One positive and m negatives, presented in a seeded shuffle.
struct CandidateSet {
    ItemId positive;
    std::vector<ItemId> negatives;
    std::vector<ItemId> presentation_order;
    std::uint64_t rng_seed = 0;

    [[nodiscard]] std::size_t size() const noexcept { return presentation_order.size(); }

    /// 1-based position of the positive in presentation order.
    [[nodiscard]] std::size_t truth_index() const
    {
        auto it = std::find(presentation_order.begin(), presentation_order.end(), positive);
        if (it == presentation_order.end()) {
            throw error("candidate set does not present its positive item");
        }
        return static_cast<std::size_t>(it - presentation_order.begin()) + 1;
    }

    friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

struct JudgmentTask {
    ItemId item;
    Label label;
};

struct SelectionTask {
    CandidateSet candidates;
};

using TaskKind = std::variant<JudgmentTask, SelectionTask>;

[[nodiscard]] inline bool is_judgment(const TaskKind& t) noexcept
{
    return std::holds_alternative<JudgmentTask>(t);
}

// ---------------------------------------------------------------------------
// Ingestion

enum class InteractionFormat { jsonl, tsv };

struct IngestResult {
    Catalog catalog;
    std::vector<UserHistory> histories;
    std::size_t dropped_users = 0;
};

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw input_error("cannot open '" + path.string() + "'");
    }
    return in;
}

inline std::string at_line(const std::filesystem::path& path, std::size_t line)
{
    return path.string() + ":" + std::to_string(line) + ": ";
}

inline bool blank(std::string_view s)
{
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

struct RawRow {
    std::string user;
    std::string item;
    std::int64_t ord;
    std::optional<std::string> comment;
};

inline RawRow parse_jsonl_row(const std::string& line)
{
    auto j = json::parse(line);
    RawRow r;
    r.user = j.at("user").get<std::string>();
    r.item = j.at("item").get<std::string>();
    r.ord = j.at("ord").get<std::int64_t>();
    if (auto it = j.find("comment"); it != j.end() && !it->is_null()) {
        r.comment = it->get<std::string>();
    }
    return r;
}

inline RawRow parse_tsv_row(const std::string& raw)
{
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    auto f = split_tabs(line);
    if (f.size() < 3 || f.size() > 4) {
        throw input_error("expected 3 or 4 tab-separated fields, got " + std::to_string(f.size()));
    }
    RawRow r{f[0], f[1], 0, std::nullopt};
    std::size_t used = 0;
    r.ord = std::stoll(f[2], &used);
    if (used != f[2].size()) {
        throw input_error("ordinal '" + f[2] + "' is not an integer");
    }
    if (f.size() == 4 && !f[3].empty()) {
        r.comment = f[3];
    }
    return r;
}

} // namespace detail

/// Reads interactions, one row per behavior. Users with fewer than two
/// behaviors are dropped and counted.
inline IngestResult load_interactions(const std::filesystem::path& path, InteractionFormat format)
{
    auto in = detail::open_input(path);
    std::map<UserId, std::map<std::int64_t, BehaviorRecord>> per_user;
    IngestResult result;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) {
            continue;
        }
        detail::RawRow row;
        try {
            row = format == InteractionFormat::jsonl ? detail::parse_jsonl_row(line)
                                                     : detail::parse_tsv_row(line);
        } catch (const std::exception& e) {
            throw input_error(detail::at_line(path, lineno) + "malformed row: " + e.what());
        }
        if (row.user.empty() || row.item.empty()) {
            throw input_error(detail::at_line(path, lineno) + "empty user or item id");
        }
        UserId user(row.user);
        ItemId item(row.item);
        auto& slots = per_user[user];
        if (!slots.emplace(row.ord, BehaviorRecord{item, row.comment, row.ord}).second) {
            throw input_error(detail::at_line(path, lineno) + "duplicate ordinal " +
                              std::to_string(row.ord) + " for user '" + row.user + "'");
        }
        result.catalog.try_emplace(item, Item{item, item.str(), std::nullopt, std::nullopt});
    }

    for (auto& [user, slots] : per_user) {
        if (slots.size() < 2) {
            ++result.dropped_users;
            continue;
        }
        std::vector<BehaviorRecord> behaviors;
        behaviors.reserve(slots.size());
        for (auto& [ord, rec] : slots) {
            behaviors.push_back(std::move(rec));
        }
        result.histories.emplace_back(user, std::move(behaviors));
    }
    return result;
}

[[nodiscard]] inline InteractionFormat format_from_path(const std::filesystem::path& path)
{
    auto ext = path.extension().string();
    return ext == ".tsv" || ext == ".txt" ? InteractionFormat::tsv : InteractionFormat::jsonl;
}

inline IngestResult load_interactions(const std::filesystem::path& path)
{
    return load_interactions(path, format_from_path(path));
}

struct AttachReport {
    std::size_t attached = 0;
    std::size_t unknown_items = 0;
    std::size_t rejected_rows = 0;
    std::vector<std::string> warnings;
};

/// Sets enhanced captions from {"item", "caption"} rows. Unknown items and
/// empty captions are reported, never fatal.
inline AttachReport attach_captions(Catalog& catalog, const std::filesystem::path& captions)
{
    auto in = detail::open_input(captions);
    AttachReport report;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) {
            continue;
        }
        std::string item;
        std::string caption;
        try {
            auto j = json::parse(line);
            item = j.at("item").get<std::string>();
            caption = j.at("caption").get<std::string>();
        } catch (const std::exception& e) {
            ++report.rejected_rows;
            report.warnings.push_back(detail::at_line(captions, lineno) + e.what());
            continue;
        }
        if (item.empty() || detail::blank(caption)) {
            ++report.rejected_rows;
            report.warnings.push_back(detail::at_line(captions, lineno) + "empty item or caption");
            continue;
        }
        auto it = catalog.find(ItemId(item));
        if (it == catalog.end()) {
            ++report.unknown_items;
            report.warnings.push_back(detail::at_line(captions, lineno) + "unknown item '" + item + "'");
            continue;
        }
        it->second.enhanced_caption = std::move(caption);
        ++report.attached;
    }
    return report;
}

/// Sets titles from {"item", "title"} rows; unknown items are ignored and counted.
inline std::size_t attach_titles(Catalog& catalog, const std::filesystem::path& items)
{
    auto in = detail::open_input(items);
    std::size_t unknown = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) {
            continue;
        }
        try {
            auto j = json::parse(line);
            auto it = catalog.find(ItemId(j.at("item").get<std::string>()));
            if (it == catalog.end()) {
                ++unknown;
                continue;
            }
            it->second.title = j.at("title").get<std::string>();
        } catch (const input_error&) {
            throw;
        } catch (const std::exception& e) {
            throw input_error(detail::at_line(items, lineno) + "malformed row: " + e.what());
        }
    }
    return unknown;
}

inline void write_interactions_jsonl(std::ostream& out, const std::vector<UserHistory>& histories)
{
    for (const auto& h : histories) {
        for (const auto& b : h.behaviors()) {
            json row = {{"user", h.user().str()},
                        {"item", b.item.str()},
                        {"ord", b.timestamp},
                        {"comment", b.comment ? json(*b.comment) : json(nullptr)}};
            out << row.dump() << '\n';
        }
    }
}

inline void write_items_jsonl(std::ostream& out, const Catalog& catalog)
{
    for (const auto& [id, item] : catalog) {
        out << json{{"item", id.str()}, {"title", item.title}}.dump() << '\n';
    }
}

inline void write_captions_jsonl(std::ostream& out, const Catalog& catalog)
{
    for (const auto& [id, item] : catalog) {
        if (item.enhanced_caption) {
            out << json{{"item", id.str()}, {"caption", *item.enhanced_caption}}.dump() << '\n';
        }
    }
}

[[nodiscard]] inline const Item& lookup(const Catalog& catalog, const ItemId& id)
{
    auto it = catalog.find(id);
    if (it == catalog.end()) {
        throw input_error("item '" + id.str() + "' is not in the catalog");
    }
    return it->second;
}

/// Stable 64-bit FNV-1a, used to derive per-entity seeds from ids.
[[nodiscard]] constexpr std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// splitmix64 finalizer; mixes a root seed with a stream tag.
[[nodiscard]] constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace usersim
