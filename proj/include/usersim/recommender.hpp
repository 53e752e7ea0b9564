#pragma once

// Pluggable sequential candidate generators ("rough recall" models) and the
// feedback-augmentation hook that feeds simulated likes back as training data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "usersim/core.hpp"

namespace usersim::rec {

/// Items a user has interacted with, oldest first. Used both for fitting
/// and as the query for ranking.
struct Sequence {
    UserId user;
    std::vector<ItemId> items;

    friend bool operator==(const Sequence&, const Sequence&) = default;
};

/// Behaviors 1..N-1 of every history.
[[nodiscard]] inline std::vector<Sequence> training_sequences(const std::vector<UserHistory>& histories)
{
    std::vector<Sequence> out;
    out.reserve(histories.size());
    for (const auto& h : histories) {
        out.push_back({h.user(), h.profile_items()});
    }
    return out;
}

class CandidateGenerator {
public:
    virtual ~CandidateGenerator() = default;

    void fit(const std::vector<Sequence>& training, const Catalog& catalog)
    {
        if (training.empty()) {
            throw input_error(name() + ": cannot fit on empty training data");
        }
        universe_.clear();
        index_.clear();
        for (const auto& [id, item] : catalog) {
            index_.emplace(id.str(), universe_.size());
            universe_.push_back(id);
        }
        do_fit(training, catalog);
        fitted_ = true;
    }

    void fit(const std::vector<UserHistory>& histories, const Catalog& catalog)
    {
        fit(training_sequences(histories), catalog);
    }

    [[nodiscard]] bool fitted() const noexcept { return fitted_; }
    [[nodiscard]] virtual std::string name() const = 0;

    /// Catalog items in ranking tie-break order (ascending id).
    [[nodiscard]] const std::vector<ItemId>& universe() const noexcept { return universe_; }

    [[nodiscard]] std::size_t index_of(const ItemId& id) const
    {
        auto it = index_.find(id.str());
        if (it == index_.end()) {
            throw input_error(name() + ": item '" + id.str() + "' is unknown to the generator");
        }
        return it->second;
    }

    /// One score per universe item; higher ranks first.
    [[nodiscard]] std::vector<double> score_all(const Sequence& query) const
    {
        require_fitted();
        return do_score(query);
    }

    /// The k best items outside the query's own history. Ties go to the
    /// smaller item id.
    [[nodiscard]] std::vector<ItemId> top_k(const Sequence& query, std::size_t k) const
    {
        auto scores = score_all(query);
        auto excluded = excluded_indices(query, std::nullopt);
        std::vector<std::size_t> idx;
        idx.reserve(universe_.size());
        for (std::size_t i = 0; i < universe_.size(); ++i) {
            if (!excluded.contains(i)) {
                idx.push_back(i);
            }
        }
        k = std::min(k, idx.size());
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                          [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); });
        std::vector<ItemId> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            out.push_back(universe_[idx[i]]);
        }
        return out;
    }

    /// 1-based rank of `target` among all catalog items except the query's
    /// history (the target itself always stays eligible).
    [[nodiscard]] std::size_t rank_of(const Sequence& query, const ItemId& target) const
    {
        auto scores = score_all(query);
        const auto t = index_of(target);
        auto excluded = excluded_indices(query, t);
        std::size_t better = 0;
        for (std::size_t i = 0; i < universe_.size(); ++i) {
            if (i != t && !excluded.contains(i) && ranks_before(scores, i, t)) {
                ++better;
            }
        }
        return better + 1;
    }

    /// Number of items a query's target is ranked against.
    [[nodiscard]] std::size_t eligible_count(const Sequence& query, const ItemId& target) const
    {
        return universe_.size() - excluded_indices(query, index_of(target)).size();
    }

protected:
    virtual void do_fit(const std::vector<Sequence>& training, const Catalog& catalog) = 0;
    virtual std::vector<double> do_score(const Sequence& query) const = 0;

    [[nodiscard]] static bool ranks_before(const std::vector<double>& s, std::size_t a, std::size_t b) noexcept
    {
        return s[a] > s[b] || (s[a] == s[b] && a < b);
    }

    /// Known-item lookup that tolerates items outside the fitted catalog.
    [[nodiscard]] std::optional<std::size_t> find_index(const ItemId& id) const
    {
        auto it = index_.find(id.str());
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

private:
    void require_fitted() const
    {
        if (!fitted_) {
            throw error(name() + ": generator used before fit");
        }
    }

    std::unordered_set<std::size_t> excluded_indices(const Sequence& query, std::optional<std::size_t> keep) const
    {
        std::unordered_set<std::size_t> out;
        for (const auto& id : query.items) {
            if (auto i = find_index(id); i && i != keep) {
                out.insert(*i);
            }
        }
        return out;
    }

    std::vector<ItemId> universe_;
    std::unordered_map<std::string, std::size_t> index_;
    bool fitted_ = false;
};

/// Global interaction counts.
class PopularityGenerator final : public CandidateGenerator {
public:
    [[nodiscard]] std::string name() const override { return "popularity"; }

    [[nodiscard]] const std::vector<double>& counts() const noexcept { return counts_; }

protected:
    void do_fit(const std::vector<Sequence>& training, const Catalog&) override
    {
        counts_.assign(universe().size(), 0.0);
        for (const auto& seq : training) {
            for (const auto& id : seq.items) {
                if (auto i = find_index(id)) {
                    counts_[*i] += 1.0;
                }
            }
        }
    }

    std::vector<double> do_score(const Sequence&) const override { return counts_; }

private:
    std::vector<double> counts_;
};

/// First-order transitions from the query's last item; popularity breaks
/// ties and covers items never seen after it.
class MarkovGenerator final : public CandidateGenerator {
public:
    [[nodiscard]] std::string name() const override { return "markov"; }

protected:
    void do_fit(const std::vector<Sequence>& training, const Catalog&) override
    {
        popularity_.assign(universe().size(), 0.0);
        transitions_.clear();
        for (const auto& seq : training) {
            for (std::size_t t = 0; t < seq.items.size(); ++t) {
                auto cur = find_index(seq.items[t]);
                if (!cur) {
                    continue;
                }
                popularity_[*cur] += 1.0;
                if (t > 0) {
                    if (auto prev = find_index(seq.items[t - 1])) {
                        transitions_[*prev][*cur] += 1.0;
                    }
                }
            }
        }
        max_popularity_ = popularity_.empty() ? 0.0 : *std::max_element(popularity_.begin(), popularity_.end());
    }

    std::vector<double> do_score(const Sequence& query) const override
    {
        auto scores = popularity_;
        if (query.items.empty()) {
            return scores;
        }
        auto last = find_index(query.items.back());
        if (!last) {
            return scores;
        }
        auto row = transitions_.find(*last);
        if (row == transitions_.end()) {
            return scores;
        }
        // lexicographic (transition count, popularity)
        const double scale = max_popularity_ + 1.0;
        for (const auto& [to, count] : row->second) {
            scores[to] += count * scale;
        }
        return scores;
    }

private:
    std::vector<double> popularity_;
    std::unordered_map<std::size_t, std::map<std::size_t, double>> transitions_;
    double max_popularity_ = 0.0;
};

/// Dot product between the mean feature of the query's items and each
/// candidate's feature. Features come from the catalog (e.g. caption-derived).
class EmbeddingGenerator final : public CandidateGenerator {
public:
    [[nodiscard]] std::string name() const override { return "embedding"; }

protected:
    void do_fit(const std::vector<Sequence>&, const Catalog& catalog) override
    {
        features_.clear();
        dim_ = 0;
        for (const auto& id : universe()) {
            const auto& item = catalog.at(id);
            if (!item.feature) {
                throw input_error("embedding generator: item '" + id.str() + "' has no feature vector");
            }
            if (dim_ == 0) {
                dim_ = item.feature->size();
            } else if (item.feature->size() != dim_) {
                throw input_error("embedding generator: item '" + id.str() + "' has feature dimension " +
                                  std::to_string(item.feature->size()) + ", expected " + std::to_string(dim_));
            }
            features_.push_back(*item.feature);
        }
    }

    std::vector<double> do_score(const Sequence& query) const override
    {
        std::vector<double> mean(dim_, 0.0);
        std::size_t n = 0;
        for (const auto& id : query.items) {
            if (auto i = find_index(id)) {
                for (std::size_t s = 0; s < dim_; ++s) {
                    mean[s] += features_[*i][s];
                }
                ++n;
            }
        }
        if (n > 0) {
            for (auto& m : mean) {
                m /= static_cast<double>(n);
            }
        }
        std::vector<double> scores(features_.size(), 0.0);
        for (std::size_t i = 0; i < features_.size(); ++i) {
            double dot = 0.0;
            for (std::size_t s = 0; s < dim_; ++s) {
                dot += mean[s] * features_[i][s];
            }
            scores[i] = dot;
        }
        return scores;
    }

private:
    std::vector<std::vector<double>> features_;
    std::size_t dim_ = 0;
};

/// Replays externally computed ranked lists, {"user": str, "ranked": [str]}
/// per line. Items missing from a user's list rank after every listed item.
class RankedListGenerator final : public CandidateGenerator {
public:
    explicit RankedListGenerator(const std::filesystem::path& path)
    {
        auto in = usersim::detail::open_input(path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (usersim::detail::blank(line)) {
                continue;
            }
            try {
                auto j = json::parse(line);
                lists_[j.at("user").get<std::string>()] = j.at("ranked").get<std::vector<std::string>>();
            } catch (const std::exception& e) {
                throw input_error(usersim::detail::at_line(path, lineno) + "malformed ranked list: " + e.what());
            }
        }
    }

    [[nodiscard]] std::string name() const override { return "ranked-list"; }

protected:
    void do_fit(const std::vector<Sequence>&, const Catalog&) override {}

    std::vector<double> do_score(const Sequence& query) const override
    {
        std::vector<double> scores(universe().size(), -std::numeric_limits<double>::infinity());
        auto it = lists_.find(query.user.str());
        if (it == lists_.end()) {
            return scores;
        }
        const auto& ranked = it->second;
        for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
            if (auto i = find_index(ItemId(ranked[pos]))) {
                scores[*i] = std::max(scores[*i], -static_cast<double>(pos));
            }
        }
        return scores;
    }

private:
    std::unordered_map<std::string, std::vector<std::string>> lists_;
};

enum class GeneratorKind { popularity, markov, embedding };

[[nodiscard]] inline GeneratorKind parse_generator_kind(std::string_view s)
{
    if (s == "popularity") {
        return GeneratorKind::popularity;
    }
    if (s == "markov") {
        return GeneratorKind::markov;
    }
    if (s == "embedding") {
        return GeneratorKind::embedding;
    }
    throw input_error("unknown model '" + std::string(s) + "' (expected popularity, markov or embedding)");
}

[[nodiscard]] inline std::unique_ptr<CandidateGenerator> make_generator(GeneratorKind kind)
{
    switch (kind) {
    case GeneratorKind::popularity: return std::make_unique<PopularityGenerator>();
    case GeneratorKind::markov: return std::make_unique<MarkovGenerator>();
    case GeneratorKind::embedding: return std::make_unique<EmbeddingGenerator>();
    }
    throw error("unreachable generator kind");
}

inline std::unique_ptr<CandidateGenerator> fit_popularity(const std::vector<UserHistory>& histories,
                                                          const Catalog& catalog)
{
    auto g = std::make_unique<PopularityGenerator>();
    g->fit(histories, catalog);
    return g;
}

inline std::unique_ptr<CandidateGenerator> fit_markov(const std::vector<UserHistory>& histories,
                                                      const Catalog& catalog)
{
    auto g = std::make_unique<MarkovGenerator>();
    g->fit(histories, catalog);
    return g;
}

inline std::unique_ptr<CandidateGenerator> fit_embedding(const std::vector<UserHistory>& histories,
                                                         const Catalog& catalog)
{
    auto g = std::make_unique<EmbeddingGenerator>();
    g->fit(histories, catalog);
    return g;
}

// ---------------------------------------------------------------------------
// Feedback augmentation

struct Feedback {
    UserId user;
    ItemId item;

    friend bool operator==(const Feedback&, const Feedback&) = default;
};

inline std::vector<Feedback> load_feedback(const std::filesystem::path& path)
{
    auto in = usersim::detail::open_input(path);
    std::vector<Feedback> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (usersim::detail::blank(line)) {
            continue;
        }
        try {
            auto j = json::parse(line);
            out.push_back({UserId(j.at("user").get<std::string>()), ItemId(j.at("item").get<std::string>())});
        } catch (const std::exception& e) {
            throw input_error(usersim::detail::at_line(path, lineno) + "malformed feedback row: " + e.what());
        }
    }
    return out;
}

template <typename T>
struct Augmented {
    T value;
    std::vector<std::string> warnings;
};

namespace detail {

/// Validated, de-duplicated feedback grouped per user, in input order.
inline std::map<UserId, std::vector<ItemId>> group_feedback(const std::vector<Feedback>& feedback,
                                                            const std::set<UserId>& users, const Catalog& catalog,
                                                            std::vector<std::string>& warnings)
{
    std::map<UserId, std::vector<ItemId>> grouped;
    std::set<std::pair<UserId, ItemId>> seen;
    for (const auto& f : feedback) {
        if (!users.contains(f.user)) {
            throw input_error("feedback names unknown user '" + f.user.str() + "'");
        }
        if (!catalog.contains(f.item)) {
            throw input_error("feedback names unknown item '" + f.item.str() + "'");
        }
        if (!seen.emplace(f.user, f.item).second) {
            warnings.push_back("duplicate feedback (" + f.user.str() + ", " + f.item.str() + ") ignored");
            continue;
        }
        grouped[f.user].push_back(f.item);
    }
    return grouped;
}

} // namespace detail

/// Appends liked items as pseudo-behaviors with fresh, larger ordinals.
/// Existing behaviors are left untouched.
inline Augmented<std::vector<UserHistory>> augment_with_feedback(const std::vector<UserHistory>& histories,
                                                                 const std::vector<Feedback>& feedback,
                                                                 const Catalog& catalog)
{
    std::set<UserId> users;
    for (const auto& h : histories) {
        users.insert(h.user());
    }
    Augmented<std::vector<UserHistory>> out;
    auto grouped = detail::group_feedback(feedback, users, catalog, out.warnings);
    out.value.reserve(histories.size());
    for (const auto& h : histories) {
        auto it = grouped.find(h.user());
        if (it == grouped.end()) {
            out.value.push_back(h);
            continue;
        }
        auto behaviors = h.behaviors();
        auto ord = behaviors.back().timestamp;
        for (const auto& item : it->second) {
            behaviors.push_back({item, std::nullopt, ++ord});
        }
        out.value.emplace_back(h.user(), std::move(behaviors));
    }
    return out;
}

/// Same augmentation applied to training sequences.
inline Augmented<std::vector<Sequence>> augment_sequences(const std::vector<Sequence>& sequences,
                                                          const std::vector<Feedback>& feedback,
                                                          const Catalog& catalog)
{
    std::set<UserId> users;
    for (const auto& s : sequences) {
        users.insert(s.user);
    }
    Augmented<std::vector<Sequence>> out;
    auto grouped = detail::group_feedback(feedback, users, catalog, out.warnings);
    out.value = sequences;
    for (auto& s : out.value) {
        if (auto it = grouped.find(s.user); it != grouped.end()) {
            s.items.insert(s.items.end(), it->second.begin(), it->second.end());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Item feature files

/// Feature hashing of the display text (caption when present), L2-normalized.
[[nodiscard]] inline std::vector<double> hashed_text_feature(std::string_view text, std::size_t dim)
{
    std::vector<double> v(dim, 0.0);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            const auto h = fnv1a(word);
            v[h % dim] += (h >> 63) ? -1.0 : 1.0;
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (auto& x : v) {
            x /= norm;
        }
    }
    return v;
}

inline void attach_text_features(Catalog& catalog, std::size_t dim)
{
    for (auto& [id, item] : catalog) {
        item.feature = hashed_text_feature(item.display_text(), dim);
    }
}

inline constexpr char feature_file_magic[4] = {'U', 'S', 'V', 'F'};

/// Binary layout (little-endian): "USVF", u32 dim, u32 count, then per
/// record u32 id length, id bytes, dim float32 values.
inline void write_features_binary(const std::filesystem::path& path, const Catalog& catalog)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw input_error("cannot write '" + path.string() + "'");
    }
    std::uint32_t dim = 0;
    std::uint32_t count = 0;
    for (const auto& [id, item] : catalog) {
        if (item.feature) {
            dim = static_cast<std::uint32_t>(item.feature->size());
            ++count;
        }
    }
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    out.write(feature_file_magic, 4);
    put_u32(dim);
    put_u32(count);
    for (const auto& [id, item] : catalog) {
        if (!item.feature) {
            continue;
        }
        if (item.feature->size() != dim) {
            throw input_error("inconsistent feature dimension for item '" + id.str() + "'");
        }
        put_u32(static_cast<std::uint32_t>(id.str().size()));
        out.write(id.str().data(), static_cast<std::streamsize>(id.str().size()));
        for (double x : *item.feature) {
            const auto f = static_cast<float>(x);
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
    }
}

inline void write_features_jsonl(std::ostream& out, const Catalog& catalog)
{
    for (const auto& [id, item] : catalog) {
        if (item.feature) {
            out << json{{"item", id.str()}, {"vec", *item.feature}}.dump() << '\n';
        }
    }
}

struct FeatureLoadReport {
    std::size_t attached = 0;
    std::size_t unknown_items = 0;
};

/// Attaches feature vectors from a JSONL ({"item", "vec"}) or binary
/// (".bin", see write_features_binary) file.
inline FeatureLoadReport load_features(Catalog& catalog, const std::filesystem::path& path)
{
    FeatureLoadReport report;
    auto assign = [&](const std::string& id, std::vector<double> vec) {
        for (double x : vec) {
            if (!std::isfinite(x)) {
                throw input_error(path.string() + ": non-finite feature for item '" + id + "'");
            }
        }
        auto it = catalog.find(ItemId(id));
        if (it == catalog.end()) {
            ++report.unknown_items;
            return;
        }
        it->second.feature = std::move(vec);
        ++report.attached;
    };

    if (path.extension() == ".bin") {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw input_error("cannot open '" + path.string() + "'");
        }
        auto get_u32 = [&]() {
            unsigned char b[4];
            if (!in.read(reinterpret_cast<char*>(b), 4)) {
                throw input_error(path.string() + ": truncated feature file");
            }
            return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                   (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        };
        char magic[4];
        if (!in.read(magic, 4) || std::memcmp(magic, feature_file_magic, 4) != 0) {
            throw input_error(path.string() + ": not a feature file");
        }
        const auto dim = get_u32();
        const auto count = get_u32();
        for (std::uint32_t r = 0; r < count; ++r) {
            const auto len = get_u32();
            std::string id(len, '\0');
            if (!in.read(id.data(), len)) {
                throw input_error(path.string() + ": truncated feature file");
            }
            std::vector<double> vec(dim);
            for (auto& x : vec) {
                const auto bits = get_u32();
                float f = 0.0F;
                std::memcpy(&f, &bits, 4);
                x = f;
            }
            assign(id, std::move(vec));
        }
        return report;
    }

    auto in = usersim::detail::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (usersim::detail::blank(line)) {
            continue;
        }
        std::string id;
        std::vector<double> vec;
        try {
            auto j = json::parse(line);
            id = j.at("item").get<std::string>();
            vec = j.at("vec").get<std::vector<double>>();
        } catch (const std::exception& e) {
            throw input_error(usersim::detail::at_line(path, lineno) + "malformed feature row: " + e.what());
        }
        assign(id, std::move(vec));
    }
    return report;
}

} // namespace usersim::rec
