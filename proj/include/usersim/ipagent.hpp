#pragma once

// Item perception: pick keyframes from precomputed frame/title similarity
// scores, then run a three-turn conversation (focus, collaborative
// perception, recommendation-oriented summary) to get an enhanced caption.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "usersim/core.hpp"
#include "usersim/llmclient.hpp"

namespace usersim::ip {

struct Frame {
    int idx = 0;
    std::string ref; ///< image path or URL
    double score = 0.0;

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct FrameScores {
    ItemId item;
    std::vector<Frame> frames;
};

/// Reads {"item", "frames": [{"idx", "ref", "score"}]} rows.
inline std::map<ItemId, FrameScores> load_frame_scores(const std::filesystem::path& path)
{
    auto in = usersim::detail::open_input(path);
    std::map<ItemId, FrameScores> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (usersim::detail::blank(line)) {
            continue;
        }
        const auto where = usersim::detail::at_line(path, lineno);
        FrameScores fs;
        try {
            auto j = json::parse(line);
            fs.item = ItemId(j.at("item").get<std::string>());
            for (const auto& f : j.at("frames")) {
                fs.frames.push_back({f.at("idx").get<int>(), f.at("ref").get<std::string>(), f.at("score").get<double>()});
            }
        } catch (const std::exception& e) {
            throw input_error(where + "malformed frame-score row: " + e.what());
        }
        if (fs.frames.empty()) {
            throw input_error(where + "item '" + fs.item.str() + "' has no frames");
        }
        for (const auto& f : fs.frames) {
            if (!std::isfinite(f.score)) {
                throw input_error(where + "non-finite score for frame " + std::to_string(f.idx));
            }
        }
        auto id = fs.item;
        if (!out.emplace(id, std::move(fs)).second) {
            throw input_error(where + "duplicate frame scores for item '" + id.str() + "'");
        }
    }
    return out;
}

/// The n best frames by descending score; equal scores keep the lower
/// frame index first.
inline std::vector<Frame> select_keyframes(const FrameScores& scores, std::size_t n = 3)
{
    if (scores.frames.empty()) {
        throw input_error("item '" + scores.item.str() + "' has no frames to select from");
    }
    auto frames = scores.frames;
    const auto k = std::min(n, frames.size());
    std::partial_sort(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(k), frames.end(),
                      [](const Frame& a, const Frame& b) {
                          return a.score > b.score || (a.score == b.score && a.idx < b.idx);
                      });
    frames.resize(k);
    return frames;
}

// ---------------------------------------------------------------------------
// Prompts

struct IpPrompts {
    std::string focus =
        "You are a helpful assistant to help to understand a video. These are key {frames} from a video, and the "
        "title of the video is: {title}. Pay special attention to content related to the title.";
    std::string perception =
        "Based on the textual and visual contents, identify what visual content aligns with or extends beyond the "
        "title's description, note any discrepancies or additional context provided by the visuals. Now combined "
        "with your knowledge and understanding, give the key information about the video, including: main "
        "characters, core event and emotional appeal.";
    std::string summary =
        "If you want to recommend the video, create a concise summary within 35 words on what the viewer would be "
        "interested in, following this format: [Core Content Description] + [Refined Tags]. The content should be "
        "clear and elegant, and tags should be brief and accurate to reflect the video topic. Here is a good "
        "example: \"the girl just drove the wrong way, but did not expect to encounter terrible things # thriller "
        "movie # movie commentary\"";
    std::string limit_reminder =
        "The summary is too long. Rewrite it within 35 words, keeping the format [Core Content Description] + "
        "[Refined Tags], and reply with the summary only.";
};

inline std::string replace_all(std::string s, std::string_view from, std::string_view to)
{
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

/// Focus prompt text; the frames themselves travel as image attachments.
[[nodiscard]] inline std::string render_focus(const IpPrompts& p, const std::string& title)
{
    return replace_all(replace_all(p.focus, "{frames}", "frames"), "{title}", title);
}

// ---------------------------------------------------------------------------
// Captions

[[nodiscard]] inline std::vector<std::string> words_of(std::string_view text)
{
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    for (std::string w; in >> w;) {
        out.push_back(std::move(w));
    }
    return out;
}

/// Whitespace-token count; hashtags count per token.
[[nodiscard]] inline std::size_t word_count(std::string_view text) { return words_of(text).size(); }

inline std::string join_words(const std::vector<std::string>& words, std::size_t n)
{
    std::string out;
    for (std::size_t i = 0; i < std::min(n, words.size()); ++i) {
        out += (i ? " " : "") + words[i];
    }
    return out;
}

/// Single-line caption: whitespace collapsed, one pair of wrapping quotes dropped.
[[nodiscard]] inline std::string normalize_caption(std::string_view reply)
{
    auto s = join_words(words_of(reply), std::string::npos);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = join_words(words_of(s.substr(1, s.size() - 2)), std::string::npos);
    }
    return s;
}

[[nodiscard]] inline std::string base64(const std::string& bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

/// URLs pass through; local files become base64 data URLs.
inline std::string image_url(const std::string& ref, const std::filesystem::path& root = {})
{
    if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:")) {
        return ref;
    }
    std::filesystem::path p(ref);
    if (p.is_relative() && !root.empty()) {
        p = root / p;
    }
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw input_error("cannot read frame image '" + p.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    const std::string mime = ext == ".png" ? "image/png" : ext == ".webp" ? "image/webp" : "image/jpeg";
    return "data:" + mime + ";base64," + base64(bytes);
}

struct EnhancedCaption {
    ItemId item;
    std::string caption;
    std::size_t word_count = 0;
    /// Replies to the perception and summary turns, in that order.
    std::vector<std::string> stage_transcripts;
    int corrective_retries = 0;
    bool truncated = false;
    std::vector<std::string> warnings;
};

/// Failure of one item's pipeline; `stage` names the step that failed.
class pipeline_error : public error {
public:
    pipeline_error(ItemId item, std::string stage, const std::string& what)
        : error(item.str() + " [" + stage + "]: " + what), item_(std::move(item)), stage_(std::move(stage)), message_(what)
    {
    }
    [[nodiscard]] const ItemId& item() const noexcept { return item_; }
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
    ItemId item_;
    std::string stage_;
    std::string message_;
};

struct PipelineOptions {
    std::string model = "gpt-4o";
    double temperature = 0.0;
    int max_tokens = 2048;
    std::size_t word_limit = 45;
    std::size_t keyframes = 3;
    std::filesystem::path image_root; ///< base for relative frame paths
};

/// Three turns in one conversation; the title is sent once and the later
/// turns rely on the conversation history.
inline EnhancedCaption run_ip_pipeline(const Item& item, const std::vector<Frame>& keyframes, llm::ChatClient& client,
                                       const IpPrompts& prompts = {}, const PipelineOptions& opts = {})
{
    llm::ChatRequest req;
    req.model = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;

    auto turn = [&](const std::string& stage, llm::Message msg) {
        req.messages.push_back(std::move(msg));
        std::string reply;
        try {
            reply = client.complete(req);
        } catch (const std::exception& e) {
            throw pipeline_error(item.id, stage, e.what());
        }
        if (usersim::detail::blank(reply)) {
            throw pipeline_error(item.id, stage, "empty model reply");
        }
        req.messages.push_back({"assistant", reply, {}});
        return reply;
    };

    llm::Message focus{"user", render_focus(prompts, item.title), {}};
    try {
        for (const auto& f : keyframes) {
            focus.images.push_back(image_url(f.ref, opts.image_root));
        }
    } catch (const std::exception& e) {
        throw pipeline_error(item.id, "focus", e.what());
    }
    turn("focus", std::move(focus));

    EnhancedCaption out;
    out.item = item.id;
    out.stage_transcripts.push_back(turn("perception", {"user", prompts.perception, {}}));
    out.stage_transcripts.push_back(turn("summary", {"user", prompts.summary, {}}));

    auto caption = normalize_caption(out.stage_transcripts.back());
    if (word_count(caption) > opts.word_limit) {
        out.corrective_retries = 1;
        caption = normalize_caption(turn("summary-retry", {"user", prompts.limit_reminder, {}}));
        if (word_count(caption) > opts.word_limit) {
            out.warnings.push_back(item.id.str() + ": caption still has " + std::to_string(word_count(caption)) +
                                   " words after the corrective prompt; truncated to " +
                                   std::to_string(opts.word_limit));
            caption = join_words(words_of(caption), opts.word_limit);
            out.truncated = true;
        }
    }
    out.caption = std::move(caption);
    out.word_count = word_count(out.caption);
    return out;
}

// ---------------------------------------------------------------------------
// Batch runner

struct Failure {
    ItemId item;
    std::string stage;
    std::string message;
};

struct BatchReport {
    std::size_t written = 0;
    std::size_t skipped = 0;
    std::vector<Failure> failures;
    std::vector<std::string> warnings;
};

[[nodiscard]] inline json to_json(const Failure& f)
{
    return json{{"item", f.item.str()}, {"stage", f.stage}, {"message", f.message}};
}

[[nodiscard]] inline json caption_row(const EnhancedCaption& c)
{
    return json{{"item", c.item.str()}, {"caption", c.caption}};
}

[[nodiscard]] inline json transcript_row(const EnhancedCaption& c)
{
    return json{{"item", c.item.str()},           {"perception", c.stage_transcripts.at(0)},
                {"summary", c.stage_transcripts.at(1)}, {"caption", c.caption},
                {"word_count", c.word_count},     {"corrective_retries", c.corrective_retries},
                {"truncated", c.truncated}};
}

/// Items already present in a caption file.
inline std::set<ItemId> existing_captions(const std::filesystem::path& path)
{
    std::set<ItemId> out;
    if (!std::filesystem::exists(path)) {
        return out;
    }
    auto in = usersim::detail::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (usersim::detail::blank(line)) {
            continue;
        }
        try {
            out.emplace(json::parse(line).at("item").get<std::string>());
        } catch (const std::exception& e) {
            throw input_error(usersim::detail::at_line(path, lineno) + "malformed caption row: " + e.what());
        }
    }
    return out;
}

/// Captions every catalog item not yet present in `captions_out`, appending
/// rows in catalog order as soon as each prefix of results is complete.
/// Per-item failures go to the report and never stop the batch.
inline BatchReport batch_augment(const Catalog& catalog, const std::map<ItemId, FrameScores>& frame_scores,
                                 llm::ChatClient& client, const std::filesystem::path& captions_out,
                                 std::size_t parallelism = 1, const PipelineOptions& opts = {},
                                 const IpPrompts& prompts = {}, std::ostream* transcripts = nullptr)
{
    BatchReport report;
    const auto done = existing_captions(captions_out);
    std::vector<const Item*> todo;
    for (const auto& [id, item] : catalog) {
        if (done.contains(id)) {
            ++report.skipped;
        } else {
            todo.push_back(&item);
        }
    }
    std::ofstream out(captions_out, std::ios::app);
    if (!out) {
        throw input_error("cannot write captions to '" + captions_out.string() + "'");
    }

    struct Slot {
        bool ready = false;
        std::optional<EnhancedCaption> caption;
        std::optional<Failure> failure;
    };
    std::vector<Slot> slots(todo.size());
    std::size_t flushed = 0;
    std::mutex mu;

    // single writer: whoever completes the next unflushed slot drains the prefix
    auto flush_ready = [&] {
        while (flushed < slots.size() && slots[flushed].ready) {
            auto& s = slots[flushed];
            if (s.caption) {
                out << caption_row(*s.caption).dump() << '\n';
                if (transcripts != nullptr) {
                    *transcripts << transcript_row(*s.caption).dump() << '\n';
                }
                report.warnings.insert(report.warnings.end(), s.caption->warnings.begin(), s.caption->warnings.end());
                ++report.written;
            } else {
                report.failures.push_back(*s.failure);
            }
            s = Slot{true, std::nullopt, std::nullopt};
            ++flushed;
        }
        out.flush();
    };

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) {
            Slot s;
            s.ready = true;
            const auto& item = *todo[i];
            auto fs = frame_scores.find(item.id);
            if (fs == frame_scores.end()) {
                s.failure = Failure{item.id, "keyframes", "no frame scores for item"};
            } else {
                try {
                    s.caption = run_ip_pipeline(item, select_keyframes(fs->second, opts.keyframes), client, prompts, opts);
                } catch (const pipeline_error& e) {
                    s.failure = Failure{e.item(), e.stage(), e.message()};
                } catch (const std::exception& e) {
                    s.failure = Failure{item.id, "pipeline", e.what()};
                }
            }
            std::lock_guard lock(mu);
            slots[i] = std::move(s);
            flush_ready();
        }
    };
    const auto workers = std::max<std::size_t>(1, std::min(parallelism, todo.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
    }
    return report;
}

} // namespace usersim::ip
