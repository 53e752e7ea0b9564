#pragma once

// Command-line front end. Every command writes into a run directory:
// its outputs, the resolved configuration (config.toml, readable back via
// --config) and manifest.json with seeds and SHA-256 digests of inputs.
//
// Exit codes: 0 success, 1 internal error, 2 usage or input error.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "usersim/core.hpp"
#include "usersim/env.hpp"
#include "usersim/http_transport.hpp"
#include "usersim/ipagent.hpp"
#include "usersim/llmclient.hpp"
#include "usersim/metrics.hpp"
#include "usersim/mock_endpoints.hpp"
#include "usersim/recommender.hpp"
#include "usersim/rewards.hpp"
#include "usersim/synthetic.hpp"
#include "usersim/trainer.hpp"

namespace usersim::cli {

namespace fs = std::filesystem;

inline std::string sha256_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw input_error("cannot read '" + path.string() + "'");
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw error("SHA-256 initialisation failed");
    }
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) {
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        char b[3];
        std::snprintf(b, sizeof b, "%02x", md[i]);
        hex += b;
    }
    return hex;
}

/// Run directory bookkeeping.
class Run {
public:
    Run(std::string command, fs::path dir) : command_(std::move(command)), dir_(std::move(dir))
    {
        fs::create_directories(dir_);
        manifest_["command"] = command_;
        manifest_["inputs"] = json::object();
        manifest_["outputs"] = json::array();
        manifest_["seeds"] = json::object();
        manifest_["summary"] = json::object();
    }

    [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }
    [[nodiscard]] const fs::path& dir() const noexcept { return dir_; }

    void input(const std::string& key, const fs::path& p)
    {
        manifest_["inputs"][key] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
    }
    void output(const fs::path& p) { manifest_["outputs"].push_back(p.string()); }
    void seed(const std::string& key, std::uint64_t v) { manifest_["seeds"][key] = v; }
    json& summary() { return manifest_["summary"]; }

    /// Writes config.toml and manifest.json. `status` is "ok" or an error text.
    void finish(const CLI::App& app, const CLI::App& sub, const std::string& status = "ok")
    {
        json cfg = json::object();
        for (const auto* opt : sub.get_options()) {
            const auto name = opt->get_single_name();
            if (name.empty() || name == "help") {
                continue;
            }
            if (opt->count() > 0) {
                const auto& r = opt->results();
                cfg[name] = r.size() == 1 ? json(r.front()) : json(r);
            } else {
                cfg[name] = opt->get_default_str();
            }
        }
        manifest_["config"] = cfg;
        manifest_["status"] = status;

        std::ofstream toml(path("config.toml"));
        std::istringstream all(app.config_to_str(true, false));
        const auto prefix = command_ + ".";
        for (std::string line; std::getline(all, line);) {
            if (line.starts_with(prefix)) {
                toml << line << '\n';
            }
        }
        std::ofstream(path("manifest.json")) << manifest_.dump(2) << '\n';
    }

private:
    std::string command_;
    fs::path dir_;
    json manifest_;
};

// ---------------------------------------------------------------------------
// Shared option groups

struct DataOpts {
    std::string interactions;
    std::string items;
    std::string captions;
    std::string features;
};

inline void add_data_options(CLI::App* sub, DataOpts& d, bool interactions_required = true)
{
    auto* o = sub->add_option("--interactions", d.interactions, "Interaction file (.jsonl, or .tsv/.txt)");
    if (interactions_required) {
        o->required();
    }
    sub->add_option("--items", d.items, "Item titles JSONL {\"item\",\"title\"}");
    sub->add_option("--captions", d.captions, "Enhanced captions JSONL {\"item\",\"caption\"}");
    sub->add_option("--features", d.features, "Item feature vectors (.bin or JSONL {\"item\",\"vec\"})");
}

inline IngestResult load_data(const DataOpts& d, Run& run, std::ostream& log)
{
    auto data = load_interactions(d.interactions);
    run.input("interactions", d.interactions);
    if (data.dropped_users > 0) {
        log << "warning: dropped " << data.dropped_users << " users with fewer than 2 interactions\n";
    }
    if (!d.items.empty()) {
        const auto unknown = attach_titles(data.catalog, d.items);
        run.input("items", d.items);
        if (unknown > 0) {
            log << "warning: " << unknown << " title rows name items without interactions\n";
        }
    }
    if (!d.captions.empty()) {
        const auto rep = attach_captions(data.catalog, d.captions);
        run.input("captions", d.captions);
        for (const auto& w : rep.warnings) {
            log << "warning: " << w << '\n';
        }
    }
    if (!d.features.empty()) {
        const auto rep = rec::load_features(data.catalog, d.features);
        run.input("features", d.features);
        if (rep.unknown_items > 0) {
            log << "warning: " << rep.unknown_items << " feature rows name unknown items\n";
        }
    }
    return data;
}

struct EndpointOpts {
    std::string endpoint = "mock:random";
    std::string model = "default";
    std::string replay;
    std::string record;
    std::size_t max_in_flight = 4;
    int retries = 3;
    double timeout = 120.0;
    int backoff_ms = 500;
};

inline void add_endpoint_options(CLI::App* sub, EndpointOpts& e)
{
    sub->add_option("--endpoint", e.endpoint, "Base URL of a chat-completion server, or mock:yes|random[:seed]|caption")
        ->capture_default_str();
    sub->add_option("--model", e.model, "Model name sent with each request")->capture_default_str();
    sub->add_option("--replay", e.replay, "Answer from a recorded JSONL log instead of the endpoint");
    sub->add_option("--record", e.record, "Append every exchange to this JSONL log");
    sub->add_option("--max-in-flight", e.max_in_flight, "Concurrent request bound")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--retries", e.retries, "Retries per request")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--timeout", e.timeout, "Per-request timeout in seconds")->capture_default_str();
    sub->add_option("--backoff-ms", e.backoff_ms, "Initial retry backoff")->capture_default_str();
}

inline std::unique_ptr<llm::ChatClient> make_client(const EndpointOpts& e, Run& run)
{
    llm::EndpointConfig cfg;
    cfg.base_url = e.endpoint;
    cfg.api_key = llm::EndpointConfig::key_from_env();
    cfg.max_in_flight = e.max_in_flight;
    cfg.max_retries = e.retries;
    cfg.timeout_seconds = e.timeout;
    cfg.backoff_initial = std::chrono::milliseconds(e.backoff_ms);
    std::shared_ptr<llm::Transport> t;
    if (!e.replay.empty()) {
        t = std::make_shared<llm::ReplayTransport>(e.replay);
        run.input("replay", e.replay);
    } else if (e.endpoint.starts_with("mock:")) {
        t = llm::make_mock_transport(e.endpoint);
    } else {
        t = std::make_shared<llm::HttpTransport>(cfg);
    }
    if (!e.record.empty()) {
        t = std::make_shared<llm::RecordingTransport>(t, e.record);
        run.output(e.record);
    }
    return std::make_unique<llm::ChatClient>(t, cfg);
}

struct EpisodeOpts {
    std::string task = "selection";
    std::size_t m = 3;
    std::size_t top_k = 10;
    std::string recall = "popularity";
    std::uint64_t seed = 0;
};

inline void add_episode_options(CLI::App* sub, EpisodeOpts& o)
{
    sub->add_option("--task", o.task, "judgment, selection or both")
        ->capture_default_str()
        ->check(CLI::IsMember({"judgment", "selection", "both"}));
    sub->add_option("--m", o.m, "Negatives per selection episode")->capture_default_str();
    sub->add_option("--top-k", o.top_k, "Recall depth the negatives are drawn from")->capture_default_str();
    sub->add_option("--recall", o.recall, "Recall model: popularity, markov or embedding")->capture_default_str();
    sub->add_option("--seed", o.seed, "Root seed for candidate sampling")->capture_default_str();
}

/// Selection episodes, or balanced judgment pairs, one set per user.
inline std::vector<env::Episode> build_episodes(const IngestResult& data, const EpisodeOpts& o)
{
    env::EnvConfig cfg;
    cfg.m = o.m;
    cfg.top_k = o.top_k;
    cfg.seed = o.seed;
    cfg.validate();
    auto recall = rec::make_generator(rec::parse_generator_kind(o.recall));
    recall->fit(data.histories, data.catalog);
    std::vector<env::Episode> out;
    for (const auto& h : data.histories) {
        if (o.task != "selection") {
            for (auto& ep : env::make_judgment_pair(h, data.catalog, cfg, *recall)) {
                out.push_back(std::move(ep));
            }
        }
        if (o.task != "judgment") {
            out.push_back(env::make_episode(h, data.catalog, env::EpisodeKind::selection, cfg, *recall));
        }
    }
    return out;
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& rows)
{
    std::ofstream out(path);
    if (!out) {
        throw input_error("cannot write '" + path.string() + "'");
    }
    for (const auto& r : rows) {
        out << r.dump() << '\n';
    }
}

inline void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------
// Commands

struct SynthOpts {
    std::size_t users = 50;
    std::size_t items = 120;
    std::size_t dim = 8;
    std::size_t frames = 10;
    std::uint64_t seed = 7;
};

inline void cmd_synth(const SynthOpts& o, Run& run, std::ostream& out)
{
    run.seed("world", o.seed);
    auto world = env::generate_synthetic_world(o.users, o.items, o.dim, o.seed);
    {
        std::ofstream f(run.path("interactions.jsonl"));
        write_interactions_jsonl(f, world.histories);
    }
    {
        std::ofstream f(run.path("items.jsonl"));
        write_items_jsonl(f, world.catalog);
    }
    // frame scores are stand-ins for an external image/text similarity model
    std::mt19937_64 rng(mix_seed(o.seed, 0xf7a3e5ULL));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<json> frames;
    for (const auto& [id, item] : world.catalog) {
        json fl = json::array();
        for (std::size_t k = 0; k < o.frames; ++k) {
            const double score = std::round(unif(rng) * 1e4) / 1e4;
            fl.push_back({{"idx", k}, {"ref", "https://frames.invalid/" + id.str() + "/" + std::to_string(k) + ".jpg"},
                          {"score", score}});
        }
        frames.push_back({{"item", id.str()}, {"frames", fl}});
    }
    write_jsonl(run.path("frame_scores.jsonl"), frames);
    // pseudo-feedback pointing at each user's held-out item
    std::vector<json> feedback;
    for (const auto& h : world.histories) {
        feedback.push_back({{"user", h.user().str()}, {"item", h.target().item.str()}});
    }
    write_jsonl(run.path("feedback_heldout.jsonl"), feedback);
    for (const auto* name : {"interactions.jsonl", "items.jsonl", "frame_scores.jsonl", "feedback_heldout.jsonl"}) {
        run.output(name);
    }
    run.summary() = {{"users", world.histories.size()}, {"items", world.catalog.size()}};
    out << "wrote " << world.histories.size() << " users and " << world.catalog.size() << " items to "
        << run.dir().string() << '\n';
}

struct AugmentOpts {
    DataOpts data;
    EndpointOpts endpoint;
    std::string frame_scores;
    std::string out;
    std::size_t parallelism = 4;
    std::size_t word_limit = 45;
    std::size_t keyframes = 3;
};

inline void cmd_augment(const AugmentOpts& o, Run& run, std::ostream& out, std::ostream& log)
{
    auto data = load_data(o.data, run, log);
    auto scores = ip::load_frame_scores(o.frame_scores);
    run.input("frame_scores", o.frame_scores);
    auto client = make_client(o.endpoint, run);
    const fs::path captions = o.out.empty() ? run.path("captions.jsonl") : fs::path(o.out);
    ip::PipelineOptions popts;
    popts.model = o.endpoint.model;
    popts.word_limit = o.word_limit;
    popts.keyframes = o.keyframes;
    popts.image_root = fs::path(o.frame_scores).parent_path();
    std::ofstream transcripts(run.path("ip_transcripts.jsonl"), std::ios::app);
    auto report = ip::batch_augment(data.catalog, scores, *client, captions, o.parallelism, popts, {}, &transcripts);
    std::vector<json> failures;
    for (const auto& f : report.failures) {
        failures.push_back(ip::to_json(f));
    }
    write_jsonl(run.path("failures.jsonl"), failures);
    for (const auto& w : report.warnings) {
        log << "warning: " << w << '\n';
    }
    run.output(captions);
    run.output("ip_transcripts.jsonl");
    run.output("failures.jsonl");
    run.summary() = {{"written", report.written}, {"skipped", report.skipped}, {"failed", report.failures.size()},
                     {"retries", client->total_retries()}};
    out << "written: " << report.written << " skipped: " << report.skipped << " failed: " << report.failures.size()
        << '\n';
}

struct EvalRecOpts {
    DataOpts data;
    std::string model = "markov";
    std::vector<std::size_t> ks{10, 20};
    std::vector<std::string> slices{"all", "cold"};
    std::size_t feature_dim = 64;
};

/// Hashed text features for the embedding model when no feature file is given.
inline void ensure_features(IngestResult& data, rec::GeneratorKind kind, const DataOpts& d, std::size_t dim)
{
    if (kind == rec::GeneratorKind::embedding && d.features.empty()) {
        rec::attach_text_features(data.catalog, dim);
    }
}

inline json cmd_eval_rec(const EvalRecOpts& o, Run& run, std::ostream& out, std::ostream& log)
{
    auto data = load_data(o.data, run, log);
    const auto kind = rec::parse_generator_kind(o.model);
    ensure_features(data, kind, o.data, o.feature_dim);
    auto gen = rec::make_generator(kind);
    gen->fit(data.histories, data.catalog);
    json reports = json::array();
    for (const auto& s : o.slices) {
        const auto slice = rec::parse_slice(s);
        const auto ranks = rec::leave_one_out_ranks(*gen, data.histories, slice);
        auto j = rec::to_json(rec::ranking_report(ranks, o.ks, slice));
        for (auto k : o.ks) {
            j["random_hr@" + std::to_string(k)] = rec::random_ranker_hr(ranks, k);
        }
        reports.push_back(j);
    }
    json result{{"model", o.model}, {"reports", reports}};
    write_json(run.path("report.json"), result);
    run.output("report.json");
    run.summary() = result;
    out << result.dump(2) << '\n';
    return result;
}

struct EpisodesOpts {
    DataOpts data;
    EpisodeOpts episode;
};

inline void cmd_episodes(const EpisodesOpts& o, Run& run, std::ostream& out, std::ostream& log)
{
    auto data = load_data(o.data, run, log);
    run.seed("episodes", o.episode.seed);
    const auto eps = build_episodes(data, o.episode);
    env::write_episodes(run.path("episodes.jsonl"), eps);
    run.output("episodes.jsonl");
    run.summary() = {{"episodes", eps.size()}};
    out << "wrote " << eps.size() << " episodes\n";
}

struct SimulateOpts {
    DataOpts data;
    EpisodeOpts episode;
    EndpointOpts endpoint;
    std::string episodes;
    double temperature = 0.0;
};

inline json cmd_simulate(const SimulateOpts& o, Run& run, std::ostream& out, std::ostream& log)
{
    std::vector<env::Episode> eps;
    if (!o.episodes.empty()) {
        eps = env::read_episodes(o.episodes);
        run.input("episodes", o.episodes);
    } else if (!o.data.interactions.empty()) {
        run.seed("episodes", o.episode.seed);
        eps = build_episodes(load_data(o.data, run, log), o.episode);
    } else {
        throw input_error("simulate needs --episodes or --interactions");
    }
    if (eps.empty()) {
        throw input_error("no episodes to simulate");
    }
    auto client = make_client(o.endpoint, run);
    std::vector<llm::ChatRequest> reqs;
    for (const auto& ep : eps) {
        llm::ChatRequest r;
        r.model = o.endpoint.model;
        r.temperature = o.temperature;
        r.messages.push_back({"user", ep.prompt, {}});
        reqs.push_back(std::move(r));
    }
    const auto replies = client->complete_batch(reqs);

    std::vector<json> transcripts;
    std::vector<Label> preds;
    std::vector<Label> truths;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> selection; // m -> (correct, total)
    std::size_t errors = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const auto& ep = eps[i];
        json t = to_json(ep);
        const auto& reply = replies[i];
        bool correct = false;
        if (reply.ok()) {
            const auto parsed = parse_response(*reply.text, ep.task, ep.candidate_texts);
            const auto reward = total_reward(*reply.text, ep.task, ep.candidate_texts);
            correct = action_correct(parsed, ep.task);
            t["response"] = *reply.text;
            t["reward"] = {{"format", reward.r_format}, {"task", reward.r_task}, {"total", reward.total}};
            if (parsed.action) {
                t["action"] = parsed.action->kind == Action::Kind::select ? json(parsed.action->index)
                              : parsed.action->kind == Action::Kind::yes  ? json("yes")
                                                                          : json("no");
            } else {
                t["action"] = nullptr;
            }
        } else {
            ++errors;
            t["error"] = reply.error;
        }
        t["correct"] = correct;
        transcripts.push_back(std::move(t));
        if (const auto* j = std::get_if<JudgmentTask>(&ep.task)) {
            truths.push_back(j->label);
            // unanswered or unparseable counts as the wrong label
            const auto other = j->label == Label::like ? Label::dislike : Label::like;
            preds.push_back(correct ? j->label : other);
        } else {
            const auto m = std::get<SelectionTask>(ep.task).candidates.presentation_order.size() - 1;
            auto& [c, n] = selection[m];
            c += correct ? 1 : 0;
            ++n;
        }
    }
    write_jsonl(run.path("transcripts.jsonl"), transcripts);
    run.output("transcripts.jsonl");

    json metrics{{"episodes", eps.size()}, {"errors", errors}};
    if (!preds.empty()) {
        const auto c = rec::classification_metrics(preds, truths);
        metrics["judgment"] = {{"n", preds.size()}, {"acc", c.acc}, {"precision", c.precision}, {"recall", c.recall},
                               {"f1", c.f1}};
    }
    for (const auto& [m, cn] : selection) {
        metrics["selection"]["m=" + std::to_string(m)] = {
            {"n", cn.second}, {"acc", static_cast<double>(cn.first) / static_cast<double>(cn.second)}};
    }
    write_json(run.path("metrics.json"), metrics);
    run.output("metrics.json");
    run.summary() = metrics;
    if (errors > 0) {
        log << "warning: " << errors << " of " << eps.size() << " requests failed\n";
    }
    out << metrics.dump(2) << '\n';
    return metrics;
}

struct TrainToyOpts {
    std::string world_spec;
    std::string grpo_config;
    std::size_t users = 200;
    std::size_t items = 300;
    std::size_t dim = 8;
    std::uint64_t world_seed = 42;
    double noise = 0.0;
    std::size_t m = 3;
    std::size_t group_size = 16;
    double beta = 0.001;
    double clip = 0.2;
    double lr = 0.05;
    std::size_t batch = 16;
    double temperature = 1.0;
    std::size_t iters = 2000;
    std::uint64_t seed = 3;
    std::string mode = "curriculum";
    double judgment_fraction = 0.5;
    std::size_t heldout_per_user = 6;
};

/// Overrides `field` from `j[key]` unless the flag was given on the command line.
template <typename T>
void from_file(const json& j, const char* key, T& field, const CLI::App& sub, const char* flag)
{
    if (j.contains(key) && sub.get_option(flag)->count() == 0) {
        field = j.at(key).get<T>();
    }
}

inline json read_json_file(const fs::path& p)
{
    auto in = usersim::detail::open_input(p);
    try {
        return json::parse(in);
    } catch (const std::exception& e) {
        throw input_error("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

inline json cmd_train_toy(TrainToyOpts o, const CLI::App& sub, Run& run, std::ostream& out)
{
    if (!o.world_spec.empty()) {
        const auto j = read_json_file(o.world_spec);
        run.input("world_spec", o.world_spec);
        from_file(j, "users", o.users, sub, "--users");
        from_file(j, "items", o.items, sub, "--items");
        from_file(j, "dim", o.dim, sub, "--dim");
        from_file(j, "seed", o.world_seed, sub, "--world-seed");
        from_file(j, "noise", o.noise, sub, "--noise");
        from_file(j, "m", o.m, sub, "--m");
    }
    if (!o.grpo_config.empty()) {
        const auto j = read_json_file(o.grpo_config);
        run.input("grpo_config", o.grpo_config);
        from_file(j, "group_size", o.group_size, sub, "--group-size");
        from_file(j, "kl_coefficient", o.beta, sub, "--beta");
        from_file(j, "clip_epsilon", o.clip, sub, "--clip");
        from_file(j, "learning_rate", o.lr, sub, "--lr");
        from_file(j, "batch_size", o.batch, sub, "--batch");
        from_file(j, "temperature", o.temperature, sub, "--temperature");
        from_file(j, "judgment_fraction", o.judgment_fraction, sub, "--judgment-fraction");
    }
    run.seed("world", o.world_seed);
    run.seed("train", o.seed);

    env::WorldOptions wopts;
    wopts.noise = o.noise;
    auto world = env::generate_synthetic_world(o.users, o.items, o.dim, o.world_seed, wopts);
    env::EnvConfig ecfg;
    ecfg.m = o.m;
    ecfg.seed = mix_seed(o.seed, 1);
    env::WorldEpisodeSource source(world, ecfg);
    grpo::ToySoftmaxPolicy policy(world.observation_dim(), o.temperature);

    grpo::TrainConfig tc;
    tc.grpo.group_size = o.group_size;
    tc.grpo.kl_coefficient = o.beta;
    tc.grpo.clip_epsilon = o.clip;
    tc.grpo.learning_rate = o.lr;
    tc.batch_size = o.batch;
    tc.iterations = o.iters;
    tc.seed = o.seed;
    tc.mode = grpo::parse_task_mode(o.mode);
    tc.judgment_fraction = o.judgment_fraction;

    const auto sel = source.heldout(false, o.heldout_per_user);
    const auto jud = source.heldout(true, o.heldout_per_user);
    const double sel0 = grpo::evaluate_policy(policy, sel);
    const double jud0 = grpo::evaluate_policy(policy, jud);
    const auto result = grpo::train(source, policy, tc);

    std::vector<json> trace;
    for (const auto& row : result.trace) {
        trace.push_back(grpo::to_json(row));
    }
    write_jsonl(run.path("trace.jsonl"), trace);
    write_json(run.path("policy.json"),
               {{"dim", policy.dim()}, {"temperature", policy.temperature()}, {"weights", policy.parameters()}});
    json summary{{"iterations", o.iters},
                 {"mode", o.mode},
                 {"switch_iteration", result.switch_iteration ? json(*result.switch_iteration) : json(nullptr)},
                 {"heldout_selection_episodes", sel.size()},
                 {"heldout_judgment_episodes", jud.size()},
                 {"initial_selection_acc", sel0},
                 {"initial_judgment_acc", jud0},
                 {"final_selection_acc", grpo::evaluate_policy(policy, sel)},
                 {"final_judgment_acc", grpo::evaluate_policy(policy, jud)},
                 {"selection_chance", 1.0 / static_cast<double>(o.m + 1)}};
    write_json(run.path("summary.json"), summary);
    for (const auto* name : {"trace.jsonl", "policy.json", "summary.json"}) {
        run.output(name);
    }
    run.summary() = summary;
    out << summary.dump(2) << '\n';
    return summary;
}

struct RerankOpts {
    DataOpts data;
    std::string feedback;
    std::string model = "markov";
    std::vector<std::size_t> ks{10, 20};
    std::string slice = "all";
    std::size_t feature_dim = 64;
};

inline json cmd_rerank(const RerankOpts& o, Run& run, std::ostream& out, std::ostream& log)
{
    auto data = load_data(o.data, run, log);
    const auto feedback = rec::load_feedback(o.feedback);
    run.input("feedback", o.feedback);
    const auto kind = rec::parse_generator_kind(o.model);
    ensure_features(data, kind, o.data, o.feature_dim);
    auto r = rec::rerank_with_feedback(kind, data.histories, data.catalog, feedback, o.ks, rec::parse_slice(o.slice));
    for (const auto& w : r.warnings) {
        log << "warning: " << w << '\n';
    }
    const auto before = rec::to_json(r.before);
    const auto after = rec::to_json(r.after);
    write_json(run.path("before.json"), before);
    write_json(run.path("after.json"), after);
    json delta;
    for (auto k : o.ks) {
        const auto key = "hr@" + std::to_string(k);
        delta[key] = after[key].get<double>() - before[key].get<double>();
    }
    json report{{"model", o.model}, {"feedback_rows", feedback.size()}, {"before", before}, {"after", after},
                {"delta", delta}};
    write_json(run.path("report.json"), report);
    for (const auto* name : {"before.json", "after.json", "report.json"}) {
        run.output(name);
    }
    run.summary() = report;
    out << report.dump(2) << '\n';
    return report;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& log = std::cerr)
{
    CLI::App app{"usersim: user-simulation harness for video recommendation"};
    app.set_config("--config", "", "Key-value config file (TOML/INI); [command] sections, flags override");
    app.require_subcommand(1);

    std::string run_dir;
    auto add_run_dir = [&](CLI::App* sub) {
        sub->add_option("--run-dir", run_dir, "Output directory for results, config.toml and manifest.json")
            ->default_val("runs/" + sub->get_name());
    };

    SynthOpts synth;
    auto* s_synth = app.add_subcommand("synth", "Generate a synthetic dataset (interactions, titles, frame scores)");
    add_run_dir(s_synth);
    s_synth->add_option("--users", synth.users)->capture_default_str();
    s_synth->add_option("--items", synth.items)->capture_default_str();
    s_synth->add_option("--dim", synth.dim)->capture_default_str();
    s_synth->add_option("--frames", synth.frames, "Frames per item")->capture_default_str();
    s_synth->add_option("--seed", synth.seed)->capture_default_str();

    AugmentOpts aug;
    aug.endpoint.endpoint = "mock:caption";
    auto* s_aug = app.add_subcommand("augment", "Caption items with the three-stage perception pipeline");
    add_run_dir(s_aug);
    add_data_options(s_aug, aug.data);
    s_aug->add_option("--frame-scores", aug.frame_scores, "Frame scores JSONL")->required();
    s_aug->add_option("--out", aug.out, "Caption file (default <run-dir>/captions.jsonl); existing rows are kept");
    s_aug->add_option("--parallelism", aug.parallelism)->capture_default_str()->check(CLI::PositiveNumber);
    s_aug->add_option("--word-limit", aug.word_limit)->capture_default_str()->check(CLI::PositiveNumber);
    s_aug->add_option("--keyframes", aug.keyframes)->capture_default_str()->check(CLI::PositiveNumber);
    add_endpoint_options(s_aug, aug.endpoint);

    EvalRecOpts er;
    auto* s_er = app.add_subcommand("eval-rec", "Leave-one-out HR@K / NDCG@K of a candidate generator");
    add_run_dir(s_er);
    add_data_options(s_er, er.data);
    s_er->add_option("--model", er.model, "popularity, markov or embedding")->capture_default_str();
    s_er->add_option("--k", er.ks)->delimiter(',')->capture_default_str();
    s_er->add_option("--slice", er.slices, "all, cold")->delimiter(',')->capture_default_str();
    s_er->add_option("--feature-dim", er.feature_dim, "Hashed text feature size for embedding without --features")
        ->capture_default_str();

    EpisodesOpts epi;
    auto* s_epi = app.add_subcommand("episodes", "Build judgment/selection episodes and write them as JSONL");
    add_run_dir(s_epi);
    add_data_options(s_epi, epi.data);
    add_episode_options(s_epi, epi.episode);

    SimulateOpts sim;
    auto* s_sim = app.add_subcommand("simulate", "Score an endpoint acting as the user simulator");
    add_run_dir(s_sim);
    add_data_options(s_sim, sim.data, false);
    add_episode_options(s_sim, sim.episode);
    s_sim->add_option("--episodes", sim.episodes, "Episodes JSONL (otherwise built from --interactions)");
    s_sim->add_option("--temperature", sim.temperature)->capture_default_str();
    add_endpoint_options(s_sim, sim.endpoint);

    TrainToyOpts tt;
    auto* s_tt = app.add_subcommand("train-toy", "GRPO on a synthetic world with a bilinear softmax policy");
    add_run_dir(s_tt);
    s_tt->add_option("--world-spec", tt.world_spec, "JSON {users, items, dim, seed, noise, m}");
    s_tt->add_option("--grpo-config", tt.grpo_config,
                     "JSON {group_size, kl_coefficient, clip_epsilon, learning_rate, batch_size, temperature, "
                     "judgment_fraction}");
    s_tt->add_option("--users", tt.users)->capture_default_str();
    s_tt->add_option("--items", tt.items)->capture_default_str();
    s_tt->add_option("--dim", tt.dim)->capture_default_str();
    s_tt->add_option("--world-seed", tt.world_seed)->capture_default_str();
    s_tt->add_option("--noise", tt.noise, "Gumbel noise on the user's choices")->capture_default_str();
    s_tt->add_option("--m", tt.m)->capture_default_str();
    s_tt->add_option("--group-size", tt.group_size)->capture_default_str();
    s_tt->add_option("--beta", tt.beta, "KL coefficient")->capture_default_str();
    s_tt->add_option("--clip", tt.clip)->capture_default_str();
    s_tt->add_option("--lr", tt.lr)->capture_default_str();
    s_tt->add_option("--batch", tt.batch, "Episodes per iteration")->capture_default_str();
    s_tt->add_option("--temperature", tt.temperature)->capture_default_str();
    s_tt->add_option("--iters", tt.iters)->capture_default_str();
    s_tt->add_option("--seed", tt.seed)->capture_default_str();
    s_tt->add_option("--mode", tt.mode, "curriculum, judgment or selection")->capture_default_str();
    s_tt->add_option("--judgment-fraction", tt.judgment_fraction)->capture_default_str();
    s_tt->add_option("--heldout-per-user", tt.heldout_per_user)->capture_default_str();

    RerankOpts rr;
    auto* s_rr = app.add_subcommand("rerank", "Refit a generator with simulator feedback and compare reports");
    add_run_dir(s_rr);
    add_data_options(s_rr, rr.data);
    s_rr->add_option("--feedback", rr.feedback, "Feedback JSONL {\"user\",\"item\"}")->required();
    s_rr->add_option("--model", rr.model)->capture_default_str();
    s_rr->add_option("--k", rr.ks)->delimiter(',')->capture_default_str();
    s_rr->add_option("--slice", rr.slice)->capture_default_str();
    s_rr->add_option("--feature-dim", rr.feature_dim)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, log);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    std::unique_ptr<Run> r;
    try {
        r = std::make_unique<Run>(sub->get_name(), run_dir);
        if (sub == s_synth) {
            cmd_synth(synth, *r, out);
        } else if (sub == s_aug) {
            cmd_augment(aug, *r, out, log);
        } else if (sub == s_er) {
            cmd_eval_rec(er, *r, out, log);
        } else if (sub == s_epi) {
            cmd_episodes(epi, *r, out, log);
        } else if (sub == s_sim) {
            cmd_simulate(sim, *r, out, log);
        } else if (sub == s_tt) {
            cmd_train_toy(tt, *s_tt, *r, out);
        } else if (sub == s_rr) {
            cmd_rerank(rr, *r, out, log);
        }
        r->finish(app, *sub);
        return 0;
    } catch (const input_error& e) {
        log << "error: " << e.what() << '\n';
        if (r) {
            r->finish(app, *sub, std::string("input error: ") + e.what());
        }
        return 2;
    } catch (const std::exception& e) {
        log << "internal error: " << e.what() << '\n';
        if (r) {
            r->finish(app, *sub, std::string("internal error: ") + e.what());
        }
        return 1;
    }
}

} // namespace usersim::cli
