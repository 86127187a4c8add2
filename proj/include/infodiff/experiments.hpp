#pragma once

// Experiment commands behind the CLI. Each command is a pure function of its
// JSON config and seed; outputs go to an output directory as JSON/CSV, with
// wall-clock time written separately to timing.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infodiff/datagen.hpp"
#include "infodiff/estimators.hpp"
#include "infodiff/identities.hpp"
#include "infodiff/learned_predictor.hpp"
#include "infodiff/oracle.hpp"
#include "infodiff/predictor.hpp"
#include "infodiff/quadrature.hpp"

namespace infodiff {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitCheckFailed = 2, kExitConfig = 3, kExitCap = 4 };

inline int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::kConfig:
        case ErrorCode::kIo:
        case ErrorCode::kFormat:
        case ErrorCode::kArgument:
        case ErrorCode::kBounds:
        case ErrorCode::kInfeasible:
            return kExitConfig;
        case ErrorCode::kCapExceeded:
            return kExitCap;
        default:
            return kExitFailure;
    }
}

// ---------------------------------------------------------------------------
// Config access with strict key checking
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// Hash of the canonical dump (object keys sorted).
inline std::string config_hash(const Json& config) { return hex64(fnv1a64(config.dump())); }

class ConfigNode {
public:
    ConfigNode(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) fail(ErrorCode::kConfig, path_ + " must be a JSON object");
    }

    // Rejects keys outside `allowed`.
    void allow(std::initializer_list<const char*> allowed) const {
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [key, value] : j_->items()) {
            if (!ok.count(key)) fail(ErrorCode::kConfig, "unknown key '" + where(key) + "'");
        }
    }

    bool has(const std::string& key) const { return j_->contains(key); }

    template <typename T>
    T get(const std::string& key, T fallback) const {
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    template <typename T>
    T need(const std::string& key) const {
        if (!has(key)) fail(ErrorCode::kConfig, "missing required key '" + where(key) + "'");
        return convert<T>(key);
    }

    ConfigNode child(const std::string& key) const {
        if (!has(key)) fail(ErrorCode::kConfig, "missing required section '" + where(key) + "'");
        return ConfigNode(j_->at(key), where(key));
    }

    std::optional<ConfigNode> maybe_child(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return ConfigNode(j_->at(key), where(key));
    }

    const Json& raw() const { return *j_; }
    const std::string& path() const { return path_; }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <typename T>
    T convert(const std::string& key) const {
        const Json& v = j_->at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw std::runtime_error("expected a number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)) {
                    throw std::runtime_error("expected a nonnegative integer");
                }
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::runtime_error("expected a boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::runtime_error("expected a string");
            }
            return v.get<T>();
        } catch (const std::exception& e) {
            fail(ErrorCode::kConfig, "bad value for '" + where(key) + "': " + e.what());
        }
    }

    const Json* j_;
    std::string path_;
};

// Positions as one-based text: "1-16", "2,4,7-9".
inline IndexSet parse_positions(const std::string& text, std::size_t length) {
    std::vector<std::size_t> out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part.empty()) continue;
        const auto dash = part.find('-');
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoul(part));
            } else {
                const std::size_t a = std::stoul(part.substr(0, dash)), b = std::stoul(part.substr(dash + 1));
                if (a > b) fail(ErrorCode::kConfig, "descending range '" + part + "'");
                for (std::size_t i = a; i <= b; ++i) out.push_back(i);
            }
        } catch (const std::logic_error&) {
            fail(ErrorCode::kConfig, "bad position list '" + text + "'");
        }
    }
    for (std::size_t i : out) {
        if (i < 1 || i > length) fail(ErrorCode::kConfig, "position " + std::to_string(i) + " outside 1.." + std::to_string(length));
    }
    return IndexSet::from_one_based(out, length);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
    std::string kind;  // "toy_categorical", "markov", "categorical_file", "markov_file"
    Alphabet alphabet{"AB"};
    std::shared_ptr<const ExplicitCategorical> categorical;
    std::shared_ptr<const MarkovWindowOracle> markov;
    std::vector<Token> corpus;  // Markov only; empty when windows are sampled from the chain
    std::uint64_t seed = 0;
    Json spec;

    const OracleDistribution& oracle() const {
        if (categorical) return *categorical;
        return *markov;
    }
    std::size_t length() const { return oracle().length(); }
    std::size_t alphabet_size() const { return oracle().alphabet_size(); }
};

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (path.empty() || std::filesystem::path(path).is_absolute() || base_dir.empty()) return path;
    return (std::filesystem::path(base_dir) / path).string();
}

// A window of the stationary chain, for Markov models loaded without a corpus.
inline Sequence sample_markov_window(const MarkovChainModel& m, std::size_t length, CounterRng& rng) {
    const std::size_t n = m.alphabet_size(), k = m.order();
    std::vector<Token> tokens(length);
    std::size_t ctx = rng.categorical(m.initial());
    for (std::size_t j = 0; j < k; ++j) tokens[j] = static_cast<Token>(m.context_digit(ctx, j));
    for (std::size_t t = k; t < length; ++t) {
        std::vector<double> row(n);
        for (std::size_t v = 0; v < n; ++v) row[v] = m.transition(ctx, v);
        tokens[t] = static_cast<Token>(rng.categorical(row));
        ctx = m.next_context(ctx, tokens[t]);
    }
    return Sequence(std::move(tokens), n);
}

// Replaces positions >= `from` by a continuation of the chain from the
// preceding k tokens.
inline Sequence continue_chain(const MarkovChainModel& m, const Sequence& x, std::size_t from, CounterRng& rng) {
    const std::size_t n = m.alphabet_size(), k = m.order();
    require(from >= k, ErrorCode::kArgument, "continuation needs a full context");
    std::vector<Token> tokens(x.tokens().begin(), x.tokens().end());
    std::size_t ctx = m.encode_context(std::span<const Token>(tokens).subspan(from - k, k));
    std::vector<double> row(n);
    for (std::size_t t = from; t < tokens.size(); ++t) {
        for (std::size_t v = 0; v < n; ++v) row[v] = m.transition(ctx, v);
        tokens[t] = static_cast<Token>(rng.categorical(row));
        ctx = m.next_context(ctx, tokens[t]);
    }
    return Sequence(std::move(tokens), n);
}

inline Dataset build_dataset(const ConfigNode& node, std::uint64_t run_seed, const std::string& base_dir) {
    Dataset ds;
    ds.spec = node.raw();
    const auto kind = node.need<std::string>("kind");
    ds.kind = kind;
    ds.seed = node.get<std::uint64_t>("seed", run_seed);
    if (kind == "toy_categorical") {
        node.allow({"kind", "n_atoms", "length", "alphabet", "temperature", "seed"});
        ToyCategoricalSpec spec;
        spec.n_atoms = node.get<std::size_t>("n_atoms", spec.n_atoms);
        spec.length = node.get<std::size_t>("length", spec.length);
        spec.alphabet = node.get<std::string>("alphabet", spec.alphabet);
        spec.temperature = node.get<double>("temperature", spec.temperature);
        spec.seed = ds.seed;
        if (!(spec.temperature > 0.0)) fail(ErrorCode::kConfig, "temperature must be > 0");
        ds.alphabet = Alphabet(spec.alphabet);
        ds.categorical = std::make_shared<ExplicitCategorical>(build_toy_categorical(spec).distribution);
    } else if (kind == "markov") {
        node.allow({"kind", "order", "corpus_length", "window", "alphabet", "temperature", "seed"});
        MarkovCorpusSpec spec;
        spec.order = node.get<std::size_t>("order", spec.order);
        spec.corpus_length = node.get<std::size_t>("corpus_length", spec.corpus_length);
        spec.window = node.get<std::size_t>("window", spec.window);
        spec.alphabet = node.get<std::string>("alphabet", spec.alphabet);
        spec.temperature = node.get<double>("temperature", spec.temperature);
        spec.seed = ds.seed;
        if (!(spec.temperature > 0.0)) fail(ErrorCode::kConfig, "temperature must be > 0");
        if (spec.order >= spec.window) fail(ErrorCode::kConfig, "order must be below the window length");
        ds.alphabet = Alphabet(spec.alphabet);
        MarkovCorpus mc = build_markov(spec);
        ds.corpus = std::move(mc.corpus);
        ds.markov = std::make_shared<MarkovWindowOracle>(std::move(mc.model), spec.window);
    } else if (kind == "categorical_file") {
        node.allow({"kind", "path", "seed"});
        auto loaded = parse_categorical(read_file(resolve_path(base_dir, node.need<std::string>("path"))));
        ds.alphabet = loaded.alphabet;
        ds.categorical = std::make_shared<ExplicitCategorical>(std::move(loaded.distribution));
    } else if (kind == "markov_file") {
        node.allow({"kind", "path", "window", "corpus_path", "seed"});
        auto loaded = parse_markov(read_file(resolve_path(base_dir, node.need<std::string>("path"))));
        const auto window = node.get<std::size_t>("window", 32);
        if (loaded.model.order() >= window) fail(ErrorCode::kConfig, "order must be below the window length");
        ds.alphabet = loaded.alphabet;
        if (node.has("corpus_path")) {
            const auto lines = parse_sequences(read_file(resolve_path(base_dir, node.need<std::string>("corpus_path"))),
                                               loaded.alphabet);
            for (const auto& s : lines) ds.corpus.insert(ds.corpus.end(), s.tokens().begin(), s.tokens().end());
            if (ds.corpus.size() < window) fail(ErrorCode::kConfig, "corpus shorter than one window");
        }
        ds.markov = std::make_shared<MarkovWindowOracle>(std::move(loaded.model), window);
    } else {
        fail(ErrorCode::kConfig, "unknown dataset kind '" + kind + "'");
    }
    return ds;
}

// Training or evaluation sequences: i.i.d. atoms or uniform-start windows.
inline std::vector<Sequence> draw_sequences(const Dataset& ds, std::size_t count, CounterRng& rng) {
    if (ds.categorical) return draw_from_categorical(*ds.categorical, count, rng);
    if (!ds.corpus.empty()) return draw_windows(ds.corpus, ds.alphabet_size(), count, ds.length(), rng);
    std::vector<Sequence> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(sample_markov_window(ds.markov->model(), ds.length(), rng));
    return out;
}

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

struct PredictorHandle {
    std::shared_ptr<const ConditionalPredictor> base;       // oracle, kept alive for wrappers
    std::shared_ptr<const ConditionalPredictor> predictor;  // what estimators query
    bool learned = false;
};

inline LearnedPredictor load_checkpoint_file(const std::string& path) {
    return deserialize_checkpoint(read_file(path)).model;
}

inline PredictorHandle build_predictor(const std::optional<ConfigNode>& node, const Dataset& ds,
                                       const std::string& base_dir) {
    PredictorHandle h;
    h.base = std::make_shared<OraclePredictor>(ds.oracle());
    if (!node) {
        h.predictor = h.base;
        return h;
    }
    const auto kind = node->need<std::string>("kind");
    if (kind == "oracle") {
        node->allow({"kind"});
        h.predictor = h.base;
    } else if (kind == "perturbed") {
        node->allow({"kind", "magnitude", "seed"});
        h.predictor = std::make_shared<PerturbedPredictor>(*h.base, node->need<double>("magnitude"),
                                                           node->get<std::uint64_t>("seed", 0));
    } else if (kind == "checkpoint") {
        node->allow({"kind", "path"});
        auto model = std::make_shared<LearnedPredictor>(
            load_checkpoint_file(resolve_path(base_dir, node->need<std::string>("path"))));
        if (model->length() != ds.length() || model->alphabet_size() != ds.alphabet_size()) {
            fail(ErrorCode::kConfig, "checkpoint shape does not match the dataset");
        }
        h.predictor = model;
        h.learned = true;
    } else {
        fail(ErrorCode::kConfig, "unknown predictor kind '" + kind + "'");
    }
    return h;
}

// ---------------------------------------------------------------------------
// Run context and report output
// ---------------------------------------------------------------------------

struct RunContext {
    Json config;             // effective config (after --seed override)
    std::string config_dir;  // base for relative paths
    std::string out_dir;
    std::uint64_t seed = 0;
    bool force = false;      // overwrite a report produced from a different config
    std::ostream* log = nullptr;
};

inline void say(const RunContext& ctx, const std::string& line) {
    if (ctx.log) *ctx.log << line << "\n";
}

inline std::string out_path(const RunContext& ctx, const std::string& name) {
    return (std::filesystem::path(ctx.out_dir) / name).string();
}

// Refuses to overwrite a report generated from a different config.
inline void check_replay(const RunContext& ctx) {
    const std::string path = out_path(ctx, "report.json");
    if (ctx.force || !std::filesystem::exists(path)) return;
    Json old;
    try {
        old = Json::parse(read_file(path));
    } catch (const Json::exception&) {
        return;
    }
    const std::string hash = config_hash(ctx.config);
    if (old.contains("config_hash") && old["config_hash"] != hash) {
        fail(ErrorCode::kConfig, "report.json in " + ctx.out_dir + " was produced by config " +
                                     old["config_hash"].get<std::string>() + ", this run is " + hash +
                                     " (use --force to overwrite)");
    }
}

inline Json report_header(const RunContext& ctx, const std::string& command) {
    Json r;
    r["schema_version"] = kSchemaVersion;
    r["command"] = command;
    r["config_hash"] = config_hash(ctx.config);
    r["seed"] = ctx.seed;
    return r;
}

inline void write_json(const std::string& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

inline void write_timing(const RunContext& ctx, double seconds, const Json& extra = Json::object()) {
    Json t = extra;
    t["seconds"] = seconds;
    write_json(out_path(ctx, "timing.json"), t);
}

inline Json estimate_json(const EstimateResult& r, const std::string& hash) {
    return {{"estimator", r.estimator},
            {"target", r.target},
            {"sampler", r.sampler},
            {"n_samples", r.n_samples},
            {"mean_nats", r.mean},
            {"var_nats2", r.variance},
            {"stderr", r.standard_error},
            {"seed", r.seed},
            {"clamp_count", r.clamp_count},
            {"predictor_calls", r.predictor_calls},
            {"off_support", r.off_support},
            {"truncation_bias", r.truncation_bias},
            {"config_hash", hash}};
}

inline std::uint64_t item_seed(std::uint64_t seed, std::size_t item) { return mix64(seed ^ mix64(item + 1)); }

inline void check_schema(const ConfigNode& root) {
    const auto v = root.need<int>("schema_version");
    if (v != kSchemaVersion) {
        fail(ErrorCode::kConfig, "unsupported schema_version " + std::to_string(v) + " (expected " +
                                     std::to_string(kSchemaVersion) + ")");
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "dataset", "draws"});
    check_schema(root);
    const Dataset ds = build_dataset(root.child("dataset"), ctx.seed, ctx.config_dir);
    const auto draws = root.get<std::size_t>("draws", 100000);
    if (draws < 1) fail(ErrorCode::kConfig, "draws must be >= 1");
    check_replay(ctx);

    std::vector<std::pair<std::string, std::string>> files;
    if (ds.categorical) {
        files.emplace_back("categorical.txt", render_categorical(*ds.categorical, ds.alphabet));
    } else {
        files.emplace_back("markov.txt", render_markov(ds.markov->model(), ds.alphabet));
        if (!ds.corpus.empty()) files.emplace_back("corpus.txt", ds.alphabet.render(ds.corpus) + "\n");
    }
    CounterRng rng = CounterRng(ctx.seed).split(static_cast<std::uint64_t>(DataStream::kDraws));
    files.emplace_back("train.txt", render_sequences(draw_sequences(ds, draws, rng), ds.alphabet));

    Json manifest = report_header(ctx, "gen-data");
    manifest["dataset"] = ds.spec;
    manifest["dataset_seed"] = ds.seed;
    manifest["description"] = ds.oracle().describe();
    manifest["draws"] = draws;
    for (const auto& [name, bytes] : files) {
        write_file(out_path(ctx, name), bytes);
        manifest["files"][name] = {{"crc32", crc32_hex(bytes)}, {"bytes", bytes.size()}};
    }
    write_json(out_path(ctx, "manifest.json"), manifest);
    write_json(out_path(ctx, "report.json"), manifest);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    say(ctx, "wrote " + std::to_string(files.size()) + " files to " + ctx.out_dir);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline ModelShape parse_model(const std::optional<ConfigNode>& node, const Dataset& ds) {
    ModelShape s;
    s.alphabet_size = ds.alphabet_size();
    s.length = ds.length();
    if (!node) return s;
    node->allow({"head", "d_emb", "hidden", "window"});
    const auto head = node->get<std::string>("head", "tanh");
    if (head == "tanh") {
        s.head = HeadKind::kTanh;
    } else if (head == "mixture") {
        s.head = HeadKind::kMixture;
    } else {
        fail(ErrorCode::kConfig, "model.head must be 'tanh' or 'mixture'");
    }
    s.d_emb = node->get<std::size_t>("d_emb", s.d_emb);
    s.hidden = node->get<std::size_t>("hidden", s.hidden);
    s.window = node->get<std::size_t>("window", s.window);
    s.validate();
    return s;
}

inline TrainConfig parse_train_config(const std::optional<ConfigNode>& node, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    if (!node) return cfg;
    node->allow({"steps", "batch_size", "learning_rate", "momentum", "optimizer", "adam_beta2", "lambda_min",
                 "weighting", "linear_decay", "checkpoint_interval", "grad_chunks"});
    cfg.steps = node->get<std::size_t>("steps", cfg.steps);
    cfg.batch_size = node->get<std::size_t>("batch_size", cfg.batch_size);
    cfg.learning_rate = node->get<double>("learning_rate", cfg.learning_rate);
    cfg.momentum = node->get<double>("momentum", cfg.momentum);
    const auto opt = node->get<std::string>("optimizer", "sgd");
    if (opt == "sgd") {
        cfg.optimizer = Optimizer::kSgdMomentum;
    } else if (opt == "adam") {
        cfg.optimizer = Optimizer::kAdam;
    } else {
        fail(ErrorCode::kConfig, "train.optimizer must be 'sgd' or 'adam'");
    }
    cfg.adam_beta2 = node->get<double>("adam_beta2", cfg.adam_beta2);
    cfg.lambda_min = node->get<double>("lambda_min", cfg.lambda_min);
    const auto w = node->get<std::string>("weighting", "unweighted");
    if (w == "unweighted") {
        cfg.weighting = LossWeighting::kUnweighted;
    } else if (w == "inverse_lambda") {
        cfg.weighting = LossWeighting::kInverseLambda;
    } else {
        fail(ErrorCode::kConfig, "train.weighting must be 'unweighted' or 'inverse_lambda'");
    }
    cfg.linear_decay = node->get<bool>("linear_decay", cfg.linear_decay);
    cfg.checkpoint_interval = node->get<std::size_t>("checkpoint_interval", 0);
    cfg.grad_chunks = node->get<std::size_t>("grad_chunks", cfg.grad_chunks);
    cfg.validate();
    return cfg;
}

// Expected DCE of a predictor against the oracle floor at the same mask draws.
// Exact pattern enumeration when L is small, Monte Carlo otherwise.
struct FloorComparison {
    double model = 0.0;
    double oracle = 0.0;
    std::string method;
};

inline FloorComparison compare_to_floor(const Dataset& ds, const ConditionalPredictor& model,
                                        const std::vector<double>& lambdas, std::size_t mc_draws, std::uint64_t seed) {
    FloorComparison fc;
    const OraclePredictor oracle(ds.oracle());
    if (ds.categorical && ds.length() <= 12) {
        fc.method = "exact";
        const auto& d = *ds.categorical;
        std::vector<double> m(d.atom_count()), o(d.atom_count());
        parallel_for(d.atom_count(), [&](std::size_t a) {
            for (double lambda : lambdas) {
                m[a] += d.probabilities()[a] * expected_dce(d.atoms()[a], lambda, model);
                o[a] += d.probabilities()[a] * expected_dce(d.atoms()[a], lambda, oracle);
            }
        });
        for (std::size_t a = 0; a < m.size(); ++a) {
            fc.model += m[a];
            fc.oracle += o[a];
        }
    } else {
        fc.method = "monte-carlo(" + std::to_string(mc_draws) + ")";
        CounterRng rng = CounterRng(seed).split(0xF1002);
        const auto xs = draw_sequences(ds, mc_draws, rng);
        std::vector<double> m(mc_draws), o(mc_draws);
        parallel_for(mc_draws, [&](std::size_t k) {
            CounterRng r = CounterRng(seed).split(0xF1003).split(k);
            for (double lambda : lambdas) {
                const MaskedSequence x = sample_forward(xs[k], lambda, r);
                if (x.masked_count() == 0) continue;
                m[k] += dce_pointwise(xs[k], x, model).total;
                o[k] += dce_pointwise(xs[k], x, oracle).total;
            }
        });
        for (std::size_t k = 0; k < mc_draws; ++k) {
            fc.model += m[k] / static_cast<double>(mc_draws);
            fc.oracle += o[k] / static_cast<double>(mc_draws);
        }
    }
    fc.model /= static_cast<double>(lambdas.size());
    fc.oracle /= static_cast<double>(lambdas.size());
    return fc;
}

inline int cmd_train(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "dataset", "data", "model", "train", "resume_from", "floor"});
    check_schema(root);
    const Dataset ds = build_dataset(root.child("dataset"), ctx.seed, ctx.config_dir);
    const ModelShape shape = parse_model(root.maybe_child("model"), ds);
    const TrainConfig cfg = parse_train_config(root.maybe_child("train"), ctx.seed);

    std::vector<Sequence> data;
    if (auto dnode = root.maybe_child("data")) {
        dnode->allow({"draws", "path"});
        if (dnode->has("path")) {
            data = parse_sequences(read_file(resolve_path(ctx.config_dir, dnode->need<std::string>("path"))), ds.alphabet);
        } else {
            CounterRng rng = CounterRng(ctx.seed).split(static_cast<std::uint64_t>(DataStream::kDraws));
            data = draw_sequences(ds, dnode->get<std::size_t>("draws", 100000), rng);
        }
    } else {
        CounterRng rng = CounterRng(ctx.seed).split(static_cast<std::uint64_t>(DataStream::kDraws));
        data = draw_sequences(ds, 100000, rng);
    }
    if (data.empty()) fail(ErrorCode::kConfig, "training set is empty");
    check_replay(ctx);

    TrainState st = init_train_state(shape, ctx.seed);
    if (root.has("resume_from")) {
        st = deserialize_checkpoint(read_file(resolve_path(ctx.config_dir, root.need<std::string>("resume_from"))));
        if (st.model.shape().length != shape.length || st.model.shape().alphabet_size != shape.alphabet_size ||
            st.model.shape().hidden != shape.hidden || st.model.shape().d_emb != shape.d_emb ||
            st.model.shape().window != shape.window || st.model.shape().head != shape.head) {
            fail(ErrorCode::kConfig, "resume checkpoint shape differs from model config");
        }
        if (st.seed != ctx.seed) fail(ErrorCode::kConfig, "resume checkpoint was trained with a different seed");
        if (st.step > cfg.steps) fail(ErrorCode::kConfig, "resume checkpoint is past train.steps");
    }
    const std::uint64_t first_step = st.step;
    say(ctx, "training " + st.model.describe() + " from step " + std::to_string(first_step) + " to " +
                 std::to_string(cfg.steps));
    const TrainLog log = train_dce(st, data, cfg, [&](const TrainState& s) {
        write_file(out_path(ctx, "checkpoint_" + std::to_string(s.step) + ".bin"), serialize_checkpoint(s));
    });
    const std::string ckpt = serialize_checkpoint(st);
    write_file(out_path(ctx, "checkpoint.bin"), ckpt);
    write_file(out_path(ctx, "loss.csv"), render_loss_csv(log));

    Json report = report_header(ctx, "train");
    report["dataset"] = ds.oracle().describe();
    report["model"] = st.model.describe();
    report["parameters"] = st.model.params().size();
    report["first_step"] = first_step;
    report["steps"] = st.step;
    report["training_sequences"] = data.size();
    report["checkpoint_crc32"] = crc32_hex(ckpt);
    if (!log.losses.empty()) {
        const std::size_t w = std::min<std::size_t>(100, log.losses.size());
        double head = 0.0, tail = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            head += log.losses[k].second / static_cast<double>(w);
            tail += log.losses[log.losses.size() - 1 - k].second / static_cast<double>(w);
        }
        report["loss_first_window"] = head;
        report["loss_last_window"] = tail;
    }
    if (auto fnode = root.maybe_child("floor")) {
        fnode->allow({"lambdas", "mc_draws"});
        const auto lambdas = fnode->get<std::vector<double>>("lambdas", {0.1, 0.3, 0.5, 0.7, 0.9});
        const auto fc = compare_to_floor(ds, st.model, lambdas, fnode->get<std::size_t>("mc_draws", 2000), ctx.seed);
        report["floor"] = {{"method", fc.method},
                           {"lambdas", lambdas},
                           {"model_expected_dce", fc.model},
                           {"oracle_expected_dce", fc.oracle},
                           {"ratio", fc.model / fc.oracle}};
    }
    write_json(out_path(ctx, "report.json"), report);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimatorSpec {
    std::string kind = "time_free";
    std::size_t n_samples = 4096;
    double epsilon = 1e-4;
    QuadratureSpec quad;
    std::size_t n_mc_per_node = 0;
};

inline QuadratureSpec parse_quadrature(const std::optional<ConfigNode>& node, double epsilon) {
    QuadratureSpec q;
    q.epsilon = epsilon;
    if (!node) return q;
    node->allow({"rule", "nodes", "panels", "tolerance", "epsilon"});
    const auto rule = node->get<std::string>("rule", "gauss_legendre");
    if (rule == "gauss_legendre") {
        q.kind = QuadratureKind::kGaussLegendre;
    } else if (rule == "adaptive_simpson") {
        q.kind = QuadratureKind::kAdaptiveSimpson;
    } else {
        fail(ErrorCode::kConfig, "quadrature.rule must be 'gauss_legendre' or 'adaptive_simpson'");
    }
    q.nodes = node->get<std::size_t>("nodes", q.nodes);
    q.panels = node->get<std::size_t>("panels", q.panels);
    q.tolerance = node->get<double>("tolerance", q.tolerance);
    q.epsilon = node->get<double>("epsilon", epsilon);
    q.validate();
    return q;
}

inline EstimatorSpec parse_estimator(const std::optional<ConfigNode>& node) {
    EstimatorSpec e;
    if (!node) return e;
    node->allow({"kind", "n_samples", "epsilon", "quadrature", "n_mc_per_node"});
    e.kind = node->get<std::string>("kind", e.kind);
    static const std::set<std::string> kinds = {"time_free", "time_integral_mc", "time_integral_quadrature",
                                                "ao_ar", "exact_subset_sum", "ao_ar_exact"};
    if (!kinds.count(e.kind)) fail(ErrorCode::kConfig, "unknown estimator kind '" + e.kind + "'");
    e.n_samples = node->get<std::size_t>("n_samples", e.n_samples);
    if (e.n_samples < 1) fail(ErrorCode::kConfig, "n_samples must be >= 1");
    e.epsilon = node->get<double>("epsilon", e.epsilon);
    if (!(e.epsilon > 0.0 && e.epsilon <= 0.01)) fail(ErrorCode::kConfig, "epsilon must be in (0, 0.01]");
    e.quad = parse_quadrature(node->maybe_child("quadrature"), e.epsilon);
    e.n_mc_per_node = node->get<std::size_t>("n_mc_per_node", 0);
    return e;
}

inline EstimateResult run_estimator(const EstimatorSpec& e, const Sequence& x, const TargetSplit& split,
                                    const ConditionalPredictor& c, std::uint64_t seed) {
    if (e.kind == "time_free") return conditional_nll_time_free(x, split, c, e.n_samples, seed);
    if (e.kind == "time_integral_mc") return conditional_nll_time_integral_mc(x, split, c, e.n_samples, seed, e.epsilon);
    if (e.kind == "time_integral_quadrature") return conditional_nll_time_integral(x, split, c, e.quad, e.n_mc_per_node, seed);
    if (e.kind == "ao_ar") return conditional_nll_ao_autoregressive(x, split, c, e.n_samples, seed);
    EstimateResult r;
    r.seed = seed;
    r.n_samples = 1;
    if (e.kind == "exact_subset_sum") {
        const ExactValue v = exact_conditional_subset_sum(x, split, c);
        r.estimator = "exact-subset-sum";
        r.sampler = "enumeration";
        r.mean = v.value;
        r.clamp_count = v.clamp_count;
        r.predictor_calls = v.predictor_calls;
    } else {
        require(split.context.empty() && !split.has_free_positions(), ErrorCode::kConfig,
                "ao_ar_exact supports unconditional targets only");
        r.estimator = "ao-ar-exact";
        r.sampler = "all-permutations";
        r.mean = ao_autoregressive_exact(x, c);
    }
    r.target = "-log p(x[" + split.targets.to_one_based_string() + "] | x[" + split.context.to_one_based_string() + "])";
    return r;
}

struct ItemSet {
    std::vector<Sequence> sequences;
    TargetSplit split;
};

// Which sequences to score and which positions are targets/context.
inline ItemSet parse_items(const std::optional<ConfigNode>& node, const Dataset& ds, std::uint64_t seed,
                           const std::string& base_dir) {
    ItemSet items;
    const std::size_t length = ds.length();
    items.split = TargetSplit::unconditional(length);
    std::string source = ds.categorical ? "atoms" : "draws";
    std::size_t count = ds.categorical ? ds.categorical->atom_count() : 100;
    if (node) {
        node->allow({"source", "count", "path", "targets", "context"});
        source = node->get<std::string>("source", source);
        count = node->get<std::size_t>("count", count);
        if (node->has("targets") || node->has("context")) {
            const IndexSet targets = node->has("targets")
                                         ? parse_positions(node->need<std::string>("targets"), length)
                                         : IndexSet::full(length);
            const IndexSet context = node->has("context") ? parse_positions(node->need<std::string>("context"), length)
                                                          : IndexSet({}, length);
            if (!targets.disjoint_with(context)) fail(ErrorCode::kConfig, "targets and context overlap");
            if (targets.empty()) fail(ErrorCode::kConfig, "targets must be nonempty");
            items.split = {targets, context};
        }
    }
    if (count < 1) fail(ErrorCode::kConfig, "items.count must be >= 1");
    if (source == "atoms") {
        if (!ds.categorical) fail(ErrorCode::kConfig, "items.source 'atoms' needs a categorical dataset");
        const auto& atoms = ds.categorical->atoms();
        for (std::size_t a = 0; a < std::min(count, atoms.size()); ++a) items.sequences.push_back(atoms[a]);
    } else if (source == "draws") {
        CounterRng rng = CounterRng(seed).split(0xE7A1);
        items.sequences = draw_sequences(ds, count, rng);
    } else if (source == "file") {
        items.sequences = parse_sequences(read_file(resolve_path(base_dir, node->need<std::string>("path"))), ds.alphabet);
        if (items.sequences.size() > count) items.sequences.resize(count);
    } else {
        fail(ErrorCode::kConfig, "items.source must be 'atoms', 'draws' or 'file'");
    }
    for (const auto& s : items.sequences) {
        if (s.size() != length) fail(ErrorCode::kConfig, "item length differs from the dataset");
    }
    return items;
}

inline double truth_for(const Dataset& ds, const Sequence& x, const TargetSplit& split) {
    if (split.context.empty() && !split.has_free_positions()) {
        const LogProb lp = ds.oracle().log_prob(x);
        return lp.off_support ? kPosInf : -lp.value;
    }
    return conditional_nll(ds.oracle(), x, split.targets, split.context);
}

inline Json aggregate_errors(const std::vector<double>& truth, const std::vector<double>& est,
                             const std::vector<double>& se) {
    Json a;
    std::vector<double> t, e;
    double max_err = 0.0, sum_err = 0.0, max_z = 0.0;
    std::size_t within = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!std::isfinite(truth[k]) || !std::isfinite(est[k])) continue;
        t.push_back(truth[k]);
        e.push_back(est[k]);
        const double err = std::abs(est[k] - truth[k]);
        max_err = std::max(max_err, err);
        sum_err += err;
        if (se[k] > 0.0) {
            max_z = std::max(max_z, err / se[k]);
            within += err <= 3.0 * se[k] ? 1 : 0;
        } else {
            within += err <= 1e-9 ? 1 : 0;
        }
    }
    a["items"] = t.size();
    a["pearson_r"] = t.size() >= 2 ? pearson_correlation(t, e) : 1.0;
    a["max_abs_error"] = max_err;
    a["mean_abs_error"] = t.empty() ? 0.0 : sum_err / static_cast<double>(t.size());
    a["max_abs_z"] = max_z;
    a["within_3se_fraction"] = t.empty() ? 1.0 : static_cast<double>(within) / static_cast<double>(t.size());
    return a;
}

inline int cmd_estimate(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "dataset", "predictor", "estimator", "items"});
    check_schema(root);
    const Dataset ds = build_dataset(root.child("dataset"), ctx.seed, ctx.config_dir);
    const PredictorHandle ph = build_predictor(root.maybe_child("predictor"), ds, ctx.config_dir);
    const EstimatorSpec est = parse_estimator(root.maybe_child("estimator"));
    const ItemSet items = parse_items(root.maybe_child("items"), ds, ctx.seed, ctx.config_dir);
    items.split.validate(*ph.predictor, ds.length());
    check_replay(ctx);

    const std::string hash = config_hash(ctx.config);
    Json report = report_header(ctx, "estimate");
    report["dataset"] = ds.oracle().describe();
    report["predictor"] = ph.predictor->describe();
    report["targets"] = items.split.targets.to_one_based_string();
    report["context"] = items.split.context.to_one_based_string();
    std::vector<double> truths, means, ses;
    std::ostringstream csv;
    csv << "id,sequence,truth_nats,mean_nats,var_nats2,stderr,error_nats,n_samples,predictor_calls,clamp_count\n";
    csv.precision(17);
    Json rows = Json::array();
    for (std::size_t k = 0; k < items.sequences.size(); ++k) {
        const Sequence& x = items.sequences[k];
        const EstimateResult r = run_estimator(est, x, items.split, *ph.predictor, item_seed(ctx.seed, k));
        const double truth = truth_for(ds, x, items.split);
        truths.push_back(truth);
        means.push_back(r.mean);
        ses.push_back(r.standard_error);
        Json row = estimate_json(r, hash);
        row["id"] = k;
        row["sequence"] = ds.alphabet.render(x);
        row["truth_nats"] = truth;
        row["error_nats"] = r.mean - truth;
        rows.push_back(row);
        csv << k << "," << ds.alphabet.render(x) << "," << truth << "," << r.mean << "," << r.variance << ","
            << r.standard_error << "," << r.mean - truth << "," << r.n_samples << "," << r.predictor_calls << ","
            << r.clamp_count << "\n";
    }
    report["estimator"] = est.kind;
    report["items"] = rows;
    report["aggregate"] = aggregate_errors(truths, means, ses);
    write_file(out_path(ctx, "estimates.csv"), csv.str());
    write_json(out_path(ctx, "report.json"), report);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    const Json& a = report["aggregate"];
    say(ctx, "items=" + std::to_string(rows.size()) + " pearson_r=" + format_double(a["pearson_r"].get<double>()) +
                 " max_abs_error=" + format_double(a["max_abs_error"].get<double>()));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// variance-study
// ---------------------------------------------------------------------------

struct VarianceCell {
    double pooled_per_sample = 0.0;  // per-sample variance pooled over repeats
    double across_repeats = 0.0;     // variance of the repeat estimates
    double mean = 0.0;
};

// Runs `repeats` independent estimates with n samples each.
inline VarianceCell measure_variance(std::size_t repeats, std::uint64_t seed,
                                     const std::function<EstimateResult(std::uint64_t)>& run) {
    std::vector<double> means(repeats), vars(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        const EstimateResult e = run(item_seed(seed, r));
        means[r] = e.mean;
        vars[r] = e.variance;
    }
    VarianceCell cell;
    const auto m = sample_moments(means);
    cell.mean = m.mean;
    cell.across_repeats = m.variance;
    for (double v : vars) cell.pooled_per_sample += v / static_cast<double>(repeats);
    return cell;
}

inline int cmd_variance_study(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "dataset", "predictor", "items", "time_free_vs_integral",
                "coupled_vs_decoupled", "ordering_threshold"});
    check_schema(root);
    const Dataset ds = build_dataset(root.child("dataset"), ctx.seed, ctx.config_dir);
    const PredictorHandle ph = build_predictor(root.maybe_child("predictor"), ds, ctx.config_dir);
    const ItemSet items = parse_items(root.maybe_child("items"), ds, ctx.seed, ctx.config_dir);
    items.split.validate(*ph.predictor, ds.length());
    const double threshold = root.get<double>("ordering_threshold", 0.9);
    check_replay(ctx);
    const ConditionalPredictor& c = *ph.predictor;

    Json report = report_header(ctx, "variance-study");
    report["dataset"] = ds.oracle().describe();
    report["predictor"] = c.describe();
    report["ordering_threshold"] = threshold;
    bool ordering_ok = true;
    std::ostringstream csv;
    csv.precision(17);
    csv << "study,budget,item,variant,mean_nats,per_sample_var,estimate_var,across_repeats_var\n";

    if (auto node = root.maybe_child("time_free_vs_integral")) {
        node->allow({"sequences", "budgets", "repeats", "epsilon"});
        const auto n_seq = std::min(node->get<std::size_t>("sequences", 30), items.sequences.size());
        const auto budgets = node->get<std::vector<std::size_t>>("budgets", {128, 256, 512});
        const auto repeats = node->get<std::size_t>("repeats", 15);
        const auto eps = node->get<double>("epsilon", 1e-4);
        if (repeats < 2) fail(ErrorCode::kConfig, "repeats must be >= 2");
        Json study = Json::array();
        for (std::size_t b : budgets) {
            std::vector<VarianceCell> tf(n_seq), ti(n_seq);
            parallel_for(n_seq, [&](std::size_t k) {
                const Sequence& x = items.sequences[k];
                const std::uint64_t s = item_seed(ctx.seed, 1000 * b + k);
                tf[k] = measure_variance(repeats, s, [&](std::uint64_t sd) {
                    return conditional_nll_time_free(x, items.split, c, b, sd);
                });
                ti[k] = measure_variance(repeats, s ^ 0x5A5A, [&](std::uint64_t sd) {
                    return conditional_nll_time_integral_mc(x, items.split, c, b, sd, eps);
                });
            });
            std::size_t wins = 0;
            double mean_tf = 0.0, mean_ti = 0.0;
            for (std::size_t k = 0; k < n_seq; ++k) {
                wins += tf[k].pooled_per_sample < ti[k].pooled_per_sample ? 1 : 0;
                mean_tf += tf[k].pooled_per_sample / static_cast<double>(b) / static_cast<double>(n_seq);
                mean_ti += ti[k].pooled_per_sample / static_cast<double>(b) / static_cast<double>(n_seq);
                for (const auto& [name, cell] : {std::pair{"time_free", tf[k]}, std::pair{"time_integral_mc", ti[k]}}) {
                    csv << "time_free_vs_integral," << b << "," << k << "," << name << "," << cell.mean << ","
                        << cell.pooled_per_sample << "," << cell.pooled_per_sample / static_cast<double>(b) << ","
                        << cell.across_repeats << "\n";
                }
            }
            const double frac = n_seq ? static_cast<double>(wins) / static_cast<double>(n_seq) : 1.0;
            const bool ok = frac >= threshold;
            ordering_ok = ordering_ok && ok;
            study.push_back({{"budget_calls", b},
                             {"sequences", n_seq},
                             {"mean_estimate_var_time_free", mean_tf},
                             {"mean_estimate_var_time_integral", mean_ti},
                             {"fraction_time_free_lower", frac},
                             {"ordering_holds", ok}});
        }
        report["time_free_vs_integral"] = study;
    }

    if (auto node = root.maybe_child("coupled_vs_decoupled")) {
        node->allow({"pairs", "budgets", "repeats", "pairing"});
        const auto n_pairs = node->get<std::size_t>("pairs", 20);
        const auto budgets = node->get<std::vector<std::size_t>>("budgets", {5, 10, 15, 20});
        const auto repeats = node->get<std::size_t>("repeats", 15);
        const auto pairing = node->get<std::string>("pairing", "random");
        if (pairing != "random" && pairing != "identical") fail(ErrorCode::kConfig, "pairing must be 'random' or 'identical'");
        if (repeats < 2) fail(ErrorCode::kConfig, "repeats must be >= 2");
        if (items.sequences.size() < 2 && pairing == "random") fail(ErrorCode::kConfig, "need >= 2 items for pairs");
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        CounterRng rng = CounterRng(ctx.seed).split(0xBA125);
        for (std::size_t p = 0; p < n_pairs; ++p) {
            const auto a = static_cast<std::size_t>(rng.below(items.sequences.size()));
            auto b = a;
            if (pairing == "random") {
                while (b == a) b = static_cast<std::size_t>(rng.below(items.sequences.size()));
            }
            pairs.emplace_back(a, b);
        }
        Json study = Json::array();
        for (std::size_t n : budgets) {
            std::vector<VarianceCell> cp(n_pairs), dc(n_pairs);
            parallel_for(n_pairs, [&](std::size_t p) {
                const Sequence& x = items.sequences[pairs[p].first];
                const Sequence& y = items.sequences[pairs[p].second];
                const std::uint64_t s = item_seed(ctx.seed, 7000 * n + p);
                cp[p] = measure_variance(repeats, s, [&](std::uint64_t sd) {
                    return ratio_conditional(x, y, items.split, c, n, sd, true);
                });
                dc[p] = measure_variance(repeats, s ^ 0xA5A5, [&](std::uint64_t sd) {
                    return ratio_conditional(x, y, items.split, c, n, sd, false);
                });
            });
            std::size_t wins = 0;
            double mean_cp = 0.0, mean_dc = 0.0, max_cp = 0.0;
            for (std::size_t p = 0; p < n_pairs; ++p) {
                const bool lower = pairing == "identical" ? cp[p].pooled_per_sample == 0.0
                                                          : cp[p].pooled_per_sample < dc[p].pooled_per_sample;
                wins += lower ? 1 : 0;
                mean_cp += cp[p].pooled_per_sample / static_cast<double>(n) / static_cast<double>(n_pairs);
                mean_dc += dc[p].pooled_per_sample / static_cast<double>(n) / static_cast<double>(n_pairs);
                max_cp = std::max(max_cp, cp[p].pooled_per_sample);
                for (const auto& [name, cell] : {std::pair{"coupled", cp[p]}, std::pair{"decoupled", dc[p]}}) {
                    csv << "coupled_vs_decoupled," << n << "," << p << "," << name << "," << cell.mean << ","
                        << cell.pooled_per_sample << "," << cell.pooled_per_sample / static_cast<double>(n) << ","
                        << cell.across_repeats << "\n";
                }
            }
            const double frac = n_pairs ? static_cast<double>(wins) / static_cast<double>(n_pairs) : 1.0;
            const bool ok = frac >= threshold;
            ordering_ok = ordering_ok && ok;
            study.push_back({{"samples", n},
                             {"predictor_calls", 2 * n},
                             {"pairs", n_pairs},
                             {"pairing", pairing},
                             {"mean_estimate_var_coupled", mean_cp},
                             {"mean_estimate_var_decoupled", mean_dc},
                             {"max_per_sample_var_coupled", max_cp},
                             {"fraction_coupled_lower", frac},
                             {"ordering_holds", ok}});
        }
        report["coupled_vs_decoupled"] = study;
    }
    report["ordering_holds"] = ordering_ok;
    write_file(out_path(ctx, "variance.csv"), csv.str());
    write_json(out_path(ctx, "report.json"), report);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    say(ctx, std::string("ordering ") + (ordering_ok ? "holds" : "FAILS"));
    return ordering_ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

// P(score_b > score_a) with ties counted half.
inline double auroc(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return 0.5;
    double wins = 0.0;
    for (double x : a) {
        for (double y : b) wins += y > x ? 1.0 : (y == x ? 0.5 : 0.0);
    }
    return wins / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

inline int cmd_audit(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "dataset", "predictor", "alternative", "windows", "prompt", "response",
                "n_samples", "histogram_bins"});
    check_schema(root);
    const Dataset ds = build_dataset(root.child("dataset"), ctx.seed, ctx.config_dir);
    if (!ds.markov) fail(ErrorCode::kConfig, "audit needs a Markov dataset");
    const PredictorHandle ph = build_predictor(root.maybe_child("predictor"), ds, ctx.config_dir);
    const std::size_t length = ds.length();
    const IndexSet prompt = parse_positions(root.get<std::string>("prompt", "1-" + std::to_string(length / 2)), length);
    const IndexSet response =
        parse_positions(root.get<std::string>("response", std::to_string(length / 2 + 1) + "-" + std::to_string(length)),
                        length);
    if (!prompt.disjoint_with(response)) fail(ErrorCode::kConfig, "prompt and response overlap");
    const std::size_t from = response[0];
    for (std::size_t k = 0; k < response.size(); ++k) {
        if (response[k] != from + k || from + response.size() != length) {
            fail(ErrorCode::kConfig, "response must be a contiguous suffix of the window");
        }
    }
    const TargetSplit split{response, prompt};
    split.validate(*ph.predictor, length);

    // Alternative generator for mismatched continuations. Same keys as a
    // Markov dataset spec; omitted keys follow the base dataset.
    MarkovCorpusSpec alt;
    alt.order = ds.markov->model().order();
    alt.window = length;
    alt.alphabet = ds.alphabet.symbols();
    alt.seed = ds.seed;
    bool same_generator = true;
    if (auto anode = root.maybe_child("alternative")) {
        anode->allow({"kind", "order", "temperature", "seed"});
        const auto kind = anode->get<std::string>("kind", "markov");
        if (kind == "same") {
            same_generator = true;
        } else if (kind == "markov") {
            same_generator = false;
            alt.order = anode->get<std::size_t>("order", alt.order);
            alt.temperature = anode->get<double>("temperature", 5.0);
            alt.seed = anode->get<std::uint64_t>("seed", mix64(ds.seed + 1));
            if (!(alt.temperature > 0.0)) fail(ErrorCode::kConfig, "alternative.temperature must be > 0");
            if (alt.order > from) fail(ErrorCode::kConfig, "alternative order exceeds the prompt");
        } else {
            fail(ErrorCode::kConfig, "alternative.kind must be 'markov' or 'same'");
        }
    }
    const MarkovChainModel alt_model = same_generator ? ds.markov->model() : build_markov_model(alt);
    const auto n_windows = root.get<std::size_t>("windows", 100);
    const auto n_samples = root.get<std::size_t>("n_samples", 256);
    const auto bins = root.get<std::size_t>("histogram_bins", 20);
    if (n_windows < 1 || n_samples < 1 || bins < 1) fail(ErrorCode::kConfig, "windows, n_samples, bins must be >= 1");
    check_replay(ctx);

    CounterRng rng = CounterRng(ctx.seed).split(0xA0D1);
    const auto matched = draw_sequences(ds, n_windows, rng);
    std::vector<Sequence> mismatched;
    for (const auto& x : matched) mismatched.push_back(continue_chain(alt_model, x, from, rng));

    std::vector<double> nll_matched(n_windows), nll_mismatched(n_windows);
    for (std::size_t k = 0; k < n_windows; ++k) {
        nll_matched[k] = conditional_nll_time_free(matched[k], split, *ph.predictor, n_samples, item_seed(ctx.seed, 2 * k)).mean;
        nll_mismatched[k] =
            conditional_nll_time_free(mismatched[k], split, *ph.predictor, n_samples, item_seed(ctx.seed, 2 * k + 1)).mean;
    }
    const double score = auroc(nll_matched, nll_mismatched);
    std::vector<double> exact_matched(n_windows), exact_mismatched(n_windows);
    for (std::size_t k = 0; k < n_windows; ++k) {
        exact_matched[k] = truth_for(ds, matched[k], split);
        exact_mismatched[k] = truth_for(ds, mismatched[k], split);
    }
    const auto mm = sample_moments(nll_matched), mx = sample_moments(nll_mismatched);

    double lo = kPosInf, hi = kNegInf;
    for (double v : nll_matched) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : nll_mismatched) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!(hi > lo)) hi = lo + 1.0;
    std::vector<std::size_t> h_matched(bins, 0), h_mismatched(bins, 0);
    auto bin_of = [&](double v) {
        return std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins)));
    };
    for (double v : nll_matched) ++h_matched[bin_of(v)];
    for (double v : nll_mismatched) ++h_mismatched[bin_of(v)];

    std::ostringstream csv;
    csv.precision(17);
    csv << "bin_low,bin_high,matched,mismatched\n";
    for (std::size_t b = 0; b < bins; ++b) {
        csv << lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins) << ","
            << lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins) << "," << h_matched[b] << ","
            << h_mismatched[b] << "\n";
    }
    std::ostringstream items_csv;
    items_csv.precision(17);
    items_csv << "id,group,sequence,nll_nats,oracle_nll_nats\n";
    for (std::size_t k = 0; k < n_windows; ++k) {
        items_csv << k << ",matched," << ds.alphabet.render(matched[k]) << "," << nll_matched[k] << ","
                  << exact_matched[k] << "\n";
        items_csv << k << ",mismatched," << ds.alphabet.render(mismatched[k]) << "," << nll_mismatched[k] << ","
                  << exact_mismatched[k] << "\n";
    }

    Json report = report_header(ctx, "audit");
    report["dataset"] = ds.oracle().describe();
    report["predictor"] = ph.predictor->describe();
    report["prompt"] = prompt.to_one_based_string();
    report["response"] = response.to_one_based_string();
    report["alternative"] = same_generator ? Json("same") : Json({{"order", alt.order}, {"temperature", alt.temperature}, {"seed", alt.seed}});
    report["windows"] = n_windows;
    report["n_samples"] = n_samples;
    report["mean_nll_matched"] = mm.mean;
    report["mean_nll_mismatched"] = mx.mean;
    report["sd_nll_matched"] = std::sqrt(mm.variance);
    report["sd_nll_mismatched"] = std::sqrt(mx.variance);
    report["auroc"] = score;
    report["auroc_oracle_exact"] = auroc(exact_matched, exact_mismatched);
    write_file(out_path(ctx, "histogram.csv"), csv.str());
    write_file(out_path(ctx, "audit_items.csv"), items_csv.str());
    write_json(out_path(ctx, "report.json"), report);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    say(ctx, "auroc=" + format_double(score));
    return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-identities
// ---------------------------------------------------------------------------

inline IdentitySuiteConfig parse_suite(const std::optional<ConfigNode>& node, std::uint64_t seed) {
    IdentitySuiteConfig s;
    s.seed = seed;
    if (!node) return s;
    node->allow({"lambda_grid", "time_grid", "horizons", "fd_step", "sigma", "quadrature_nodes", "decomposition_atoms",
                 "equivalence_atoms", "perturbations", "perturbation_min", "perturbation_max", "optimality_lambda",
                 "uniform_time", "corrupt_predictor"});
    s.lambda_grid = node->get<std::vector<double>>("lambda_grid", s.lambda_grid);
    s.time_grid = node->get<std::vector<double>>("time_grid", s.time_grid);
    s.horizons = node->get<std::vector<double>>("horizons", s.horizons);
    s.fd_step = node->get<double>("fd_step", s.fd_step);
    s.sigma = node->get<double>("sigma", s.sigma);
    s.quadrature_nodes = node->get<std::size_t>("quadrature_nodes", s.quadrature_nodes);
    s.decomposition_atoms = node->get<std::size_t>("decomposition_atoms", s.decomposition_atoms);
    s.equivalence_atoms = node->get<std::size_t>("equivalence_atoms", s.equivalence_atoms);
    s.perturbations = node->get<std::size_t>("perturbations", s.perturbations);
    s.perturbation_min = node->get<double>("perturbation_min", s.perturbation_min);
    s.perturbation_max = node->get<double>("perturbation_max", s.perturbation_max);
    s.optimality_lambda = node->get<double>("optimality_lambda", s.optimality_lambda);
    s.uniform_time = node->get<double>("uniform_time", s.uniform_time);
    s.corrupt_predictor = node->get<bool>("corrupt_predictor", s.corrupt_predictor);
    for (double l : s.lambda_grid) {
        if (!(l - s.fd_step > 0.0 && l + s.fd_step <= 1.0)) fail(ErrorCode::kConfig, "lambda grid must sit inside (fd_step, 1 - fd_step)");
    }
    for (double t : s.time_grid) {
        if (!(t - s.fd_step > 0.0)) fail(ErrorCode::kConfig, "time grid must be > fd_step");
    }
    if (!(s.fd_step > 0.0) || !(s.sigma > 0.0) || s.quadrature_nodes < 1 || s.perturbations < 1 ||
        !(s.perturbation_min > 0.0 && s.perturbation_max >= s.perturbation_min) ||
        !(s.optimality_lambda > 0.0 && s.optimality_lambda < 1.0) || !(s.uniform_time > 0.0)) {
        fail(ErrorCode::kConfig, "invalid identity suite parameters");
    }
    return s;
}

inline int cmd_verify_identities(const RunContext& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const ConfigNode root(ctx.config, "");
    root.allow({"schema_version", "seed", "instance", "uniform_instance", "suite"});
    check_schema(root);
    Json default_instance = {{"kind", "toy_categorical"}};
    Json default_uniform = {{"kind", "toy_categorical"}, {"n_atoms", 6}, {"length", 2}, {"alphabet", "ABC"}};
    const Dataset absorbing = build_dataset(root.has("instance") ? root.child("instance") : ConfigNode(default_instance, "instance"),
                                            ctx.seed, ctx.config_dir);
    const Dataset uniform = build_dataset(
        root.has("uniform_instance") ? root.child("uniform_instance") : ConfigNode(default_uniform, "uniform_instance"),
        ctx.seed, ctx.config_dir);
    if (!absorbing.categorical || !uniform.categorical) fail(ErrorCode::kConfig, "identity instances must be categorical");
    check_enumeration_cap(absorbing.length(), kSubsetSumCap);
    state_space_size(uniform.alphabet_size(), uniform.length(), kDefaultStateCap);
    const IdentitySuiteConfig suite = parse_suite(root.maybe_child("suite"), ctx.seed);
    check_replay(ctx);

    const IdentitySuiteResult result = run_identity_suite(*absorbing.categorical, *uniform.categorical, suite);
    Json report = report_header(ctx, "verify-identities");
    report["instance"] = absorbing.oracle().describe();
    report["uniform_instance"] = uniform.oracle().describe();
    report["corrupt_predictor"] = suite.corrupt_predictor;
    Json checks = Json::array();
    Json timing = Json::object();
    for (const auto& c : result.checks) {
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"max_deviation", c.max_deviation},
                          {"tolerance", c.tolerance},
                          {"evaluations", c.evaluations},
                          {"detail", c.detail}});
        timing["checks"][c.name] = c.seconds;
        say(ctx, std::string(c.passed ? "PASS " : "FAIL ") + c.name + " max_deviation=" + format_double(c.max_deviation) +
                     " tolerance=" + format_double(c.tolerance) + " (" + c.detail + ")");
    }
    report["checks"] = checks;
    report["all_passed"] = result.all_passed();
    write_json(out_path(ctx, "report.json"), report);
    write_timing(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), timing);
    return result.all_passed() ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int run_command(const std::string& command, const RunContext& ctx) {
    std::filesystem::create_directories(ctx.out_dir);
    if (command == "gen-data") return cmd_gen_data(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "estimate") return cmd_estimate(ctx);
    if (command == "variance-study") return cmd_variance_study(ctx);
    if (command == "audit") return cmd_audit(ctx);
    if (command == "verify-identities") return cmd_verify_identities(ctx);
    fail(ErrorCode::kConfig, "unknown command '" + command + "'");
}

}  // namespace infodiff
