#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/corpus.hpp"
#include "ecoc/error.hpp"
#include "ecoc/input_policy.hpp"
#include "ecoc/lm.hpp"
#include "ecoc/optim.hpp"
#include "ecoc/sampling.hpp"

namespace ecoc {

inline constexpr const char* kOutputRootEnv = "ECOC_OUTPUT_ROOT";

struct RunConfig {
    // data
    std::string train, valid, test;
    std::uint64_t min_count = 1;
    std::size_t max_vocab = 0;
    // codebook
    HeadKind head = HeadKind::ecoc;
    std::size_t n_bits = 0;  // 0 -> 4 * ceil(log2 |V|)
    OrderingKind ordering = OrderingKind::embedding;
    MappingMode mapping = MappingMode::binary;
    std::string query;       // empty -> most frequent token
    std::string embeddings;  // word-vector file; empty -> PPMI-SVD from the training corpus
    bool embedding_fallback = true;
    std::size_t ppmi_window = 4;
    std::size_t ppmi_dim = 32;
    // model
    std::size_t hidden = 400;
    std::size_t layers = 2;
    double dropout = 0.2;
    double init_range = 0.1;
    std::size_t branching = 0;
    std::size_t bptt = 35;
    std::size_t batch = 20;
    std::size_t eval_batch = 10;
    // optimizer
    nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;
    double lr = 20.0;
    double clip = 0.25;
    double lr_decay = 0.25;
    std::size_t patience = 3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    // sampler
    Strategy strategy = Strategy::teacher_forcing;
    double tau_max = 0.25;
    double delta = 0.0;
    std::size_t k = 5;
    double temp_start = 0.01;
    double temp_end = 2.5;
    BitProfile per_bit_profile = BitProfile::uniform;
    // run
    std::size_t epochs = 40;
    std::uint64_t seed = 1;
    std::string out_dir = "run";
    std::size_t max_windows = 0;  // per-epoch cap on training windows, 0 = all

    static const std::vector<std::string>& keys() {
        static const std::vector<std::string> k = {
            "batch",      "beta1",       "beta2",           "bptt",       "branching", "clip",       "delta",    "dropout",
            "embedding_fallback",        "embeddings",      "epochs",     "eps",       "eval_batch", "head",     "hidden",
            "init_range", "k",           "layers",          "lr",         "lr_decay",  "mapping",    "max_vocab", "max_windows",
            "min_count",  "n_bits",      "optimizer",       "ordering",   "out_dir",   "patience",   "per_bit_profile",
            "ppmi_dim",   "ppmi_window", "query",           "seed",       "strategy",  "tau_max",    "temp_end", "temp_start",
            "test",       "train",       "valid"};
        return k;
    }

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        for (const auto& k : keys()) m[k] = get(k);
        return m;
    }

    std::string to_string() const {
        std::string out;
        for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
        return out;
    }

    SamplerConfig sampler() const {
        SamplerConfig s;
        s.strategy = strategy;
        s.schedule.tau_max = tau_max;
        s.schedule.delta = delta;
        s.schedule.total_epochs = epochs;
        s.schedule.profile = per_bit_profile;
        s.k = k;
        s.temp_start = temp_start;
        s.temp_end = temp_end;
        s.seed = seed;
        return s;
    }

    nn::OptimizerConfig optimizer_config() const {
        nn::OptimizerConfig o;
        o.kind = optimizer;
        o.lr = lr;
        o.clip = clip;
        o.beta1 = beta1;
        o.beta2 = beta2;
        o.eps = eps;
        return o;
    }

    /// Checks ranges and (optionally) that the corpus files exist.
    void validate(bool check_files = true) const {
        auto need = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError(msg);
        };
        need(!train.empty(), "train corpus path is required");
        need(hidden >= 1 && layers >= 1, "hidden and layers must be >= 1");
        need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
        need(init_range > 0.0, "init_range must be > 0");
        need(bptt >= 1 && batch >= 1 && eval_batch >= 1, "bptt, batch and eval_batch must be >= 1");
        need(lr > 0.0, "lr must be > 0");
        need(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0, 1]");
        need(epochs >= 1, "epochs must be >= 1");
        need(n_bits <= kMaxCodeBits, "n_bits must be <= 4096");
        need(ppmi_window >= 1 && ppmi_dim >= 1, "ppmi_window and ppmi_dim must be >= 1");
        sampler().validate();
        check_strategy_head(strategy, head);
        if (check_files)
            for (const auto* p : {&train, &valid, &test})
                if (!p->empty() && !std::filesystem::is_regular_file(*p)) throw ConfigError("corpus file not found: " + *p);
        if (check_files && !embeddings.empty() && !std::filesystem::is_regular_file(embeddings) && !embedding_fallback)
            throw ConfigError("embedding file not found: " + embeddings);
        if (head == HeadKind::ecoc && ordering == OrderingKind::embedding && embeddings.empty() && !embedding_fallback)
            throw ConfigError("ordering=embedding needs an embeddings file unless embedding_fallback=true");
    }

    /// Absolute corpus/embedding paths and an output directory under
    /// $ECOC_OUTPUT_ROOT when it is relative.
    void resolve_paths() {
        namespace fs = std::filesystem;
        for (auto* p : {&train, &valid, &test, &embeddings})
            if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
        fs::path out(out_dir);
        if (out.is_relative())
            if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = fs::path(root) / out;
        out_dir = fs::absolute(out).lexically_normal().string();
    }
};

namespace detail {

inline std::string fmt_double(double x) {
    std::ostringstream s;
    s.precision(17);
    s << x;
    return s.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        T out{};
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(v, &used);
        } else {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
            out = static_cast<T>(std::stoull(v, &used));
        }
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& v) {
    using detail::parse_number;
    auto sz = [&](std::size_t& f) { f = parse_number<std::size_t>(key, v); };
    auto dbl = [&](double& f) { f = parse_number<double>(key, v); };
    if (key == "train") train = v;
    else if (key == "valid") valid = v;
    else if (key == "test") test = v;
    else if (key == "min_count") min_count = parse_number<std::uint64_t>(key, v);
    else if (key == "max_vocab") sz(max_vocab);
    else if (key == "head") head = parse_head(v);
    else if (key == "n_bits") sz(n_bits);
    else if (key == "ordering") ordering = parse_ordering(v);
    else if (key == "mapping") mapping = parse_mapping_mode(v);
    else if (key == "query") query = v;
    else if (key == "embeddings") embeddings = v;
    else if (key == "embedding_fallback") embedding_fallback = detail::parse_bool(key, v);
    else if (key == "ppmi_window") sz(ppmi_window);
    else if (key == "ppmi_dim") sz(ppmi_dim);
    else if (key == "hidden") sz(hidden);
    else if (key == "layers") sz(layers);
    else if (key == "dropout") dbl(dropout);
    else if (key == "init_range") dbl(init_range);
    else if (key == "branching") sz(branching);
    else if (key == "bptt") sz(bptt);
    else if (key == "batch") sz(batch);
    else if (key == "eval_batch") sz(eval_batch);
    else if (key == "optimizer") optimizer = nn::parse_optimizer(v);
    else if (key == "lr") dbl(lr);
    else if (key == "clip") dbl(clip);
    else if (key == "lr_decay") dbl(lr_decay);
    else if (key == "patience") sz(patience);
    else if (key == "beta1") dbl(beta1);
    else if (key == "beta2") dbl(beta2);
    else if (key == "eps") dbl(eps);
    else if (key == "strategy") strategy = parse_strategy(v);
    else if (key == "tau_max") dbl(tau_max);
    else if (key == "delta") dbl(delta);
    else if (key == "k") sz(k);
    else if (key == "temp_start") dbl(temp_start);
    else if (key == "temp_end") dbl(temp_end);
    else if (key == "per_bit_profile") per_bit_profile = parse_bit_profile(v);
    else if (key == "epochs") sz(epochs);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
    else if (key == "out_dir") out_dir = v;
    else if (key == "max_windows") sz(max_windows);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
    using detail::fmt_double;
    if (key == "train") return train;
    if (key == "valid") return valid;
    if (key == "test") return test;
    if (key == "min_count") return std::to_string(min_count);
    if (key == "max_vocab") return std::to_string(max_vocab);
    if (key == "head") return ecoc::to_string(head);
    if (key == "n_bits") return std::to_string(n_bits);
    if (key == "ordering") return ecoc::to_string(ordering);
    if (key == "mapping") return ecoc::to_string(mapping);
    if (key == "query") return query;
    if (key == "embeddings") return embeddings;
    if (key == "embedding_fallback") return embedding_fallback ? "true" : "false";
    if (key == "ppmi_window") return std::to_string(ppmi_window);
    if (key == "ppmi_dim") return std::to_string(ppmi_dim);
    if (key == "hidden") return std::to_string(hidden);
    if (key == "layers") return std::to_string(layers);
    if (key == "dropout") return fmt_double(dropout);
    if (key == "init_range") return fmt_double(init_range);
    if (key == "branching") return std::to_string(branching);
    if (key == "bptt") return std::to_string(bptt);
    if (key == "batch") return std::to_string(batch);
    if (key == "eval_batch") return std::to_string(eval_batch);
    if (key == "optimizer") return nn::to_string(optimizer);
    if (key == "lr") return fmt_double(lr);
    if (key == "clip") return fmt_double(clip);
    if (key == "lr_decay") return fmt_double(lr_decay);
    if (key == "patience") return std::to_string(patience);
    if (key == "beta1") return fmt_double(beta1);
    if (key == "beta2") return fmt_double(beta2);
    if (key == "eps") return fmt_double(eps);
    if (key == "strategy") return ecoc::to_string(strategy);
    if (key == "tau_max") return fmt_double(tau_max);
    if (key == "delta") return fmt_double(delta);
    if (key == "k") return std::to_string(k);
    if (key == "temp_start") return fmt_double(temp_start);
    if (key == "temp_end") return fmt_double(temp_end);
    if (key == "per_bit_profile") return ecoc::to_string(per_bit_profile);
    if (key == "epochs") return std::to_string(epochs);
    if (key == "seed") return std::to_string(seed);
    if (key == "out_dir") return out_dir;
    if (key == "max_windows") return std::to_string(max_windows);
    throw ConfigError("unknown config key '" + key + "'");
}

/// Flat key=value text; '#' starts a comment line, blank lines ignored.
inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            s.erase(0, s.find_first_not_of(ws));
            s.erase(s.find_last_not_of(ws) + 1);
            return s;
        };
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(no) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

inline void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) cfg.set(k, v);
}

inline RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    apply_overrides(cfg, parse_key_values(read_text_file(path), path));
    return cfg;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out << text;
    if (!out) throw ConfigError("failed writing " + path);
}

}  // namespace ecoc
