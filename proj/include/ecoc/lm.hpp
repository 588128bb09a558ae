#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/error.hpp"
#include "ecoc/rng.hpp"
#include "ecoc/span_dp.hpp"
#include "ecoc/tensor.hpp"

namespace ecoc {

enum class HeadKind { ecoc, softmax, hierarchical };

inline const char* to_string(HeadKind k) {
    switch (k) {
        case HeadKind::ecoc: return "ecoc";
        case HeadKind::softmax: return "softmax";
        case HeadKind::hierarchical: return "hierarchical";
    }
    return "?";
}

inline HeadKind parse_head(const std::string& s) {
    if (s == "ecoc") return HeadKind::ecoc;
    if (s == "softmax") return HeadKind::softmax;
    if (s == "hierarchical") return HeadKind::hierarchical;
    throw ConfigError("unknown head '" + s + "' (expected ecoc|softmax|hierarchical)");
}

/// Two-level class tree: tokens are leaves in vocabulary order, grouped into
/// consecutive clusters of `branching` tokens (the last cluster may be short).
struct HierarchyTree {
    std::size_t vocab_size = 0;
    std::size_t branching = 0;
    std::size_t clusters = 0;

    HierarchyTree() = default;
    explicit HierarchyTree(std::size_t v, std::size_t b = 0) : vocab_size(v) {
        if (v < 2) throw ConfigError("hierarchical head needs at least 2 tokens");
        if (b == 0) {
            b = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(v))));
            while (b * b < v) ++b;
        }
        branching = b;
        clusters = (v + b - 1) / b;
    }

    std::size_t cluster_of(std::size_t tok) const { return tok / branching; }
    std::size_t offset_of(std::size_t tok) const { return tok % branching; }
    std::size_t cluster_begin(std::size_t c) const { return c * branching; }
    std::size_t cluster_size(std::size_t c) const { return std::min(branching, vocab_size - c * branching); }
};

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden = 400;  // also the embedding width
    std::size_t layers = 2;
    double dropout = 0.2;
    HeadKind head = HeadKind::ecoc;
    std::size_t n_bits = 0;     // ecoc head width
    std::size_t branching = 0;  // hierarchical head; 0 = ceil(sqrt(V))
    double init_range = 0.1;
};

// Hidden/cell values per layer, carried between BPTT windows.
struct RecurrentState {
    std::vector<nn::Matrix> h;
    std::vector<nn::Matrix> c;
};

// Per-sequence variational dropout masks, already scaled by 1/(1-p).
struct DropoutMasks {
    nn::Matrix input;
    std::vector<nn::Matrix> between;  // layers - 1 masks
    nn::Matrix output;
};

struct HeadOutput {
    nn::Var logits;     // ecoc: B x n_bits; softmax: B x V; hierarchical: root B x clusters
    nn::Var log_probs;  // softmax / hierarchical root log-distribution
    nn::Var hidden;     // top-layer output the head consumed
    nn::Matrix probs;   // ecoc: bit probabilities; softmax: distribution; hierarchical: root distribution
};

class LanguageModel {
public:
    struct Layer {
        nn::Var w_x, w_h, b;
    };

    // Recurrent state as tape nodes during one window.
    struct TapeState {
        std::vector<nn::Var> h, c;
    };

    LanguageModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg_.vocab_size < 2) throw ConfigError("model vocab_size must be >= 2");
        if (cfg_.hidden == 0 || cfg_.layers == 0) throw ConfigError("hidden and layers must be positive");
        if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
        if (cfg_.head == HeadKind::ecoc && cfg_.n_bits == 0) throw ConfigError("ecoc head needs n_bits");
        if (cfg_.head == HeadKind::hierarchical) tree_ = HierarchyTree(cfg_.vocab_size, cfg_.branching);
        cfg_.branching = tree_.branching;

        Rng rng = Rng::stream({seed, 0x696e6974ULL});
        const std::size_t h = cfg_.hidden;
        auto uniform = [&](std::size_t r, std::size_t c, double range) {
            nn::Matrix m(r, c);
            for (double& x : m.values()) x = rng.uniform(-range, range);
            return m;
        };
        embedding_ = params_.add("embedding", uniform(cfg_.vocab_size, h, cfg_.init_range));
        const double lstm_range = 1.0 / std::sqrt(static_cast<double>(h));
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            std::string p = "lstm." + std::to_string(l) + ".";
            Layer layer;
            layer.w_x = params_.add(p + "w_x", uniform(h, 4 * h, lstm_range));
            layer.w_h = params_.add(p + "w_h", uniform(h, 4 * h, lstm_range));
            layer.b = params_.add(p + "b", nn::Matrix(1, 4 * h));
            layers_.push_back(layer);
        }
        switch (cfg_.head) {
            case HeadKind::ecoc:
                head_w_ = params_.add("head.w", uniform(h, cfg_.n_bits, cfg_.init_range));
                head_b_ = params_.add("head.b", nn::Matrix(1, cfg_.n_bits));
                break;
            case HeadKind::softmax:
                head_w_ = params_.add("head.w", uniform(h, cfg_.vocab_size, cfg_.init_range));
                head_b_ = params_.add("head.b", nn::Matrix(1, cfg_.vocab_size));
                break;
            case HeadKind::hierarchical:
                head_w_ = params_.add("head.root.w", uniform(h, tree_.clusters, cfg_.init_range));
                head_b_ = params_.add("head.root.b", nn::Matrix(1, tree_.clusters));
                leaf_w_ = params_.add("head.leaf.w", uniform(h, cfg_.vocab_size, cfg_.init_range));
                leaf_b_ = params_.add("head.leaf.b", nn::Matrix(1, cfg_.vocab_size));
                break;
        }
    }

    LanguageModel(const LanguageModel&) = delete;
    LanguageModel& operator=(const LanguageModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const HierarchyTree& tree() const { return tree_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    nn::Var embedding() const { return embedding_; }
    std::size_t output_width() const {
        switch (cfg_.head) {
            case HeadKind::ecoc: return cfg_.n_bits;
            case HeadKind::softmax: return cfg_.vocab_size;
            case HeadKind::hierarchical: return tree_.clusters;
        }
        return 0;
    }

    RecurrentState zero_state(std::size_t batch) const {
        RecurrentState s;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            s.h.emplace_back(batch, cfg_.hidden);
            s.c.emplace_back(batch, cfg_.hidden);
        }
        return s;
    }

    DropoutMasks sample_masks(std::size_t batch, Rng& rng) const {
        auto mask = [&]() {
            nn::Matrix m(batch, cfg_.hidden, 1.0);
            if (cfg_.dropout > 0.0)
                for (double& x : m.values()) x = rng.uniform() < cfg_.dropout ? 0.0 : 1.0 / (1.0 - cfg_.dropout);
            return m;
        };
        DropoutMasks d;
        d.input = mask();
        for (std::size_t l = 1; l < cfg_.layers; ++l) d.between.push_back(mask());
        d.output = mask();
        return d;
    }

    TapeState load_state(nn::Tape& tape, const RecurrentState& s) const {
        TapeState ts;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            ts.h.push_back(tape.constant(s.h[l]));
            ts.c.push_back(tape.constant(s.c[l]));
        }
        return ts;
    }

    static RecurrentState detach(const TapeState& ts) {
        RecurrentState s;
        for (const auto& v : ts.h) s.h.push_back(v.value());
        for (const auto& v : ts.c) s.c.push_back(v.value());
        return s;
    }

    nn::Var embed(nn::Tape& tape, std::vector<std::size_t> tokens) const {
        return tape.gather_rows(embedding_, std::move(tokens));
    }

    /// One LSTM step over the batch; returns the (dropped-out) top-layer output.
    nn::Var encode_step(nn::Tape& tape, nn::Var x, TapeState& st, const DropoutMasks* masks) const {
        if (x.cols() != cfg_.hidden) throw ConfigError("encode_step: input width != embedding width");
        const std::size_t h = cfg_.hidden;
        nn::Var in = masks ? tape.mul_const(x, masks->input) : x;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const Layer& L = layers_[l];
            nn::Var gates = tape.add_row(tape.add(tape.matmul(in, L.w_x), tape.matmul(st.h[l], L.w_h)), L.b);
            nn::Var i = tape.sigmoid(tape.slice_cols(gates, 0, h));
            nn::Var f = tape.sigmoid(tape.slice_cols(gates, h, h));
            nn::Var g = tape.tanh(tape.slice_cols(gates, 2 * h, h));
            nn::Var o = tape.sigmoid(tape.slice_cols(gates, 3 * h, h));
            nn::Var c = tape.add(tape.mul(f, st.c[l]), tape.mul(i, g));
            nn::Var hn = tape.mul(o, tape.tanh(c));
            st.c[l] = c;
            st.h[l] = hn;
            in = hn;
            if (masks && l + 1 < cfg_.layers) in = tape.mul_const(in, masks->between[l]);
        }
        return masks ? tape.mul_const(in, masks->output) : in;
    }

    HeadOutput decode(nn::Tape& tape, nn::Var top) const {
        HeadOutput out;
        out.hidden = top;
        out.logits = tape.add_row(tape.matmul(top, head_w_), head_b_);
        if (cfg_.head == HeadKind::ecoc) {
            out.probs = out.logits.value();
            for (double& x : out.probs.values()) x = nn::Tape::stable_sigmoid(x);
        } else {
            out.log_probs = tape.log_softmax_rows(out.logits);
            out.probs = out.log_probs.value();
            for (double& x : out.probs.values()) x = std::exp(x);
        }
        return out;
    }

    /// Summed loss over the batch rows for the given next tokens.
    nn::Var loss(nn::Tape& tape, const HeadOutput& out, std::span<const std::size_t> targets, const Codebook* cb) const {
        const std::size_t rows = out.logits.rows();
        if (targets.size() != rows) throw ConfigError("loss: one target per row required");
        switch (cfg_.head) {
            case HeadKind::ecoc: {
                if (!cb || cb->n_bits() != cfg_.n_bits || cb->vocab_size() != cfg_.vocab_size)
                    throw ConfigError("ecoc loss needs a codebook matching the model");
                nn::Matrix y(rows, cfg_.n_bits);
                for (std::size_t r = 0; r < rows; ++r) {
                    Codeword w = span_max_logprob(out.probs.row(r), cb->span_of(targets[r]), cb->mode()).witness;
                    for (std::size_t c = 0; c < cfg_.n_bits; ++c) y(r, c) = w.bit(c) ? 1.0 : 0.0;
                }
                return tape.bce_logits_sum(out.logits, std::move(y));
            }
            case HeadKind::softmax:
                return tape.nll_pick(out.log_probs, {targets.begin(), targets.end()});
            case HeadKind::hierarchical: {
                std::vector<std::size_t> cl(rows), off(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    check_target(targets[r]);
                    cl[r] = tree_.cluster_of(targets[r]);
                    off[r] = tree_.offset_of(targets[r]);
                }
                nn::Var root = tape.nll_pick(out.log_probs, cl);
                nn::Var leaf_lp = leaf_log_probs(tape, out.hidden, cl);
                return tape.add(root, tape.nll_pick(leaf_lp, off));
            }
        }
        throw ConfigError("unknown head");
    }

    /// Log-softmax over the leaves of one cluster per row (B x branching,
    /// padded columns are -inf).
    nn::Var leaf_log_probs(nn::Tape& tape, nn::Var hidden, const std::vector<std::size_t>& clusters) const {
        const std::size_t rows = hidden.rows(), b = tree_.branching;
        std::vector<long> cols(rows * b, -1), seg(rows * b, -1);
        for (std::size_t r = 0; r < rows; ++r) {
            std::size_t c = clusters[r];
            for (std::size_t j = 0; j < tree_.cluster_size(c); ++j) {
                cols[r * b + j] = static_cast<long>(tree_.cluster_begin(c) + j);
                seg[r * b + j] = 0;
            }
        }
        nn::Var logits = tape.linear_cols(hidden, leaf_w_, leaf_b_, std::move(cols), b);
        return tape.log_softmax_segments(logits, std::move(seg));
    }

    // Leaf distribution of `cluster` for one row, without recording gradients.
    std::vector<double> leaf_distribution(const HeadOutput& out, std::size_t row, std::size_t cluster) const {
        const std::size_t n = tree_.cluster_size(cluster), begin = tree_.cluster_begin(cluster);
        std::vector<double> z(n);
        auto h = out.hidden.value().row(row);
        for (std::size_t j = 0; j < n; ++j) {
            double s = leaf_b_.value()[begin + j];
            for (std::size_t k = 0; k < cfg_.hidden; ++k) s += h[k] * leaf_w_.value()(k, begin + j);
            z[j] = s;
        }
        nn::Tape::softmax_inplace(z);
        return z;
    }

    /// Natural-log probability of `target` for one row. ecoc heads use the
    /// factorial span distribution in `mode`.
    double target_logprob(const HeadOutput& out, std::size_t row, std::size_t target, const Codebook* cb,
                          DistributionMode mode = DistributionMode::sum) const {
        check_target(target);
        switch (cfg_.head) {
            case HeadKind::ecoc:
                if (!cb) throw ConfigError("ecoc head needs a codebook");
                if (mode == DistributionMode::sum) return token_log_mass(out.probs.row(row), *cb, target);
                return token_distribution(out.probs.row(row), *cb, DistributionMode::max)[target];
            case HeadKind::softmax:
                return out.log_probs.value()(row, target);
            case HeadKind::hierarchical: {
                std::size_t c = tree_.cluster_of(target);
                auto leaf = leaf_distribution(out, row, c);
                return out.log_probs.value()(row, c) + std::log(leaf[tree_.offset_of(target)]);
            }
        }
        return 0.0;
    }

    /// Greedy prediction: thresholded bits decoded through the codebook,
    /// argmax of the softmax, or the argmax path of the tree.
    std::size_t greedy_token(const HeadOutput& out, std::size_t row, const Codebook* cb) const {
        switch (cfg_.head) {
            case HeadKind::ecoc:
                if (!cb) throw ConfigError("ecoc head needs a codebook");
                return cb->decode_probs(out.probs.row(row));
            case HeadKind::softmax: {
                auto p = out.probs.row(row);
                return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
            }
            case HeadKind::hierarchical: {
                auto p = out.probs.row(row);
                auto c = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
                auto leaf = leaf_distribution(out, row, c);
                return tree_.cluster_begin(c) + static_cast<std::size_t>(std::max_element(leaf.begin(), leaf.end()) - leaf.begin());
            }
        }
        return 0;
    }

    /// Single-sequence step without gradient recording. Returns the head's
    /// activations: bit probabilities, token distribution, or root distribution.
    std::vector<double> forward_step(RecurrentState& state, std::span<const double> input_embedding) const {
        if (input_embedding.size() != cfg_.hidden) throw ConfigError("forward_step: input width != embedding width");
        nn::Tape tape;
        TapeState ts = load_state(tape, state);
        nn::Var x = tape.constant(nn::Matrix(1, cfg_.hidden, {input_embedding.begin(), input_embedding.end()}));
        HeadOutput out = decode(tape, encode_step(tape, x, ts, nullptr));
        state = detach(ts);
        return out.probs.values();
    }

    nn::Var head_weight() const { return head_w_; }
    nn::Var head_bias() const { return head_b_; }
    nn::Var leaf_weight() const { return leaf_w_; }
    nn::Var leaf_bias() const { return leaf_b_; }

private:
    void check_target(std::size_t t) const {
        if (t >= cfg_.vocab_size) throw ConfigError("target token " + std::to_string(t) + " out of range");
    }

    ModelConfig cfg_;
    HierarchyTree tree_;
    nn::ParameterStore params_;
    nn::Var embedding_;
    std::vector<Layer> layers_;
    nn::Var head_w_, head_b_, leaf_w_, leaf_b_;
};

// ---- reference losses on plain distributions ---------------------------------

/// Per-bit BCE against the most probable codeword in the target's span;
/// equals -span_max_logprob of that span.
inline double ecoc_codeword_loss(std::span<const double> bit_probs, std::size_t target, const Codebook& cb) {
    const Codeword w = span_max_logprob(bit_probs, cb.span_of(target), cb.mode()).witness;
    double loss = 0.0;
    for (std::size_t c = 0; c < bit_probs.size(); ++c) {
        double p = std::clamp(bit_probs[c], kProbEpsilon, 1.0 - kProbEpsilon);
        loss -= w.bit(c) ? std::log(p) : std::log1p(-p);
    }
    return loss;
}

inline double cross_entropy_loss(std::span<const double> probs, std::size_t target) {
    if (target >= probs.size()) throw ConfigError("cross_entropy_loss: target out of range");
    double s = 0.0;
    for (double p : probs) s += p;
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("cross_entropy_loss: probabilities do not sum to 1");
    return -std::log(probs[target]);
}

/// -(ln p(cluster | root) + ln p(leaf | cluster)) on a two-level tree.
inline double hierarchical_loss(std::span<const double> root_probs, std::span<const double> leaf_probs, const HierarchyTree& tree,
                                std::size_t target) {
    if (target >= tree.vocab_size) throw ConfigError("hierarchical_loss: target out of range");
    const std::size_t c = tree.cluster_of(target);
    if (root_probs.size() != tree.clusters || leaf_probs.size() != tree.cluster_size(c))
        throw ConfigError("hierarchical_loss: distribution sizes do not match the tree");
    return -(std::log(root_probs[c]) + std::log(leaf_probs[tree.offset_of(target)]));
}

}  // namespace ecoc
