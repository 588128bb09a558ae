#pragma once

// Chooses the input embedding for step t of a training window from the gold
// token and the model's outputs at step t-1, according to the sampling
// strategy. All randomness comes from one stream per batch lane keyed by
// (seed, epoch, window, lane, step).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/error.hpp"
#include "ecoc/lm.hpp"
#include "ecoc/rng.hpp"
#include "ecoc/sampling.hpp"
#include "ecoc/tensor.hpp"

namespace ecoc {

inline void check_strategy_head(Strategy s, HeadKind h) {
    auto bad = [&]() {
        throw ConfigError(std::string("strategy ") + to_string(s) + " is not available for the " + to_string(h) + " head");
    };
    switch (s) {
        case Strategy::teacher_forcing:
        case Strategy::scheduled_sampling: return;
        case Strategy::clvms:
            if (h == HeadKind::softmax) bad();
            return;
        case Strategy::soft_mixture:
        case Strategy::binary_concrete:
            if (h != HeadKind::ecoc) bad();
            return;
        case Strategy::gumbel_softmax:
            if (h != HeadKind::hierarchical) bad();
            return;
    }
}

struct StepKey {
    std::uint64_t epoch = 0;
    std::uint64_t window = 0;
    std::uint64_t step = 0;
};

// Counters behind the exposure metrics.
struct ExposureStats {
    double units_from_model = 0.0;  // latent units (bits, tree levels, positions) taken from the prediction
    double units_total = 0.0;
    std::size_t positions = 0;
    std::size_t positions_changed = 0;  // input token differs from gold

    void merge(const ExposureStats& o) {
        units_from_model += o.units_from_model;
        units_total += o.units_total;
        positions += o.positions;
        positions_changed += o.positions_changed;
    }
    double exposure() const { return units_total > 0.0 ? units_from_model / units_total : 0.0; }
    double changed_rate() const { return positions ? static_cast<double>(positions_changed) / static_cast<double>(positions) : 0.0; }
};

// Uniform draws for relaxed strategies; filled from the lane streams unless supplied.
struct RelaxationNoise {
    nn::Matrix uniforms;       // ecoc: B x n_bits; hierarchical: B x clusters
    nn::Matrix leaf_uniforms;  // hierarchical: B x (2 * branching)
};

struct InputRequest {
    const LanguageModel* model = nullptr;
    const Codebook* codebook = nullptr;
    const SamplerConfig* sampler = nullptr;
    double schedule = 0.0;     // mixing probability this epoch
    double temperature = 1.0;  // relaxation / soft-argmax temperature
    StepKey key;
    const RelaxationNoise* noise = nullptr;  // overrides lane noise (gradient checks)
    const std::vector<bool>* force_relaxed = nullptr;  // overrides the per-row Bernoulli
};

class InputBuilder {
public:
    explicit InputBuilder(InputRequest req) : r_(req) {
        if (!r_.model || !r_.sampler) throw ConfigError("InputBuilder: model and sampler are required");
        check_strategy_head(r_.sampler->strategy, r_.model->config().head);
        if (r_.model->config().head == HeadKind::ecoc && !r_.codebook) throw ConfigError("InputBuilder: ecoc head needs a codebook");
    }

    /// `prev` is the head output of step t-1 (nullptr at the first step of a window).
    nn::Var build(nn::Tape& tape, const HeadOutput* prev, const std::vector<std::size_t>& gold, ExposureStats* stats = nullptr) {
        const std::size_t rows = gold.size();
        const Strategy s = r_.sampler->strategy;
        if (!prev || s == Strategy::teacher_forcing) return r_.model->embed(tape, gold);
        if (prev->probs.rows() != rows) throw ConfigError("InputBuilder: batch size changed between steps");
        std::vector<Rng> lanes;
        lanes.reserve(rows);
        for (std::size_t b = 0; b < rows; ++b)
            lanes.push_back(Rng::stream({r_.sampler->seed, 0x73616d70ULL, r_.key.epoch, r_.key.window, b, r_.key.step}));
        ExposureStats local;
        nn::Var x;
        switch (s) {
            case Strategy::scheduled_sampling: x = scheduled(tape, *prev, gold, lanes, local); break;
            case Strategy::clvms: x = clvms(tape, *prev, gold, lanes, local); break;
            case Strategy::soft_mixture: x = soft_mixture(tape, *prev, gold, lanes, local); break;
            case Strategy::binary_concrete: x = binary_concrete(tape, *prev, gold, lanes, local); break;
            case Strategy::gumbel_softmax: x = gumbel(tape, *prev, gold, lanes, local); break;
            case Strategy::teacher_forcing: break;
        }
        if (stats) stats->merge(local);
        return x;
    }

private:
    nn::Var scheduled(nn::Tape& tape, const HeadOutput& prev, const std::vector<std::size_t>& gold, std::vector<Rng>& lanes,
                      ExposureStats& st) {
        std::vector<std::size_t> in = gold;
        for (std::size_t b = 0; b < gold.size(); ++b) {
            if (lanes[b].bernoulli(r_.schedule)) {
                in[b] = r_.model->greedy_token(prev, b, r_.codebook);
                st.units_from_model += 1.0;
            }
            st.units_total += 1.0;
            st.positions_changed += in[b] != gold[b];
        }
        st.positions += gold.size();
        return r_.model->embed(tape, std::move(in));
    }

    nn::Var clvms(nn::Tape& tape, const HeadOutput& prev, const std::vector<std::size_t>& gold, std::vector<Rng>& lanes,
                  ExposureStats& st) {
        const LanguageModel& m = *r_.model;
        std::vector<std::size_t> in = gold;
        if (m.config().head == HeadKind::ecoc) {
            const Codebook& cb = *r_.codebook;
            const auto p = per_bit_probabilities(r_.schedule, cb.n_bits(), r_.sampler->schedule.profile);
            for (std::size_t b = 0; b < gold.size(); ++b) {
                std::size_t taken = 0;
                Codeword mixed = mix_codeword_bits(cb.threshold(prev.probs.row(b)), cb.encode(gold[b]), p, lanes[b], &taken);
                in[b] = cb.decode(mixed);
                st.units_from_model += static_cast<double>(taken);
                st.units_total += static_cast<double>(cb.n_bits());
            }
        } else {
            const HierarchyTree& tree = m.tree();
            const auto p = per_bit_probabilities(r_.schedule, 2, r_.sampler->schedule.profile);
            for (std::size_t b = 0; b < gold.size(); ++b) {
                const std::size_t pred = m.greedy_token(prev, b, nullptr);
                const bool use_c = lanes[b].bernoulli(p[0]);
                const bool use_o = lanes[b].bernoulli(p[1]);
                std::size_t c = use_c ? tree.cluster_of(pred) : tree.cluster_of(gold[b]);
                std::size_t o = use_o ? tree.offset_of(pred) : tree.offset_of(gold[b]);
                o = std::min(o, tree.cluster_size(c) - 1);
                in[b] = tree.cluster_begin(c) + o;
                st.units_from_model += static_cast<double>(use_c) + static_cast<double>(use_o);
                st.units_total += 2.0;
            }
        }
        for (std::size_t b = 0; b < gold.size(); ++b) st.positions_changed += in[b] != gold[b];
        st.positions += gold.size();
        return m.embed(tape, std::move(in));
    }

    nn::Var soft_mixture(nn::Tape& tape, const HeadOutput& prev, const std::vector<std::size_t>& gold, std::vector<Rng>& lanes,
                         ExposureStats& st) {
        const Codebook& cb = *r_.codebook;
        const std::size_t n = cb.n_bits(), rows = gold.size();
        const std::size_t k = std::min(r_.sampler->k, n);
        const auto p = per_bit_probabilities(r_.schedule, n, r_.sampler->schedule.profile);
        std::vector<std::vector<std::size_t>> toks(rows);
        std::vector<std::vector<double>> wts(rows);
        bool any = false;
        for (std::size_t b = 0; b < rows; ++b) {
            const Codeword target = cb.encode(gold[b]);
            std::vector<bool> mixed(n);
            std::vector<double> q(n);
            std::size_t n_mixed = 0;
            for (std::size_t c = 0; c < n; ++c) {
                mixed[c] = lanes[b].bernoulli(p[c]);
                n_mixed += mixed[c];
                q[c] = mixed[c] ? prev.probs(b, c) : (target.bit(c) ? 1.0 : 0.0);
            }
            st.units_from_model += static_cast<double>(n_mixed);
            st.units_total += static_cast<double>(n);
            if (n_mixed == 0) {
                toks[b] = {gold[b]};
                wts[b] = {1.0};
                continue;
            }
            any = true;
            auto cands = flip_candidates(q, k, &mixed);
            std::vector<double> scores;
            for (const auto& cw : cands) {
                toks[b].push_back(cb.decode(cw));
                scores.push_back(codeword_logprob(q, cw) / r_.temperature);
            }
            wts[b] = softmax_weights(scores);
            auto best = std::max_element(wts[b].begin(), wts[b].end()) - wts[b].begin();
            st.positions_changed += toks[b][static_cast<std::size_t>(best)] != gold[b];
        }
        st.positions += rows;
        if (!any) return r_.model->embed(tape, gold);
        return mix_rows(tape, toks, wts);
    }

    // Embedding mixture with constant weights; rows padded with zero-weight slots.
    nn::Var mix_rows(nn::Tape& tape, const std::vector<std::vector<std::size_t>>& toks, const std::vector<std::vector<double>>& wts) {
        std::size_t width = 0;
        for (const auto& t : toks) width = std::max(width, t.size());
        std::vector<std::size_t> flat(toks.size() * width, 0);
        nn::Matrix w(toks.size(), width);
        for (std::size_t b = 0; b < toks.size(); ++b)
            for (std::size_t j = 0; j < toks[b].size(); ++j) {
                flat[b * width + j] = toks[b][j];
                w(b, j) = wts[b][j];
            }
        return tape.embed_mix(r_.model->embedding(), std::move(flat), tape.constant(std::move(w)));
    }

    std::vector<bool> relaxed_rows(std::size_t rows, std::vector<Rng>& lanes, ExposureStats& st) {
        std::vector<bool> use(rows);
        for (std::size_t b = 0; b < rows; ++b) {
            use[b] = r_.force_relaxed ? (*r_.force_relaxed)[b] : lanes[b].bernoulli(r_.schedule);
            st.units_from_model += use[b];
            st.units_total += 1.0;
        }
        st.positions += rows;
        return use;
    }

    nn::Matrix lane_uniforms(std::vector<Rng>& lanes, std::size_t cols) {
        nn::Matrix u(lanes.size(), cols);
        for (std::size_t b = 0; b < lanes.size(); ++b)
            for (std::size_t c = 0; c < cols; ++c) u(b, c) = lanes[b].uniform();
        return u;
    }

    nn::Var binary_concrete(nn::Tape& tape, const HeadOutput& prev, const std::vector<std::size_t>& gold, std::vector<Rng>& lanes,
                            ExposureStats& st) {
        const Codebook& cb = *r_.codebook;
        const std::size_t rows = gold.size(), n = cb.n_bits();
        const std::vector<bool> use = relaxed_rows(rows, lanes, st);
        if (std::none_of(use.begin(), use.end(), [](bool v) { return v; })) return r_.model->embed(tape, gold);

        const nn::Matrix u = r_.noise ? r_.noise->uniforms : lane_uniforms(lanes, n);
        if (u.rows() != rows || u.cols() != n) throw ConfigError("binary_concrete: noise shape mismatch");
        nn::Matrix l(rows, n);
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = logistic_noise(u[i]);
        nn::Var z = tape.sigmoid(tape.scale(tape.add_const(prev.logits, l), 1.0 / r_.temperature));

        // candidates: thresholded relaxed code plus flips of its least confident bits
        const std::size_t kk = std::min(r_.sampler->k, n + 1);
        std::vector<unsigned char> cand(rows * kk * n);
        std::vector<std::size_t> toks(rows * kk);
        for (std::size_t b = 0; b < rows; ++b) {
            auto zr = z.value().row(b);
            std::vector<bool> base(n);
            for (std::size_t c = 0; c < n; ++c) base[c] = zr[c] > 0.5;
            std::vector<Codeword> cs{Codeword::from_bits(base)};
            for (auto& f : flip_candidates(zr, kk - 1)) cs.push_back(std::move(f));
            for (std::size_t j = 0; j < kk; ++j) {
                for (std::size_t c = 0; c < n; ++c) cand[(b * kk + j) * n + c] = cs[j].bit(c);
                toks[b * kk + j] = cb.decode(cs[j]);
            }
            if (use[b]) st.positions_changed += toks[b * kk] != gold[b];
        }
        nn::Var w = tape.softmax_rows(tape.codeword_loglik(z, std::move(cand), kk));
        nn::Var relaxed = tape.embed_mix(r_.model->embedding(), std::move(toks), w);
        return tape.select_rows(relaxed, r_.model->embed(tape, gold), use);
    }

    nn::Var gumbel(nn::Tape& tape, const HeadOutput& prev, const std::vector<std::size_t>& gold, std::vector<Rng>& lanes,
                   ExposureStats& st) {
        const LanguageModel& m = *r_.model;
        const HierarchyTree& tree = m.tree();
        const std::size_t rows = gold.size(), nc = tree.clusters, bw = tree.branching;
        const std::vector<bool> use = relaxed_rows(rows, lanes, st);
        if (std::none_of(use.begin(), use.end(), [](bool v) { return v; })) return m.embed(tape, gold);

        const nn::Matrix u = r_.noise ? r_.noise->uniforms : lane_uniforms(lanes, nc);
        const nn::Matrix ul = r_.noise ? r_.noise->leaf_uniforms : lane_uniforms(lanes, 2 * bw);
        if (u.rows() != rows || u.cols() != nc || ul.rows() != rows || ul.cols() != 2 * bw)
            throw ConfigError("gumbel_softmax: noise shape mismatch");
        nn::Matrix g(rows, nc), gl(rows, 2 * bw);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gumbel_noise(u[i]);
        for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = gumbel_noise(ul[i]);
        const double inv = 1.0 / r_.temperature;
        nn::Var root = tape.log_softmax_rows(tape.scale(tape.add_const(prev.logits, g), inv));

        // leaves of the two highest-scoring relaxed clusters
        const std::size_t top = std::min<std::size_t>(2, nc);
        std::vector<long> cols(rows * 2 * bw, -1), seg(rows * 2 * bw, -1), root_idx(rows * 2 * bw, -1);
        for (std::size_t b = 0; b < rows; ++b) {
            auto rv = root.value().row(b);
            std::vector<std::size_t> order(nc);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::partial_sort(order.begin(), order.begin() + static_cast<long>(top), order.end(),
                              [&](std::size_t a, std::size_t c) { return rv[a] > rv[c] || (rv[a] == rv[c] && a < c); });
            for (std::size_t t = 0; t < top; ++t) {
                const std::size_t c = order[t];
                for (std::size_t j = 0; j < tree.cluster_size(c); ++j) {
                    const std::size_t slot = b * 2 * bw + t * bw + j;
                    cols[slot] = static_cast<long>(tree.cluster_begin(c) + j);
                    seg[slot] = static_cast<long>(t);
                    root_idx[slot] = static_cast<long>(c);
                }
            }
        }
        std::vector<long> cols_copy = cols;
        nn::Var leaf_logits = tape.linear_cols(prev.hidden, m.leaf_weight(), m.leaf_bias(), std::move(cols_copy), 2 * bw);
        nn::Var leaf = tape.log_softmax_segments(tape.scale(tape.add_const(leaf_logits, gl), inv), std::move(seg));
        nn::Var score = tape.add(tape.gather_cols(root, std::move(root_idx), 2 * bw), leaf);

        const std::size_t kk = std::max<std::size_t>(1, std::min(r_.sampler->k, 2 * bw));
        std::vector<long> pick(rows * kk, -1);
        std::vector<std::size_t> toks(rows * kk, 0);
        for (std::size_t b = 0; b < rows; ++b) {
            auto sv = score.value().row(b);
            std::vector<std::size_t> order;
            for (std::size_t j = 0; j < 2 * bw; ++j)
                if (cols[b * 2 * bw + j] >= 0) order.push_back(j);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return sv[a] > sv[c]; });
            for (std::size_t j = 0; j < std::min(kk, order.size()); ++j) {
                pick[b * kk + j] = static_cast<long>(order[j]);
                toks[b * kk + j] = static_cast<std::size_t>(cols[b * 2 * bw + order[j]]);
            }
            if (use[b]) st.positions_changed += toks[b * kk] != gold[b];
        }
        nn::Var w = tape.softmax_rows(tape.gather_cols(score, std::move(pick), kk));
        nn::Var relaxed = tape.embed_mix(m.embedding(), std::move(toks), w);
        return tape.select_rows(relaxed, m.embed(tape, gold), use);
    }

    InputRequest r_;
};

/// Single-position form: the input vector for step t given the head output
/// of step t-1 (row 0) and the gold token at t-1.
inline std::vector<double> next_input(const InputRequest& req, const HeadOutput* prev, std::size_t gold_token) {
    nn::Tape tape;
    InputBuilder builder(req);
    if (prev && prev->probs.rows() != 1) throw ConfigError("next_input: expects a single-row head output");
    nn::Var x = builder.build(tape, prev, {gold_token});
    return x.value().values();
}

}  // namespace ecoc
