#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/codeword.hpp"
#include "ecoc/error.hpp"
#include "ecoc/rng.hpp"
#include "ecoc/span_dp.hpp"

namespace ecoc {

enum class Strategy { teacher_forcing, scheduled_sampling, clvms, soft_mixture, binary_concrete, gumbel_softmax };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::teacher_forcing: return "teacher_forcing";
        case Strategy::scheduled_sampling: return "scheduled_sampling";
        case Strategy::clvms: return "clvms";
        case Strategy::soft_mixture: return "soft_mixture";
        case Strategy::binary_concrete: return "binary_concrete";
        case Strategy::gumbel_softmax: return "gumbel_softmax";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    for (Strategy k : {Strategy::teacher_forcing, Strategy::scheduled_sampling, Strategy::clvms, Strategy::soft_mixture,
                       Strategy::binary_concrete, Strategy::gumbel_softmax})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown strategy '" + s +
                      "' (expected teacher_forcing|scheduled_sampling|clvms|soft_mixture|binary_concrete|gumbel_softmax)");
}

enum class BitProfile { uniform, significance_ramp };

inline const char* to_string(BitProfile p) { return p == BitProfile::uniform ? "uniform" : "significance_ramp"; }

inline BitProfile parse_bit_profile(const std::string& s) {
    if (s == "uniform") return BitProfile::uniform;
    if (s == "significance_ramp") return BitProfile::significance_ramp;
    throw ConfigError("unknown per_bit_profile '" + s + "' (expected uniform|significance_ramp)");
}

/// Sigmoidal curriculum: the probability of consuming the model's own
/// prediction rises from ~0 to tau_max over total_epochs, centred at the
/// midpoint with slope scale delta.
struct MixtureSchedule {
    double tau_max = 0.25;
    double delta = 0.0;  // 0 selects total_epochs / 20
    std::size_t total_epochs = 40;
    BitProfile profile = BitProfile::uniform;

    double effective_delta() const { return delta > 0.0 ? delta : static_cast<double>(total_epochs) / 20.0; }
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double schedule_value(const MixtureSchedule& s, double epoch) {
    const double n = static_cast<double>(s.total_epochs);
    epoch = std::clamp(epoch, 0.0, n);
    const double d = s.effective_delta();
    if (!(d > 0.0)) return epoch >= n / 2.0 ? s.tau_max : 0.0;
    return s.tau_max * sigmoid((epoch - n / 2.0) / d);
}

/// Per-bit mixing probabilities for a schedule value. significance_ramp grows
/// linearly from 0.5 * value at the most significant bit to value at the least.
inline std::vector<double> per_bit_probabilities(double value, std::size_t n_bits, BitProfile profile) {
    std::vector<double> p(n_bits, value);
    if (profile == BitProfile::significance_ramp && n_bits > 1)
        for (std::size_t c = 0; c < n_bits; ++c)
            p[c] = value * (0.5 + 0.5 * static_cast<double>(c) / static_cast<double>(n_bits - 1));
    return p;
}

/// Sigmoidal temperature rise from temp_start to temp_end (slope total/20).
inline double anneal_temperature(double epoch, double total, double temp_start = 0.01, double temp_end = 2.5) {
    if (total <= 0.0) return temp_end;
    epoch = std::clamp(epoch, 0.0, total);
    return temp_start + (temp_end - temp_start) * sigmoid((epoch - total / 2.0) / (total / 20.0));
}

/// Bit c comes from `predicted` with probability p_vec[c], else from `target`.
inline Codeword mix_codeword_bits(const Codeword& predicted, const Codeword& target, std::span<const double> p_vec, Rng& rng,
                                  std::size_t* taken = nullptr) {
    if (predicted.width() != target.width() || p_vec.size() != target.width())
        throw ConfigError("mix_codeword_bits: width mismatch");
    std::vector<bool> bits(target.width());
    std::size_t from_pred = 0;
    for (std::size_t c = 0; c < bits.size(); ++c) {
        if (!(p_vec[c] >= 0.0 && p_vec[c] <= 1.0)) throw ConfigError("mix_codeword_bits: probability outside [0,1]");
        bool use_pred = rng.bernoulli(p_vec[c]);
        from_pred += use_pred;
        bits[c] = use_pred ? predicted.bit(c) : target.bit(c);
    }
    if (taken) *taken = from_pred;
    return Codeword::from_bits(bits);
}

inline constexpr double kNoiseClamp = 1e-12;

inline double clamp_uniform(double u) { return std::clamp(u, kNoiseClamp, 1.0 - kNoiseClamp); }

inline double gumbel_noise(double u) {
    u = clamp_uniform(u);
    return -std::log(-std::log(u));
}

inline double logistic_noise(double u) {
    u = clamp_uniform(u);
    return std::log(u) - std::log1p(-u);
}

/// softmax((logits + G) / tau) with G_k = -ln(-ln U_k) for the supplied uniforms.
inline std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, std::span<const double> uniforms) {
    if (!(tau > 0.0)) throw ConfigError("gumbel_softmax_sample: tau must be > 0");
    if (uniforms.size() != logits.size()) throw ConfigError("gumbel_softmax_sample: one uniform per class required");
    std::vector<double> y(logits.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (!std::isfinite(logits[k])) throw ConfigError("gumbel_softmax_sample: non-finite logit");
        y[k] = (logits[k] + gumbel_noise(uniforms[k])) / tau;
    }
    double m = *std::max_element(y.begin(), y.end());
    double z = 0.0;
    for (double& v : y) z += (v = std::exp(v - m));
    for (double& v : y) v /= z;
    return y;
}

inline std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng) {
    std::vector<double> u(logits.size());
    for (double& x : u) x = rng.uniform();
    return gumbel_softmax_sample(logits, tau, u);
}

/// Z = sigmoid((log_alpha + L) / tau) with L = ln U - ln(1 - U).
inline double binary_concrete_sample(double logit_alpha, double tau, double uniform) {
    if (!(tau > 0.0)) throw ConfigError("binary_concrete_sample: tau must be > 0");
    return sigmoid((logit_alpha + logistic_noise(uniform)) / tau);
}

inline double binary_concrete_sample(double logit_alpha, double tau, Rng& rng) {
    return binary_concrete_sample(logit_alpha, tau, rng.uniform());
}

/// Candidates for relaxed/soft decoding: the thresholded code with one of
/// its least confident eligible bits flipped. Returned as full codewords.
inline std::vector<Codeword> flip_candidates(std::span<const double> bit_probs, std::size_t k, const std::vector<bool>* eligible = nullptr) {
    const std::size_t n = bit_probs.size();
    std::vector<bool> base(n);
    for (std::size_t c = 0; c < n; ++c) base[c] = bit_probs[c] > 0.5;
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < n; ++c)
        if (!eligible || (*eligible)[c]) order.push_back(c);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(bit_probs[a] - 0.5) < std::abs(bit_probs[b] - 0.5); });
    if (order.size() > k) order.resize(k);
    std::vector<Codeword> out;
    const Codeword b = Codeword::from_bits(base);
    for (std::size_t c : order) out.push_back(b.with_flipped(c));
    return out;
}

struct SoftEmbedding {
    std::vector<std::size_t> tokens;
    std::vector<double> weights;  // convex combination weights, sum to 1
    std::vector<double> vector;   // sum_k weights[k] * embedding(tokens[k])
};

/// Weighted average of the embeddings of the tokens decoded from the k
/// Hamming-1 flips of the thresholded prediction; weights are a
/// temperature softmax of each flipped codeword's factorial log-probability.
/// `table` is row-major vocab x dim.
inline SoftEmbedding soft_codeword_embedding(std::span<const double> bit_probs, const Codebook& cb, std::span<const double> table,
                                             std::size_t dim, std::size_t k, double tau, const std::vector<bool>* eligible = nullptr) {
    if (bit_probs.size() != cb.n_bits()) throw ConfigError("soft_codeword_embedding: width mismatch");
    if (k == 0 || k > cb.n_bits()) throw ConfigError("soft_codeword_embedding: k must be in [1, n_bits]");
    if (!(tau > 0.0)) throw ConfigError("soft_codeword_embedding: tau must be > 0");
    if (table.size() != cb.vocab_size() * dim) throw ConfigError("soft_codeword_embedding: table shape mismatch");
    auto cands = flip_candidates(bit_probs, k, eligible);
    if (cands.empty()) throw ConfigError("soft_codeword_embedding: no eligible bits");
    SoftEmbedding out;
    std::vector<double> scores;
    for (const auto& c : cands) {
        out.tokens.push_back(cb.decode(c));
        scores.push_back(codeword_logprob(bit_probs, c) / tau);
    }
    out.weights = softmax_weights(scores);
    out.vector.assign(dim, 0.0);
    for (std::size_t j = 0; j < out.tokens.size(); ++j)
        for (std::size_t d = 0; d < dim; ++d) out.vector[d] += out.weights[j] * table[out.tokens[j] * dim + d];
    return out;
}

/// Strategy plus curriculum/temperature parameters.
struct SamplerConfig {
    Strategy strategy = Strategy::teacher_forcing;
    MixtureSchedule schedule;
    std::size_t k = 5;
    double temp_start = 0.01;
    double temp_end = 2.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (k == 0) throw ConfigError("k must be >= 1");
        if (!(schedule.tau_max >= 0.0 && schedule.tau_max <= 1.0)) throw ConfigError("tau_max must be in [0, 1]");
        if (schedule.delta < 0.0) throw ConfigError("delta must be > 0 (or 0 for the default)");
        if (!(temp_start >= 0.01 && temp_end <= 2.5 && temp_start <= temp_end))
            throw ConfigError("temperatures must satisfy 0.01 <= temp_start <= temp_end <= 2.5");
    }
};

}  // namespace ecoc
