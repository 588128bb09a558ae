#pragma once

// Exact aggregation of factorial (independent-bit) scores over a contiguous
// integer range of the code space. The range is walked most-significant bit
// first with "still equal to the lower bound" / "still equal to the upper
// bound" flags, plus the previous integer bit when the integer->codeword
// mapping is Gray. Cost is O(n_bits) for any range, including ranges far too
// large to enumerate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ecoc/biguint.hpp"
#include "ecoc/codeword.hpp"
#include "ecoc/error.hpp"

namespace ecoc {

inline constexpr double kProbEpsilon = 1e-12;

// Half-open integer interval [begin, end) of the code space.
struct Span {
    BigUint begin;
    BigUint end;

    BigUint width() const { return end - begin; }
    bool contains(const BigUint& v) const { return begin <= v && v < end; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct SpanScore {
    std::size_t token = 0;
    double log_score = 0.0;
    Codeword witness;
};

enum class Aggregate { max, sum };

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Per-bit additive scores for the codeword bit being 0 or 1, bit 0 = MSB.
struct BitCosts {
    std::vector<double> zero;
    std::vector<double> one;
};

inline BitCosts log_costs(std::span<const double> bit_probs) {
    BitCosts c;
    c.zero.resize(bit_probs.size());
    c.one.resize(bit_probs.size());
    for (std::size_t i = 0; i < bit_probs.size(); ++i) {
        double p = bit_probs[i];
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("bit probability " + std::to_string(i) + " outside [0,1]: " + std::to_string(p));
        p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
        c.one[i] = std::log(p);
        c.zero[i] = std::log1p(-p);
    }
    return c;
}

inline void check_span(const Span& span, std::size_t n_bits) {
    if (!(span.begin < span.end)) throw ConfigError("empty span");
    if (span.end > BigUint::pow2(n_bits)) throw ConfigError("span exceeds the " + std::to_string(n_bits) + "-bit code space");
}

struct RangeResult {
    double value = kNegInf;
    BigUint witness;  // integer (pre-mapping) achieving the max; max mode only
};

// State layout: [tight_low][tight_high][prev_bit]. prev_bit is only tracked in
// Gray mode, where codeword bit c = v_c xor v_{c-1}.
template <Aggregate Agg>
RangeResult range_dp(const BitCosts& costs, const Span& span, MappingMode mode, bool want_witness) {
    const std::size_t n = costs.one.size();
    check_span(span, n);
    const BigUint hi = span.end - BigUint(1);
    std::vector<unsigned char> lo_bits(n), hi_bits(n);
    for (std::size_t c = 0; c < n; ++c) {
        lo_bits[c] = span.begin.bit(n - 1 - c);
        hi_bits[c] = hi.bit(n - 1 - c);
    }
    const bool gray = mode == MappingMode::gray;
    constexpr std::size_t kStates = 8;
    auto idx = [](unsigned tl, unsigned th, unsigned prev) { return (tl << 2) | (th << 1) | prev; };

    // f[c * 8 + s]: aggregate over the free assignment of bits c..n-1.
    std::vector<double> f((n + 1) * kStates, 0.0);
    for (std::size_t c = n; c-- > 0;) {
        double* cur = &f[c * kStates];
        const double* nxt = &f[(c + 1) * kStates];
        for (unsigned tl = 0; tl < 2; ++tl)
            for (unsigned th = 0; th < 2; ++th)
                for (unsigned prev = 0; prev < (gray ? 2U : 1U); ++prev) {
                    double acc = kNegInf;
                    for (unsigned v = 0; v < 2; ++v) {
                        if (tl && v < lo_bits[c]) continue;
                        if (th && v > hi_bits[c]) continue;
                        unsigned ntl = tl && v == lo_bits[c];
                        unsigned nth = th && v == hi_bits[c];
                        unsigned code_bit = gray ? (v ^ prev) : v;
                        double term = (code_bit ? costs.one[c] : costs.zero[c]) + nxt[idx(ntl, nth, gray ? v : 0)];
                        if constexpr (Agg == Aggregate::max)
                            acc = std::max(acc, term);
                        else
                            acc = log_add(acc, term);
                    }
                    cur[idx(tl, th, prev)] = acc;
                }
    }

    RangeResult r;
    r.value = f[idx(1, 1, 0)];
    if constexpr (Agg == Aggregate::max) {
        if (want_witness) {
            unsigned tl = 1, th = 1, prev = 0;
            for (std::size_t c = 0; c < n; ++c) {
                const double* nxt = &f[(c + 1) * kStates];
                double best = kNegInf;
                unsigned best_v = 2;
                for (unsigned v = 0; v < 2; ++v) {
                    if (tl && v < lo_bits[c]) continue;
                    if (th && v > hi_bits[c]) continue;
                    unsigned code_bit = gray ? (v ^ prev) : v;
                    double term = (code_bit ? costs.one[c] : costs.zero[c]) +
                                  nxt[idx(tl && v == lo_bits[c], th && v == hi_bits[c], gray ? v : 0)];
                    // strict '>' keeps bit 0 on ties, i.e. the smallest integer wins
                    if (best_v == 2 || term > best) {
                        best = term;
                        best_v = v;
                    }
                }
                if (best_v) r.witness.set_bit(n - 1 - c, true);
                tl = tl && best_v == lo_bits[c];
                th = th && best_v == hi_bits[c];
                prev = best_v;
            }
        }
    }
    return r;
}

}  // namespace detail

/// Most probable codeword inside `span` under independent per-bit
/// probabilities of bit=1, with its natural-log probability. Ties resolve to
/// the smallest integer in the span.
inline SpanScore span_max_logprob(std::span<const double> bit_probs, const Span& span,
                                  MappingMode mode = MappingMode::binary) {
    const auto costs = detail::log_costs(bit_probs);
    auto r = detail::range_dp<Aggregate::max>(costs, span, mode, true);
    SpanScore s;
    s.log_score = r.value;
    s.witness = codeword_of_integer(r.witness, bit_probs.size(), mode);
    return s;
}

/// log of the total factorial probability of every codeword inside `span`.
inline double span_log_mass(std::span<const double> bit_probs, const Span& span, MappingMode mode = MappingMode::binary) {
    const auto costs = detail::log_costs(bit_probs);
    return detail::range_dp<Aggregate::sum>(costs, span, mode, false).value;
}

/// Minimum Hamming distance between `code` and any codeword in `span`.
inline std::size_t span_min_hamming(const Codeword& code, const Span& span, MappingMode mode = MappingMode::binary) {
    detail::BitCosts costs;
    const std::size_t n = code.width();
    costs.zero.resize(n);
    costs.one.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        costs.zero[c] = code.bit(c) ? -1.0 : 0.0;
        costs.one[c] = code.bit(c) ? 0.0 : -1.0;
    }
    auto r = detail::range_dp<Aggregate::max>(costs, span, mode, false);
    return static_cast<std::size_t>(std::llround(-r.value));
}

/// Natural-log probability of a single codeword under the factorial model.
inline double codeword_logprob(std::span<const double> bit_probs, const Codeword& code) {
    if (code.width() != bit_probs.size()) throw ConfigError("codeword_logprob: width mismatch");
    const auto costs = detail::log_costs(bit_probs);
    double s = 0.0;
    for (std::size_t c = 0; c < code.width(); ++c) s += code.bit(c) ? costs.one[c] : costs.zero[c];
    return s;
}

}  // namespace ecoc
