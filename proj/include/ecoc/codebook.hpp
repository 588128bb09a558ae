#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecoc/biguint.hpp"
#include "ecoc/codeword.hpp"
#include "ecoc/error.hpp"
#include "ecoc/rng.hpp"
#include "ecoc/span_dp.hpp"

namespace ecoc {

enum class OrderingKind { random, unigram, embedding };

inline const char* to_string(OrderingKind k) {
    switch (k) {
        case OrderingKind::random: return "random";
        case OrderingKind::unigram: return "unigram";
        case OrderingKind::embedding: return "embedding";
    }
    return "?";
}

inline OrderingKind parse_ordering(const std::string& s) {
    if (s == "random") return OrderingKind::random;
    if (s == "unigram") return OrderingKind::unigram;
    if (s == "embedding") return OrderingKind::embedding;
    throw ConfigError("unknown ordering '" + s + "' (expected random|unigram|embedding)");
}

// random: seeded permutation of tokens. unigram/embedding: tokens sorted by
// descending weight, ties by ascending index. query_token is informational
// for embedding ordering (the weights already encode the similarity).
struct OrderingSpec {
    OrderingKind kind = OrderingKind::random;
    std::size_t query_token = 0;
};

/// Partition of the n-bit code space into one contiguous span per token.
/// Span i (in span order) is [boundary(i), boundary(i+1)) and belongs to
/// token_order()[i]. A token's class codeword is the codeword of its span start;
/// the remaining codes of the span are its error checks.
class Codebook {
public:
    Codebook() = default;

    Codebook(std::size_t n_bits, MappingMode mode, std::vector<std::size_t> token_order, std::vector<BigUint> boundaries)
        : n_bits_(n_bits), mode_(mode), token_order_(std::move(token_order)), boundaries_(std::move(boundaries)) {
        validate();
        span_of_token_.assign(token_order_.size(), 0);
        for (std::size_t i = 0; i < token_order_.size(); ++i) span_of_token_[token_order_[i]] = i;
    }

    std::size_t n_bits() const { return n_bits_; }
    MappingMode mode() const { return mode_; }
    std::size_t vocab_size() const { return token_order_.size(); }
    const std::vector<std::size_t>& token_order() const { return token_order_; }
    const std::vector<BigUint>& boundaries() const { return boundaries_; }

    std::size_t span_index(std::size_t token) const {
        check_token(token);
        return span_of_token_[token];
    }

    Span span_of(std::size_t token) const {
        std::size_t i = span_index(token);
        return {boundaries_[i], boundaries_[i + 1]};
    }

    Span span_at(std::size_t span_idx) const { return {boundaries_[span_idx], boundaries_[span_idx + 1]}; }

    Codeword encode(std::size_t token) const { return codeword_of_integer(span_of(token).begin, n_bits_, mode_); }

    std::size_t decode_integer(const BigUint& v) const {
        auto it = std::upper_bound(boundaries_.begin(), boundaries_.end(), v);
        auto span_idx = static_cast<std::size_t>(it - boundaries_.begin()) - 1;
        return token_order_[span_idx];
    }

    std::size_t decode(const Codeword& code) const {
        if (code.width() != n_bits_)
            throw ConfigError("decode: codeword width " + std::to_string(code.width()) + " != codebook width " +
                              std::to_string(n_bits_));
        return decode_integer(integer_of_codeword(code, mode_));
    }

    // Thresholds each probability at 0.5 and decodes.
    Codeword threshold(std::span<const double> bit_probs) const {
        std::vector<bool> bits(bit_probs.size());
        for (std::size_t c = 0; c < bits.size(); ++c) bits[c] = bit_probs[c] > 0.5;
        return Codeword::from_bits(bits);
    }

    std::size_t decode_probs(std::span<const double> bit_probs) const { return decode(threshold(bit_probs)); }

    friend bool operator==(const Codebook& a, const Codebook& b) {
        return a.n_bits_ == b.n_bits_ && a.mode_ == b.mode_ && a.token_order_ == b.token_order_ && a.boundaries_ == b.boundaries_;
    }

private:
    void check_token(std::size_t token) const {
        if (token >= token_order_.size())
            throw ConfigError("token " + std::to_string(token) + " out of range for vocabulary of " +
                              std::to_string(token_order_.size()));
    }

    void validate() const {
        const std::size_t v = token_order_.size();
        if (n_bits_ == 0 || n_bits_ > kMaxCodeBits) throw ConfigError("n_bits must be in [1, 4096]");
        if (boundaries_.size() != v + 1) throw ConfigError("codebook needs vocab_size + 1 boundaries");
        if (!boundaries_.front().is_zero() || boundaries_.back() != BigUint::pow2(n_bits_))
            throw ConfigError("codebook spans must cover [0, 2^n) exactly");
        for (std::size_t i = 0; i < v; ++i)
            if (!(boundaries_[i] < boundaries_[i + 1])) throw ConfigError("codebook span " + std::to_string(i) + " is empty");
        std::vector<bool> seen(v, false);
        for (auto t : token_order_) {
            if (t >= v || seen[t]) throw ConfigError("codebook token order is not a permutation");
            seen[t] = true;
        }
    }

    std::size_t n_bits_ = 0;
    MappingMode mode_ = MappingMode::binary;
    std::vector<std::size_t> token_order_;
    std::vector<BigUint> boundaries_;
    std::vector<std::size_t> span_of_token_;
};

inline std::size_t min_code_bits(std::size_t vocab_size) {
    std::size_t n = 0;
    while ((std::size_t{1} << n) < vocab_size) ++n;
    return n;
}

namespace detail {

// floor(cumsum(w / sum(w)) * 2^n), last boundary pinned to 2^n.
inline std::vector<BigUint> cumsum_boundaries(std::span<const double> ordered_weights, std::size_t n_bits) {
    const std::size_t v = ordered_weights.size();
    double total = 0.0;
    for (double w : ordered_weights) total += w;
    const BigUint full = BigUint::pow2(n_bits);
    std::vector<BigUint> b(v + 1);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < v; ++i) {
        acc += ordered_weights[i] / total;
        BigUint x = BigUint::floor_scaled(std::min(acc, 1.0), n_bits);
        b[i + 1] = std::min(std::max(x, b[i]), full);
    }
    b[v] = full;
    return b;
}

// Widens every zero-width span by taking one code from its wider neighbour;
// a final forward/backward pass handles runs of starved spans.
inline void repair_boundaries(std::vector<BigUint>& b) {
    const std::size_t v = b.size() - 1;
    const BigUint one(1), two(2);
    for (std::size_t i = 0; i < v; ++i) {
        if (b[i] != b[i + 1]) continue;
        BigUint left = i > 0 ? b[i] - b[i - 1] : BigUint();
        BigUint right = i + 1 < v ? b[i + 2] - b[i + 1] : BigUint();
        if (left >= right && left >= two)
            b[i] -= one;
        else if (right >= two)
            b[i + 1] += one;
    }
    for (std::size_t i = 1; i < v; ++i)
        if (b[i] <= b[i - 1]) b[i] = b[i - 1] + one;
    for (std::size_t i = v - 1; i >= 1; --i) {
        if (b[i] >= b[i + 1]) b[i] = b[i + 1] - one;
        if (i == 1) break;
    }
}

}  // namespace detail

/// Builds a codebook whose span widths are proportional to `span_weights`
/// (indexed by token), laid out in the order given by `ordering`.
inline Codebook build_codebook(std::size_t vocab_size, std::size_t n_bits, const OrderingSpec& ordering,
                               std::span<const double> span_weights, MappingMode mode, std::uint64_t seed) {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (n_bits == 0 || n_bits > kMaxCodeBits) throw ConfigError("n_bits must be in [1, 4096]");
    if (n_bits < min_code_bits(vocab_size))
        throw ConfigError("code space too small: 2^" + std::to_string(n_bits) + " < vocab size " + std::to_string(vocab_size));
    if (span_weights.size() != vocab_size) throw ConfigError("span_weights must have one entry per token");
    double total = 0.0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
        double w = span_weights[i];
        if (!std::isfinite(w)) throw ConfigError("non-finite span weight for token " + std::to_string(i));
        if (w < 0.0) throw ConfigError("negative span weight for token " + std::to_string(i));
        total += w;
    }
    if (!(total > 0.0)) throw ConfigError("span weights sum to zero");

    std::vector<std::size_t> order(vocab_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (ordering.kind == OrderingKind::random) {
        Rng rng(seed);
        rng.shuffle(order);
    } else {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return span_weights[a] > span_weights[b]; });
    }
    std::vector<double> ordered(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i) ordered[i] = span_weights[order[i]];

    auto boundaries = detail::cumsum_boundaries(ordered, n_bits);
    detail::repair_boundaries(boundaries);
    return Codebook(n_bits, mode, std::move(order), std::move(boundaries));
}

inline std::vector<double> uniform_weights(std::size_t vocab_size) { return std::vector<double>(vocab_size, 1.0); }

// Softmax over similarity scores.
inline std::vector<double> softmax_weights(std::span<const double> scores) {
    double m = *std::max_element(scores.begin(), scores.end());
    std::vector<double> w(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) z += (w[i] = std::exp(scores[i] - m));
    for (double& x : w) x /= z;
    return w;
}

enum class DistributionMode { max, sum };

inline DistributionMode parse_distribution_mode(const std::string& s) {
    if (s == "max") return DistributionMode::max;
    if (s == "sum") return DistributionMode::sum;
    throw ConfigError("unknown distribution mode '" + s + "' (expected max|sum)");
}

/// Per-token natural-log probabilities implied by factorial bit probabilities.
/// sum: exact span mass (already normalized). max: best code per span,
/// renormalized over the vocabulary.
inline std::vector<double> token_distribution(std::span<const double> bit_probs, const Codebook& cb, DistributionMode mode) {
    if (bit_probs.size() != cb.n_bits()) throw ConfigError("token_distribution: bit_probs width != codebook n_bits");
    const auto costs = detail::log_costs(bit_probs);
    std::vector<double> out(cb.vocab_size());
    for (std::size_t i = 0; i < cb.vocab_size(); ++i) {
        const std::size_t tok = cb.token_order()[i];
        if (mode == DistributionMode::sum)
            out[tok] = detail::range_dp<Aggregate::sum>(costs, cb.span_at(i), cb.mode(), false).value;
        else
            out[tok] = detail::range_dp<Aggregate::max>(costs, cb.span_at(i), cb.mode(), false).value;
    }
    if (mode == DistributionMode::max) {
        double z = detail::kNegInf;
        for (double x : out) z = detail::log_add(z, x);
        for (double& x : out) x -= z;
    }
    return out;
}

/// Log-probability of one token (sum mode needs no normalization).
inline double token_log_mass(std::span<const double> bit_probs, const Codebook& cb, std::size_t token) {
    return span_log_mass(bit_probs, cb.span_of(token), cb.mode());
}

inline SpanScore token_max_score(std::span<const double> bit_probs, const Codebook& cb, std::size_t token) {
    SpanScore s = span_max_logprob(bit_probs, cb.span_of(token), cb.mode());
    s.token = token;
    return s;
}

// ---- file format ----------------------------------------------------------
//   ecoc-codebook v1 n_bits=<n> mode=<binary|gray> vocab=<V>
//   <token>\t<span_start>\t<span_end>        (one line per span, span order)

inline std::string codebook_to_string(const Codebook& cb, const std::vector<std::string>& token_strings) {
    if (token_strings.size() != cb.vocab_size()) throw ConfigError("token string table does not match codebook vocabulary");
    std::string out = "ecoc-codebook v1 n_bits=" + std::to_string(cb.n_bits()) + " mode=" + to_string(cb.mode()) +
                      " vocab=" + std::to_string(cb.vocab_size()) + "\n";
    for (std::size_t i = 0; i < cb.vocab_size(); ++i) {
        out += token_strings[cb.token_order()[i]];
        out += '\t';
        out += cb.boundaries()[i].to_decimal();
        out += '\t';
        out += cb.boundaries()[i + 1].to_decimal();
        out += '\n';
    }
    return out;
}

inline Codebook codebook_from_string(const std::string& text, const std::vector<std::string>& token_strings) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header)) throw FormatError("codebook: missing header");
    std::istringstream hs(header);
    std::string magic, version, f_bits, f_mode, f_vocab, extra;
    hs >> magic >> version >> f_bits >> f_mode >> f_vocab;
    if (magic != "ecoc-codebook" || version != "v1" || f_bits.rfind("n_bits=", 0) != 0 || f_mode.rfind("mode=", 0) != 0 ||
        f_vocab.rfind("vocab=", 0) != 0 || (hs >> extra))
        throw FormatError("codebook: malformed header '" + header + "'");
    std::size_t n_bits = 0, vocab = 0;
    try {
        n_bits = std::stoul(f_bits.substr(7));
        vocab = std::stoul(f_vocab.substr(6));
    } catch (const std::exception&) {
        throw FormatError("codebook: malformed header '" + header + "'");
    }
    MappingMode mode;
    try {
        mode = parse_mapping_mode(f_mode.substr(5));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("codebook: ") + e.what());
    }
    if (vocab != token_strings.size())
        throw FormatError("codebook vocab=" + std::to_string(vocab) + " but vocabulary has " +
                          std::to_string(token_strings.size()) + " tokens");

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < token_strings.size(); ++i) index.emplace(token_strings[i], i);

    std::vector<std::size_t> order;
    std::vector<BigUint> bounds{BigUint()};
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw FormatError("codebook line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        std::string tok = line.substr(0, t1);
        auto it = index.find(tok);
        if (it == index.end()) throw FormatError("codebook line " + std::to_string(lineno) + ": unknown token '" + tok + "'");
        BigUint start, end;
        try {
            start = BigUint::from_decimal(line.substr(t1 + 1, t2 - t1 - 1));
            end = BigUint::from_decimal(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw FormatError("codebook line " + std::to_string(lineno) + ": malformed integer");
        }
        if (start != bounds.back()) throw FormatError("codebook line " + std::to_string(lineno) + ": spans are not contiguous");
        order.push_back(it->second);
        bounds.push_back(end);
    }
    if (order.size() != vocab) throw FormatError("codebook: expected " + std::to_string(vocab) + " spans, found " + std::to_string(order.size()));
    try {
        return Codebook(n_bits, mode, std::move(order), std::move(bounds));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("codebook: ") + e.what());
    }
}

inline void save_codebook(const std::string& path, const Codebook& cb, const std::vector<std::string>& token_strings) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write codebook file " + path);
    out << codebook_to_string(cb, token_strings);
}

inline Codebook load_codebook(const std::string& path, const std::vector<std::string>& token_strings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read codebook file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return codebook_from_string(ss.str(), token_strings);
}

}  // namespace ecoc
