#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ecoc/corpus.hpp"
#include "ecoc/error.hpp"
#include "ecoc/rng.hpp"

namespace ecoc {

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// One real vector per vocabulary token (row i = token i).
struct EmbeddingMatrix {
    std::size_t dim = 0;
    std::vector<std::vector<double>> vectors;
    std::vector<std::string> tokens;  // row -> token string
    double coverage = 1.0;            // fraction of rows that came from the source file

    std::size_t rows() const { return vectors.size(); }

    std::size_t row_of(const std::string& tok) const {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == tok) return i;
        throw ConfigError("token '" + tok + "' has no embedding row");
    }
};

inline double vector_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool is_unsigned_integer(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace detail

/// Reads `<token> <f1> ... <fd>` lines (an optional word2vec "<count> <dim>"
/// header is skipped). Vocabulary tokens missing from the file get a seeded
/// Gaussian vector scaled to the mean norm of the vectors that were found.
inline EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab, std::uint64_t seed = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read embedding file " + path);
    std::unordered_map<std::string, std::vector<double>> found;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto fields = detail::split_ws(line);
        if (fields.empty()) continue;
        if (lineno == 1 && fields.size() == 2 && detail::is_unsigned_integer(fields[0]) && detail::is_unsigned_integer(fields[1]))
            continue;
        if (fields.size() < 2)
            throw FormatError(path + ":" + std::to_string(lineno) + ": malformed line (expected a token and at least one value)");
        const std::size_t d = fields.size() - 1;
        if (dim == 0) dim = d;
        if (d != dim)
            throw FormatError(path + ":" + std::to_string(lineno) + ": dimension " + std::to_string(d) + " differs from " +
                              std::to_string(dim));
        std::vector<double> v(d);
        for (std::size_t k = 0; k < d; ++k) {
            if (!parse_double(fields[k + 1], v[k]) || !std::isfinite(v[k]))
                throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number '" + std::string(fields[k + 1]) + "'");
        }
        found.try_emplace(std::string(fields[0]), std::move(v));
    }
    if (dim == 0) throw FormatError(path + ": no embedding vectors");

    EmbeddingMatrix m;
    m.dim = dim;
    m.tokens = vocab.tokens();
    m.vectors.resize(vocab.size());
    std::vector<bool> present(vocab.size(), false);
    double norm_sum = 0.0;
    std::size_t n_present = 0;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        auto it = found.find(vocab.token(i));
        if (it == found.end()) continue;
        m.vectors[i] = it->second;
        present[i] = true;
        norm_sum += vector_norm(it->second);
        ++n_present;
    }
    const double target_norm = n_present ? norm_sum / static_cast<double>(n_present) : 1.0;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (present[i]) continue;
        Rng rng = Rng::stream({seed, 0x656d62ULL, i});
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        double n = vector_norm(v);
        for (double& x : v) x *= target_norm / n;
        m.vectors[i] = std::move(v);
    }
    m.coverage = static_cast<double>(n_present) / static_cast<double>(vocab.size());
    return m;
}

inline void save_embeddings(const std::string& path, const EmbeddingMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write embedding file " + path);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out << m.tokens[i];
        for (double x : m.vectors[i]) out << ' ' << format_double(x);
        out << '\n';
    }
}

struct SimilarityRanking {
    std::size_t query_token = 0;
    std::vector<double> scores;       // per token
    std::vector<std::size_t> order;   // tokens by descending score, ties by index
};

inline SimilarityRanking cosine_rank(const EmbeddingMatrix& emb, std::size_t query) {
    if (query >= emb.rows()) throw ConfigError("cosine_rank: query token out of range");
    const auto& q = emb.vectors[query];
    const double qn = vector_norm(q);
    if (!(qn > 0.0)) throw ConfigError("cosine_rank: query vector has zero norm");
    SimilarityRanking r;
    r.query_token = query;
    r.scores.resize(emb.rows());
    for (std::size_t i = 0; i < emb.rows(); ++i) {
        const auto& v = emb.vectors[i];
        double n = vector_norm(v);
        if (n == 0.0) {
            r.scores[i] = 0.0;
            continue;
        }
        double dot = 0.0;
        for (std::size_t k = 0; k < emb.dim; ++k) dot += q[k] * v[k];
        r.scores[i] = i == query ? 1.0 : std::clamp(dot / (qn * n), -1.0, 1.0);
    }
    r.order.resize(emb.rows());
    std::iota(r.order.begin(), r.order.end(), std::size_t{0});
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
    return r;
}

/// Symmetric windowed co-occurrence counts, dense |V| x |V|.
inline Eigen::MatrixXd cooccurrence_counts(const std::vector<std::size_t>& stream, std::size_t vocab_size, std::size_t window) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(vocab_size));
    for (std::size_t i = 0; i < stream.size(); ++i)
        for (std::size_t j = i + 1; j <= i + window && j < stream.size(); ++j) {
            auto a = static_cast<Eigen::Index>(stream[i]), b = static_cast<Eigen::Index>(stream[j]);
            c(a, b) += 1.0;
            c(b, a) += 1.0;
        }
    return c;
}

inline Eigen::MatrixXd ppmi_matrix(const Eigen::MatrixXd& counts) {
    const double total = counts.sum();
    Eigen::VectorXd row = counts.rowwise().sum();
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
    if (total <= 0.0) return p;
    for (Eigen::Index j = 0; j < counts.cols(); ++j)
        for (Eigen::Index i = 0; i < counts.rows(); ++i) {
            double c = counts(i, j);
            if (c <= 0.0) continue;
            double pmi = std::log(c * total / (row(i) * row(j)));
            p(i, j) = pmi > 0.0 ? pmi : 0.0;
        }
    return p;
}

/// Count-based embeddings: PPMI of windowed co-occurrences, factorized to rank
/// `dim` with seeded randomized subspace iteration. Rows are U * sqrt(|lambda|).
inline EmbeddingMatrix ppmi_svd_embeddings(const std::vector<std::size_t>& stream, const Vocabulary& vocab, std::size_t window,
                                           std::size_t dim, std::uint64_t seed) {
    const std::size_t v = vocab.size();
    if (window == 0) throw ConfigError("ppmi_svd_embeddings: window must be >= 1");
    if (dim == 0 || dim > v) throw ConfigError("ppmi_svd_embeddings: dim must be in [1, vocab_size]");
    if (stream.size() < window + 1) throw ConfigError("ppmi_svd_embeddings: corpus shorter than window + 1 tokens");

    const Eigen::MatrixXd m = ppmi_matrix(cooccurrence_counts(stream, v, window));
    const auto vi = static_cast<Eigen::Index>(v);
    const auto cols = static_cast<Eigen::Index>(std::min(v, dim + 10));

    Rng rng = Rng::stream({seed, 0x707070ULL});
    Eigen::MatrixXd q(vi, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < vi; ++i) q(i, j) = rng.normal();
    auto orthonormalize = [&](const Eigen::MatrixXd& a) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols()));
    };
    q = orthonormalize(q);
    for (int it = 0; it < 6; ++it) q = orthonormalize(m * q);

    const Eigen::MatrixXd t = q.transpose() * m * q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (t + t.transpose()));
    const Eigen::VectorXd lambda = eig.eigenvalues();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(cols));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return std::abs(lambda(a)) > std::abs(lambda(b)); });

    const Eigen::MatrixXd basis = q * eig.eigenvectors();
    EmbeddingMatrix out;
    out.dim = dim;
    out.tokens = vocab.tokens();
    out.vectors.assign(v, std::vector<double>(dim));
    for (std::size_t k = 0; k < dim; ++k) {
        Eigen::Index c = idx[k];
        double s = std::sqrt(std::abs(lambda(c)));
        // fix the sign so the largest-magnitude entry is positive
        Eigen::Index arg = 0;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        double sign = basis(arg, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < v; ++i) out.vectors[i][k] = sign * s * basis(static_cast<Eigen::Index>(i), c);
    }
    return out;
}

}  // namespace ecoc
