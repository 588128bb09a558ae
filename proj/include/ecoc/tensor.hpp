#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. A Tape owns every intermediate node of one forward
// pass; backward() replays them in reverse creation order. Parameters live in
// a ParameterStore outside the tape and accumulate gradients across passes
// until the optimizer consumes them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ecoc/error.hpp"

namespace ecoc::nn {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols) throw ConfigError("Matrix: data size does not match shape");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<RowMajor> as_eigen(Matrix& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const RowMajor> as_eigen(const Matrix& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

struct Node {
    Matrix value;
    Matrix grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::string name;
    std::size_t tape_id = 0;
    std::function<void()> backward;

    Matrix& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
        return grad;
    }
};

// Non-owning handle to a node.
class Var {
public:
    Var() = default;
    explicit Var(Node* n) : node_(n) {}

    Node* node() const { return node_; }
    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    double scalar() const { return node_->value[0]; }
    explicit operator bool() const { return node_ != nullptr; }

private:
    Node* node_ = nullptr;
};

class ParameterStore {
public:
    Var add(std::string name, Matrix init) {
        for (const auto& p : params_)
            if (p->name == name) throw ConfigError("duplicate parameter name " + name);
        auto n = std::make_unique<Node>();
        n->value = std::move(init);
        n->requires_grad = true;
        n->name = std::move(name);
        params_.push_back(std::move(n));
        return Var(params_.back().get());
    }

    std::size_t size() const { return params_.size(); }
    Var at(std::size_t i) const { return Var(params_.at(i).get()); }

    Var find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return Var(p.get());
        throw ConfigError("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& p : params_)
            if (!p->grad.empty()) p->grad.fill(0.0);
    }

    std::size_t num_values() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

private:
    std::vector<std::unique_ptr<Node>> params_;
};

inline constexpr double kNegInfinity = -std::numeric_limits<double>::infinity();

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    Var constant(Matrix value) { return make(std::move(value), false); }

    // Leaf that receives gradients but is owned by the tape (e.g. carried state in tests).
    Var variable(Matrix value, std::string name = {}) {
        Var v = make(std::move(value), true);
        v.node()->name = std::move(name);
        return v;
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every node and parameter.
    void backward(Var loss) {
        if (loss.value().size() != 1) throw ConfigError("backward: loss must be a scalar");
        loss.node()->grad_buffer()[0] += 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = *nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward();
        }
    }

    // ---- linear algebra ---------------------------------------------------

    Var matmul(Var a, Var b) {
        if (a.cols() != b.rows()) throw ConfigError(shape_msg("matmul", a, b));
        Matrix out(a.rows(), b.cols());
        as_eigen(out).noalias() = as_eigen(a.value()) * as_eigen(b.value());
        Var o = make(std::move(out), any(a, b));
        set_backward(o, [a, b, o]() {
            const auto g = as_eigen(o.node()->grad);
            if (a.requires_grad()) as_eigen(a.node()->grad_buffer()).noalias() += g * as_eigen(b.value()).transpose();
            if (b.requires_grad()) as_eigen(b.node()->grad_buffer()).noalias() += as_eigen(a.value()).transpose() * g;
        });
        return o;
    }

    Var add(Var a, Var b) {
        if (!a.value().same_shape(b.value())) throw ConfigError(shape_msg("add", a, b));
        Matrix out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
        Var o = make(std::move(out), any(a, b));
        set_backward(o, [a, b, o]() {
            const Matrix& g = o.node()->grad;
            if (a.requires_grad()) accumulate(a, g);
            if (b.requires_grad()) accumulate(b, g);
        });
        return o;
    }

    Var sub(Var a, Var b) {
        if (!a.value().same_shape(b.value())) throw ConfigError(shape_msg("sub", a, b));
        Matrix out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
        Var o = make(std::move(out), any(a, b));
        set_backward(o, [a, b, o]() {
            const Matrix& g = o.node()->grad;
            if (a.requires_grad()) accumulate(a, g);
            if (b.requires_grad()) {
                Matrix& gb = b.node()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
        return o;
    }

    // a (r x c) + bias (1 x c) broadcast over rows.
    Var add_row(Var a, Var bias) {
        if (bias.rows() != 1 || bias.cols() != a.cols()) throw ConfigError(shape_msg("add_row", a, bias));
        Matrix out = a.value();
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value()[c];
        Var o = make(std::move(out), any(a, bias));
        set_backward(o, [a, bias, o]() {
            const Matrix& g = o.node()->grad;
            if (a.requires_grad()) accumulate(a, g);
            if (bias.requires_grad()) {
                Matrix& gb = bias.node()->grad_buffer();
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
            }
        });
        return o;
    }

    Var mul(Var a, Var b) {
        if (!a.value().same_shape(b.value())) throw ConfigError(shape_msg("mul", a, b));
        Matrix out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
        Var o = make(std::move(out), any(a, b));
        set_backward(o, [a, b, o]() {
            const Matrix& g = o.node()->grad;
            if (a.requires_grad()) {
                Matrix& ga = a.node()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
            }
            if (b.requires_grad()) {
                Matrix& gb = b.node()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
            }
        });
        return o;
    }

    // Elementwise product with a constant (e.g. a dropout mask).
    Var mul_const(Var a, const Matrix& m) {
        if (!a.value().same_shape(m)) throw ConfigError("mul_const: shape mismatch");
        Matrix out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, m, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
        });
        return o;
    }

    Var add_const(Var a, const Matrix& m) {
        if (!a.value().same_shape(m)) throw ConfigError("add_const: shape mismatch");
        Matrix out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, o]() { accumulate(a, o.node()->grad); });
        return o;
    }

    Var scale(Var a, double s) {
        Matrix out = a.value();
        for (double& x : out.values()) x *= s;
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, s, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
        return o;
    }

    // ---- pointwise nonlinearities ------------------------------------------

    Var sigmoid(Var a) {
        Matrix out = a.value();
        for (double& x : out.values()) x = stable_sigmoid(x);
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, o]() {
            const Matrix& g = o.node()->grad;
            const Matrix& y = o.value();
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        });
        return o;
    }

    Var tanh(Var a) {
        Matrix out = a.value();
        for (double& x : out.values()) x = std::tanh(x);
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, o]() {
            const Matrix& g = o.node()->grad;
            const Matrix& y = o.value();
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        });
        return o;
    }

    // Natural log with the argument clamped below at `floor`.
    Var log(Var a, double floor = 1e-300) {
        Matrix out = a.value();
        for (double& x : out.values()) x = std::log(std::max(x, floor));
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, floor, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = a.value()[i];
                if (x > floor) ga[i] += g[i] / x;
            }
        });
        return o;
    }

    // ---- structural ---------------------------------------------------------

    Var slice_cols(Var a, std::size_t start, std::size_t len) {
        if (start + len > a.cols()) throw ConfigError("slice_cols: out of range");
        Matrix out(a.rows(), len);
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < len; ++c) out(r, c) = a.value()(r, start + c);
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, start, len, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < len; ++c) ga(r, start + c) += g(r, c);
        });
        return o;
    }

    // Row i of the output is row idx[i] of the table.
    Var gather_rows(Var table, std::vector<std::size_t> idx) {
        Matrix out(idx.size(), table.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= table.rows()) throw ConfigError("gather_rows: index out of range");
            std::copy_n(table.value().row(idx[r]).data(), table.cols(), out.row(r).data());
        }
        Var o = make(std::move(out), table.requires_grad());
        set_backward(o, [table, idx = std::move(idx), o]() {
            const Matrix& g = o.node()->grad;
            Matrix& gt = table.node()->grad_buffer();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gt(idx[r], c) += g(r, c);
        });
        return o;
    }

    // out[r] = sum_k weights[r][k] * table[tokens[r*K + k]]
    Var embed_mix(Var table, std::vector<std::size_t> tokens, Var weights) {
        const std::size_t rows = weights.rows(), k = weights.cols(), e = table.cols();
        if (tokens.size() != rows * k) throw ConfigError("embed_mix: token matrix does not match weights");
        Matrix out(rows, e);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < k; ++j) {
                std::size_t t = tokens[r * k + j];
                if (t >= table.rows()) throw ConfigError("embed_mix: token out of range");
                double w = weights.value()(r, j);
                auto src = table.value().row(t);
                auto dst = out.row(r);
                for (std::size_t c = 0; c < e; ++c) dst[c] += w * src[c];
            }
        Var o = make(std::move(out), any(table, weights));
        set_backward(o, [table, weights, tokens = std::move(tokens), rows, k, e, o]() {
            const Matrix& g = o.node()->grad;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < k; ++j) {
                    std::size_t t = tokens[r * k + j];
                    auto gr = g.row(r);
                    if (table.requires_grad()) {
                        double w = weights.value()(r, j);
                        auto dst = table.node()->grad_buffer().row(t);
                        for (std::size_t c = 0; c < e; ++c) dst[c] += w * gr[c];
                    }
                    if (weights.requires_grad()) {
                        auto src = table.value().row(t);
                        double s = 0.0;
                        for (std::size_t c = 0; c < e; ++c) s += gr[c] * src[c];
                        weights.node()->grad_buffer()(r, j) += s;
                    }
                }
        });
        return o;
    }

    // Row r comes from a when use_a[r], else from b.
    Var select_rows(Var a, Var b, std::vector<bool> use_a) {
        if (!a.value().same_shape(b.value()) || use_a.size() != a.rows()) throw ConfigError("select_rows: shape mismatch");
        Matrix out(a.rows(), a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r) {
            auto src = use_a[r] ? a.value().row(r) : b.value().row(r);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        Var o = make(std::move(out), any(a, b));
        set_backward(o, [a, b, use_a = std::move(use_a), o]() {
            const Matrix& g = o.node()->grad;
            for (std::size_t r = 0; r < g.rows(); ++r) {
                Var dst = use_a[r] ? a : b;
                if (!dst.requires_grad()) continue;
                auto gd = dst.node()->grad_buffer().row(r);
                auto gr = g.row(r);
                for (std::size_t c = 0; c < g.cols(); ++c) gd[c] += gr[c];
            }
        });
        return o;
    }

    // out(r, j) = a(r, idx[r*M + j]); negative index yields `pad`.
    Var gather_cols(Var a, std::vector<long> idx, std::size_t m, double pad = kNegInfinity) {
        if (idx.size() != a.rows() * m) throw ConfigError("gather_cols: index matrix does not match");
        Matrix out(a.rows(), m);
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t j = 0; j < m; ++j) {
                long c = idx[r * m + j];
                if (c >= static_cast<long>(a.cols())) throw ConfigError("gather_cols: index out of range");
                out(r, j) = c < 0 ? pad : a.value()(r, static_cast<std::size_t>(c));
            }
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, idx = std::move(idx), m, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < m; ++j) {
                    long c = idx[r * m + j];
                    if (c >= 0) ga(r, static_cast<std::size_t>(c)) += g(r, j);
                }
        });
        return o;
    }

    // Logits of selected output columns: out(r, j) = h[r] . w[:, cols[r*M+j]] + bias[cols[r*M+j]].
    // Negative column index yields -inf (masked out of a following softmax).
    Var linear_cols(Var h, Var w, Var bias, std::vector<long> cols, std::size_t m) {
        if (h.cols() != w.rows() || bias.rows() != 1 || bias.cols() != w.cols() || cols.size() != h.rows() * m)
            throw ConfigError("linear_cols: shape mismatch");
        const std::size_t d = h.cols();
        Matrix out(h.rows(), m);
        for (std::size_t r = 0; r < h.rows(); ++r) {
            auto hr = h.value().row(r);
            for (std::size_t j = 0; j < m; ++j) {
                long c = cols[r * m + j];
                if (c < 0) {
                    out(r, j) = kNegInfinity;
                    continue;
                }
                auto cc = static_cast<std::size_t>(c);
                double s = bias.value()[cc];
                for (std::size_t k = 0; k < d; ++k) s += hr[k] * w.value()(k, cc);
                out(r, j) = s;
            }
        }
        Var o = make(std::move(out), h.requires_grad() || w.requires_grad() || bias.requires_grad());
        set_backward(o, [h, w, bias, cols = std::move(cols), m, d, o]() {
            const Matrix& g = o.node()->grad;
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < m; ++j) {
                    long c = cols[r * m + j];
                    double gr = g(r, j);
                    if (c < 0 || gr == 0.0) continue;
                    auto cc = static_cast<std::size_t>(c);
                    if (bias.requires_grad()) bias.node()->grad_buffer()[cc] += gr;
                    if (w.requires_grad()) {
                        Matrix& gw = w.node()->grad_buffer();
                        for (std::size_t k = 0; k < d; ++k) gw(k, cc) += gr * h.value()(r, k);
                    }
                    if (h.requires_grad()) {
                        Matrix& gh = h.node()->grad_buffer();
                        for (std::size_t k = 0; k < d; ++k) gh(r, k) += gr * w.value()(k, cc);
                    }
                }
        });
        return o;
    }

    // ---- normalizers ---------------------------------------------------------

    Var softmax_rows(Var a) {
        Matrix out = a.value();
        for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, o]() {
            const Matrix& g = o.node()->grad;
            const Matrix& y = o.value();
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t r = 0; r < g.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
                for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
            }
        });
        return o;
    }

    Var log_softmax_rows(Var a) {
        std::vector<long> seg(a.value().size(), 0);
        return log_softmax_segments(a, std::move(seg));
    }

    // Log-softmax computed independently within each segment id of a row.
    // seg has the shape of a; entries with seg < 0 are padding (-inf out, no grad).
    Var log_softmax_segments(Var a, std::vector<long> seg) {
        if (seg.size() != a.value().size()) throw ConfigError("log_softmax_segments: segment map does not match");
        Matrix out(a.rows(), a.cols(), kNegInfinity);
        const std::size_t cols = a.cols();
        long max_seg = -1;
        for (long s : seg) max_seg = std::max(max_seg, s);
        std::vector<double> mx(static_cast<std::size_t>(max_seg + 1)), lse(mx.size());
        for (std::size_t r = 0; r < a.rows(); ++r) {
            std::fill(mx.begin(), mx.end(), kNegInfinity);
            std::fill(lse.begin(), lse.end(), 0.0);
            for (std::size_t c = 0; c < cols; ++c) {
                long s = seg[r * cols + c];
                if (s >= 0) mx[static_cast<std::size_t>(s)] = std::max(mx[static_cast<std::size_t>(s)], a.value()(r, c));
            }
            for (std::size_t c = 0; c < cols; ++c) {
                long s = seg[r * cols + c];
                if (s >= 0 && mx[static_cast<std::size_t>(s)] > kNegInfinity)
                    lse[static_cast<std::size_t>(s)] += std::exp(a.value()(r, c) - mx[static_cast<std::size_t>(s)]);
            }
            for (std::size_t c = 0; c < cols; ++c) {
                long s = seg[r * cols + c];
                if (s < 0) continue;
                auto si = static_cast<std::size_t>(s);
                if (mx[si] == kNegInfinity) continue;
                out(r, c) = a.value()(r, c) - mx[si] - std::log(lse[si]);
            }
        }
        Var o = make(std::move(out), a.requires_grad());
        set_backward(o, [a, seg = std::move(seg), cols, o, nseg = mx.size()]() {
            const Matrix& g = o.node()->grad;
            const Matrix& y = o.value();
            Matrix& ga = a.node()->grad_buffer();
            std::vector<double> gsum(nseg);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                std::fill(gsum.begin(), gsum.end(), 0.0);
                for (std::size_t c = 0; c < cols; ++c) {
                    long s = seg[r * cols + c];
                    if (s >= 0) gsum[static_cast<std::size_t>(s)] += g(r, c);
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    long s = seg[r * cols + c];
                    if (s < 0 || y(r, c) == kNegInfinity) continue;
                    ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum[static_cast<std::size_t>(s)];
                }
            }
        });
        return o;
    }

    // ---- reductions and losses -------------------------------------------------

    Var sum(Var a) {
        double s = 0.0;
        for (double x : a.value().values()) s += x;
        Var o = make(Matrix(1, 1, s), a.requires_grad());
        set_backward(o, [a, o]() {
            double g = o.node()->grad[0];
            Matrix& ga = a.node()->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
        return o;
    }

    // -sum_r a(r, idx[r])
    Var nll_pick(Var logp, std::vector<std::size_t> idx) {
        if (idx.size() != logp.rows()) throw ConfigError("nll_pick: one index per row required");
        double s = 0.0;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= logp.cols()) throw ConfigError("nll_pick: index out of range");
            s -= logp.value()(r, idx[r]);
        }
        Var o = make(Matrix(1, 1, s), logp.requires_grad());
        set_backward(o, [logp, idx = std::move(idx), o]() {
            double g = o.node()->grad[0];
            Matrix& gl = logp.node()->grad_buffer();
            for (std::size_t r = 0; r < idx.size(); ++r) gl(r, idx[r]) -= g;
        });
        return o;
    }

    /// Summed binary cross-entropy of sigmoid(logits) against 0/1 targets.
    /// Probabilities are clamped to [eps, 1-eps]; the gradient w.r.t. the
    /// logits is (p - y).
    Var bce_logits_sum(Var logits, Matrix targets, double eps = 1e-12) {
        if (!logits.value().same_shape(targets)) throw ConfigError("bce_logits_sum: shape mismatch");
        Matrix p(logits.rows(), logits.cols());
        double loss = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double q = std::clamp(stable_sigmoid(logits.value()[i]), eps, 1.0 - eps);
            p[i] = q;
            loss -= targets[i] > 0.5 ? std::log(q) : std::log1p(-q);
        }
        Var o = make(Matrix(1, 1, loss), logits.requires_grad());
        set_backward(o, [logits, p = std::move(p), targets = std::move(targets), o]() {
            double g = o.node()->grad[0];
            Matrix& gl = logits.node()->grad_buffer();
            for (std::size_t i = 0; i < p.size(); ++i) gl[i] += g * (p[i] - targets[i]);
        });
        return o;
    }

    /// out(r, k) = sum_c [cand_{r,k,c} ln z(r,c) + (1 - cand_{r,k,c}) ln(1 - z(r,c))]
    /// for relaxed bits z in (0,1). cand is row-major rows x K x n of 0/1.
    Var codeword_loglik(Var z, std::vector<unsigned char> cand, std::size_t k, double eps = 1e-12) {
        const std::size_t rows = z.rows(), n = z.cols();
        if (cand.size() != rows * k * n) throw ConfigError("codeword_loglik: candidate tensor does not match");
        Matrix out(rows, k);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    double q = std::clamp(z.value()(r, c), eps, 1.0 - eps);
                    s += cand[(r * k + j) * n + c] ? std::log(q) : std::log1p(-q);
                }
                out(r, j) = s;
            }
        Var o = make(std::move(out), z.requires_grad());
        set_backward(o, [z, cand = std::move(cand), k, n, eps, o]() {
            const Matrix& g = o.node()->grad;
            Matrix& gz = z.node()->grad_buffer();
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < n; ++c) {
                    double q = z.value()(r, c);
                    if (q <= eps || q >= 1.0 - eps) continue;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < k; ++j) acc += g(r, j) * (cand[(r * k + j) * n + c] ? 1.0 / q : -1.0 / (1.0 - q));
                    gz(r, c) += acc;
                }
        });
        return o;
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    }

    static void softmax_inplace(std::span<double> v) {
        double m = kNegInfinity;
        for (double x : v) m = std::max(m, x);
        double z = 0.0;
        for (double& x : v) z += (x = std::exp(x - m));
        for (double& x : v) x /= z;
    }

private:
    static bool any(Var a, Var b) { return a.requires_grad() || b.requires_grad(); }

    static void accumulate(Var dst, const Matrix& g) {
        Matrix& gd = dst.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gd[i] += g[i];
    }

    static std::string shape_msg(const char* op, Var a, Var b) {
        return std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
               std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")";
    }

    Var make(Matrix value, bool requires_grad) {
        auto n = std::make_unique<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->tape_id = nodes_.size();
        nodes_.push_back(std::move(n));
        return Var(nodes_.back().get());
    }

    static void set_backward(Var o, std::function<void()> fn) {
        if (o.requires_grad()) o.node()->backward = std::move(fn);
    }

    std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace ecoc::nn
