#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ecoc/error.hpp"
#include "ecoc/tensor.hpp"

namespace ecoc::nn {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 20.0;
    double clip = 0.25;  // global gradient-norm threshold; <= 0 disables
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct StepStats {
    double raw_norm = 0.0;
    double applied_norm = 0.0;
};

/// SGD or Adam over every parameter of a store, with global gradient-norm
/// clipping. Adam moments are kept per parameter in store order.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }
    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::uint64_t steps() const { return steps_; }

    std::vector<Matrix>& first_moments() { return m_; }
    std::vector<Matrix>& second_moments() { return v_; }
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }
    void set_steps(std::uint64_t s) { steps_ = s; }

    StepStats step(ParameterStore& params) {
        StepStats st;
        double sq = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Node& p = *params.at(i).node();
            for (double g : p.grad.values()) {
                if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
                sq += g * g;
            }
        }
        st.raw_norm = std::sqrt(sq);
        double factor = 1.0;
        if (cfg_.clip > 0.0 && st.raw_norm > cfg_.clip) factor = cfg_.clip / st.raw_norm;
        st.applied_norm = st.raw_norm * factor;

        ++steps_;
        if (cfg_.kind == OptimizerKind::adam && m_.size() != params.size()) {
            m_.clear();
            v_.clear();
            for (std::size_t i = 0; i < params.size(); ++i) {
                const Matrix& val = params.at(i).value();
                m_.emplace_back(val.rows(), val.cols());
                v_.emplace_back(val.rows(), val.cols());
            }
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Node& p = *params.at(i).node();
            if (p.grad.empty()) continue;
            Matrix& w = p.value;
            const Matrix& g = p.grad;
            if (cfg_.kind == OptimizerKind::sgd) {
                for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg_.lr * factor * g[j];
            } else {
                Matrix& m = m_[i];
                Matrix& v = v_[i];
                for (std::size_t j = 0; j < w.size(); ++j) {
                    double gj = factor * g[j];
                    m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                    v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                    w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
                }
            }
        }
        params.zero_grad();
        return st;
    }

private:
    OptimizerConfig cfg_;
    std::uint64_t steps_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

/// Reverse pass from `loss`, clipped update, then the tape is cleared.
inline StepStats backward_and_step(Tape& tape, Var loss, ParameterStore& params, Optimizer& opt) {
    if (!std::isfinite(loss.scalar())) throw NumericError("non-finite loss");
    tape.backward(loss);
    StepStats st = opt.step(params);
    tape.clear();
    return st;
}

}  // namespace ecoc::nn
