#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecoc/error.hpp"
#include "ecoc/rng.hpp"
#include "ecoc/tensor.hpp"

namespace ecoc::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Builds the loss on a fresh tape. Must be a deterministic function of the parameters.
using LossClosure = std::function<Var(Tape&)>;

/// Central differences on sampled parameter coordinates against the reverse
/// pass. Every parameter tensor contributes at least one coordinate.
inline GradCheckResult finite_difference_check(ParameterStore& params, const LossClosure& loss_fn, std::size_t n_coords = 60,
                                               std::uint64_t seed = 0, double step = 1e-5) {
    if (params.size() == 0) throw ConfigError("finite_difference_check: no parameters");
    auto eval = [&]() {
        Tape tape;
        return loss_fn(tape).scalar();
    };

    params.zero_grad();
    double f0 = 0.0;
    {
        Tape tape;
        Var loss = loss_fn(tape);
        f0 = loss.scalar();
        tape.backward(loss);
    }
    if (eval() != f0) throw NumericError("finite_difference_check: loss closure is not deterministic");
    std::vector<Matrix> analytic;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Node& n = *params.at(i).node();
        analytic.push_back(n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad);
    }
    params.zero_grad();

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    Rng rng = Rng::stream({seed, 0x6663ULL});
    for (std::size_t i = 0; i < params.size(); ++i) coords.emplace_back(i, rng.below(params.at(i).value().size()));
    while (coords.size() < n_coords) {
        std::size_t i = rng.below(params.size());
        coords.emplace_back(i, rng.below(params.at(i).value().size()));
    }

    GradCheckResult res;
    res.coordinates = coords.size();
    for (auto [pi, j] : coords) {
        Node& n = *params.at(pi).node();
        const double w = n.value[j];
        n.value[j] = w + step;
        const double fp = eval();
        n.value[j] = w - step;
        const double fm = eval();
        n.value[j] = w;
        const double num = (fp - fm) / (2.0 * step);
        const double ana = analytic[pi][j];
        const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
        if (!std::isfinite(rel)) throw NumericError("finite_difference_check: non-finite difference in '" + n.name + "'");
        if (rel > res.max_rel_error || res.worst_parameter.empty()) {
            res.max_rel_error = rel;
            res.worst_parameter = n.name;
            res.worst_index = j;
            res.worst_analytic = ana;
            res.worst_numeric = num;
        }
    }
    return res;
}

}  // namespace ecoc::nn
