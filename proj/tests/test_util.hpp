#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "timemixer/tensor.hpp"

namespace testutil {

/// Independent gradient oracle: central finite differences with step h over
/// every element of every parameter, compared against the autodiff result.
/// The forward callback must rebuild the loss from the current parameter
/// values on each call. Relative error uses a 1e-3 floor in the denominator
/// so that finite-difference roundoff (~1e-10 absolute on O(1) losses) does
/// not dominate near-zero gradients.
inline double finite_diff_max_rel_err(std::vector<timemixer::Tensor>& params,
                                      const std::function<timemixer::Tensor()>& forward,
                                      double h = 1e-5) {
    using timemixer::Tape;
    using timemixer::Tensor;

    for (auto& p : params) p.zero_grad();
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> autodiff;
    autodiff.reserve(params.size());
    for (auto& p : params)
        autodiff.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.data().size(), 0.0));

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].mutable_data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double up = forward().item();
            value[i] = saved - h;
            const double down = forward().item();
            value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ad = autodiff[pi][i];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
            max_rel = std::max(max_rel, std::abs(ad - fd) / denom);
        }
    }
    return max_rel;
}

inline timemixer::Tensor random_tensor(timemixer::Shape shape, timemixer::Rng& rng,
                                       bool requires_grad = false) {
    std::vector<double> data(static_cast<std::size_t>(timemixer::shape_numel(shape)));
    for (auto& v : data) v = rng.normal();
    return timemixer::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace testutil
