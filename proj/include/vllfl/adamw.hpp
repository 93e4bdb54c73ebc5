#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vllfl/errors.hpp"

namespace vllfl {

// AdamW with decoupled weight decay over a flat parameter vector.
//
//   m1 <- b1*m1 + (1-b1)*g          m_hat = m1 / (1 - b1^t)
//   m2 <- b2*m2 + (1-b2)*g^2        v_hat = m2 / (1 - b2^t)
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
//
// Moment buffers grow lazily to the parameter length on the first step.
struct AdamWState {
    std::size_t step = 0;
    std::vector<double> m1;
    std::vector<double> m2;
    double lr = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

inline void adamw_step(AdamWState& state, std::vector<double>& params,
                       const std::vector<double>& grads) {
    if (params.size() != grads.size()) {
        throw shape_error("adamw_step: params/grads length mismatch");
    }
    if (state.m1.empty()) {
        state.m1.assign(params.size(), 0.0);
        state.m2.assign(params.size(), 0.0);
    }
    if (state.m1.size() != params.size()) {
        throw shape_error("adamw_step: moment state does not match parameter length");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m1[i] = state.beta1 * state.m1[i] + (1.0 - state.beta1) * g;
        state.m2[i] = state.beta2 * state.m2[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m1[i] / bc1;
        const double v_hat = state.m2[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps)
                   + state.lr * state.weight_decay * params[i];
    }
}

}  // namespace vllfl
