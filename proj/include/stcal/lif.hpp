#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

struct LifParams {
    double lambda = 0.5;  // leak factor
    double v_th = 1.0;    // firing threshold
    double gamma = 0.3;   // surrogate half-width
    double u0 = 0.0;      // initial membrane potential
    bool detach_reset = false;

    void validate() const;
};

// Canonical arrangement of the triangular surrogate; forward spikes, the
// surrogate_grad_value helper, and every test oracle evaluate exactly this
// expression so comparisons hold to 64-bit rounding.
inline double triangle_surrogate(double u, double v_th, double gamma) {
    return (1.0 / (gamma * gamma)) * std::max(0.0, gamma - std::abs(u - v_th));
}

struct LifState {
    TensorPtr u;  // membrane potential after reset, shaped like the layer output
    int t = 0;    // time-step index

    static LifState fresh(const Shape& shape, const LifParams& params);
};

struct LifStepResult {
    LifState state;
    TensorPtr spikes;
};

// One discrete step: u' = lambda*u + input, spikes = Theta(u' - v_th), state
// keeps u'*(1-spikes). The spike op carries the triangular surrogate backward.
LifStepResult lif_step(const LifState& state, const TensorPtr& input, const LifParams& params);

// Unrolls lif_step over a sequence sharing one state; the whole unroll is one
// differentiable graph.
std::vector<TensorPtr> lif_unroll(const std::vector<TensorPtr>& inputs, const LifParams& params);

// Elementwise surrogate values (plain evaluation, no graph edges).
TensorPtr surrogate_grad_value(const TensorPtr& u, const LifParams& params);

// The spike nonlinearity alone (custom_grad with Heaviside forward and
// triangle backward), exposed for layer builders.
TensorPtr spike_op(const TensorPtr& u, const LifParams& params);

}  // namespace stcal
