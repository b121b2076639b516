#include "stcal/lif.hpp"

#include "stcal/error.hpp"

namespace stcal {

void LifParams::validate() const {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw domain_error("lif: lambda must be in (0,1), got " + std::to_string(lambda));
    if (!(v_th > 0.0)) throw domain_error("lif: v_th must be > 0, got " + std::to_string(v_th));
    if (!(gamma > 0.0)) throw domain_error("lif: gamma must be > 0, got " + std::to_string(gamma));
}

LifState LifState::fresh(const Shape& shape, const LifParams& params) {
    LifState s;
    s.u = full(shape, params.u0);
    s.t = 0;
    return s;
}

TensorPtr spike_op(const TensorPtr& u, const LifParams& params) {
    const double v_th = params.v_th, gamma = params.gamma;
    auto heaviside = [v_th](const std::vector<double>& vals) {
        std::vector<double> o(vals.size());
        for (size_t i = 0; i < vals.size(); ++i) o[i] = vals[i] >= v_th ? 1.0 : 0.0;
        return o;
    };
    auto triangle = [v_th, gamma](const std::vector<double>& vals) {
        std::vector<double> g(vals.size());
        for (size_t i = 0; i < vals.size(); ++i) g[i] = triangle_surrogate(vals[i], v_th, gamma);
        return g;
    };
    return custom_grad(u, heaviside, triangle);
}

LifStepResult lif_step(const LifState& state, const TensorPtr& input, const LifParams& params) {
    params.validate();
    if (state.t < 0) throw contract_error("lif_step: negative time index");
    if (state.u->shape != input->shape)
        throw dimension_error("lif_step: input " + shape_str(input->shape) +
                              " does not match state " + shape_str(state.u->shape));
    auto u_new = add(scale(state.u, params.lambda), input);
    auto spikes = spike_op(u_new, params);
    auto reset_gate = sub(scalar(1.0), params.detach_reset ? detach(spikes) : spikes);
    LifStepResult r;
    r.state.u = mul(u_new, reset_gate);
    r.state.t = state.t + 1;
    r.spikes = spikes;
    return r;
}

std::vector<TensorPtr> lif_unroll(const std::vector<TensorPtr>& inputs, const LifParams& params) {
    if (inputs.empty()) throw domain_error("lif_unroll: empty input sequence");
    auto state = LifState::fresh(inputs[0]->shape, params);
    std::vector<TensorPtr> spikes;
    spikes.reserve(inputs.size());
    for (const auto& input : inputs) {
        auto r = lif_step(state, input, params);
        state = std::move(r.state);
        spikes.push_back(std::move(r.spikes));
    }
    return spikes;
}

TensorPtr surrogate_grad_value(const TensorPtr& u, const LifParams& params) {
    std::vector<double> g(u->data.size());
    for (size_t i = 0; i < g.size(); ++i)
        g[i] = triangle_surrogate(u->data[i], params.v_th, params.gamma);
    return make_tensor(u->shape, std::move(g));
}

}  // namespace stcal
