#include "stcal/model.hpp"

#include <cmath>

#include "stcal/error.hpp"

namespace stcal {

void ArchSpec::validate() const {
    if (stages.empty()) throw domain_error("arch: needs at least one stage");
    if (in_channels < 1 || classes < 2) throw domain_error("arch: bad channels/classes");
    int64_t s = image_size;
    for (size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].out_channels < 1) throw domain_error("arch: bad stage width");
        if (s % 2 != 0)
            throw domain_error("arch: stage " + std::to_string(i + 1) + " input size " +
                               std::to_string(s) + " is not poolable");
        s /= 2;
    }
    if (tap_count() < 1) throw domain_error("arch: needs at least one tapped stage");
}

int64_t ArchSpec::tap_count() const {
    int64_t n = 0;
    for (const auto& st : stages) n += st.tap ? 1 : 0;
    return n;
}

std::vector<Shape> ArchSpec::stage_output_shapes() const {
    std::vector<Shape> out;
    int64_t s = image_size;
    for (const auto& st : stages) {
        s /= 2;
        out.push_back({st.out_channels, s, s});
    }
    return out;
}

std::vector<Shape> ArchSpec::tap_shapes() const {
    std::vector<Shape> out;
    auto all = stage_output_shapes();
    for (size_t i = 0; i < stages.size(); ++i)
        if (stages[i].tap) out.push_back(all[i]);
    return out;
}

// Kaiming-uniform fan-in: weights U(+-sqrt(6/fan_in)), biases U(+-1/sqrt(fan_in))
TensorPtr kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return make_tensor(std::move(shape), std::move(v), true);
}

TensorPtr bias_uniform(int64_t n, int64_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return make_tensor({n}, std::move(v), true);
}

Network build_network(const ArchSpec& arch, Rng& rng) {
    arch.validate();
    Network net;
    net.arch = arch;
    int64_t in_c = arch.in_channels;
    for (const auto& st : arch.stages) {
        int64_t fan_in = in_c * 9;
        net.conv_w.push_back(kaiming_uniform({st.out_channels, in_c, 3, 3}, fan_in, rng));
        net.conv_b.push_back(bias_uniform(st.out_channels, fan_in, rng));
        in_c = st.out_channels;
    }
    auto final_shape = arch.stage_output_shapes().back();
    int64_t flat = final_shape[0] * final_shape[1] * final_shape[2];
    net.fc_w = kaiming_uniform({flat, arch.classes}, flat, rng);
    net.fc_b = bias_uniform(arch.classes, flat, rng);
    return net;
}

std::vector<TensorPtr> Network::params() const {
    std::vector<TensorPtr> p;
    for (size_t i = 0; i < conv_w.size(); ++i) {
        p.push_back(conv_w[i]);
        p.push_back(conv_b[i]);
    }
    p.push_back(fc_w);
    p.push_back(fc_b);
    return p;
}

std::vector<std::string> Network::param_names(const std::string& prefix) const {
    std::vector<std::string> names;
    for (size_t i = 0; i < conv_w.size(); ++i) {
        names.push_back(prefix + ".conv" + std::to_string(i + 1) + ".w");
        names.push_back(prefix + ".conv" + std::to_string(i + 1) + ".b");
    }
    names.push_back(prefix + ".fc.w");
    names.push_back(prefix + ".fc.b");
    return names;
}

void Network::set_requires_grad(bool rg) {
    for (auto& p : params()) p->requires_grad = rg;
}

TeacherForward forward_teacher(const Network& net, const TensorPtr& batch) {
    if (batch->shape.size() != 4 || batch->shape[1] != net.arch.in_channels ||
        batch->shape[2] != net.arch.image_size || batch->shape[3] != net.arch.image_size)
        throw dimension_error("forward_teacher: batch " + shape_str(batch->shape) +
                              " does not match arch input");
    TeacherForward out;
    TensorPtr x = batch;
    for (size_t i = 0; i < net.arch.stages.size(); ++i) {
        x = avg_pool2x2(relu(add_channel_bias(conv2d(x, net.conv_w[i], 1, 1), net.conv_b[i])));
        if (net.arch.stages[i].tap) out.pattern.push_back(x);
    }
    out.logits = add_row_bias(matmul(flatten_rows(x), net.fc_w), net.fc_b);
    return out;
}

StudentForward forward_student(const Network& net, const TensorPtr& batch, int64_t T,
                               const LifParams& lif, bool keep_spikes) {
    if (T < 1) throw domain_error("forward_student: T must be >= 1");
    if (batch->shape.size() != 4 || batch->shape[1] != net.arch.in_channels ||
        batch->shape[2] != net.arch.image_size || batch->shape[3] != net.arch.image_size)
        throw dimension_error("forward_student: batch " + shape_str(batch->shape) +
                              " does not match arch input");
    lif.validate();
    const size_t n_stages = net.arch.stages.size();
    StudentForward out;
    out.patterns.assign(static_cast<size_t>(T), {});
    if (keep_spikes) out.spikes.assign(n_stages, {});

    std::vector<LifState> states(n_stages);
    TensorPtr o_sum;
    for (int64_t t = 0; t < T; ++t) {
        TensorPtr x = batch;  // direct encoding
        for (size_t i = 0; i < n_stages; ++i) {
            auto current = add_channel_bias(conv2d(x, net.conv_w[i], 1, 1), net.conv_b[i]);
            if (t == 0) states[i] = LifState::fresh(current->shape, lif);
            auto r = lif_step(states[i], current, lif);
            states[i] = std::move(r.state);
            if (keep_spikes) out.spikes[i].push_back(r.spikes);
            x = avg_pool2x2(r.spikes);
            if (net.arch.stages[i].tap) out.patterns[static_cast<size_t>(t)].push_back(x);
        }
        auto o_t = add_row_bias(matmul(flatten_rows(x), net.fc_w), net.fc_b);
        o_sum = o_sum ? add(o_sum, o_t) : o_t;
    }
    out.logits = scale(o_sum, 1.0 / static_cast<double>(T));
    return out;
}

}  // namespace stcal
