#pragma once

#include <string>
#include <vector>

#include "stcal/lif.hpp"
#include "stcal/rng.hpp"
#include "stcal/tensor.hpp"

namespace stcal {

struct StageSpec {
    int64_t out_channels;
    bool tap = true;
};

// Stage = 3x3 conv (pad 1) + bias + activation + 2x2 average pool, followed by
// one affine readout head on the flattened final stage.
struct ArchSpec {
    int64_t in_channels = 3;
    int64_t image_size = 16;
    std::vector<StageSpec> stages;
    int64_t classes = 3;

    void validate() const;
    int64_t tap_count() const;
    // [c,h,w] of each stage output (post pool)
    std::vector<Shape> stage_output_shapes() const;
    // shapes of tapped stage outputs, in depth order
    std::vector<Shape> tap_shapes() const;
};

struct Network {
    ArchSpec arch;
    std::vector<TensorPtr> conv_w, conv_b;  // per stage
    TensorPtr fc_w, fc_b;

    std::vector<TensorPtr> params() const;
    std::vector<std::string> param_names(const std::string& prefix) const;
    void set_requires_grad(bool rg);
};

// Kaiming-uniform fan-in init, shared by every trainable module.
TensorPtr kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng);
TensorPtr bias_uniform(int64_t n, int64_t fan_in, Rng& rng);

Network build_network(const ArchSpec& arch, Rng& rng);

struct TeacherForward {
    std::vector<TensorPtr> pattern;  // tapped stage outputs, depth order
    TensorPtr logits;                // [b, N]
};

TeacherForward forward_teacher(const Network& net, const TensorPtr& batch);

struct StudentForward {
    // patterns[t] = tapped stage outputs at time step t
    std::vector<std::vector<TensorPtr>> patterns;
    TensorPtr logits;  // O_s = (1/T) sum_t f_end(...), [b, N]
    // raw binary spike tensors per stage per t (pre-pool), for rate metrics
    std::vector<std::vector<TensorPtr>> spikes;  // [stage][t]
};

// Direct encoding: the same analog batch is the synaptic input at every step.
StudentForward forward_student(const Network& net, const TensorPtr& batch, int64_t T,
                               const LifParams& lif, bool keep_spikes = false);

}  // namespace stcal
