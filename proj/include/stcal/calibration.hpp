#pragma once

#include <string>
#include <vector>

#include "stcal/rng.hpp"
#include "stcal/tensor.hpp"

namespace stcal {

// A = R(f)·R(f)' with R flattening all non-batch dims; exact symmetry by
// construction, PSD as a Gram matrix. No normalization.
TensorPtr similarity_matrix(const TensorPtr& f);

// Row-wise two-layer perceptron b -> d_h -> d_k with relu between.
struct Mlp {
    TensorPtr w1, b1, w2, b2;

    TensorPtr apply(const TensorPtr& a) const;
    std::vector<TensorPtr> params() const { return {w1, b1, w2, b2}; }
};

Mlp build_mlp(int64_t in_width, int64_t d_h, int64_t d_k, Rng& rng);

// Maps one student tap shape onto one teacher tap shape. Spatial maps resample
// (average pool down / nearest-neighbour up), then a bias-free 3x3 conv changes
// channels and a bias-free, zero-initialized 1x1 conv refines; flat maps use a
// single affine layer. The spatial path carries no biases on purpose: with
// them the projector can fit the teacher maps from a silent student, which
// kills the gradient pressure on the spike patterns themselves.
struct Projector {
    bool spatial = true;
    int pool_steps = 0;
    int up_factor = 1;
    TensorPtr conv3_w, conv1_w;    // spatial path
    TensorPtr affine_w, affine_b;  // flat path
    Shape source, target;                          // [c,h,w] or [d]

    TensorPtr apply(const TensorPtr& f) const;
    std::vector<TensorPtr> params() const;
};

Projector build_projector(const Shape& source, const Shape& target, Rng& rng);

struct QkDims {
    int64_t d_h = 64;
    int64_t d_k = 32;
    bool per_layer = false;
};

// Trainable calibration state: query/key perceptrons plus one projector per
// (student layer, teacher layer) pair.
struct CalibrationBank {
    int64_t b = 0;
    QkDims qk;
    std::vector<Shape> student_taps, teacher_taps;
    std::vector<Mlp> mlp_q;  // one shared, or one per student layer
    std::vector<Mlp> mlp_k;  // one shared, or one per teacher layer
    std::vector<std::vector<Projector>> projectors;  // [s_l][a_l]

    const Mlp& query_mlp(size_t s_l) const { return mlp_q[qk.per_layer ? s_l : 0]; }
    const Mlp& key_mlp(size_t a_l) const { return mlp_k[qk.per_layer ? a_l : 0]; }
    std::vector<TensorPtr> params() const;
    std::vector<std::string> param_names() const;  // parallel to params()
};

CalibrationBank build_bank(int64_t b, const QkDims& qk, const std::vector<Shape>& student_taps,
                           const std::vector<Shape>& teacher_taps, Rng& rng);

// Per-(t, s_l) softmax over teacher layers of row-wise query-key dot products;
// no 1/sqrt(d_k) scaling.
std::vector<std::vector<TensorPtr>> attention_weights(
    const std::vector<std::vector<TensorPtr>>& queries,  // [t][s_l] -> [b, d_k]
    const std::vector<TensorPtr>& keys);                 // [a_l]    -> [b, d_k]

struct CalibrationResult {
    std::vector<std::vector<TensorPtr>> eta;                     // [t][s_l] -> [b, a_L]
    std::vector<std::vector<std::vector<TensorPtr>>> projected;  // [t][s_l][a_l]
    std::vector<std::vector<TensorPtr>> sim_student;             // [t][s_l]
    std::vector<TensorPtr> sim_teacher;                          // [a_l]
};

CalibrationResult calibrate(const CalibrationBank& bank,
                            const std::vector<std::vector<TensorPtr>>& student_patterns,
                            const std::vector<TensorPtr>& teacher_pattern);

}  // namespace stcal
