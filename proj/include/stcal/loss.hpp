#pragma once

#include <cstdint>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

struct LossBreakdown {
    TensorPtr l_sastc, l_kd, l_ce, l_kl, l_total;
    double alpha = 1.0;
    double beta = 1.0;
};

// Attention-weighted feature alignment: sum over instances, steps and layer
// pairs of eta * MSE(teacher map, projected student map), batch-averaged by
// default. MSE is the mean over feature elements.
TensorPtr sastc_loss(const std::vector<std::vector<TensorPtr>>& eta,        // [t][s_l] -> [b, a_L]
                     const std::vector<TensorPtr>& teacher_maps,            // [a_l]
                     const std::vector<std::vector<std::vector<TensorPtr>>>& projected,
                     bool batch_mean = true);

struct KdParts {
    TensorPtr l_kd, l_ce, l_kl;
};

// l_ce = CE(y, softmax(o_s)); l_kl = KL(softmax(o_a/alpha) || softmax(o_s/alpha))
// batch-averaged; l_kd = l_ce + alpha^2 * l_kl. Teacher logits are constants.
KdParts kd_loss(const TensorPtr& o_s, const TensorPtr& o_a, const std::vector<int64_t>& labels,
                double alpha);

// Plain cross-entropy against hard labels (baseline mode).
TensorPtr ce_loss(const TensorPtr& o_s, const std::vector<int64_t>& labels);

TensorPtr total_loss(const TensorPtr& l_kd, const TensorPtr& l_sastc, double beta);

}  // namespace stcal
