#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::string worst;  // location of the worst element, e.g. "matmul/a[3]"
    int checks = 0;

    void merge(const GradCheckReport& other);
};

// Compares analytic gradients against central finite differences. build must
// reconstruct the scalar loss from the leaves' current data on every call.
GradCheckReport grad_check(const std::function<TensorPtr()>& build,
                           const std::vector<TensorPtr>& leaves,
                           const std::vector<std::string>& leaf_names, double eps = 1e-3,
                           double tol = 1e-4);

// Randomized sweep over every differentiable op (the verification suite behind
// the grad-check command). Non-smooth points (relu kink, spike threshold) are
// kept out of the sampled neighbourhoods.
GradCheckReport run_grad_check_suite(int trials_per_op, uint64_t seed, double eps = 1e-3,
                                     double tol = 1e-4);

}  // namespace stcal
