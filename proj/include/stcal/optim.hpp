#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

struct OptimizerSpec {
    std::string kind = "sgd-momentum";  // sgd-momentum | adam
    double lr = 0.05;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 5e-4;
    bool cosine = true;     // anneal lr to 0 over total_steps
    int64_t total_steps = 1;
};

// Coupled weight decay (added to the raw gradient) for both kinds.
class Optimizer {
public:
    Optimizer(std::vector<TensorPtr> params, const OptimizerSpec& spec);

    double current_lr() const;  // lr for the upcoming step
    void step();
    void zero_grad();
    int64_t steps_taken() const { return step_count_; }
    const std::vector<TensorPtr>& params() const { return params_; }

private:
    std::vector<TensorPtr> params_;
    OptimizerSpec spec_;
    bool adam_ = false;
    int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_;  // momentum / first moment
    std::vector<std::vector<double>> v_;  // adam second moment
};

}  // namespace stcal
