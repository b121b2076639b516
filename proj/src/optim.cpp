#include "stcal/optim.hpp"

#include <cmath>

#include "stcal/error.hpp"

namespace stcal {

namespace {
inline double round_prec(double x) {
    return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}
}  // namespace

Optimizer::Optimizer(std::vector<TensorPtr> params, const OptimizerSpec& spec)
    : params_(std::move(params)), spec_(spec) {
    if (spec_.kind == "adam")
        adam_ = true;
    else if (spec_.kind != "sgd-momentum")
        throw config_error("optimizer kind '" + spec_.kind + "' not supported");
    if (spec_.total_steps < 1) throw contract_error("optimizer needs total_steps >= 1");
    m_.resize(params_.size());
    if (adam_) v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i]->requires_grad)
            throw contract_error("optimizer param " + std::to_string(i) + " is not trainable");
        m_[i].assign(params_[i]->data.size(), 0.0);
        if (adam_) v_[i].assign(params_[i]->data.size(), 0.0);
    }
}

double Optimizer::current_lr() const {
    if (!spec_.cosine) return spec_.lr;
    double frac = static_cast<double>(step_count_) / static_cast<double>(spec_.total_steps);
    if (frac > 1.0) frac = 1.0;
    return spec_.lr * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
}

void Optimizer::step() {
    double lr = current_lr();
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        const bool has_g = p.has_grad();
        for (size_t j = 0; j < p.data.size(); ++j) {
            double g = (has_g ? p.grad[j] : 0.0) + spec_.weight_decay * p.data[j];
            if (adam_) {
                m_[i][j] = spec_.beta1 * m_[i][j] + (1.0 - spec_.beta1) * g;
                v_[i][j] = spec_.beta2 * v_[i][j] + (1.0 - spec_.beta2) * g * g;
                double t = static_cast<double>(step_count_ + 1);
                double mhat = m_[i][j] / (1.0 - std::pow(spec_.beta1, t));
                double vhat = v_[i][j] / (1.0 - std::pow(spec_.beta2, t));
                p.data[j] = round_prec(p.data[j] - lr * mhat / (std::sqrt(vhat) + 1e-8));
            } else {
                m_[i][j] = spec_.momentum * m_[i][j] + g;
                p.data[j] = round_prec(p.data[j] - lr * m_[i][j]);
            }
        }
    }
    ++step_count_;
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace stcal
