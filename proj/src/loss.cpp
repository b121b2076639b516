#include "stcal/loss.hpp"

#include <string>

#include "stcal/error.hpp"

namespace stcal {

TensorPtr sastc_loss(const std::vector<std::vector<TensorPtr>>& eta,
                     const std::vector<TensorPtr>& teacher_maps,
                     const std::vector<std::vector<std::vector<TensorPtr>>>& projected,
                     bool batch_mean) {
    if (eta.empty() || teacher_maps.empty())
        throw contract_error("sastc_loss: empty attention or teacher map table");
    if (projected.size() != eta.size())
        throw contract_error("sastc_loss: " + std::to_string(eta.size()) + " attention steps vs " +
                             std::to_string(projected.size()) + " projected steps");
    int64_t b = teacher_maps[0]->shape[0];
    int64_t a_count = static_cast<int64_t>(teacher_maps.size());
    TensorPtr acc;
    for (size_t t = 0; t < eta.size(); ++t) {
        if (projected[t].size() != eta[t].size())
            throw contract_error("sastc_loss: attention/projection layer count mismatch at step " +
                                 std::to_string(t));
        for (size_t s = 0; s < eta[t].size(); ++s) {
            const auto& w = eta[t][s];
            if (w->shape.size() != 2 || w->shape[0] != b || w->shape[1] != a_count)
                throw contract_error("sastc_loss: attention shape " + shape_str(w->shape) +
                                     " does not index " + std::to_string(a_count) +
                                     " teacher maps");
            if (projected[t][s].size() != teacher_maps.size())
                throw contract_error("sastc_loss: projection table missing teacher layers at (" +
                                     std::to_string(t) + "," + std::to_string(s) + ")");
            std::vector<TensorPtr> cols;
            cols.reserve(teacher_maps.size());
            for (size_t a = 0; a < teacher_maps.size(); ++a) {
                auto d = sub(projected[t][s][a], teacher_maps[a]);
                auto sq = mul(d, d);
                std::vector<int> axes;
                for (size_t ax = 1; ax < sq->shape.size(); ++ax)
                    axes.push_back(static_cast<int>(ax));
                cols.push_back(reshape(reduce_mean(sq, axes), {b, 1}));
            }
            auto term = reduce_sum_all(mul(w, concat_cols(cols)));
            acc = acc ? add(acc, term) : term;
        }
    }
    if (batch_mean) acc = scale(acc, 1.0 / static_cast<double>(b));
    return acc;
}

KdParts kd_loss(const TensorPtr& o_s, const TensorPtr& o_a, const std::vector<int64_t>& labels,
                double alpha) {
    if (o_s->shape.size() != 2 || o_a->shape.size() != 2 || o_s->shape != o_a->shape)
        throw dimension_error("kd_loss: logit shapes " + shape_str(o_s->shape) + " vs " +
                              shape_str(o_a->shape));
    if (alpha <= 0.0) throw domain_error("kd_loss: temperature must be positive");
    KdParts parts;
    parts.l_ce = ce_loss(o_s, labels);
    auto teacher = detach(o_a);
    auto p_a = softmax(teacher, alpha);
    auto p_s = softmax(o_s, alpha);
    double inv_b = 1.0 / static_cast<double>(o_s->shape[0]);
    auto kl_terms = mul(p_a, sub(log(p_a), log(p_s)));
    parts.l_kl = scale(reduce_sum_all(kl_terms), inv_b);
    parts.l_kd = add(parts.l_ce, scale(parts.l_kl, alpha * alpha));
    return parts;
}

TensorPtr ce_loss(const TensorPtr& o_s, const std::vector<int64_t>& labels) {
    if (o_s->shape.size() != 2)
        throw dimension_error("ce_loss: logits must be [b,N], got " + shape_str(o_s->shape));
    int64_t b = o_s->shape[0], n = o_s->shape[1];
    if (static_cast<int64_t>(labels.size()) != b)
        throw dimension_error("ce_loss: " + std::to_string(labels.size()) + " labels for batch " +
                              std::to_string(b));
    std::vector<double> onehot(static_cast<size_t>(b * n), 0.0);
    for (int64_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || labels[i] >= n)
            throw domain_error("ce_loss: label " + std::to_string(labels[i]) + " outside [0," +
                               std::to_string(n) + ")");
        onehot[static_cast<size_t>(i * n + labels[i])] = 1.0;
    }
    auto y = make_tensor({b, n}, std::move(onehot), false);
    auto logp = log(softmax(o_s));
    return scale(reduce_sum_all(mul(y, logp)), -1.0 / static_cast<double>(b));
}

TensorPtr total_loss(const TensorPtr& l_kd, const TensorPtr& l_sastc, double beta) {
    if (beta < 0.0) throw domain_error("total_loss: beta must be >= 0, got " + std::to_string(beta));
    return add(l_kd, scale(l_sastc, beta));
}

}  // namespace stcal
