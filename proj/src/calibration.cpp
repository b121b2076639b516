#include "stcal/calibration.hpp"

#include <cstdint>

#include "stcal/error.hpp"
#include "stcal/model.hpp"

namespace stcal {

TensorPtr similarity_matrix(const TensorPtr& f) {
    auto r = flatten_rows(f);
    return matmul(r, r, /*transpose_b=*/true);
}

TensorPtr Mlp::apply(const TensorPtr& a) const {
    if (a->shape.size() != 2 || a->shape[1] != w1->shape[0])
        throw dimension_error("mlp input width " +
                              std::to_string(a->shape.size() == 2 ? a->shape[1] : -1) +
                              " does not match configured width " + std::to_string(w1->shape[0]));
    auto h = relu(add_row_bias(matmul(a, w1), b1));
    return add_row_bias(matmul(h, w2), b2);
}

Mlp build_mlp(int64_t in_width, int64_t d_h, int64_t d_k, Rng& rng) {
    if (in_width < 1 || d_h < 1 || d_k < 1)
        throw config_error("mlp dims must be positive, got " + std::to_string(in_width) + "/" +
                           std::to_string(d_h) + "/" + std::to_string(d_k));
    Mlp m;
    m.w1 = kaiming_uniform({in_width, d_h}, in_width, rng);
    m.b1 = bias_uniform(d_h, in_width, rng);
    m.w2 = kaiming_uniform({d_h, d_k}, d_h, rng);
    m.b2 = bias_uniform(d_k, d_h, rng);
    return m;
}

namespace {

// pool halves the map per step, so spatial ratios must be powers of two
int pool_steps_for(int64_t from, int64_t to) {
    int steps = 0;
    int64_t s = from;
    while (s > to) {
        if (s % 2 != 0) return -1;
        s /= 2;
        ++steps;
    }
    return s == to ? steps : -1;
}

}  // namespace

Projector build_projector(const Shape& source, const Shape& target, Rng& rng) {
    Projector p;
    p.source = source;
    p.target = target;
    if (source.size() == 3 && target.size() == 3) {
        p.spatial = true;
        int64_t c_s = source[0], h_s = source[1], w_s = source[2];
        int64_t c_a = target[0], h_a = target[1], w_a = target[2];
        if (h_s >= h_a) {
            int sh = pool_steps_for(h_s, h_a);
            int sw = pool_steps_for(w_s, w_a);
            if (sh < 0 || sh != sw)
                throw config_error("projector cannot resample " + shape_str(source) + " -> " +
                                   shape_str(target));
            p.pool_steps = sh;
        } else {
            if (h_a % h_s != 0 || w_a % w_s != 0 || h_a / h_s != w_a / w_s)
                throw config_error("projector cannot resample " + shape_str(source) + " -> " +
                                   shape_str(target));
            p.up_factor = static_cast<int>(h_a / h_s);
        }
        p.conv3_w = kaiming_uniform({c_a, c_s, 3, 3}, c_s * 9, rng);
        // Zero init gates the projection closed, so early feature-loss
        // gradients cannot shove the student's sparse spikes in random
        // directions; the path opens only along directions the 1x1 conv has
        // already learned to correlate with the teacher map.
        p.conv1_w = zeros({c_a, c_a, 1, 1}, /*requires_grad=*/true);
    } else {
        p.spatial = false;
        int64_t in = shape_numel(source), out = shape_numel(target);
        p.affine_w = kaiming_uniform({in, out}, in, rng);
        p.affine_b = bias_uniform(out, in, rng);
    }
    return p;
}

TensorPtr Projector::apply(const TensorPtr& f) const {
    if (f->shape.size() != source.size() + 1)
        throw dimension_error("projector expects batched " + shape_str(source) + ", got " +
                              shape_str(f->shape));
    for (size_t i = 0; i < source.size(); ++i)
        if (f->shape[i + 1] != source[i])
            throw dimension_error("projector expects batched " + shape_str(source) + ", got " +
                                  shape_str(f->shape));
    if (!spatial) {
        auto y = add_row_bias(matmul(flatten_rows(f), affine_w), affine_b);
        if (target.size() > 1) {
            Shape full = {f->shape[0]};
            full.insert(full.end(), target.begin(), target.end());
            y = reshape(y, full);
        }
        return y;
    }
    auto x = f;
    for (int i = 0; i < pool_steps; ++i) x = avg_pool2x2(x);
    if (up_factor > 1) x = upsample_nearest2d(x, up_factor);
    x = conv2d(x, conv3_w, 1, 1);
    return conv2d(x, conv1_w, 1, 0);
}

std::vector<TensorPtr> Projector::params() const {
    if (spatial) return {conv3_w, conv1_w};
    return {affine_w, affine_b};
}

std::vector<TensorPtr> CalibrationBank::params() const {
    std::vector<TensorPtr> out;
    for (const auto& m : mlp_q)
        for (const auto& p : m.params()) out.push_back(p);
    for (const auto& m : mlp_k)
        for (const auto& p : m.params()) out.push_back(p);
    for (const auto& row : projectors)
        for (const auto& pr : row)
            for (const auto& p : pr.params()) out.push_back(p);
    return out;
}

std::vector<std::string> CalibrationBank::param_names() const {
    std::vector<std::string> out;
    auto mlp_names = [&](const std::string& stem, size_t count) {
        for (size_t i = 0; i < count; ++i) {
            std::string base = "calib." + stem + (count > 1 ? std::to_string(i) : "");
            out.push_back(base + ".w1");
            out.push_back(base + ".b1");
            out.push_back(base + ".w2");
            out.push_back(base + ".b2");
        }
    };
    mlp_names("q", mlp_q.size());
    mlp_names("k", mlp_k.size());
    for (size_t s = 0; s < projectors.size(); ++s)
        for (size_t a = 0; a < projectors[s].size(); ++a) {
            std::string base = "calib.proj" + std::to_string(s) + "_" + std::to_string(a);
            if (projectors[s][a].spatial) {
                out.push_back(base + ".conv3.w");
                out.push_back(base + ".conv1.w");
            } else {
                out.push_back(base + ".affine.w");
                out.push_back(base + ".affine.b");
            }
        }
    return out;
}

CalibrationBank build_bank(int64_t b, const QkDims& qk, const std::vector<Shape>& student_taps,
                           const std::vector<Shape>& teacher_taps, Rng& rng) {
    if (b < 1) throw domain_error("calibration batch width must be >= 1, got " + std::to_string(b));
    if (student_taps.empty() || teacher_taps.empty())
        throw config_error("calibration needs at least one tapped layer on each side");
    CalibrationBank bank;
    bank.b = b;
    bank.qk = qk;
    bank.student_taps = student_taps;
    bank.teacher_taps = teacher_taps;
    size_t nq = qk.per_layer ? student_taps.size() : 1;
    size_t nk = qk.per_layer ? teacher_taps.size() : 1;
    for (size_t i = 0; i < nq; ++i) bank.mlp_q.push_back(build_mlp(b, qk.d_h, qk.d_k, rng));
    for (size_t i = 0; i < nk; ++i) bank.mlp_k.push_back(build_mlp(b, qk.d_h, qk.d_k, rng));
    bank.projectors.resize(student_taps.size());
    for (size_t s = 0; s < student_taps.size(); ++s)
        for (const auto& target : teacher_taps)
            bank.projectors[s].push_back(build_projector(student_taps[s], target, rng));
    return bank;
}

std::vector<std::vector<TensorPtr>> attention_weights(
    const std::vector<std::vector<TensorPtr>>& queries, const std::vector<TensorPtr>& keys) {
    if (keys.empty()) throw contract_error("attention_weights: no keys");
    std::vector<std::vector<TensorPtr>> eta(queries.size());
    for (size_t t = 0; t < queries.size(); ++t) {
        for (const auto& q : queries[t]) {
            std::vector<TensorPtr> cols;
            cols.reserve(keys.size());
            for (const auto& k : keys) {
                if (k->shape != q->shape)
                    throw dimension_error("query/key shape mismatch: " + shape_str(q->shape) +
                                          " vs " + shape_str(k->shape));
                cols.push_back(reshape(reduce_sum(mul(q, k), {1}), {q->shape[0], 1}));
            }
            eta[t].push_back(softmax(concat_cols(cols)));
        }
    }
    return eta;
}

CalibrationResult calibrate(const CalibrationBank& bank,
                            const std::vector<std::vector<TensorPtr>>& student_patterns,
                            const std::vector<TensorPtr>& teacher_pattern) {
    if (teacher_pattern.size() != bank.teacher_taps.size())
        throw contract_error("calibrate: expected " + std::to_string(bank.teacher_taps.size()) +
                             " teacher maps, got " + std::to_string(teacher_pattern.size()));
    CalibrationResult res;
    std::vector<TensorPtr> keys;
    for (size_t a = 0; a < teacher_pattern.size(); ++a) {
        res.sim_teacher.push_back(similarity_matrix(teacher_pattern[a]));
        keys.push_back(bank.key_mlp(a).apply(res.sim_teacher.back()));
    }
    std::vector<std::vector<TensorPtr>> queries(student_patterns.size());
    res.sim_student.resize(student_patterns.size());
    res.projected.resize(student_patterns.size());
    for (size_t t = 0; t < student_patterns.size(); ++t) {
        if (student_patterns[t].size() != bank.student_taps.size())
            throw contract_error("calibrate: expected " + std::to_string(bank.student_taps.size()) +
                                 " student maps, got " + std::to_string(student_patterns[t].size()));
        for (size_t s = 0; s < student_patterns[t].size(); ++s) {
            res.sim_student[t].push_back(similarity_matrix(student_patterns[t][s]));
            queries[t].push_back(bank.query_mlp(s).apply(res.sim_student[t].back()));
            std::vector<TensorPtr> row;
            row.reserve(teacher_pattern.size());
            for (size_t a = 0; a < teacher_pattern.size(); ++a)
                row.push_back(bank.projectors[s][a].apply(student_patterns[t][s]));
            res.projected[t].push_back(std::move(row));
        }
    }
    res.eta = attention_weights(queries, keys);
    return res;
}

}  // namespace stcal
