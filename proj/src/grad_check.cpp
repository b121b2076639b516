#include "stcal/grad_check.hpp"

#include <cmath>
#include <limits>

#include "stcal/rng.hpp"

namespace stcal {

void GradCheckReport::merge(const GradCheckReport& other) {
    if (other.max_rel_err > max_rel_err || (!other.pass && pass)) {
        max_rel_err = other.max_rel_err;
        worst = other.worst;
    }
    pass = pass && other.pass;
    checks += other.checks;
}

GradCheckReport grad_check(const std::function<TensorPtr()>& build,
                           const std::vector<TensorPtr>& leaves,
                           const std::vector<std::string>& leaf_names, double eps, double tol) {
    GradCheckReport report;
    auto loss = build();
    for (const auto& leaf : leaves) leaf->zero_grad();
    backward(loss);

    for (size_t li = 0; li < leaves.size(); ++li) {
        const auto& leaf = leaves[li];
        std::string label = li < leaf_names.size() ? leaf_names[li] : "leaf" + std::to_string(li);
        leaf->ensure_grad();
        for (int64_t i = 0; i < leaf->numel(); ++i) {
            double saved = leaf->data[i];
            leaf->data[i] = saved + eps;
            double f_plus = build()->item();
            leaf->data[i] = saved - eps;
            double f_minus = build()->item();
            leaf->data[i] = saved;

            double fd = (f_plus - f_minus) / (2.0 * eps);
            double ad = leaf->grad[i];
            std::string loc = label + "[" + std::to_string(i) + "]";
            if (!std::isfinite(fd) || !std::isfinite(ad)) {
                report.pass = false;
                report.max_rel_err = std::numeric_limits<double>::infinity();
                report.worst = loc + " (non-finite)";
                report.checks++;
                continue;
            }
            double denom = std::max({std::fabs(ad), std::fabs(fd), 1.0});
            double rel = std::fabs(ad - fd) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = loc;
            }
            if (rel > tol) report.pass = false;
            report.checks++;
        }
    }
    return report;
}

namespace {

TensorPtr rand_leaf(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return make_tensor(std::move(shape), std::move(v), true);
}

// values kept > eps away from the relu kink at 0
TensorPtr rand_leaf_off_kink(Rng& rng, Shape shape) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) {
        double mag = rng.uniform(0.05, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return make_tensor(std::move(shape), std::move(v), true);
}

using CaseFn = std::function<GradCheckReport(Rng&, double, double)>;

GradCheckReport run_case(const std::string& op, const CaseFn& fn, int trials, Rng& rng, double eps,
                         double tol) {
    GradCheckReport all;
    for (int t = 0; t < trials; ++t) {
        auto r = fn(rng, eps, tol);
        r.worst = op + "/" + r.worst;
        all.merge(r);
    }
    return all;
}

}  // namespace

GradCheckReport run_grad_check_suite(int trials_per_op, uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    GradCheckReport all;
    auto check_op = [&](const std::string& op, const CaseFn& fn) {
        all.merge(run_case(op, fn, trials_per_op, rng, eps, tol));
    };

    check_op("matmul", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {3, 4}, -1, 1);
        auto b = rand_leaf(r, {4, 2}, -1, 1);
        return grad_check([&] { return reduce_sum_all(matmul(a, b)); }, {a, b}, {"a", "b"}, eps,
                          tol);
    });
    check_op("matmul_tb", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {3, 4}, -1, 1);
        auto b = rand_leaf(r, {2, 4}, -1, 1);
        return grad_check([&] { return reduce_mean_all(matmul(a, b, true)); }, {a, b}, {"a", "b"},
                          eps, tol);
    });
    check_op("conv2d", [](Rng& r, double eps, double tol) {
        auto x = rand_leaf(r, {1, 2, 4, 4}, -1, 1);
        auto k = rand_leaf(r, {3, 2, 3, 3}, -1, 1);
        return grad_check([&] { return reduce_sum_all(conv2d(x, k, 1, 1)); }, {x, k}, {"x", "k"},
                          eps, tol);
    });
    check_op("conv2d_stride2", [](Rng& r, double eps, double tol) {
        auto x = rand_leaf(r, {2, 1, 5, 5}, -1, 1);
        auto k = rand_leaf(r, {2, 1, 3, 3}, -1, 1);
        return grad_check([&] { return reduce_mean_all(conv2d(x, k, 2, 0)); }, {x, k}, {"x", "k"},
                          eps, tol);
    });
    check_op("add", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 3}, -1, 1);
        auto b = rand_leaf(r, {2, 3}, -1, 1);
        return grad_check([&] { return reduce_sum_all(add(a, b)); }, {a, b}, {"a", "b"}, eps, tol);
    });
    check_op("sub_scalar", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 3}, -1, 1);
        auto s = rand_leaf(r, {1}, -1, 1);
        return grad_check([&] { return reduce_sum_all(sub(a, s)); }, {a, s}, {"a", "s"}, eps, tol);
    });
    check_op("mul", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {4}, -1, 1);
        auto b = rand_leaf(r, {4}, -1, 1);
        auto s = rand_leaf(r, {1}, 0.5, 1.5);
        return grad_check([&] { return reduce_sum_all(mul(mul(a, b), s)); }, {a, b, s},
                          {"a", "b", "s"}, eps, tol);
    });
    check_op("scale", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {5}, -1, 1);
        double c = r.uniform(-2, 2);
        return grad_check([&] { return reduce_sum_all(scale(a, c)); }, {a}, {"a"}, eps, tol);
    });
    check_op("relu", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf_off_kink(r, {3, 3});
        return grad_check([&] { return reduce_sum_all(relu(a)); }, {a}, {"a"}, eps, tol);
    });
    check_op("exp", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {4}, -1, 1);
        return grad_check([&] { return reduce_sum_all(exp(a)); }, {a}, {"a"}, eps, tol);
    });
    check_op("log", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {4}, 0.5, 2.0);
        return grad_check([&] { return reduce_sum_all(log(a)); }, {a}, {"a"}, eps, tol);
    });
    check_op("softmax", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 4}, -2, 2);
        double temp = r.uniform(0.5, 3.0);
        return grad_check([&] { return reduce_mean_all(mul(softmax(a, temp), softmax(a, temp))); },
                          {a}, {"a"}, eps, tol);
    });
    check_op("reduce_mean_axis", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 3, 2}, -1, 1);
        int axis = static_cast<int>(r.uniform_int(3));
        return grad_check([&] { return reduce_sum_all(exp(reduce_mean(a, {axis}))); }, {a}, {"a"},
                          eps, tol);
    });
    check_op("reshape", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 6}, -1, 1);
        return grad_check([&] { return reduce_sum_all(exp(reshape(a, {3, 4}))); }, {a}, {"a"}, eps,
                          tol);
    });
    check_op("concat_cols", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 2}, -1, 1);
        auto b = rand_leaf(r, {2, 3}, -1, 1);
        return grad_check([&] { return reduce_mean_all(exp(concat_cols({a, b}))); }, {a, b},
                          {"a", "b"}, eps, tol);
    });
    check_op("gather_rows", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {3, 4}, -1, 1);
        std::vector<int64_t> idx = {static_cast<int64_t>(r.uniform_int(4)),
                                    static_cast<int64_t>(r.uniform_int(4)),
                                    static_cast<int64_t>(r.uniform_int(4))};
        return grad_check([&] { return reduce_sum_all(exp(gather_rows(a, idx))); }, {a}, {"a"},
                          eps, tol);
    });
    check_op("add_row_bias", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {3, 4}, -1, 1);
        auto b = rand_leaf(r, {4}, -1, 1);
        return grad_check([&] { return reduce_sum_all(exp(add_row_bias(a, b))); }, {a, b},
                          {"a", "b"}, eps, tol);
    });
    check_op("add_channel_bias", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {2, 3, 2, 2}, -1, 1);
        auto b = rand_leaf(r, {3}, -1, 1);
        return grad_check([&] { return reduce_mean_all(exp(add_channel_bias(a, b))); }, {a, b},
                          {"a", "b"}, eps, tol);
    });
    check_op("avg_pool2x2", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {1, 2, 4, 4}, -1, 1);
        return grad_check([&] { return reduce_sum_all(exp(avg_pool2x2(a))); }, {a}, {"a"}, eps,
                          tol);
    });
    check_op("upsample_nearest2d", [](Rng& r, double eps, double tol) {
        auto a = rand_leaf(r, {1, 2, 2, 2}, -1, 1);
        return grad_check([&] { return reduce_mean_all(exp(upsample_nearest2d(a, 2))); }, {a},
                          {"a"}, eps, tol);
    });
    check_op("composite_ce_path", [](Rng& r, double eps, double tol) {
        auto x = rand_leaf(r, {2, 3}, -1, 1);
        auto w = rand_leaf(r, {3, 4}, -1, 1);
        return grad_check(
            [&] {
                auto z = matmul(x, w);
                auto p = softmax(z, 1.0);
                return scale(reduce_mean_all(mul(p, log(p))), -1.0);
            },
            {x, w}, {"x", "w"}, eps, tol);
    });
    check_op("composite_relu_chain", [](Rng& r, double eps, double tol) {
        auto x = rand_leaf_off_kink(r, {2, 3});
        auto w = rand_leaf(r, {3, 3}, 0.2, 1.0);
        return grad_check([&] { return reduce_mean_all(matmul(relu(x), w, true)); }, {x, w},
                          {"x", "w"}, eps, tol);
    });
    return all;
}

}  // namespace stcal
