#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stcal/lif.hpp"
#include "stcal/rng.hpp"

using namespace stcal;

TEST_CASE("constant drive 0.6 with lambda 0.5 fires at steps 3 and 6") {
    // u_t = 0.5*u_{t-1} + 0.6 from u_0 = 0 crosses v_th = 1 on the third step
    // (0.6, 0.9, 1.05), resets, and repeats: spike train 0010010 over T = 7.
    LifParams p;
    std::vector<TensorPtr> inputs(7, full({1}, 0.6));
    auto spikes = lif_unroll(inputs, p);
    std::vector<double> train;
    for (auto& s : spikes) train.push_back(s->data[0]);
    CHECK(train == std::vector<double>{0, 0, 1, 0, 0, 1, 0});
}

TEST_CASE("membrane recursion matches a scalar reimplementation") {
    LifParams p;
    p.lambda = 0.7;
    p.v_th = 0.8;
    p.u0 = 0.1;
    Rng rng(31);
    std::vector<double> xs(12);
    for (double& x : xs) x = rng.uniform(-0.5, 1.0);

    double u = p.u0;
    std::vector<double> want;
    for (double x : xs) {
        u = p.lambda * u + x;
        double s = u >= p.v_th ? 1.0 : 0.0;
        u = u * (1.0 - s);
        want.push_back(s);
    }

    auto state = LifState::fresh({1}, p);
    for (size_t t = 0; t < xs.size(); ++t) {
        auto r = lif_step(state, make_tensor({1}, {xs[t]}), p);
        CHECK(r.spikes->data[0] == want[t]);
        state = r.state;
        CHECK(state.t == static_cast<int>(t) + 1);
    }
    CHECK(u == state.u->data[0]);
}

TEST_CASE("unroll over a batch equals stepping by hand") {
    LifParams p;
    Rng rng(32);
    std::vector<TensorPtr> inputs;
    for (int t = 0; t < 4; ++t) {
        std::vector<double> v(6);
        for (double& x : v) x = rng.uniform(-1.0, 2.0);
        inputs.push_back(make_tensor({2, 3}, std::move(v)));
    }
    auto unrolled = lif_unroll(inputs, p);

    auto state = LifState::fresh({2, 3}, p);
    for (int t = 0; t < 4; ++t) {
        auto r = lif_step(state, inputs[t], p);
        CHECK(unrolled[t]->data == r.spikes->data);
        state = r.state;
    }
}

TEST_CASE("triangular surrogate shape") {
    LifParams p;  // gamma 0.3, v_th 1
    // peak value 1/gamma at the threshold, zero outside |u - v_th| >= gamma
    auto at = [&](double u) { return triangle_surrogate(u, p.v_th, p.gamma); };
    CHECK(at(1.0) == (1.0 / (0.3 * 0.3)) * 0.3);  // peak, i.e. 1/gamma up to rounding
    CHECK(at(1.0) == doctest::Approx(1.0 / 0.3).epsilon(1e-15));
    CHECK(at(1.0 + 0.3) == 0.0);
    CHECK(at(1.0 - 0.3) == 0.0);
    CHECK(at(5.0) == 0.0);
    CHECK(at(-5.0) == 0.0);
    // symmetric around the threshold (up to the rounding of 1 +- d)
    Rng rng(33);
    for (int i = 0; i < 50; ++i) {
        double d = rng.uniform(0.0, 0.5);
        CHECK(at(1.0 + d) == doctest::Approx(at(1.0 - d)).epsilon(1e-12));
    }
    // surrogate_grad_value evaluates the same expression elementwise
    auto u = make_tensor({3}, {0.85, 1.0, 1.29});
    auto g = surrogate_grad_value(u, p);
    for (int i = 0; i < 3; ++i) CHECK(g->data[i] == at(u->data[i]));
}

TEST_CASE("spike op backward carries the surrogate") {
    LifParams p;
    auto u = make_tensor({4}, {0.85, 1.0, 1.29, 2.0}, true);
    backward(reduce_sum_all(spike_op(u, p)));
    for (int i = 0; i < 4; ++i)
        CHECK(u->grad[i] == triangle_surrogate(u->data[i], p.v_th, p.gamma));
}

TEST_CASE("reset gate gradient, attached vs detached") {
    // One step from u = 0 with input x = 0.9 (below threshold, inside the
    // surrogate band): d(sum u_next)/dx = 1 - x * surrogate(x) when the reset
    // stays in the graph, and exactly 1 when the reset is detached.
    auto run = [&](bool detach_reset) {
        LifParams p;
        p.detach_reset = detach_reset;
        auto x = make_tensor({1}, {0.9}, true);
        auto r = lif_step(LifState::fresh({1}, p), x, p);
        backward(reduce_sum_all(r.state.u));
        return x->grad[0];
    };
    CHECK(run(true) == 1.0);
    CHECK(run(false) == doctest::Approx(1.0 - 0.9 * triangle_surrogate(0.9, 1.0, 0.3)).epsilon(1e-12));
}

TEST_CASE("parameter validation") {
    LifParams p;
    p.lambda = 1.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p.lambda = 0.5;
    p.gamma = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p.gamma = 0.3;
    p.v_th = -1.0;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("shape mismatch between state and input is rejected") {
    LifParams p;
    auto state = LifState::fresh({2, 2}, p);
    CHECK_THROWS_AS(lif_step(state, make_tensor({3}, {1, 2, 3}), p), Error);
}
