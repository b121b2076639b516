#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stcal/optim.hpp"

using namespace stcal;

namespace {

OptimizerSpec plain_sgd(double lr, double momentum = 0.0, double wd = 0.0) {
    OptimizerSpec s;
    s.kind = "sgd-momentum";
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = wd;
    s.cosine = false;
    return s;
}

}  // namespace

TEST_CASE("sgd with momentum matches a scalar trace") {
    auto p = make_tensor({2}, {1.0, -2.0}, true);
    Optimizer opt({p}, plain_sgd(0.1, 0.9));

    double theta = 1.0, buf = 0.0;
    for (int it = 0; it < 5; ++it) {
        double g = 2.0 * theta;  // pretend loss theta^2
        p->grad = {2.0 * p->data[0], 2.0 * p->data[1]};
        buf = 0.9 * buf + g;
        theta -= 0.1 * buf;
        opt.step();
        CHECK(p->data[0] == theta);
        opt.zero_grad();
        for (double g2 : p->grad) CHECK(g2 == 0.0);
    }
    CHECK(opt.steps_taken() == 5);
}

TEST_CASE("weight decay couples into the gradient") {
    auto p = make_tensor({1}, {2.0}, true);
    Optimizer opt({p}, plain_sgd(0.5, 0.0, 0.1));
    p->grad = {1.0};
    opt.step();
    // g = 1 + 0.1*2 = 1.2; theta = 2 - 0.5*1.2
    CHECK(p->data[0] == 2.0 - 0.5 * 1.2);
}

TEST_CASE("a missing gradient decays the weight but adds no update") {
    auto p = make_tensor({1}, {4.0}, true);
    Optimizer opt({p}, plain_sgd(0.5, 0.0, 0.1));
    opt.step();
    CHECK(p->data[0] == 4.0 - 0.5 * 0.4);
}

TEST_CASE("cosine schedule starts at lr and decays toward zero") {
    auto p = make_tensor({1}, {0.0}, true);
    OptimizerSpec s = plain_sgd(0.2);
    s.cosine = true;
    s.total_steps = 4;
    Optimizer opt({p}, s);
    CHECK(opt.current_lr() == 0.2);
    std::vector<double> seen;
    for (int it = 0; it < 4; ++it) {
        seen.push_back(opt.current_lr());
        p->grad = {1.0};
        opt.step();
    }
    CHECK(seen[1] == doctest::Approx(0.2 * 0.5 * (1.0 + std::cos(M_PI * 0.25))).epsilon(1e-12));
    CHECK(seen[2] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(opt.current_lr() == doctest::Approx(0.0).epsilon(1e-15));
    // monotone decreasing
    for (size_t i = 1; i < seen.size(); ++i) CHECK(seen[i] < seen[i - 1]);
}

TEST_CASE("adam first step moves by about lr regardless of gradient scale") {
    OptimizerSpec s;
    s.kind = "adam";
    s.lr = 0.01;
    s.weight_decay = 0.0;
    s.cosine = false;
    auto big = make_tensor({1}, {1.0}, true);
    auto small = make_tensor({1}, {1.0}, true);
    Optimizer ob({big}, s), os({small}, s);
    big->grad = {1000.0};
    small->grad = {1e-3};
    ob.step();
    os.step();
    CHECK(big->data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
    CHECK(small->data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
}

TEST_CASE("adam matches the reference recursion for a few steps") {
    OptimizerSpec s;
    s.kind = "adam";
    s.lr = 0.05;
    s.beta1 = 0.9;
    s.beta2 = 0.999;
    s.weight_decay = 0.01;
    s.cosine = false;
    auto p = make_tensor({1}, {0.5}, true);
    Optimizer opt({p}, s);

    double theta = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 4; ++t) {
        double raw = 0.3 * t;  // arbitrary gradient sequence
        p->grad = {raw};
        double g = raw + 0.01 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mhat = m / (1.0 - std::pow(0.9, t));
        double vhat = v / (1.0 - std::pow(0.999, t));
        theta -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
        opt.step();
        CHECK(p->data[0] == doctest::Approx(theta).epsilon(1e-15));
    }
}

TEST_CASE("f32 precision rounds every update") {
    set_precision(Precision::f32);
    auto p = make_tensor({1}, {1.0}, true);
    Optimizer opt({p}, plain_sgd(1e-9));
    p->grad = {1.0};
    opt.step();
    set_precision(Precision::f64);
    // 1 - 1e-9 is not representable in f32; the update rounds back to 1
    CHECK(p->data[0] == 1.0);
}

TEST_CASE("construction contracts") {
    auto frozen = make_tensor({1}, {1.0}, false);
    OptimizerSpec s = plain_sgd(0.1);
    CHECK_THROWS_AS(Optimizer({frozen}, s), Error);
    s.kind = "adagrad";
    auto p = make_tensor({1}, {1.0}, true);
    CHECK_THROWS_AS(Optimizer({p}, s), Error);
}
