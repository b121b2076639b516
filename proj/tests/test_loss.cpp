#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stcal/loss.hpp"
#include "stcal/rng.hpp"

using namespace stcal;

namespace {

TensorPtr rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                      bool rg = false) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(lo, hi);
    return make_tensor(shape, std::move(v), rg);
}

std::vector<double> softmax_rows(const std::vector<double>& x, int b, int c, double temp) {
    std::vector<double> p(x.size());
    for (int i = 0; i < b; ++i) {
        double mx = -1e300;
        for (int j = 0; j < c; ++j) mx = std::max(mx, x[i * c + j] / temp);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(x[i * c + j] / temp - mx);
        for (int j = 0; j < c; ++j) p[i * c + j] = std::exp(x[i * c + j] / temp - mx) / z;
    }
    return p;
}

}  // namespace

TEST_CASE("feature alignment loss matches a hand-worked table") {
    // b = 2, one student layer, two teacher layers, T = 1.
    // per-row MSE against a0: (1, 5); against a1: (4, 4)
    auto a0 = make_tensor({2, 2}, {0, 0, 0, 0});
    auto a1 = make_tensor({2, 2}, {1, 0, 0, 0});
    auto p0 = make_tensor({2, 2}, {1, 1, 3, 1});
    auto p1 = make_tensor({2, 2}, {3, 2, 2, 2});
    auto eta = make_tensor({2, 2}, {0.5, 0.5, 1.0, 0.0});
    // weighted rows: 0.5*1 + 0.5*4 = 2.5 and 1*5 + 0*4 = 5; sum 7.5
    auto raw = sastc_loss({{eta}}, {a0, a1}, {{{p0, p1}}}, false);
    CHECK(raw->item() == doctest::Approx(7.5).epsilon(1e-14));
    auto mean = sastc_loss({{eta}}, {a0, a1}, {{{p0, p1}}}, true);
    CHECK(mean->item() == doctest::Approx(3.75).epsilon(1e-14));

    // two identical steps double the raw sum; batch mean stays /b
    auto two = sastc_loss({{eta}, {eta}}, {a0, a1}, {{{p0, p1}}, {{p0, p1}}}, true);
    CHECK(two->item() == doctest::Approx(7.5).epsilon(1e-14));
}

TEST_CASE("feature alignment treats spatial maps elementwise") {
    // 4d maps: MSE averages over c*h*w = 8 elements
    auto t = full({1, 2, 2, 2}, 1.0);
    auto pr = full({1, 2, 2, 2}, 3.0);  // per-row MSE 4
    auto eta = make_tensor({1, 1}, {1.0});
    auto l = sastc_loss({{eta}}, {t}, {{{pr}}}, true);
    CHECK(l->item() == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("feature alignment loss backpropagates into eta and projections") {
    Rng rng(51);
    auto t0 = rand_tensor({3, 4}, rng);
    auto pr = rand_tensor({3, 4}, rng, -1, 1, true);
    auto eta = rand_tensor({3, 1}, rng, 0.1, 0.9, true);
    backward(sastc_loss({{eta}}, {t0}, {{{pr}}}, true));
    REQUIRE(eta->grad.size() == 3);
    REQUIRE(pr->grad.size() == 12);
    // d l / d eta[i] = MSE_i / b, all strictly positive here
    for (int i = 0; i < 3; ++i) {
        double mse = 0.0;
        for (int j = 0; j < 4; ++j) {
            double d = pr->data[i * 4 + j] - t0->data[i * 4 + j];
            mse += d * d / 4.0;
        }
        CHECK(eta->grad[i] == doctest::Approx(mse / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("table shape mismatches are contract errors") {
    auto t0 = full({2, 2}, 0.0);
    auto pr = full({2, 2}, 1.0);
    auto eta = make_tensor({2, 1}, {1, 1});
    CHECK_THROWS_AS(sastc_loss({{eta}}, {t0, t0}, {{{pr, pr}}}, true), Error);  // eta too narrow
    CHECK_THROWS_AS(sastc_loss({{eta}}, {t0}, {{{pr, pr}}}, true), Error);
    CHECK_THROWS_AS(sastc_loss({}, {t0}, {}, true), Error);
}

TEST_CASE("cross-entropy of uniform logits is ln C") {
    auto o = full({3, 4}, 0.7);
    auto l = ce_loss(o, {0, 3, 1});
    CHECK(l->item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("cross-entropy matches a scalar reimplementation") {
    Rng rng(52);
    auto o = rand_tensor({4, 5}, rng, -2, 2);
    std::vector<int64_t> y{1, 4, 0, 2};
    auto p = softmax_rows(o->data, 4, 5, 1.0);
    double want = 0.0;
    for (int i = 0; i < 4; ++i) want -= std::log(p[i * 5 + y[i]]) / 4.0;
    CHECK(ce_loss(o, y)->item() == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(ce_loss(o, {1, 2}), Error);         // wrong count
    CHECK_THROWS_AS(ce_loss(o, {1, 4, 0, 5}), Error);   // label out of range
}

TEST_CASE("distillation loss against an independent KL oracle") {
    Rng rng(53);
    const int b = 3, c = 4;
    const double alpha = 2.0;
    auto o_s = rand_tensor({b, c}, rng, -2, 2);
    auto o_a = rand_tensor({b, c}, rng, -2, 2);
    std::vector<int64_t> y{2, 0, 3};
    auto parts = kd_loss(o_s, o_a, y, alpha);

    auto pa = softmax_rows(o_a->data, b, c, alpha);
    auto ps = softmax_rows(o_s->data, b, c, alpha);
    double kl = 0.0;
    for (int i = 0; i < b * c; ++i) kl += pa[i] * (std::log(pa[i]) - std::log(ps[i]));
    kl /= b;
    CHECK(parts.l_kl->item() == doctest::Approx(kl).epsilon(1e-12));
    CHECK(parts.l_kd->item() ==
          doctest::Approx(parts.l_ce->item() + alpha * alpha * kl).epsilon(1e-12));
    CHECK(parts.l_ce->item() == doctest::Approx(ce_loss(o_s, y)->item()).epsilon(1e-14));
}

TEST_CASE("copying the teacher's logits zeroes the KL term exactly") {
    Rng rng(54);
    auto o_a = rand_tensor({4, 6}, rng, -3, 3);
    auto o_s = make_tensor({4, 6}, o_a->data);
    auto parts = kd_loss(o_s, o_a, {0, 1, 2, 3}, 1.0);
    CHECK(parts.l_kl->item() == 0.0);
    CHECK(parts.l_kd->item() == parts.l_ce->item());
}

TEST_CASE("the teacher side of the distillation loss is a constant") {
    Rng rng(55);
    auto o_s = rand_tensor({2, 3}, rng, -1, 1, true);
    auto o_a = rand_tensor({2, 3}, rng, -1, 1, true);
    auto parts = kd_loss(o_s, o_a, {0, 1}, 1.5);
    backward(parts.l_kd);
    CHECK(o_s->grad.size() == 6);
    bool teacher_touched = false;
    for (double g : o_a->grad) teacher_touched |= (g != 0.0);
    CHECK_FALSE(teacher_touched);
}

TEST_CASE("total loss composition") {
    auto l_kd = scalar(1.25);
    auto l_f = scalar(0.5);
    CHECK(total_loss(l_kd, l_f, 2.0)->item() == 2.25);
    // beta = 0 leaves the distillation value bit-identical
    CHECK(total_loss(l_kd, l_f, 0.0)->item() == 1.25);
    CHECK_THROWS_AS(total_loss(l_kd, l_f, -0.1), Error);
}
