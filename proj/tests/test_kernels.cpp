#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "stcal/kernels.hpp"
#include "stcal/rng.hpp"

using namespace stcal;

namespace {

std::vector<double> rand_vec(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop") {
    Rng rng(11);
    const int64_t m = 5, k = 7, n = 4;
    auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
    std::vector<double> c(m * n), want(m * n, 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p) want[i * n + j] += a[i * k + p] * b[p * n + j];
    kernels::serial::matmul(a.data(), b.data(), c.data(), m, k, n, false, false);
    for (int64_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul transpose flags agree with explicit transposes") {
    Rng rng(12);
    const int64_t m = 3, k = 5, n = 4;
    auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
    std::vector<double> at(k * m), bt(n * k);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
    for (int64_t p = 0; p < k; ++p)
        for (int64_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];

    std::vector<double> base(m * n), got(m * n);
    kernels::serial::matmul(a.data(), b.data(), base.data(), m, k, n, false, false);

    kernels::serial::matmul(at.data(), b.data(), got.data(), m, k, n, true, false);
    for (int64_t i = 0; i < m * n; ++i) CHECK(got[i] == base[i]);

    kernels::serial::matmul(a.data(), bt.data(), got.data(), m, k, n, false, true);
    for (int64_t i = 0; i < m * n; ++i) CHECK(got[i] == base[i]);

    kernels::serial::matmul(at.data(), bt.data(), got.data(), m, k, n, true, true);
    for (int64_t i = 0; i < m * n; ++i) CHECK(got[i] == base[i]);
}

TEST_CASE("conv2d forward: hand cases") {
    kernels::Conv2dDims d{1, 1, 3, 3, 1, 3, 3, 1, 1, 1, 0};
    std::vector<double> x(9, 1.0), w(9, 1.0), y(1);
    kernels::serial::conv2d_forward(x.data(), w.data(), y.data(), d);
    CHECK(y[0] == 9.0);

    // delta kernel, padding 1: identity map
    kernels::Conv2dDims di{1, 1, 4, 4, 1, 3, 3, 4, 4, 1, 1};
    Rng rng(13);
    auto xi = rand_vec(rng, 16);
    std::vector<double> wd(9, 0.0);
    wd[4] = 1.0;
    std::vector<double> yi(16);
    kernels::serial::conv2d_forward(xi.data(), wd.data(), yi.data(), di);
    for (int i = 0; i < 16; ++i) CHECK(yi[i] == xi[i]);
}

TEST_CASE("conv2d backward kernels satisfy the adjoint identities") {
    Rng rng(14);
    kernels::Conv2dDims d{2, 3, 7, 5, 4, 3, 3, 4, 3, 2, 1};
    const size_t nx = 2 * 3 * 7 * 5, nw = 4 * 3 * 3 * 3, ny = 2 * 4 * 4 * 3;
    auto x = rand_vec(rng, nx), w = rand_vec(rng, nw), dy = rand_vec(rng, ny);

    std::vector<double> y(ny), dx(nx, 0.0), dw(nw, 0.0);
    kernels::serial::conv2d_forward(x.data(), w.data(), y.data(), d);
    kernels::serial::conv2d_backward_input(dy.data(), w.data(), dx.data(), d);
    kernels::serial::conv2d_backward_weight(dy.data(), x.data(), dw.data(), d);

    // <dy, conv(x,w)> == <backward_input(dy,w), x> == <backward_weight(dy,x), w>
    double lhs = dot(dy, y);
    CHECK(dot(dx, x) == doctest::Approx(lhs).epsilon(1e-10));
    CHECK(dot(dw, w) == doctest::Approx(lhs).epsilon(1e-10));
}

TEST_CASE("parallel kernels are bit-identical to serial at any thread count") {
    Rng rng(15);
    const int64_t m = 17, k = 9, n = 13;
    auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
    std::vector<double> ref(m * n), got(m * n);
    kernels::serial::matmul(a.data(), b.data(), ref.data(), m, k, n, false, false);

    kernels::Conv2dDims d{3, 2, 8, 8, 4, 3, 3, 8, 8, 1, 1};
    const size_t nx = 3 * 2 * 8 * 8, nw = 4 * 2 * 3 * 3, ny = 3 * 4 * 8 * 8;
    auto x = rand_vec(rng, nx), w = rand_vec(rng, nw), dy = rand_vec(rng, ny);
    std::vector<double> yref(ny), dxref(nx, 0.0), dwref(nw, 0.0);
    kernels::serial::conv2d_forward(x.data(), w.data(), yref.data(), d);
    kernels::serial::conv2d_backward_input(dy.data(), w.data(), dxref.data(), d);
    kernels::serial::conv2d_backward_weight(dy.data(), x.data(), dwref.data(), d);

    int saved = kernels::max_threads();
    for (int threads : {1, 2, 4}) {
        kernels::set_max_threads(threads);
        kernels::matmul(a.data(), b.data(), got.data(), m, k, n, false, false);
        CHECK(std::memcmp(got.data(), ref.data(), sizeof(double) * got.size()) == 0);

        std::vector<double> yp(ny), dxp(nx, 0.0), dwp(nw, 0.0);
        kernels::conv2d_forward(x.data(), w.data(), yp.data(), d);
        kernels::conv2d_backward_input(dy.data(), w.data(), dxp.data(), d);
        kernels::conv2d_backward_weight(dy.data(), x.data(), dwp.data(), d);
        CHECK(std::memcmp(yp.data(), yref.data(), sizeof(double) * ny) == 0);
        CHECK(std::memcmp(dxp.data(), dxref.data(), sizeof(double) * nx) == 0);
        CHECK(std::memcmp(dwp.data(), dwref.data(), sizeof(double) * nw) == 0);
    }
    kernels::set_max_threads(saved);
}
