// Times the OpenMP kernels against the serial reference implementations and
// checks that both produce bit-identical output.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <thread>
#include <vector>

#include "stcal/kernels.hpp"
#include "stcal/rng.hpp"

using namespace stcal;

namespace {

int g_mismatches = 0;

double time_best(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

std::vector<double> randv(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

void check_identical(const std::vector<double>& a, const std::vector<double>& b) {
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
        std::printf("  ^-- MISMATCH between serial and omp output\n");
        ++g_mismatches;
    }
}

void bench_matmul(int64_t m, int64_t k, int64_t n, Rng& rng) {
    auto a = randv(static_cast<size_t>(m * k), rng);
    auto b = randv(static_cast<size_t>(k * n), rng);
    std::vector<double> cs(static_cast<size_t>(m * n)), cp(cs.size());
    double ts = time_best(
        [&] { kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n, false, false); }, 3);
    double tp = time_best(
        [&] { kernels::matmul(a.data(), b.data(), cp.data(), m, k, n, false, false); }, 3);
    double gmacs = static_cast<double>(m * k * n) / 1e9;
    std::printf("matmul %4lldx%4lldx%4lld  serial %8.3f ms (%5.2f GMAC/s)  omp %8.3f ms (%5.2f "
                "GMAC/s)  speedup %.2fx\n",
                static_cast<long long>(m), static_cast<long long>(k), static_cast<long long>(n),
                ts * 1e3, gmacs / ts, tp * 1e3, gmacs / tp, ts / tp);
    check_identical(cs, cp);
}

void bench_conv(int64_t batch, int64_t cin, int64_t size, int64_t cout, Rng& rng) {
    kernels::Conv2dDims d{batch, cin, size, size, cout, 3, 3, size, size, 1, 1};
    auto x = randv(static_cast<size_t>(batch * cin * size * size), rng);
    auto w = randv(static_cast<size_t>(cout * cin * 9), rng);
    std::vector<double> ys(static_cast<size_t>(batch * cout * size * size)), yp(ys.size());
    double ts = time_best(
        [&] { kernels::serial::conv2d_forward(x.data(), w.data(), ys.data(), d); }, 3);
    double tp = time_best([&] { kernels::conv2d_forward(x.data(), w.data(), yp.data(), d); }, 3);
    double gmacs = static_cast<double>(batch * cout * size * size * cin * 9) / 1e9;
    std::printf("conv   b%2lld c%3lld->%3lld %2lldx%-2lld serial %8.3f ms (%5.2f GMAC/s)  omp "
                "%8.3f ms (%5.2f GMAC/s)  speedup %.2fx\n",
                static_cast<long long>(batch), static_cast<long long>(cin),
                static_cast<long long>(cout), static_cast<long long>(size),
                static_cast<long long>(size), ts * 1e3, gmacs / ts, tp * 1e3, gmacs / tp, ts / tp);
    check_identical(ys, yp);
}

}  // namespace

int main(int argc, char** argv) {
    int threads = argc > 1 ? std::atoi(argv[1])
                           : static_cast<int>(std::thread::hardware_concurrency());
    kernels::set_max_threads(threads);
    Rng rng(7);
    std::printf("threads: %d\n", kernels::max_threads());
    bench_matmul(64, 512, 64, rng);
    bench_matmul(256, 256, 256, rng);
    bench_matmul(512, 512, 512, rng);
    bench_conv(16, 3, 16, 16, rng);
    bench_conv(64, 8, 8, 16, rng);
    bench_conv(64, 16, 16, 32, rng);
    return g_mismatches == 0 ? 0 : 1;
}
