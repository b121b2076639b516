#pragma once

#include <cstdint>

namespace stcal::kernels {

// Worker threads used by the parallel kernels. 1 disables OpenMP dispatch.
int max_threads();
void set_max_threads(int n);

struct Conv2dDims {
    int64_t batch;
    int64_t in_channels;
    int64_t in_h, in_w;
    int64_t out_channels;
    int64_t kernel_h, kernel_w;
    int64_t out_h, out_w;
    int64_t stride;
    int64_t padding;
};

// OpenMP-parallel kernels. Parallelism is only ever across independent output
// elements; the reduction order inside each element is fixed, so results are
// bit-identical to the serial reference for every thread count.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool transpose_a, bool transpose_b);
void conv2d_forward(const double* x, const double* w, double* y, const Conv2dDims& d);
void conv2d_backward_input(const double* dy, const double* w, double* dx, const Conv2dDims& d);
void conv2d_backward_weight(const double* dy, const double* x, double* dw, const Conv2dDims& d);

// Plain-loop reference implementations, kept for tests and the kernel
// benchmark.
namespace serial {
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool transpose_a, bool transpose_b);
void conv2d_forward(const double* x, const double* w, double* y, const Conv2dDims& d);
void conv2d_backward_input(const double* dy, const double* w, double* dx, const Conv2dDims& d);
void conv2d_backward_weight(const double* dy, const double* x, double* dw, const Conv2dDims& d);
}  // namespace serial

}  // namespace stcal::kernels
